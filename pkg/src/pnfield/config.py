"""Run configuration files: sectioned key = value text, parsed fail-closed.

Unknown sections or keys are errors, as are missing required keys, so a
run is reproducible from the config alone.  Every parse error carries the
offending line number.  Fractions like ``1/16`` are accepted wherever a
float is, which keeps shell schedules readable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .model import ModelConfig
from .tiling import DEFAULT_RADIAL_HI, DEFAULT_RADIAL_LO, Scheme, TilingSpec
from .train import TrainConfig

__all__ = ["ConfigError", "RunConfig", "parse_config", "default_config_text"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    image: Path
    out_dir: Path
    resolution: int
    threads: int
    path: Path


def _parse_number(text: str, line: int) -> float:
    text = text.strip()
    try:
        if "/" in text:
            num, den = text.split("/")
            return float(num) / float(den)
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"line {line}: expected a number, got {text!r}") from None


def _parse_int(text: str, line: int) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"line {line}: expected an integer, got {text!r}") from None


def _parse_float_list(text: str, line: int) -> tuple[float, ...]:
    parts = [p for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"line {line}: expected a comma-separated list")
    return tuple(_parse_number(p, line) for p in parts)


_SCHEMA = {
    "model": {
        "scheme",
        "bandwidth",
        "orientations",
        "radial_lo",
        "radial_hi",
        "fans",
        "hidden",
        "channels",
        "seed",
    },
    "train": {
        "steps",
        "lr",
        "beta1",
        "beta2",
        "eps",
        "batch",
        "log_every",
        "checkpoint_every",
    },
    "io": {"image", "out_dir", "resolution", "threads"},
}

_REQUIRED = {
    "model": {"scheme", "bandwidth", "orientations", "hidden", "channels", "seed"},
    "train": {"steps", "lr"},
    "io": {"image", "out_dir", "resolution"},
}


def _read_sections(path: Path) -> dict[str, dict[str, tuple[str, int]]]:
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        if " #" in line:
            line = line.split(" #", 1)[0].rstrip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in _SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{current}]")
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA[current]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in section [{current}]")
        if key in sections[current]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        sections[current][key] = (value, lineno)
    return sections


def parse_config(path) -> RunConfig:
    """Parse and fully validate a run configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    sections = _read_sections(path)

    for section, required in _REQUIRED.items():
        if section not in sections:
            raise ConfigError(f"missing section [{section}]")
        missing = required - set(sections[section])
        if missing:
            raise ConfigError(
                f"section [{section}] is missing required keys: {sorted(missing)}"
            )

    ms = sections["model"]

    def mval(key, default=None):
        return ms[key] if key in ms else (default, 0)

    scheme_text, scheme_line = ms["scheme"]
    try:
        scheme = {"circular": Scheme.CIRCULAR, "rect": Scheme.RECTANGULAR}[scheme_text]
    except KeyError:
        raise ConfigError(
            f"line {scheme_line}: scheme must be 'circular' or 'rect', got {scheme_text!r}"
        ) from None

    radial_lo = (
        _parse_float_list(*ms["radial_lo"]) if "radial_lo" in ms else DEFAULT_RADIAL_LO
    )
    radial_hi = (
        _parse_float_list(*ms["radial_hi"]) if "radial_hi" in ms else DEFAULT_RADIAL_HI
    )
    seed = _parse_int(*ms["seed"])
    try:
        tiling = TilingSpec(
            scheme=scheme,
            bandwidth_B=_parse_number(*ms["bandwidth"]),
            orientations_m=_parse_int(*ms["orientations"]),
            radial_lo=radial_lo,
            radial_hi=radial_hi,
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(f"[model]: {exc}") from None

    fan_selection: str | tuple[int, ...] = "all"
    if "fans" in ms:
        text, line = ms["fans"]
        if text in ("all", "half"):
            fan_selection = text
        else:
            fan_selection = tuple(int(v) for v in _parse_float_list(text, line))

    model = ModelConfig(
        tiling=tiling,
        fan_selection=fan_selection,
        hidden=_parse_int(*ms["hidden"]),
        channels=_parse_int(*ms["channels"]),
        seed=seed,
    )
    if model.hidden < 1 or model.channels < 1:
        raise ConfigError("[model]: hidden and channels must be >= 1")

    ts = sections["train"]

    def tnum(key, default):
        return _parse_number(*ts[key]) if key in ts else default

    batch = None
    if "batch" in ts:
        text, line = ts["batch"]
        batch = None if text == "full" else _parse_int(text, line)
    try:
        train = TrainConfig(
            steps=_parse_int(*ts["steps"]),
            lr=tnum("lr", 1e-3),
            beta1=tnum("beta1", 0.9),
            beta2=tnum("beta2", 0.999),
            eps=tnum("eps", 1e-8),
            batch=batch,
            seed=seed,
            log_every=int(tnum("log_every", 100)),
            checkpoint_every=(
                _parse_int(*ts["checkpoint_every"]) if "checkpoint_every" in ts else None
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"[train]: {exc}") from None

    io = sections["io"]
    image = Path(io["image"][0])
    if not image.is_absolute():
        image = path.parent / image
    if not image.exists():
        raise ConfigError(f"line {io['image'][1]}: image file {image} does not exist")
    resolution = _parse_int(*io["resolution"])
    if resolution < 2:
        raise ConfigError(f"line {io['resolution'][1]}: resolution must be >= 2")
    threads = _parse_int(*io["threads"]) if "threads" in io else 1
    out_dir = Path(io["out_dir"][0])
    if not out_dir.is_absolute():
        out_dir = path.parent / out_dir

    return RunConfig(
        model=model,
        train=train,
        image=image,
        out_dir=out_dir,
        resolution=resolution,
        threads=threads,
        path=path,
    )


def default_config_text(image="data/cameraman_128.pgm", out_dir="out/run") -> str:
    """Template matching the shipped image-fitting defaults."""
    return f"""\
[model]
scheme = rect
bandwidth = 64
orientations = 8
radial_lo = 0, 1/16, 1/8, 1/4
radial_hi = 1/8, 1/4, 1/2, 1
fans = half
hidden = 16
channels = 1
seed = 7

[train]
steps = 5000
lr = 0.001

[io]
image = {image}
out_dir = {out_dir}
resolution = 128
threads = 1
"""
