"""Self-describing binary model container.

Layout: an 8-byte magic, a little-endian uint32 header length, a JSON
header, then the raw array payload.  The header records the model
structure (branch specs, gains, frozen terms, optional build config) and
an index of named arrays with dtype, shape, and byte offset into the
payload.  All numeric payloads are little-endian float64 (complex arrays
as interleaved re/im pairs), so a save/load cycle is bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import Branch, BranchSpec, Encoding, ModelConfig, PNFModel
from .subband import Direction, Norm
from .tiling import Scheme, TilingSpec

__all__ = ["save_model", "load_model"]

MAGIC = b"PNFCHK01"


def _spec_to_dict(s: BranchSpec) -> dict:
    return {
        "orientation_index": s.orientation_index,
        "dir": list(s.dir.components),
        "half_angle": s.half_angle,
        "norm_p": s.norm_p.value,
        "region": list(s.region) if s.region is not None else None,
        "term_bands": [list(b) for b in s.term_bands],
        "hidden": s.hidden,
    }


def _spec_from_dict(d: dict) -> BranchSpec:
    return BranchSpec(
        orientation_index=int(d["orientation_index"]),
        dir=Direction(tuple(d["dir"])),
        half_angle=float(d["half_angle"]),
        norm_p=Norm(d["norm_p"]),
        region=tuple(d["region"]) if d["region"] is not None else None,
        term_bands=tuple(tuple(b) for b in d["term_bands"]),
        hidden=int(d["hidden"]),
    )


def _config_to_dict(c: ModelConfig | None) -> dict | None:
    if c is None:
        return None
    return {
        "tiling": {
            "scheme": c.tiling.scheme.value,
            "bandwidth_B": c.tiling.bandwidth_B,
            "orientations_m": c.tiling.orientations_m,
            "radial_lo": list(c.tiling.radial_lo),
            "radial_hi": list(c.tiling.radial_hi),
            "seed": c.tiling.seed,
        },
        "fan_selection": list(c.fan_selection)
        if isinstance(c.fan_selection, tuple)
        else c.fan_selection,
        "hidden": c.hidden,
        "channels": c.channels,
        "seed": c.seed,
        "input_dim": c.input_dim,
    }


def _config_from_dict(d: dict | None) -> ModelConfig | None:
    if d is None:
        return None
    t = d["tiling"]
    sel = d["fan_selection"]
    return ModelConfig(
        tiling=TilingSpec(
            scheme=Scheme(t["scheme"]),
            bandwidth_B=float(t["bandwidth_B"]),
            orientations_m=int(t["orientations_m"]),
            radial_lo=tuple(t["radial_lo"]),
            radial_hi=tuple(t["radial_hi"]),
            seed=int(t["seed"]),
        ),
        fan_selection=tuple(sel) if isinstance(sel, list) else sel,
        hidden=int(d["hidden"]),
        channels=int(d["channels"]),
        seed=int(d["seed"]),
        input_dim=int(d["input_dim"]),
    )


def _model_arrays(m: PNFModel):
    for j, b in enumerate(m.branches):
        for k, e in enumerate(b.chain_enc):
            yield f"b{j}.chain_freqs{k}", e.freqs
        for k, e in enumerate(b.shell_enc):
            yield f"b{j}.shell_freqs{k}", e.freqs
    yield from m.parameters()


def save_model(m: PNFModel, path) -> None:
    index = []
    payload = bytearray()
    for name, arr in _model_arrays(m):
        a = np.ascontiguousarray(arr)
        if a.dtype not in (np.float64, np.complex128):
            raise ValueError(f"unexpected dtype {a.dtype} for {name}")
        index.append(
            {
                "name": name,
                "dtype": str(a.dtype),
                "shape": list(a.shape),
                "offset": len(payload),
                "nbytes": a.nbytes,
            }
        )
        payload.extend(a.tobytes())
    header = {
        "format": 1,
        "input_dim": m.input_dim,
        "channels": m.channels,
        "branches": [_spec_to_dict(b.spec) for b in m.branches],
        "gains": [[list(k), v] for k, v in sorted(m.gains.items())],
        "frozen": sorted(list(k) for k in m.frozen),
        "config": _config_to_dict(m.config),
        "arrays": index,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def load_model(path) -> PNFModel:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + hlen].decode())
    if header.get("format") != 1:
        raise ValueError(f"unsupported checkpoint format {header.get('format')}")
    payload = data[12 + hlen :]
    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        start = entry["offset"]
        raw = payload[start : start + entry["nbytes"]]
        arrays[entry["name"]] = (
            np.frombuffer(raw, dtype=dt).reshape(entry["shape"]).copy()
        )

    branches = []
    for j, sd in enumerate(header["branches"]):
        spec = _spec_from_dict(sd)
        K = spec.n_terms
        chain_enc = [
            Encoding(freqs=arrays[f"b{j}.chain_freqs{k}"], band=spec.chain_band(k))
            for k in range(K)
        ]
        shell_enc = [
            Encoding(freqs=arrays[f"b{j}.shell_freqs{k}"], band=spec.shell_band(k))
            for k in range(K)
        ]
        branches.append(
            Branch(
                spec=spec,
                shell_enc=shell_enc,
                chain_enc=chain_enc,
                chain_w=[arrays[f"b{j}.chain{k + 1}"] for k in range(K - 1)],
                term_w=[arrays[f"b{j}.term{k}"] for k in range(K)],
                out_w=[arrays[f"b{j}.out{k}"] for k in range(K)],
            )
        )
    m = PNFModel(
        branches=branches,
        input_dim=int(header["input_dim"]),
        channels=int(header["channels"]),
        config=_config_from_dict(header.get("config")),
    )
    for key, v in header["gains"]:
        m.gains[tuple(key)] = float(v)
    m.frozen.update(tuple(k) for k in header["frozen"])
    return m
