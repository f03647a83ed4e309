import numpy as np
import pytest

from pnfield.checkpoint import load_model, save_model
from pnfield.model import default_image_config, forward_terms, init_model
from tests.test_model import tiny_model


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        m = init_model(default_image_config(hidden=4, channels=1, seed=3))
        m.gains[(2, 1)] = 0.25
        m.frozen.add((0, 0))
        p = tmp_path / "m.pnf"
        save_model(m, p)
        back = load_model(p)
        for (na, wa), (nb, wb) in zip(m.parameters(), back.parameters()):
            assert na == nb
            assert wa.tobytes() == wb.tobytes()
        for ba, bb in zip(m.branches, back.branches):
            assert ba.spec == bb.spec
            for ea, eb in zip(ba.chain_enc + ba.shell_enc, bb.chain_enc + bb.shell_enc):
                assert ea.freqs.tobytes() == eb.freqs.tobytes()
        assert back.gains == m.gains
        assert back.frozen == m.frozen
        assert back.config == m.config

    def test_save_load_save_identical_bytes(self, tmp_path):
        m = tiny_model(hidden=3)
        a = tmp_path / "a.pnf"
        b = tmp_path / "b.pnf"
        save_model(m, a)
        save_model(load_model(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_forward_identical_after_reload(self, tmp_path):
        m = tiny_model(hidden=4, seed=5)
        p = tmp_path / "m.pnf"
        save_model(m, p)
        back = load_model(p)
        x = np.random.default_rng(0).uniform(-0.5, 0.5, (37, 2))
        ya = forward_terms(m, x).total
        yb = forward_terms(back, x).total
        assert np.array_equal(ya, yb)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.pnf"
        p.write_bytes(b"NOTAMODEL" + bytes(100))
        with pytest.raises(ValueError, match="magic"):
            load_model(p)
