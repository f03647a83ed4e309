import numpy as np
import pytest

from pnfield.images import (
    box_downsample,
    grid_coordinates,
    image_to_dataset,
    psnr,
    read_image,
    ssim,
    write_image,
)


class TestPgmPpm:
    def test_tiny_pgm_values(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 0, 255]))
        img = read_image(p)
        assert img.shape == (2, 2)
        assert np.array_equal(img, np.array([[0.0, 1.0], [0.0, 1.0]]))

    def test_roundtrip_byte_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, (16, 12))
        a = tmp_path / "a.pgm"
        b = tmp_path / "b.pgm"
        write_image(a, img)
        write_image(b, read_image(a))
        assert a.read_bytes() == b.read_bytes()

    def test_rgb_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 1, (8, 8, 3))
        p = tmp_path / "c.ppm"
        write_image(p, img)
        back = read_image(p)
        assert back.shape == (8, 8, 3)
        assert np.max(np.abs(back - img)) <= 0.5 / 255.0 + 1e-12

    def test_comments_in_header(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n# a comment\n2 1\n255\n" + bytes([10, 20]))
        img = read_image(p)
        assert img.shape == (1, 2)

    def test_ascii_rejected(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P2\n2 2\n255\n0 1 2 3\n")
        with pytest.raises(ValueError, match="ASCII"):
            read_image(p)

    def test_bad_maxval_rejected(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(ValueError, match="maxval"):
            read_image(p)

    def test_truncated_rejected(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
        with pytest.raises(ValueError, match="pixel bytes"):
            read_image(p)


class TestGrid:
    def test_pixel_centers(self):
        c = grid_coordinates(2)
        assert np.allclose(c, [[-0.25, -0.25], [0.25, -0.25], [-0.25, 0.25], [0.25, 0.25]])

    def test_dataset_layout(self):
        img = np.arange(6, dtype=float).reshape(2, 3) / 6
        coords, targets = image_to_dataset(img)
        assert coords.shape == (6, 2)
        assert targets.shape == (6, 1)
        # row-major: first row of pixels first
        assert np.allclose(targets[:3, 0], img[0])

    def test_box_downsample_means(self):
        img = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = box_downsample(img, 1)
        assert out.shape == (1, 1) and out[0, 0] == 0.5

    def test_box_downsample_noninteger_rejected(self):
        with pytest.raises(ValueError):
            box_downsample(np.zeros((9, 9)), 4)


def test_metrics_sanity():
    a = np.zeros((8, 8))
    assert psnr(a, a) == np.inf
    assert ssim(a + 0.5, a + 0.5) == pytest.approx(1.0)
    noisy = a + np.random.default_rng(0).normal(0, 0.2, a.shape)
    assert ssim(a + 0.5, noisy + 0.5) < 1.0
