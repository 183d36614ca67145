import numpy as np
import pytest

from evflow.flowio import (FLO_MAGIC, flow_to_color, read_flo, read_pgm,
                           write_flo, write_pgm, write_ppm)


class TestFlo:
    def test_roundtrip_with_mask(self, tmp_path, rng):
        flow = rng.standard_normal((2, 6, 9)).astype(np.float32).astype(np.float64)
        valid = rng.random((6, 9)) > 0.3
        path = tmp_path / "f.flo"
        write_flo(path, flow, valid)
        back, vback = read_flo(path)
        assert np.array_equal(vback, valid)
        assert np.array_equal(back[:, valid], flow[:, valid])
        assert np.all(back[:, ~valid] == 0.0)

    def test_roundtrip_without_mask(self, tmp_path, rng):
        flow = rng.standard_normal((2, 4, 5)).astype(np.float32).astype(np.float64)
        path = tmp_path / "g.flo"
        write_flo(path, flow)
        back, vback = read_flo(path)
        assert np.array_equal(back, flow)
        assert vback.all()

    def test_header_layout(self, tmp_path):
        flow = np.zeros((2, 2, 3), dtype=np.float32)
        path = tmp_path / "h.flo"
        write_flo(path, flow)
        raw = path.read_bytes()
        assert np.frombuffer(raw[:4], "<f4")[0] == np.float32(FLO_MAGIC)
        assert tuple(np.frombuffer(raw[4:12], "<i4")) == (3, 2)  # width, height
        assert len(raw) == 12 + 2 * 3 * 2 * 4

    def test_invalid_pixels_use_sentinel(self, tmp_path):
        flow = np.ones((2, 2, 2), dtype=np.float32)
        valid = np.asarray([[True, False], [True, True]])
        path = tmp_path / "i.flo"
        write_flo(path, flow, valid)
        raw = np.frombuffer(path.read_bytes()[12:], "<f4").reshape(2, 2, 2)
        assert raw[0, 1, 0] > 1e9 and raw[0, 1, 1] > 1e9

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.flo"
        path.write_bytes(b"\x00" * 16)
        with pytest.raises(ValueError):
            read_flo(path)


class TestPgm:
    def test_roundtrip(self, tmp_path, rng):
        img = np.round(rng.uniform(0, 255, (7, 9)))
        path = tmp_path / "a.pgm"
        write_pgm(path, img)
        assert np.array_equal(read_pgm(path), img)

    def test_comment_handling(self, tmp_path):
        path = tmp_path / "c.pgm"
        body = bytes(range(6))
        path.write_bytes(b"P5\n# a comment\n3 2\n255\n" + body)
        img = read_pgm(path)
        assert img.shape == (2, 3) and img[1, 2] == 5


class TestFlowColor:
    def test_zero_flow_uniform_white(self):
        rgb = flow_to_color(np.zeros((2, 5, 5)))
        assert rgb.shape == (5, 5, 3)
        assert np.all(rgb == 255)

    def test_direction_maps_to_hue(self):
        flow = np.zeros((2, 1, 2))
        flow[0, 0, 0] = 1.0   # +x
        flow[0, 0, 1] = -1.0  # -x
        rgb = flow_to_color(flow)
        assert not np.array_equal(rgb[0, 0], rgb[0, 1])  # opposite directions differ

    def test_magnitude_saturates(self):
        flow = np.zeros((2, 1, 2))
        flow[0, 0, 0] = 1.0
        flow[0, 0, 1] = 10.0
        rgb = flow_to_color(flow).astype(int)
        # the small vector is closer to white (less saturated)
        assert rgb[0, 0].min() > rgb[0, 1].min()

    def test_ppm_writer(self, tmp_path):
        rgb = np.zeros((2, 2, 3))
        rgb[..., 0] = 255
        path = tmp_path / "x.ppm"
        write_ppm(path, rgb)
        raw = path.read_bytes()
        assert raw.startswith(b"P6\n2 2\n255\n")
        assert raw[-12:] == bytes([255, 0, 0] * 4)
