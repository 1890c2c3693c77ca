"""Round trips for the on-disk formats."""

import numpy as np
import pytest

from depthgroup import io as dio
from depthgroup.errors import ValidationError
from depthgroup.geometry import CameraIntrinsics


class TestDepthPng:
    def test_round_trip_within_quantization(self, tmp_path):
        rng = np.random.default_rng(0)
        depth = rng.uniform(0.5, 80.0, size=(20, 30))
        path = tmp_path / "d.png"
        dio.save_depth_png(path, depth)
        loaded = dio.load_depth_png(path)
        scale = depth.max() / 60000.0
        assert np.abs(loaded - depth).max() <= scale / 2 + 1e-12

    def test_explicit_scale(self, tmp_path):
        depth = np.array([[1.0, 2.5], [0.01, 30.0]])
        path = tmp_path / "d.png"
        dio.save_depth_png(path, depth, scale=0.001)
        loaded = dio.load_depth_png(path)
        assert np.abs(loaded - depth).max() <= 0.0005 + 1e-12

    def test_out_of_range_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            dio.save_depth_png(tmp_path / "d.png", np.array([[100.0]]), scale=0.001)

    def test_dispatch_by_extension(self, tmp_path):
        depth = np.array([[1.0, 2.0], [3.0, 4.0]])
        dio.save_depth_png(tmp_path / "a.png", depth, scale=0.001)
        dio.save_pfm(tmp_path / "a.pfm", depth)
        assert np.abs(dio.load_depth(tmp_path / "a.png") - depth).max() < 0.001
        np.testing.assert_allclose(dio.load_depth(tmp_path / "a.pfm"), depth, rtol=1e-6)


class TestPfm:
    def test_exact_float32_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        data = rng.uniform(0.1, 500.0, size=(17, 23)).astype(np.float32)
        path = tmp_path / "m.pfm"
        dio.save_pfm(path, data)
        loaded = dio.load_pfm(path)
        np.testing.assert_array_equal(loaded.astype(np.float32), data)

    def test_rejects_multichannel(self, tmp_path):
        with pytest.raises(ValidationError):
            dio.save_pfm(tmp_path / "m.pfm", np.zeros((4, 4, 3)))


class TestLabelPng:
    def test_round_trip(self, tmp_path):
        labels = np.arange(12, dtype=np.int32).reshape(3, 4) * 100
        path = tmp_path / "l.png"
        dio.save_label_png(path, labels)
        assert np.array_equal(dio.load_label_png(path), labels)

    def test_rejects_negative(self, tmp_path):
        with pytest.raises(ValidationError):
            dio.save_label_png(tmp_path / "l.png", np.array([[-1]]))


class TestFeatureFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        rows = rng.standard_normal((37, 12)).astype(np.float32)
        path = tmp_path / "z.bin"
        dio.save_features(path, rows)
        loaded = dio.load_features(path)
        assert loaded.shape == (37, 12)
        np.testing.assert_array_equal(loaded.astype(np.float32), rows)

    def test_magic_checked(self, tmp_path):
        path = tmp_path / "z.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValidationError):
            dio.load_features(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "z.bin"
        dio.save_features(path, np.ones((4, 4), np.float32))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValidationError):
            dio.load_features(path)


class TestIntrinsicsJson:
    def test_round_trip(self, tmp_path):
        k = CameraIntrinsics(fx=500.0, fy=510.0, cx=320.0, cy=180.0, width=640, height=360)
        path = tmp_path / "k.json"
        dio.save_intrinsics(path, k)
        assert dio.load_intrinsics(path) == k

    def test_invalid_rejected(self):
        with pytest.raises(ValidationError):
            CameraIntrinsics(fx=-1.0, fy=1.0, cx=0.0, cy=0.0, width=4, height=4)
        with pytest.raises(ValidationError):
            CameraIntrinsics(fx=1.0, fy=1.0, cx=9.0, cy=0.0, width=4, height=4)
