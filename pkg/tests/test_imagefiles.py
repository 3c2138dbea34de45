import numpy as np
import pytest

from relightkit import imagefiles
from relightkit.errors import InvalidParameterError
from relightkit.geometry import (
    CameraModel,
    InverseDepthMap,
    build_sheet_mesh,
    sample_depth_grid,
)


class TestRgbPng:
    def test_uint8_roundtrip_exact(self, tmp_path, rng):
        img = rng.integers(0, 256, (12, 17, 3), dtype=np.uint8)
        path = tmp_path / "a.png"
        imagefiles.save_image(path, img)
        loaded = imagefiles.load_image(path)
        np.testing.assert_array_equal(np.round(loaded * 255).astype(np.uint8), img)

    def test_float_roundtrip_within_quantum(self, tmp_path, rng):
        img = rng.uniform(0, 1, (9, 9, 3))
        path = tmp_path / "a.png"
        imagefiles.save_image(path, img)
        np.testing.assert_allclose(imagefiles.load_image(path), img,
                                   atol=0.5 / 255.0)

    def test_atomic_write_leaves_no_temp(self, tmp_path, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        path = tmp_path / "a.png"
        imagefiles.save_image_atomic(path, img)
        assert path.exists()
        assert list(tmp_path.glob("*.tmp")) == []


class TestGrayPng:
    def test_roundtrip(self, tmp_path, rng):
        values = rng.uniform(0, 1, (10, 14))
        path = tmp_path / "g.png"
        imagefiles.save_gray(path, values)
        np.testing.assert_allclose(imagefiles.load_gray(path), values,
                                   atol=0.5 / 255.0)


class TestDepthPng:
    def test_roundtrip_within_quantum(self, tmp_path, rng):
        inv = rng.uniform(50.0, 1000.0, (20, 30))
        path = tmp_path / "d.png"
        imagefiles.write_inverse_depth_png(path, InverseDepthMap(inv))
        loaded = imagefiles.read_inverse_depth_png(path)
        np.testing.assert_allclose(loaded.values, inv, atol=0.5 / 64.0)

    def test_custom_quantization(self, tmp_path):
        inv = np.full((4, 4), 123.456)
        path = tmp_path / "d.png"
        imagefiles.write_inverse_depth_png(path, inv, quantization=256.0)
        loaded = imagefiles.read_inverse_depth_png(path, quantization=256.0)
        np.testing.assert_allclose(loaded.values, inv, atol=0.5 / 256.0)

    def test_quantization_validated(self, tmp_path):
        with pytest.raises(InvalidParameterError):
            imagefiles.write_inverse_depth_png(tmp_path / "d.png",
                                               np.zeros((2, 2)), quantization=0)

    def test_rgb_png_rejected_as_depth(self, tmp_path, rng):
        path = tmp_path / "rgb.png"
        imagefiles.save_image(path, rng.uniform(0, 1, (4, 4, 3)))
        with pytest.raises(InvalidParameterError):
            imagefiles.read_inverse_depth_png(path)


class TestPfm:
    def test_roundtrip_non_square(self, tmp_path, rng):
        inv = rng.uniform(10.0, 2000.0, (15, 23)).astype(np.float32).astype(np.float64)
        path = tmp_path / "d.pfm"
        imagefiles.write_pfm(path, InverseDepthMap(inv))
        loaded = imagefiles.read_pfm(path)
        np.testing.assert_array_equal(loaded.values, inv)

    def test_row_order_convention(self, tmp_path):
        # Payload rows are stored bottom-to-top; top-left of the array must
        # come back as top-left.
        inv = np.arange(12, dtype=np.float64).reshape(3, 4)
        path = tmp_path / "d.pfm"
        imagefiles.write_pfm(path, inv)
        raw = path.read_bytes()
        payload = np.frombuffer(raw.split(b"-1.0\n", 1)[1], dtype="<f4")
        np.testing.assert_array_equal(payload[:4], inv[2])
        np.testing.assert_array_equal(imagefiles.read_pfm(path).values, inv)

    def test_color_header_rejected(self, tmp_path):
        path = tmp_path / "bad.pfm"
        path.write_bytes(b"PF\n2 2\n-1.0\n" + b"\x00" * 48)
        with pytest.raises(InvalidParameterError):
            imagefiles.read_pfm(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "bad.pfm"
        path.write_bytes(b"Pf\n4 4\n-1.0\n" + b"\x00" * 8)
        with pytest.raises(InvalidParameterError):
            imagefiles.read_pfm(path)


class TestDispatch:
    def test_suffix_dispatch(self, tmp_path):
        inv = np.full((4, 4), 500.0)
        png, pfm = tmp_path / "d.png", tmp_path / "d.pfm"
        imagefiles.write_inverse_depth_png(png, inv)
        imagefiles.write_pfm(pfm, inv)
        np.testing.assert_allclose(imagefiles.read_inverse_depth(png).values,
                                   inv, atol=0.5 / 64.0)
        np.testing.assert_array_equal(imagefiles.read_inverse_depth(pfm).values, inv)

    def test_unknown_suffix_rejected(self, tmp_path):
        with pytest.raises(InvalidParameterError):
            imagefiles.read_inverse_depth(tmp_path / "d.exr")


class TestObj:
    def test_vertex_and_face_counts(self, tmp_path):
        inv = InverseDepthMap(np.full((8, 8), 500.0))
        cam = CameraModel(90.0, 8, 8)
        mesh = build_sheet_mesh(sample_depth_grid(inv, 5, 1000.0), cam)
        path = tmp_path / "m.obj"
        imagefiles.write_obj(path, mesh)
        lines = path.read_text().splitlines()
        assert sum(1 for l in lines if l.startswith("v ")) == 25
        assert sum(1 for l in lines if l.startswith("f ")) == 32
        # OBJ indices are 1-based
        faces = [l for l in lines if l.startswith("f ")]
        indices = [int(tok) for l in faces for tok in l.split()[1:]]
        assert min(indices) == 1 and max(indices) == 25
