import numpy as np
import pytest

from protochange.errors import ModelLoadFailure, NotMultiple, ShapeMismatch
from protochange.features import (
    FeatureBackend,
    extract_features,
    feature_difference,
    patch_grid,
)
from protochange.raster_io import RasterImage

from conftest import make_image


class TestPatchGrid:
    def test_1022_gives_73(self):
        grid = patch_grid(1022, 1022)
        assert (grid.rows, grid.cols) == (73, 73)

    def test_single_patch(self):
        grid = patch_grid(14, 14)
        assert (grid.rows, grid.cols) == (1, 1)

    def test_integer_division(self):
        grid = patch_grid(42, 28)
        assert (grid.rows, grid.cols) == (2, 3)

    def test_not_multiple(self):
        with pytest.raises(NotMultiple):
            patch_grid(15, 14)
        with pytest.raises(NotMultiple):
            patch_grid(0, 14)


class TestDeterministicBackend:
    def test_constant_image_identical_vectors(self):
        img = make_image(42, 56, value=0.3)
        fmap = extract_features(img, FeatureBackend())
        flat = fmap.data.reshape(-1, fmap.dim)
        assert np.array_equal(flat, np.tile(flat[0], (flat.shape[0], 1)))

    def test_bitwise_determinism(self, rng):
        img = RasterImage(rng.random((56, 42, 3)))
        backend = FeatureBackend()
        a = extract_features(img, backend)
        b = extract_features(img, backend)
        assert np.array_equal(a.data, b.data)

    def test_dim_pad_and_truncate(self, rng):
        img = RasterImage(rng.random((28, 28, 3)))
        wide = extract_features(img, FeatureBackend(dim=20))
        # 3 means + 3 stds + 8 histogram bins = 14 informative dims
        assert np.array_equal(wide.data[:, :, 14:], np.zeros((2, 2, 6)))
        narrow = extract_features(img, FeatureBackend(dim=5))
        assert narrow.dim == 5
        assert np.array_equal(narrow.data, wide.data[:, :, :5])

    def test_translation_by_one_patch_shifts_grid(self, rng):
        data = rng.random((28, 70, 3))
        shifted = np.roll(data, 14, axis=1)
        f_orig = extract_features(RasterImage(data), FeatureBackend())
        f_shift = extract_features(RasterImage(shifted), FeatureBackend())
        assert np.array_equal(f_orig.data[:, :-1], f_shift.data[:, 1:])

    def test_min_dim_enforced(self):
        with pytest.raises(ValueError):
            FeatureBackend(dim=3)

    def test_requires_patch_multiple(self):
        with pytest.raises(NotMultiple):
            extract_features(make_image(15, 14), FeatureBackend())


class TestFeatureDifference:
    def test_self_difference_is_zero(self, rng):
        fmap = extract_features(RasterImage(rng.random((28, 28, 3))), FeatureBackend())
        diff = feature_difference(fmap, fmap)
        assert not diff.data.any()

    def test_shape_mismatch(self, rng):
        a = extract_features(RasterImage(rng.random((28, 28, 3))), FeatureBackend())
        b = extract_features(RasterImage(rng.random((28, 42, 3))), FeatureBackend())
        with pytest.raises(ShapeMismatch):
            feature_difference(a, b)

    def test_elementwise_enumeration_oracle(self, rng):
        a = extract_features(RasterImage(rng.random((28, 28, 3))), FeatureBackend())
        b = extract_features(RasterImage(rng.random((28, 28, 3))), FeatureBackend())
        diff = feature_difference(a, b)
        for r in range(2):
            for c in range(2):
                for d in range(a.dim):
                    assert diff.data[r, c, d] == b.data[r, c, d] - a.data[r, c, d]

    def test_antisymmetry(self, rng):
        a = extract_features(RasterImage(rng.random((42, 28, 3))), FeatureBackend())
        b = extract_features(RasterImage(rng.random((42, 28, 3))), FeatureBackend())
        ab = feature_difference(a, b)
        ba = feature_difference(b, a)
        assert np.array_equal(ab.data, -ba.data)
        assert np.linalg.norm(ab.data) == np.linalg.norm(ba.data)


@pytest.fixture(scope="module")
def tiny_model_path(tmp_path_factory):
    torch = pytest.importorskip("torch")

    class TinyTokenizer(torch.nn.Module):
        def __init__(self, dim: int = 8):
            super().__init__()
            torch.manual_seed(0)
            self.conv = torch.nn.Conv2d(3, dim, kernel_size=14, stride=14)

        def forward(self, x):
            t = self.conv(x)
            return t.flatten(2).transpose(1, 2)

    path = tmp_path_factory.mktemp("models") / "tiny.pt"
    torch.jit.save(torch.jit.script(TinyTokenizer()), str(path))
    return str(path)


class TestNeuralBackend:
    def test_missing_model_fails_fast(self):
        backend = FeatureBackend(kind="neural", dim=8, model_path="/nonexistent/model.pt")
        with pytest.raises(ModelLoadFailure) as err:
            backend.validate_loadable()
        assert "/nonexistent/model.pt" in str(err.value)

    def test_token_grid_shape(self, tiny_model_path, rng):
        img = RasterImage(rng.random((42, 56, 3)))
        fmap = extract_features(img, FeatureBackend(kind="neural", dim=8, model_path=tiny_model_path))
        assert (fmap.grid.rows, fmap.grid.cols, fmap.dim) == (3, 4, 8)
        assert np.isfinite(fmap.data).all()

    def test_deterministic(self, tiny_model_path, rng):
        img = RasterImage(rng.random((28, 28, 3)))
        backend = FeatureBackend(kind="neural", dim=8, model_path=tiny_model_path)
        a = extract_features(img, backend)
        b = extract_features(img, backend)
        assert np.array_equal(a.data, b.data)

    def test_wrong_token_count_rejected(self, tmp_path, rng):
        torch = pytest.importorskip("torch")

        class BadTokenizer(torch.nn.Module):
            def forward(self, x):
                return torch.zeros((1, 5, 8))

        path = tmp_path / "bad.pt"
        torch.jit.save(torch.jit.script(BadTokenizer()), str(path))
        img = RasterImage(rng.random((28, 28, 3)))
        with pytest.raises(ShapeMismatch):
            extract_features(img, FeatureBackend(kind="neural", dim=8, model_path=str(path)))

    def test_nan_output_rejected(self, tmp_path, rng):
        torch = pytest.importorskip("torch")

        class NanTokenizer(torch.nn.Module):
            def forward(self, x):
                n = (x.shape[2] // 14) * (x.shape[3] // 14)
                return torch.full((1, n, 8), float("nan"))

        path = tmp_path / "nan.pt"
        torch.jit.save(torch.jit.script(NanTokenizer()), str(path))
        img = RasterImage(rng.random((28, 28, 3)))
        with pytest.raises(ShapeMismatch):
            extract_features(img, FeatureBackend(kind="neural", dim=8, model_path=str(path)))
