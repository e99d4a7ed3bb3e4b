"""Quality metric tests: local normalization, distribution fits, the
36-feature chain against an independent reference extractor, SVR scoring,
and edge sharpness."""

import math

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from drostekit import ConfigError, DomainError, RasterImage, UnsupportedInputError
from drostekit.iqa import (
    SvrModel,
    brisque_features,
    brisque_score,
    default_model_path,
    dom_score,
    fit_aggd,
    fit_ggd,
    mscn,
)
from reference_nss import ref_features, ref_luma, ref_mscn
from synth import add_noise, blur, synth_photo


class TestMscn:
    def test_constant_image_is_all_zeros(self):
        img = RasterImage.from_float(np.full((32, 32, 3), 77.0))
        assert np.all(mscn(img) == 0.0)

    def test_white_noise_variance_band(self):
        rng = np.random.default_rng(0)
        img = RasterImage.from_float(rng.uniform(0, 255, size=(128, 128, 3)))
        v = float(mscn(img).var())
        assert 0.5 <= v <= 1.0

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_natural_image_mean_near_zero(self, seed):
        img = synth_photo(seed)
        assert abs(float(mscn(img).mean())) <= 0.05

    def test_matches_reference_implementation(self):
        img = synth_photo(4, size=96)
        mine = mscn(img)
        ref = ref_mscn(ref_luma(img.pixels))
        assert np.max(np.abs(mine - ref)) < 1e-8

    def test_too_small_rejected(self):
        img = RasterImage.from_float(np.zeros((6, 10, 3)))
        with pytest.raises(DomainError):
            mscn(img)


class TestDistributionFits:
    def test_gaussian_shape_near_two(self):
        rng = np.random.default_rng(11)
        shape, sigma = fit_ggd(rng.standard_normal(100000))
        assert abs(shape - 2.0) <= 0.1
        assert abs(sigma - 1.0) <= 0.02

    def test_laplace_shape_near_one(self):
        rng = np.random.default_rng(12)
        shape, _ = fit_ggd(rng.laplace(size=100000))
        assert abs(shape - 1.0) <= 0.1

    def test_uniform_shape_is_high(self):
        rng = np.random.default_rng(13)
        shape, _ = fit_ggd(rng.uniform(-1, 1, size=100000))
        assert shape > 5.0

    def test_symmetric_aggd_sides_match(self):
        rng = np.random.default_rng(14)
        shape, sl, sr, eta = fit_aggd(rng.standard_normal(100000))
        assert abs(sl - sr) / sr <= 0.05
        assert abs(eta) <= 0.02
        assert abs(shape - 2.0) <= 0.15

    def test_skewed_aggd_orders_sides(self):
        rng = np.random.default_rng(15)
        z = rng.standard_normal(100000)
        x = np.where(z < 0, 0.5 * z, 2.0 * z)
        shape, sl, sr, eta = fit_aggd(x)
        assert sr > sl
        assert eta > 0.0

    def test_too_few_samples_rejected(self):
        with pytest.raises(DomainError):
            fit_ggd(np.arange(50, dtype=np.float64))
        with pytest.raises(DomainError):
            fit_aggd(np.arange(50, dtype=np.float64))

    def test_degenerate_samples_rejected(self):
        with pytest.raises(DomainError):
            fit_ggd(np.full(500, 3.7))
        with pytest.raises(DomainError):
            fit_aggd(np.full(500, -1.2))


class TestFeatures:
    @pytest.mark.parametrize("seed", [5, 6])
    def test_matches_reference_extractor(self, seed):
        img = synth_photo(seed, size=128)
        mine = brisque_features(img)
        ref = ref_features(img.pixels)
        assert mine.shape == (36,)
        assert np.max(np.abs(mine - ref)) < 1e-3

    def test_shapes_positive_spreads_nonnegative(self):
        feats = brisque_features(synth_photo(7))
        for base in (0, 18):
            assert feats[base] > 0.0  # GGD shape
            assert feats[base + 1] >= 0.0  # GGD variance
            for block in range(4):
                off = base + 2 + 4 * block
                assert feats[off] > 0.0  # AGGD shape
                assert feats[off + 2] >= 0.0 and feats[off + 3] >= 0.0

    def test_horizontal_mirror_swaps_diagonal_blocks(self):
        img = synth_photo(8, size=96)
        mirrored = RasterImage(img.pixels[:, ::-1].copy())
        f = brisque_features(img)
        g = brisque_features(mirrored)
        swap = np.arange(36)
        for base in (0, 18):
            d1 = np.arange(base + 10, base + 14)
            d2 = np.arange(base + 14, base + 18)
            swap[d1], swap[d2] = d2, d1.copy()
        assert np.allclose(g, f[swap], atol=1e-9)

    def test_alpha_channel_ignored(self):
        img = synth_photo(9, size=96)
        tweaked = img.copy()
        tweaked.pixels[:, :, 3] = 128
        assert np.array_equal(brisque_features(img), brisque_features(tweaked))

    def test_too_small_rejected(self):
        with pytest.raises(DomainError):
            brisque_features(RasterImage.from_float(np.zeros((12, 12, 3))))


def toy_model(n_sv=1):
    return SvrModel(
        gamma=0.5,
        rho=0.25,
        coefficients=np.full(n_sv, 2.0),
        support_vectors=np.zeros((n_sv, 36)),
        scale_min=np.full(36, -1.0),
        scale_max=np.full(36, 1.0),
    )


class TestSvrModel:
    def test_hand_computed_score(self):
        # scaling maps 0 -> 0; distance to the zero SV is 0; 2*exp(0) - 0.25
        model = toy_model()
        assert math.isclose(model.score(np.zeros(36)), 1.75, abs_tol=1e-12)

    def test_rbf_distance_term(self):
        model = toy_model()
        feats = np.zeros(36)
        feats[0] = 1.0  # scales to 1, squared distance 1
        expected = 2.0 * math.exp(-0.5) - 0.25
        assert math.isclose(model.score(feats), expected, rel_tol=1e-12)

    def test_save_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        model = SvrModel(
            gamma=0.05,
            rho=1.5,
            coefficients=rng.normal(size=7),
            support_vectors=rng.normal(size=(7, 36)),
            scale_min=np.full(36, -2.0),
            scale_max=np.full(36, 5.0),
        )
        path = tmp_path / "model.txt"
        model.save(path)
        again = SvrModel.load(path)
        feats = rng.normal(size=36)
        assert math.isclose(model.score(feats), again.score(feats), rel_tol=1e-15)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="missing model file"):
            SvrModel.load(tmp_path / "absent.txt")

    def test_malformed_file_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("gamma 0.05\nrho 0\nn_sv 1\nscale 0 0 1\n")
        with pytest.raises(ConfigError):
            SvrModel.load(path)

    def test_inverted_scale_range_rejected(self):
        with pytest.raises(ConfigError):
            SvrModel(
                gamma=0.5,
                rho=0.0,
                coefficients=np.ones(1),
                support_vectors=np.zeros((1, 36)),
                scale_min=np.full(36, 1.0),
                scale_max=np.full(36, 1.0),
            )

    def test_wrong_dimensionality_rejected(self):
        with pytest.raises(ConfigError):
            SvrModel(
                gamma=0.5,
                rho=0.0,
                coefficients=np.ones(1),
                support_vectors=np.zeros((1, 20)),
                scale_min=np.full(36, 0.0),
                scale_max=np.full(36, 1.0),
            )


class TestBrisqueScore:
    def test_packaged_model_present(self):
        assert default_model_path().is_file()

    def test_deterministic(self):
        img = synth_photo(10)
        assert brisque_score(img) == brisque_score(img)

    @pytest.mark.parametrize("seed", [1, 4, 9])
    def test_noise_strictly_worsens_score(self, seed):
        img = synth_photo(seed)
        noisy = add_noise(img, 10.0, seed=100 + seed)
        assert brisque_score(noisy) > brisque_score(img)

    def test_alpha_invariant(self):
        img = synth_photo(11)
        tweaked = img.copy()
        tweaked.pixels[:, :, 3] = 200
        assert brisque_score(img) == brisque_score(tweaked)


class TestDomScore:
    def test_step_edge_sharper_than_blurred(self):
        step = np.zeros((64, 64, 3))
        step[:, 32:] = 230.0
        step += 10.0
        sharp = RasterImage.from_float(step)
        soft = RasterImage.from_float(np.clip(gaussian_filter(step, (2.0, 2.0, 0)), 0, 255))
        assert dom_score(sharp) > dom_score(soft)

    @pytest.mark.parametrize("seed", [1, 2, 3, 4])
    def test_blur_lowers_score(self, seed):
        img = synth_photo(seed)
        assert dom_score(img) > dom_score(blur(img, 2.0))

    def test_affine_invariance_exact_scale(self):
        img = synth_photo(5)
        base = np.clip(img.rgb_f32().astype(np.float64), 0, 120)
        a = RasterImage.from_float(base)
        b = RasterImage.from_float(2.0 * base + 5.0)
        assert abs(dom_score(a) - dom_score(b)) < 1e-9

    def test_affine_invariance_fractional_scale(self):
        img = synth_photo(6)
        # even integers so 0.5 I + 64 stays exactly representable after quantization
        base = 2.0 * np.rint(img.rgb_f32().astype(np.float64) / 2.0)
        a = RasterImage.from_float(base)
        b = RasterImage.from_float(0.5 * base + 64.0)
        assert abs(dom_score(a) - dom_score(b)) < 1e-6

    @pytest.mark.parametrize("seed", range(1, 13))
    def test_natural_images_in_sanity_band(self, seed):
        assert 0.9 <= dom_score(synth_photo(seed)) <= 1.3

    def test_constant_image_unscorable(self):
        img = RasterImage.from_float(np.full((32, 32, 3), 50.0))
        with pytest.raises(UnsupportedInputError):
            dom_score(img)

    def test_too_small_rejected(self):
        with pytest.raises(DomainError):
            dom_score(RasterImage.from_float(np.zeros((12, 12, 3))))

    def test_alpha_invariant(self):
        img = synth_photo(12)
        tweaked = img.copy()
        tweaked.pixels[:, :, 3] = 99
        assert dom_score(img) == dom_score(tweaked)
