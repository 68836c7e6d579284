"""Metric oracles: direct-formula evaluations coded independently of the
production implementations."""

import math

import numpy as np
import pytest

from previvor.errors import ConfigError, DimensionError, EmptyInputError
from previvor.imagecore import RgbImage
from previvor.metrics import (
    FeatureExtractorSpec,
    MetricReport,
    apply_mask_policy,
    colorfulness,
    delta_colorfulness,
    evaluate_paired,
    evaluate_unpaired,
    fid,
    fid_from_embeddings,
    frechet_distance,
    psnr,
    ssim,
)
from previvor.prior import PriorMask


def rand_img(rng, h=16, w=16):
    return RgbImage(pixels=rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8))


def const_img(r, g, b, h=16, w=16):
    return RgbImage(pixels=np.tile(np.array([r, g, b], np.uint8), (h, w, 1)))


class TestPsnr:
    def test_identical_images_infinite(self):
        rng = np.random.default_rng(0)
        img = rand_img(rng)
        assert math.isinf(psnr(img, img))

    def test_full_scale_error_is_zero_db(self):
        assert psnr(const_img(0, 0, 0), const_img(255, 255, 255)) == pytest.approx(0.0)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a, b = rand_img(rng), rand_img(rng)
            d = a.pixels.astype(float) - b.pixels.astype(float)
            expected = 10.0 * math.log10(255.0**2 / float((d * d).mean()))
            assert psnr(a, b) == pytest.approx(expected, abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            psnr(const_img(0, 0, 0, h=8), const_img(0, 0, 0, h=9))


class TestSsim:
    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(2)
        img = rand_img(rng, 20, 20)
        assert ssim(img, img) == pytest.approx(1.0)

    def test_constant_images_closed_form(self):
        # mu1=0, mu2=255, zero variances: ((C1)(C2)) / ((255^2+C1)(C2))
        c1 = (0.01 * 255.0) ** 2
        expected = c1 / (255.0**2 + c1)
        got = ssim(const_img(0, 0, 0), const_img(255, 255, 255))
        assert got == pytest.approx(expected, abs=1e-12)

    def test_symmetry_on_random_pairs(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, b = rand_img(rng, 18, 18), rand_img(rng, 18, 18)
            assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_window_size_enforced(self):
        with pytest.raises(DimensionError):
            ssim(const_img(0, 0, 0, h=8, w=8), const_img(0, 0, 0, h=8, w=8))

    def test_range(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            v = ssim(rand_img(rng, 16, 16), rand_img(rng, 16, 16))
            assert -1.0 <= v <= 1.0


def oracle_colorfulness(px):
    """Direct Hasler-Suesstrunk formula, scalar loops kept simple."""
    px = px.astype(np.float64)
    rg = px[:, :, 0] - px[:, :, 1]
    yb = 0.5 * (px[:, :, 0] + px[:, :, 1]) - px[:, :, 2]
    sigma = (rg.std() ** 2 + yb.std() ** 2) ** 0.5
    mu = (rg.mean() ** 2 + yb.mean() ** 2) ** 0.5
    return sigma + 0.3 * mu


class TestColorfulness:
    def test_grayscale_is_exactly_zero(self):
        rng = np.random.default_rng(5)
        g = rng.integers(0, 256, size=(16, 16, 1)).astype(np.uint8)
        img = RgbImage(pixels=np.repeat(g, 3, axis=2))
        assert colorfulness(img) == 0.0

    def test_uniform_pure_red(self):
        expected = 0.3 * math.hypot(255.0, 127.5)
        assert colorfulness(const_img(255, 0, 0)) == pytest.approx(expected, abs=1e-9)

    def test_matches_oracle_on_random_images(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            img = rand_img(rng)
            assert colorfulness(img) == pytest.approx(oracle_colorfulness(img.pixels), abs=1e-9)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(7)
        img = rand_img(rng)
        flat = img.pixels.reshape(-1, 3)
        shuffled = RgbImage(pixels=flat[rng.permutation(len(flat))].reshape(img.pixels.shape))
        assert colorfulness(img) == pytest.approx(colorfulness(shuffled), abs=1e-9)


class TestDeltaColorfulness:
    def test_identical(self):
        rng = np.random.default_rng(8)
        img = rand_img(rng)
        assert delta_colorfulness(img, img) == 0.0

    def test_gray_vs_gray(self):
        assert delta_colorfulness(const_img(10, 10, 10), const_img(200, 200, 200)) == 0.0

    def test_symmetric(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            a, b = rand_img(rng), rand_img(rng, 20, 12)
            assert delta_colorfulness(a, b) == pytest.approx(delta_colorfulness(b, a))


def embeddings_with_exact_stats(rng, n, mu, diag):
    """Rows whose sample mean and sample covariance (ddof=1) equal exactly
    (mu, diag(diag)), built by whitening a random base."""
    d = len(mu)
    z = rng.normal(size=(n, d))
    z -= z.mean(axis=0)
    cov = np.cov(z, rowvar=False)
    vals, vecs = np.linalg.eigh(cov)
    white = z @ vecs @ np.diag(vals**-0.5) @ vecs.T
    return white @ np.diag(np.sqrt(diag)) + mu


class TestFid:
    def test_identical_sets_near_zero(self):
        rng = np.random.default_rng(10)
        imgs = [rand_img(rng) for _ in range(8)]
        assert fid(imgs, list(imgs), FeatureExtractorSpec()) < 1e-6

    def test_closed_form_diagonal_gaussians(self):
        rng = np.random.default_rng(11)
        eps = 1e-6
        mu1, d1 = np.array([1.0, -2.0, 0.5]), np.array([1.0, 2.0, 0.5])
        mu2, d2 = np.array([0.0, 1.0, 1.5]), np.array([2.0, 0.3, 1.0])
        emb1 = embeddings_with_exact_stats(rng, 40, mu1, d1)
        emb2 = embeddings_with_exact_stats(rng, 40, mu2, d2)
        a, b = d1 + eps, d2 + eps
        expected = float(np.sum((mu1 - mu2) ** 2) + np.sum(a + b - 2.0 * np.sqrt(a * b)))
        assert fid_from_embeddings(emb1, emb2, eps=eps) == pytest.approx(expected, abs=1e-6)

    def test_symmetry(self):
        rng = np.random.default_rng(12)
        e1 = rng.normal(size=(30, 5))
        e2 = rng.normal(1.0, 2.0, size=(25, 5))
        assert fid_from_embeddings(e1, e2) == pytest.approx(fid_from_embeddings(e2, e1), abs=1e-6)

    def test_non_negative(self):
        rng = np.random.default_rng(13)
        for _ in range(5):
            e1 = rng.normal(size=(12, 4))
            e2 = rng.normal(size=(12, 4))
            assert fid_from_embeddings(e1, e2) >= 0.0

    def test_frechet_distance_zero_on_equal_gaussians(self):
        rng = np.random.default_rng(14)
        m = rng.normal(size=4)
        s = rng.normal(size=(4, 4))
        s = s @ s.T
        assert frechet_distance(m, s, m.copy(), s.copy()) == pytest.approx(0.0, abs=1e-9)

    def test_empty_set_rejected(self):
        with pytest.raises(EmptyInputError):
            fid([], [const_img(0, 0, 0)], FeatureExtractorSpec())

    def test_deterministic(self):
        rng = np.random.default_rng(15)
        set_a = [rand_img(rng) for _ in range(6)]
        set_b = [rand_img(rng) for _ in range(6)]
        spec = FeatureExtractorSpec(seed=3)
        assert fid(set_a, set_b, spec) == fid(set_a, set_b, spec)


class TestMaskPolicy:
    def test_identity_mask(self):
        rng = np.random.default_rng(16)
        img = rand_img(rng)
        out = apply_mask_policy(img, PriorMask(mask=np.ones((16, 16))))
        assert np.array_equal(out.pixels, img.pixels)

    def test_zero_mask_blacks_out(self):
        rng = np.random.default_rng(17)
        out = apply_mask_policy(rand_img(rng), PriorMask(mask=np.zeros((16, 16))))
        assert np.all(out.pixels == 0)

    def test_idempotent(self):
        rng = np.random.default_rng(18)
        img = rand_img(rng)
        mask = PriorMask(mask=(rng.uniform(size=(16, 16)) < 0.5).astype(np.uint8))
        once = apply_mask_policy(img, mask)
        twice = apply_mask_policy(once, mask)
        assert np.array_equal(once.pixels, twice.pixels)


class TestReports:
    def test_paired_self_comparison(self):
        rng = np.random.default_rng(19)
        imgs = [(f"img{i}", rand_img(rng)) for i in range(3)]
        report = evaluate_paired(imgs, [(n, RgbImage(pixels=i.pixels)) for n, i in imgs])
        for row in report.rows:
            assert math.isinf(row["psnr"])
            assert row["ssim"] == pytest.approx(1.0)
            assert row["delta_colorfulness"] == 0.0

    def test_unpaired_emits_fid_and_set_delta_only(self):
        rng = np.random.default_rng(20)
        pred = [rand_img(rng) for _ in range(4)]
        ref = [rand_img(rng) for _ in range(4)]
        report = evaluate_unpaired(pred, ref, FeatureExtractorSpec())
        assert report.fid is not None
        assert report.set_delta_colorfulness is not None
        assert report.rows == []

    def test_incomparable_fids_refused(self):
        r1 = MetricReport(fid=1.0, feature_spec="random_conv/seed=0/dim=16")
        r2 = MetricReport(fid=2.0, feature_spec="random_conv/seed=1/dim=16")
        with pytest.raises(ConfigError):
            r1.assert_comparable(r2)

    def test_json_and_table_render(self):
        rng = np.random.default_rng(21)
        imgs = [(f"img{i}", rand_img(rng)) for i in range(2)]
        report = evaluate_paired(imgs, imgs)
        text = report.to_table()
        assert "img0" in text and "psnr" in text
        assert "unavailable" in report.to_json()  # LPIPS hook has no default

    def test_mask_policy_recorded_and_identical_masks_applied(self):
        rng = np.random.default_rng(22)
        imgs = [(f"i{k}", rand_img(rng)) for k in range(2)]
        refs = [(f"i{k}", rand_img(rng)) for k in range(2)]
        masks = {f"i{k}": PriorMask(mask=(rng.uniform(size=(16, 16)) < 0.5).astype(np.uint8))
                 for k in range(2)}
        report = evaluate_paired(imgs, refs, mask_for=masks)
        assert report.mask_policy == "prior_mask"
