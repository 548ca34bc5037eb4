import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hinote import sfb
from hinote.fields import GridField
from hinote.gradcheck import analytic_grads
from hinote.losses import (
    compute_prior,
    focal_composite_loss,
    l1_loss,
    l2_loss,
    minmax_normalize,
    pearson,
    prior_error_correlation,
    two_stage_loss,
    weight_map,
    write_correlation_csv,
)
from hinote.nn import Parameter
from hinote.spectral import spectral_resize
from hinote.tensor import ShapeError

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def smooth(n, kmax, seed):
    rng = np.random.default_rng(seed)
    x = (np.arange(n) + 0.5) / n
    f = np.zeros((n, n))
    for a in range(-kmax, kmax + 1):
        for b in range(0, kmax + 1):
            f += rng.standard_normal() * np.cos(2 * np.pi * (a * x[:, None] + b * x[None, :]) + rng.uniform(0, 6.3))
    return f


class TestPixelLosses:
    def test_values(self, f64):
        p, t = np.array([1.0, -2.0, 0.5]), np.array([0.0, 0.0, 0.0])
        assert float(l1_loss(p, t).data) == pytest.approx(3.5 / 3)
        assert float(l2_loss(p, t).data) == pytest.approx(5.25 / 3)
        assert float(l1_loss(p, t, np.array([2.0, 0.0, 0.0])).data) == pytest.approx(2.0 / 3)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l1_loss(np.zeros(3), np.zeros(4))


class TestPrior:
    def test_reference_equals_resize(self, rng):
        lr = rng.standard_normal((1, 8, 8))
        assert not compute_prior(spectral_resize(lr, (20, 20)), lr).any()

    def test_band_limited_true_hr(self):
        hr = smooth(32, 3, 1)[None]
        lr = spectral_resize(hr, (12, 12))
        assert compute_prior(hr, lr).max() < 1e-10

    def test_impulse(self, rng):
        lr = rng.standard_normal((1, 6, 6))
        base = spectral_resize(lr, (12, 12))
        ref = base.copy()
        ref[0, 3, 7] += 1.0
        want = np.zeros_like(ref)
        want[0, 3, 7] = 1.0
        np.testing.assert_allclose(compute_prior(ref, lr), want, atol=1e-12)


class TestNormalizeAndWeights:
    def test_basic(self):
        np.testing.assert_array_equal(minmax_normalize([1.0, 3.0]), [0.0, 1.0])
        np.testing.assert_array_equal(minmax_normalize(np.full(5, 2.0)), 0.0)
        with pytest.raises(ValueError):
            minmax_normalize(np.array([]))

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(2, 30), elements=finite), st.floats(0.01, 100), st.floats(-100, 100))
    def test_affine_invariance(self, p, c, d):
        # a span lost to rounding after the shift is not a property failure
        assume(np.ptp(p) > 1e-3 * (1 + np.abs(p).max()))
        np.testing.assert_allclose(minmax_normalize(c * p + d), minmax_normalize(p), atol=1e-6)

    def test_paper_defaults_range(self, rng):
        w = weight_map(rng.uniform(size=100), 1.0, 0.1).weights
        assert w.min() == 1.0
        assert w.max() == pytest.approx(1.10517, abs=1e-5)

    def test_beta_zero(self, rng):
        np.testing.assert_array_equal(weight_map(rng.uniform(size=9), 2.5, 0.0).weights, 2.5)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(2, 40), elements=st.floats(0, 10)), st.floats(0.1, 5), st.floats(0.01, 3))
    def test_bounds_and_monotone(self, p, alpha, beta):
        w = weight_map(p, alpha, beta).weights
        assert np.all(w > 0)
        if np.ptp(p) > 0:
            assert w.min() == pytest.approx(alpha, rel=1e-12)
            assert w.max() == pytest.approx(alpha * math.exp(beta), rel=1e-12)
            order = np.argsort(p, kind="stable")
            assert np.all(np.diff(w[order]) >= 0)
            i, j = int(np.argmin(p)), int(np.argmax(p))
            assert w[j] > w[i]

    def test_invalid(self):
        with pytest.raises(ValueError, match="alpha"):
            weight_map(np.ones(3), 0.0)
        with pytest.raises(ValueError, match="source"):
            weight_map(np.ones(3), source="model")

    def test_export_as_sfb(self, rng, tmp_path):
        w = weight_map(rng.uniform(size=(1, 6, 6))).weights
        sfb.write_sfb(tmp_path / "w.sfb", [GridField(w)], dtype_code=1)
        np.testing.assert_array_equal(sfb.read_sfb(tmp_path / "w.sfb")[0].values, w)


class TestFocal:
    def test_exact_prediction_zero(self, f64, rng):
        # quarter-integers keep (target - base) + base exact
        base = rng.integers(-8, 8, (2, 1, 5, 5)) / 4
        target = rng.integers(-8, 8, (2, 1, 5, 5)) / 4
        loss = focal_composite_loss(target - base, base, target, rng.uniform(size=(2, 1, 5, 5)))
        assert float(loss.data) == 0.0

    def test_beta_zero_is_scaled_l1(self, f64, rng):
        pred, base, target = rng.standard_normal((3, 2, 1, 4, 4))
        loss = focal_composite_loss(pred, base, target, rng.uniform(size=target.shape), 1.5, 0.0, 0.5, 0.0)
        assert float(loss.data) == pytest.approx(0.75 * np.mean(np.abs(pred + base - target)))

    def test_uniform_error_uniform_weights(self, f64):
        target = np.zeros((1, 1, 4, 4))
        pred = np.full_like(target, 0.3)
        loss = focal_composite_loss(pred, np.zeros_like(target), target, np.full_like(target, 2.0), 2.0, 0.7, 3.0, 0.4)
        assert float(loss.data) == pytest.approx(6.0 * 0.3)

    def test_dynamic_weight_detached(self, f64, rng):
        base, target = rng.standard_normal((2, 1, 1, 3, 3))
        pred = Parameter(rng.standard_normal((1, 1, 3, 3)))
        prior = rng.uniform(size=(1, 1, 3, 3))
        (g,) = analytic_grads(lambda: focal_composite_loss(pred, base, target, prior, 1.0, 0.3, 1.0, 0.5), [pred])
        err = pred.data + base - target
        w = weight_map(prior, 1.0, 0.3, axis=(1, 2, 3)).weights * weight_map(np.abs(err), 1.0, 0.5, axis=(1, 2, 3)).weights
        np.testing.assert_allclose(g, w * np.sign(err) / err.size, rtol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_non_negative_and_zero_set(self, seed):
        rng = np.random.default_rng(seed)
        base, target = rng.integers(-8, 8, (2, 2, 1, 3, 3)) / 4
        pred = target - base
        mask = rng.uniform(size=pred.shape) < 0.5
        pred = np.where(mask, pred + rng.standard_normal(pred.shape), pred)
        loss = float(focal_composite_loss(pred, base, target, rng.uniform(size=pred.shape)).data)
        assert loss >= 0
        assert (loss == 0) == (not mask.any())

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            focal_composite_loss(np.zeros((1, 4)), np.zeros((1, 4)), np.zeros((1, 4)), np.zeros((1, 5)))


class TestTwoStage:
    def test_stage_two_beta_zero(self, f64, rng):
        pred, target = rng.standard_normal((2, 2, 6))
        w = weight_map(rng.uniform(size=(2, 6)), 1.7, 0.0).weights
        assert float(two_stage_loss(2, pred, target, w).data) == pytest.approx(1.7 * float(two_stage_loss(1, pred, target).data))

    def test_gradient_scales_with_weight(self, f64):
        pred = Parameter(np.array([1.0, 1.0]))
        (g,) = analytic_grads(lambda: two_stage_loss(2, pred, np.zeros(2), np.array([1.0, 2.0])), [pred])
        assert g[1] == pytest.approx(2 * g[0])

    def test_stage_errors(self):
        with pytest.raises(ValueError, match="frozen"):
            two_stage_loss(2, np.zeros(2), np.zeros(2))
        with pytest.raises(ValueError, match="stage"):
            two_stage_loss(3, np.zeros(2), np.zeros(2))


class TestCorrelation:
    def test_perfect(self, rng):
        pred, target = rng.standard_normal((2, 8, 8))
        assert prior_error_correlation(pred, target, np.abs(pred - target)) == pytest.approx(1.0)

    def test_constant_prior(self, rng):
        assert math.isnan(prior_error_correlation(rng.standard_normal(9), np.zeros(9), np.ones(9)))
        assert math.isnan(pearson(np.ones(4), np.arange(4.0)))

    def test_independent_fields(self):
        rng = np.random.default_rng(99)
        pred, target, p = rng.standard_normal((3, 64, 64))
        assert abs(prior_error_correlation(pred, target, np.abs(p))) < 2.58 / 64

    def test_matches_numpy(self, rng):
        a, b = rng.standard_normal((2, 50))
        assert pearson(a, b) == pytest.approx(np.corrcoef(a, b)[0, 1], abs=1e-14)

    def test_csv(self, tmp_path):
        write_correlation_csv(tmp_path / "c.csv", [(0, 1.0, 0.1, 0.5), (1, 1.0, 0.1, float("nan"))])
        assert (tmp_path / "c.csv").read_text().splitlines() == [
            "record,alpha,beta,pearson_r", "0,1,0.1,0.500000", "1,1,0.1,nan"]
