import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hinote import ops
from hinote.attention import (
    BENCH_HEADER,
    GalerkinAttention,
    bench_attention,
    bench_csv,
    brute_force_kernel_sum,
    flops,
    galerkin_attention_np,
    galerkin_batched_np,
    galerkin_kernel,
    loglog_slope,
    param_count,
    softmax,
    vanilla_attention,
)
from hinote.gradcheck import grad_check


def standardized(m, eps=1e-5):
    return (m - m.mean(axis=0)) / np.sqrt(m.var(axis=0) + eps)


class TestBruteForce:
    def test_single_column(self, rng):
        q, k, v = rng.standard_normal((3, 7, 1))
        np.testing.assert_allclose(brute_force_kernel_sum(q, k, v), q * float(k[:, 0] @ v[:, 0]) / 7, rtol=1e-14)

    def test_zero_values(self, rng):
        q, k = rng.standard_normal((2, 5, 3))
        assert not brute_force_kernel_sum(q, k, np.zeros((5, 3))).any()

    def test_matches_factorised_form(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            m, d = int(rng.integers(1, 40)), int(rng.integers(1, 10))
            q, k, v = (rng.standard_normal((m, d)) for _ in range(3))
            ref = brute_force_kernel_sum(q, k, v)
            got = galerkin_kernel(q, k, v)
            assert np.max(np.abs(got - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


class TestGalerkinAttention:
    def test_matches_brute_force(self, f64, rng):
        att = GalerkinAttention(8, 1, rng, bias=False)
        h = rng.standard_normal((32, 8))
        w = att.weights()
        q, k, v = h @ w["wq"], standardized(h @ w["wk"]), standardized(h @ w["wv"])
        ref = brute_force_kernel_sum(q, k, v) @ w["wo"]
        np.testing.assert_allclose(att(h).data, ref, rtol=1e-12, atol=1e-13)

    def test_multi_head_matches_numpy(self, f64, rng):
        att = GalerkinAttention(12, 3, rng)
        att.out.bias.data[:] = rng.standard_normal(12)
        h = rng.standard_normal((2, 20, 12))
        w = att.weights()
        ref = np.stack([galerkin_attention_np(x, w["wq"], w["wk"], w["wv"], 3, w["wo"], w["bo"]) for x in h])
        np.testing.assert_allclose(att(h).data, ref, atol=1e-12)
        np.testing.assert_allclose(galerkin_batched_np(h, w["wq"], w["wk"], w["wv"], 3, w["wo"], w["bo"]), ref, atol=1e-12)

    def test_single_sample_gives_zero(self, f64, rng):
        att = GalerkinAttention(4, 2, rng, bias=False)
        assert not att(rng.standard_normal((1, 4))).data.any()

    def test_heads_must_divide_width(self, rng):
        with pytest.raises(ValueError, match="divisible"):
            GalerkinAttention(10, 4, rng)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(2, 40), st.integers(0, 2**31))
    def test_permutation_equivariant(self, m, seed):
        from hinote.tensor import precision

        rng = np.random.default_rng(seed)
        with precision(np.float64):
            att = GalerkinAttention(8, 2, rng)
            h = rng.standard_normal((m, 8))
            perm = rng.permutation(m)
            np.testing.assert_allclose(att(h[perm]).data, att(h).data[perm], atol=1e-10)

    def test_gradcheck(self, f64, rng):
        att = GalerkinAttention(6, 2, rng)
        h = rng.standard_normal((2, 9, 6))
        probe = rng.standard_normal((2, 9, 6))
        assert grad_check(lambda: ops.sum_(ops.mul(att(h), probe)), att.parameters()) < 1e-4

    def test_affine_identity_at_init_and_gradcheck(self, f64, rng):
        seed_rng = np.random.default_rng(3)
        plain = GalerkinAttention(6, 2, np.random.default_rng(3))
        aff = GalerkinAttention(6, 2, seed_rng, affine=True)
        h = rng.standard_normal((7, 6))
        np.testing.assert_allclose(aff(h).data, plain(h).data, atol=1e-14)
        for p in (aff.k_scale, aff.k_shift, aff.v_scale, aff.v_shift):
            p.data += 0.1 * rng.standard_normal(p.shape)
        probe = rng.standard_normal((7, 6))
        assert grad_check(lambda: ops.sum_(ops.mul(aff(h), probe)), aff.parameters()) < 1e-4


class TestVanilla:
    def test_uniform_scores_average_values(self, rng):
        h = rng.standard_normal((6, 4))
        wq = np.zeros((4, 4))
        wv = rng.standard_normal((4, 4))
        out = vanilla_attention(h, wq, rng.standard_normal((4, 4)), wv)
        np.testing.assert_allclose(out, np.broadcast_to((h @ wv).mean(axis=0), (6, 4)), atol=1e-12)

    def test_softmax_rows(self, rng):
        s = softmax(rng.standard_normal((5, 9)) * 10)
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-7)

    def test_single_token_returns_value(self, rng):
        h = rng.standard_normal((1, 4))
        wv = rng.standard_normal((4, 4))
        out = vanilla_attention(h, rng.standard_normal((4, 4)), rng.standard_normal((4, 4)), wv, heads=2)
        np.testing.assert_allclose(out, h @ wv, atol=1e-12)


class TestBenchmark:
    def test_flop_formulas(self):
        assert flops("galerkin", 100, 8) == 2 * 100 * 64 * 5
        assert flops("vanilla", 100, 8) == 6 * 100 * 64 + 4 * 100 * 100 * 8
        with pytest.raises(ValueError):
            flops("favor", 1, 1)

    def test_flop_ratio_grows_linearly(self):
        d = 16
        ratios = [flops("vanilla", m, d) / flops("galerkin", m, d) for m in (64, 128, 256, 512)]
        # ratio = 0.6 + 0.4 m/d, so consecutive differences are proportional to the step in m
        np.testing.assert_allclose(np.diff(ratios) / np.diff([64, 128, 256, 512]), 0.4 / d)

    def test_param_count(self):
        assert param_count(32) == 4 * 32 * 32 + 32
        assert param_count(32, bias=False) == 4096

    def test_report_deterministic_except_timing(self):
        ticks = iter(np.arange(0, 1000, 0.5))
        rows_a = bench_attention([8, 16], d=8, heads=2, reps=3, timer=lambda: next(ticks))
        rows_b = bench_attention([8, 16], d=8, heads=2, reps=3)
        strip = lambda rows: [r.__dict__ | {"median_seconds": None} for r in rows]  # noqa: E731
        assert strip(rows_a) == strip(rows_b)
        text = bench_csv(rows_a)
        assert text.splitlines()[0] == ",".join(BENCH_HEADER)
        assert len(text.splitlines()) == 5

    def test_slope_of_synthetic_rows(self):
        rows = bench_attention([16, 64], d=4, heads=1, reps=1, variants=("galerkin",))
        for r, t in zip(rows, (1e-3, 4e-3)):
            r.median_seconds = t
        assert loglog_slope(rows, "galerkin") == pytest.approx(1.0)

    @pytest.mark.slow
    def test_measured_growth_ratios(self):
        rows = bench_attention([1024, 4096], d=32, heads=4, reps=20, seed=0)
        t = {(r.variant, r.m): r.median_seconds for r in rows}
        g = t["galerkin", 4096] / t["galerkin", 1024]
        v = t["vanilla", 4096] / t["vanilla", 1024]
        assert 3 <= g <= 6
        assert v >= 10
