import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import RegularGridInterpolator

from hinote import ops
from hinote.gradcheck import grad_check
from hinote.nn import Parameter
from hinote.sampler import (
    EXTRA_CHANNELS,
    FeatureMap,
    neighbour_offsets,
    neighbour_table,
    query_grid,
    render,
    weighted_sum,
)

BOX = (-1.0, 1.0, -1.0, 1.0)


def centres(n, lo=-1.0, hi=1.0):
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def edge_padded_oracle(values, box=BOX):
    """scipy linear interpolation on the centre grid, padded by one replicated
    cell on every side so clamped border queries stay inside the hull."""
    _, h, w = values.shape
    x0, x1, y0, y1 = box
    dx, dy = (x1 - x0) / w, (y1 - y0) / h
    xs = np.concatenate([[x0 - 0.5 * dx], centres(w, x0, x1), [x1 + 0.5 * dx]])
    ys = np.concatenate([[y0 - 0.5 * dy], centres(h, y0, y1), [y1 + 0.5 * dy]])
    padded = np.pad(values, ((0, 0), (1, 1), (1, 1)), mode="edge")
    return [RegularGridInterpolator((ys, xs), ch, method="linear") for ch in padded]


class TestQueryGrid:
    def test_two_by_two(self):
        np.testing.assert_allclose(query_grid((2, 2)).coords(),
                                   [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)])

    def test_coincides_with_map_centres(self):
        xy = query_grid((3, 5)).coords()
        gx, gy = np.meshgrid(centres(5), centres(3))
        np.testing.assert_allclose(xy[:, 0], gx.ravel())
        np.testing.assert_allclose(xy[:, 1], gy.ravel())

    def test_non_integer_scale(self):
        xy = query_grid((23, 23)).coords()
        assert xy.shape == (23 * 23, 2)
        assert np.all(np.abs(xy) < 1)
        table = neighbour_table((16, 16), query_grid((23, 23)))
        assert not table.clamped.any()

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            query_grid((0, 4))


class TestOffsets:
    def test_at_centre(self):
        off = neighbour_offsets((centres(4)[1], centres(4)[2]), (4, 4))
        assert np.sum(np.all(off == 0, axis=1)) == 1

    def test_midpoint(self):
        q = (0.5 * (centres(4)[1] + centres(4)[2]),) * 2
        np.testing.assert_allclose(np.abs(neighbour_offsets(q, (4, 4))), 0.5)

    def test_antisymmetric_under_reflection(self):
        c = centres(8)[3]
        a = neighbour_offsets((c + 0.07, c - 0.11), (8, 8))
        b = neighbour_offsets((c - 0.07, c + 0.11), (8, 8))
        # reflecting through a centre swaps each neighbour with its diagonal and flips the sign
        np.testing.assert_allclose(a[0], -b[3], atol=1e-12)

    def test_outside_box_is_clamped_and_flagged(self):
        table = neighbour_table((4, 4), (np.array([[1.7, 0.0], [0.1, 0.2]]), BOX))
        assert table.clamped.tolist() == [True, False]
        np.testing.assert_allclose(table.weight.sum(axis=0), 1.0, atol=1e-12)


class TestWeights:
    def test_cell_centre_weight_one(self):
        table = neighbour_table((4, 4), (np.array([[centres(4)[2], centres(4)[1]]]), BOX))
        w = table.weight[:, 0]
        assert sorted(w.tolist()) == [0.0, 0.0, 0.0, 1.0]
        assert table.index[np.argmax(w), 0] == 1 * 4 + 2

    def test_midpoint_quarter(self):
        m = 0.5 * (centres(4)[1] + centres(4)[2])
        table = neighbour_table((4, 4), (np.array([[m, m]]), BOX))
        np.testing.assert_allclose(table.weight[:, 0], 0.25)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 60), st.integers(1, 60))
    def test_partition_of_unity_on_grids(self, h, w, ny, nx):
        table = neighbour_table((h, w), query_grid((ny, nx)))
        assert np.all(table.weight >= 0)
        np.testing.assert_allclose(table.weight.sum(axis=0), 1.0, atol=1e-12)

    def test_box_scaling_leaves_weights_unchanged(self):
        a = neighbour_table((7, 9), query_grid((23, 17)))
        b = neighbour_table((7, 9), query_grid((23, 17), tuple(3 * v for v in BOX)))
        assert a.weight.tobytes() == b.weight.tobytes()
        assert a.index.tobytes() == b.index.tobytes()
        pts = np.random.default_rng(2).uniform(-1, 1, (50, 2))
        c = neighbour_table((7, 9), (pts, BOX))
        d = neighbour_table((7, 9), (3 * pts, tuple(3 * v for v in BOX)))
        np.testing.assert_allclose(c.weight, d.weight, atol=1e-14)


class TestBilinearOracle:
    def test_random_points(self, rng):
        values = rng.standard_normal((3, 11, 13))
        pts = rng.uniform(-1, 1, (10_000, 2))
        table = neighbour_table((11, 13), (pts, BOX))
        ours = weighted_sum(values, table)
        oracle = np.stack([f(pts[:, ::-1]) for f in edge_padded_oracle(values)])
        assert np.max(np.abs(ours - oracle)) < 1e-12

    def test_non_square_box(self, rng):
        box = (0.0, 6.0, -2.0, 1.0)
        values = rng.standard_normal((1, 5, 8))
        pts = np.column_stack([rng.uniform(0, 6, 500), rng.uniform(-2, 1, 500)])
        ours = weighted_sum(values, neighbour_table((5, 8), (pts, box)))
        oracle = edge_padded_oracle(values, box)[0](pts[:, ::-1])
        assert np.max(np.abs(ours[0] - oracle)) < 1e-12


class TestRender:
    def test_layout(self, rng):
        z = rng.standard_normal((2, 3, 4, 5)).astype(np.float32)
        out = render(FeatureMap(z), query_grid((7, 6)))
        assert out.features.shape == (2, 4 * 3 + EXTRA_CHANNELS, 7, 6)
        cell = out.features.data[0, -2:]
        np.testing.assert_allclose(cell[0], 5 / 6)
        np.testing.assert_allclose(cell[1], 4 / 7)

    def test_coincidence_exact(self, rng):
        z = rng.standard_normal((1, 2, 6, 5))
        out = render(FeatureMap(z), query_grid((6, 5)))
        table = out.table
        summed = sum(out.features.data[:, 2 * i:2 * i + 2] for i in range(4))
        np.testing.assert_array_equal(summed, z)
        assert np.all(np.sort(table.weight, axis=0)[-1] == 1.0)

    def test_feature_map_cell_sizes(self):
        fmap = FeatureMap(np.zeros((1, 1, 4, 8)), (0.0, 2.0, 0.0, 1.0))
        assert fmap.dx == 0.25 and fmap.dy == 0.25

    def test_empty_map(self):
        with pytest.raises(ValueError, match="empty"):
            render(FeatureMap(np.zeros((1, 1, 0, 4))), query_grid((2, 2)))

    def test_gradcheck(self, f64, rng):
        z = Parameter(rng.standard_normal((1, 2, 3, 4)))
        probe = rng.standard_normal((1, 8 + EXTRA_CHANNELS, 5, 7))
        err = grad_check(lambda: ops.sum_(ops.mul(render(FeatureMap(z), query_grid((5, 7))).features, probe)), [z])
        assert err < 1e-4
