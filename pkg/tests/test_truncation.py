"""Lipschitz truncation: exact-agreement set, mismatch bounds, idempotence."""

import numpy as np
import pytest

from platecheck.errors import DegenerateTruncationError, InvalidArgumentError
from platecheck.geometry import PiecewiseAffineMap, build_grid_domain
from platecheck.truncation import lipschitz_truncate, truncation_bound_sweep


def spike_map(resolution=16, height=None):
    """Identity into R^2 with one interior vertex displaced upward."""
    dom = build_grid_domain(((0.0, 0.0), (1.0, 1.0)), resolution)
    mesh = 1.0 / resolution
    vals = dom.vertices.copy()
    center = np.argmin(np.linalg.norm(dom.vertices - 0.5, axis=1))
    vals[center, 1] += 10.0 * mesh if height is None else height
    return dom, vals, center, PiecewiseAffineMap(dom, vals)


class TestNoOp:
    def test_below_threshold_unchanged(self, unit_square_8):
        f = PiecewiseAffineMap(unit_square_8,
                               unit_square_8.vertices * 1.5)
        res = lipschitz_truncate(f, K=2.0)
        assert res.truncated is f
        assert res.mismatch_measure == 0.0
        assert res.excess_energy == 0.0
        assert res.good_simplices.all()

    def test_invalid_threshold(self, unit_square_8):
        f = PiecewiseAffineMap(unit_square_8,
                               unit_square_8.vertices.copy())
        with pytest.raises(InvalidArgumentError):
            lipschitz_truncate(f, K=0.0)


class TestSpike:
    def test_localized_mismatch(self):
        resolution = 16
        dom, vals, center, f = spike_map(resolution)
        res = lipschitz_truncate(f, K=3.0)
        assert res.lipschitz_bound <= 3.0 + 1e-9
        # Mismatch confined to the spike star plus a bounded number of
        # dilation layers: <= (2r)^2 cells around the center for small r.
        cell = (1.0 / resolution) ** 2
        assert 0.0 < res.mismatch_measure <= 2 * 8 * 8 * cell
        # Exact equality on good simplices, vertex-wise.
        good_v = np.unique(dom.simplices[res.good_simplices])
        assert np.array_equal(res.truncated.values[good_v],
                              vals[good_v])
        assert center not in good_v

    def test_idempotent(self):
        _, _, _, f = spike_map(16)
        res = lipschitz_truncate(f, K=3.0)
        again = lipschitz_truncate(res.truncated, K=3.0)
        assert again.mismatch_measure == 0.0
        assert np.array_equal(again.truncated.values,
                              res.truncated.values)

    def test_converged_flag(self):
        _, _, _, f = spike_map(16)
        res = lipschitz_truncate(f, K=3.0)
        assert res.converged
        assert res.iterations >= 1


class TestDegenerate:
    def test_uniform_dilation_all_bad(self, unit_square_8):
        f = PiecewiseAffineMap(unit_square_8,
                               5.0 * unit_square_8.vertices)
        with pytest.raises(DegenerateTruncationError):
            lipschitz_truncate(f, K=2.0)


class TestSweep:
    def test_smooth_family_all_zero(self, unit_square_8):
        x = unit_square_8.vertices
        family = [
            PiecewiseAffineMap(unit_square_8, x * s)
            for s in (0.5, 1.0, 1.5)
        ]
        out = truncation_bound_sweep(family, K=2.0)
        assert out["fitted_C2"] == 0.0
        assert all(r["mismatch"] == 0.0 for r in out["rows"])

    def test_constant_stable_over_spike_sizes(self):
        # Dyadic spike scales: same threshold-relative height, so
        # mismatch and excess both shrink like the cell area and a single
        # constant covers the whole family.
        family = [spike_map(8 * 2**j)[3] for j in range(4)]
        out = truncation_bound_sweep(family, K=3.0)
        ratios = [r["ratio"] for r in out["rows"]]
        assert len(ratios) == 4
        assert max(ratios) <= 2.0 * min(ratios)
        assert out["fitted_C2"] == max(ratios)
        # Every member's mismatch obeys the single fitted constant.
        for r in out["rows"]:
            assert r["mismatch"] <= out["fitted_C2"] * r["excess"] + 1e-15
