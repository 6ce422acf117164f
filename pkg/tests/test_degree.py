"""Brouwer degree: three formulas, structural properties, degree fields."""

import numpy as np
import pytest

from conftest import complex_square_map, disk_domain, perturbed_identity
from platecheck.degree import (
    RadialBump,
    degree_boundary,
    degree_field,
    degree_integral,
    degree_jacobian,
    level_set_boundary_check,
    perturb_target,
)
from platecheck.errors import BoundaryProximityError
from platecheck.geometry import (
    PiecewiseAffineMap,
    build_grid_domain,
    extrude_cylinder,
)

TOL = 0.05


def identity_map(dom):
    return PiecewiseAffineMap(dom, dom.vertices.copy())


class TestJacobianRoute:
    def test_identity_disk(self, disk_8):
        res = degree_jacobian(identity_map(disk_8), [0.0, 0.0],
                              tolerance=TOL)
        assert res.value == 1
        assert res.regular

    def test_antipodal_3d(self):
        cube = build_grid_domain(((-1, -1, -1), (1, 1, 1)), 2)
        f = PiecewiseAffineMap(cube, -cube.vertices)
        res = degree_jacobian(f, [0.1, 0.05, 0.02], tolerance=TOL)
        assert res.value == -1

    def test_complex_square(self, disk_8):
        res = degree_jacobian(complex_square_map(disk_8), [0.25, 0.0],
                              tolerance=TOL)
        assert res.value == 2

    def test_outside_hull(self, disk_8):
        res = degree_jacobian(identity_map(disk_8), [5.0, 5.0],
                              tolerance=TOL)
        assert res.value == 0

    def test_boundary_proximity_error(self, disk_8):
        with pytest.raises(BoundaryProximityError) as err:
            degree_jacobian(identity_map(disk_8), [0.999, 0.0],
                            tolerance=TOL)
        assert err.value.margin >= 0.0


class TestBoundaryRoute:
    def test_identity_square(self, unit_square_8):
        res = degree_boundary(identity_map(unit_square_8), [0.5, 0.5],
                              tolerance=TOL)
        assert res.value == 1

    def test_complex_square_winding(self, disk_8):
        res = degree_boundary(complex_square_map(disk_8), [0.25, 0.0],
                              tolerance=TOL)
        assert res.value == 2

    def test_cross_method_agreement(self, disk_8):
        rng = np.random.default_rng(7)
        for _ in range(50):
            f = perturbed_identity(disk_8, rng)
            y = rng.uniform(-0.3, 0.3, size=2)
            a = degree_jacobian(f, y, tolerance=TOL)
            b = degree_boundary(f, y, tolerance=TOL)
            assert a.value == b.value


class TestIntegralRoute:
    def test_identity(self, disk_8):
        est, err = degree_integral(identity_map(disk_8),
                                   RadialBump([0.0, 0.0], 0.2))
        assert est == pytest.approx(1.0, abs=max(1e-6, err))

    def test_dilation_degree_one(self):
        # x -> 2x has degree 1, not det = 2^n.
        dom = disk_domain(rings=6, sectors=18)
        f = PiecewiseAffineMap(dom, 2.0 * dom.vertices)
        est, err = degree_integral(f, RadialBump([0.0, 0.0], 0.3))
        assert est == pytest.approx(1.0, abs=max(1e-6, err))

    def test_complex_square(self, disk_8):
        est, _ = degree_integral(complex_square_map(disk_8),
                                 RadialBump([0.25, 0.0], 0.1))
        assert est == pytest.approx(2.0, abs=1e-3)


class TestStructuralProperties:
    def test_homotopy_invariance(self, disk_8):
        rng = np.random.default_rng(11)
        f = perturbed_identity(disk_8, rng, amplitude=0.03)
        g = perturbed_identity(disk_8, rng, amplitude=0.03)
        y = np.array([0.05, -0.1])
        assert degree_jacobian(f, y, tolerance=TOL).value == \
            degree_jacobian(g, y, tolerance=TOL).value

    def test_locality(self, disk_8):
        f = identity_map(disk_8)
        y = np.array([0.0, 0.0])
        before = degree_jacobian(f, y, tolerance=TOL).value
        # Perturb values only near the rim, far from y.
        vals = f.values.copy()
        far = np.linalg.norm(vals, axis=1) > 0.8
        vals[far] += 0.02
        g = PiecewiseAffineMap(disk_8, vals)
        assert degree_jacobian(g, y, tolerance=TOL).value == before

    def test_component_constancy(self, disk_8):
        f = complex_square_map(disk_8)
        # Path inside one component of the complement of f(boundary).
        for t in np.linspace(0.0, 1.0, 7):
            y = np.array([0.2 + 0.1 * t, 0.05 * t])
            assert degree_jacobian(f, y, tolerance=TOL).value == 2

    def test_perturb_target_deterministic(self):
        y = np.array([0.3, 0.4])
        a = perturb_target(y, 0.1, seed=5)
        b = perturb_target(y, 0.1, seed=5)
        assert np.array_equal(a, b)
        assert 0 < np.linalg.norm(a - y) <= 0.05


def _slab_extension(resolution=6):
    """Flat unit-thickness slab over the unit square."""
    base = build_grid_domain(((0, 0), (1, 1)), resolution)
    prism = extrude_cylinder(base, 2, 1.0)
    return PiecewiseAffineMap(prism, prism.vertices.copy())


def _tilted_sheet(z0, z1, resolution=8):
    dom = build_grid_domain(((2.0, 0.0), (3.0, 1.0)), resolution)
    x = dom.vertices
    z = z0 + (z1 - z0) * (x[:, 0] - 2.0)
    vals = np.stack([x[:, 0] - 1.75, x[:, 1], z], axis=1)
    return PiecewiseAffineMap(dom, vals)


class TestDegreeField:
    def test_sheet_below_slab_all_zero(self):
        u_hat = _slab_extension()
        u2 = _tilted_sheet(-0.5, -0.4)
        samples = u2.domain.vertices[
            np.all(np.abs(u2.domain.vertices - [2.5, 0.5]) < 0.4, axis=1)]
        fld = degree_field(u_hat, u2, samples, tolerance=0.05)
        assert np.all(fld.values[~fld.in_exclusion] == 0)

    def test_crossing_sheet_two_levels(self):
        u_hat = _slab_extension()
        u2 = _tilted_sheet(-0.5, 1.5)
        from platecheck.geometry import sample_interior
        samples = sample_interior(u2.domain, 200, seed=0)
        fld = degree_field(u_hat, u2, samples, tolerance=0.05)
        vals = fld.values[~fld.in_exclusion]
        assert (vals == 0).sum() > 10
        assert (vals == 1).sum() > 10
        assert set(np.unique(vals)) <= {0, 1}

    def test_tangent_sheet_lands_in_exclusion(self):
        u_hat = _slab_extension()
        u2 = _tilted_sheet(0.0, 0.0)  # touching the bottom face plane
        from platecheck.geometry import sample_interior
        samples = sample_interior(u2.domain, 10, seed=0)
        fld = degree_field(u_hat, u2, samples, tolerance=0.05)
        assert fld.in_exclusion.all()

    def test_classification_partition(self):
        u_hat = _slab_extension()
        u2 = _tilted_sheet(-0.5, 1.5)
        from platecheck.geometry import sample_interior
        samples = sample_interior(u2.domain, 64, seed=1)
        fld = degree_field(u_hat, u2, samples, tolerance=0.05)
        assert len(fld.values) == len(samples)
        assert len(fld.in_exclusion) == len(samples)


class TestLevelSetBoundaryCheck:
    @staticmethod
    def _grid_field(n=24):
        u_hat = _slab_extension()
        u2 = _tilted_sheet(-0.5, 1.5, resolution=8)
        xs = np.linspace(2.05, 2.95, n)
        ys = np.linspace(0.05, 0.95, n)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        samples = np.stack([X.ravel(), Y.ravel()], axis=1)
        fld = degree_field(u_hat, u2, samples, tolerance=0.05,
                           grid_shape=(n, n))
        return fld, u2, u_hat

    def test_no_violations(self):
        fld, u2, u_hat = self._grid_field()
        violations = level_set_boundary_check(
            fld, u2, u_hat.boundary_image())
        assert violations == []

    def test_injected_flip_detected(self):
        fld, u2, u_hat = self._grid_field()
        inside = np.nonzero(~fld.in_exclusion & (fld.values == 1))[0]
        fld.values[inside[len(inside) // 2]] = 3
        violations = level_set_boundary_check(
            fld, u2, u_hat.boundary_image())
        assert len(violations) >= 1

    def test_constant_field_vacuous(self):
        u_hat = _slab_extension()
        u2 = _tilted_sheet(-0.5, -0.4)
        n = 8
        xs = np.linspace(2.1, 2.9, n)
        ys = np.linspace(0.1, 0.9, n)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        samples = np.stack([X.ravel(), Y.ravel()], axis=1)
        fld = degree_field(u_hat, u2, samples, tolerance=0.05,
                           grid_shape=(n, n))
        assert level_set_boundary_check(
            fld, u2, u_hat.boundary_image()) == []
