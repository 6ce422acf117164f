"""Scaled gradients, SO(3) distance, rigidity, energies, plate residuals."""

import numpy as np
import pytest

from conftest import random_rotation
from platecheck.elasticity import (
    ScaledDeformation,
    default_density,
    dist_SO3,
    energy_Ih,
    hessian_estimates,
    isometry_residual_and_II,
    midplane_average,
    rigidity_constant_scan,
    rigidity_fit,
    sample_rotations,
    scaled_gradient,
    scaling_check,
    screen_density,
    shortness_residual,
    vk_constraint_residual,
    vk_extract,
)
from platecheck.errors import InvalidArgumentError
from platecheck.geometry import (
    PiecewiseAffineMap,
    build_grid_domain,
    extrude_cylinder,
)


def plate_mesh(resolution=4, levels=2):
    base = build_grid_domain(((0, 0), (1, 1)), resolution)
    return extrude_cylinder(base, levels, 1.0, z0=-0.5)


def kirchhoff_identity(h, resolution=4):
    prism = plate_mesh(resolution)
    vals = prism.vertices.copy()
    vals[:, 2] *= h
    return ScaledDeformation(PiecewiseAffineMap(prism, vals), h)


class TestScaledGradient:
    def test_kirchhoff_identity(self):
        d = kirchhoff_identity(0.25)
        for sid in (0, 5):
            assert np.allclose(scaled_gradient(d, sid), np.eye(3),
                               atol=1e-12)

    def test_unscaled_third_column(self):
        prism = plate_mesh()
        d = ScaledDeformation(
            PiecewiseAffineMap(prism, prism.vertices.copy()), 0.5)
        G = scaled_gradient(d, 0)
        assert np.allclose(G[:, 2], [0, 0, 2], atol=1e-12)

    def test_rigid_motion(self):
        prism = plate_mesh()
        Q = random_rotation(np.random.default_rng(0))
        d = ScaledDeformation(
            PiecewiseAffineMap(prism, prism.vertices @ Q.T + 1.0), 1.0)
        assert np.allclose(scaled_gradient(d, 3), Q, atol=1e-10)


class TestDistSO3:
    def test_identity(self):
        assert dist_SO3(np.eye(3)) == pytest.approx(0.0, abs=1e-12)

    def test_stretch(self):
        assert dist_SO3(np.diag([2.0, 1.0, 1.0])) == pytest.approx(1.0)

    def test_reflection_against_bruteforce(self):
        F = np.diag([-1.0, 1.0, 1.0])
        val = dist_SO3(F)
        Rs = sample_rotations(20000, seed=1)
        brute = min(np.linalg.norm(F - R) for R in Rs)
        assert val == pytest.approx(2.0, abs=1e-9)
        assert val <= brute + 1e-3

    def test_frame_indifference(self):
        rng = np.random.default_rng(2)
        F = rng.normal(size=(3, 3))
        d0 = dist_SO3(F)
        for _ in range(10):
            Q = random_rotation(rng)
            assert dist_SO3(Q @ F) == pytest.approx(d0, abs=1e-9)
            assert dist_SO3(F @ Q) == pytest.approx(d0, abs=1e-9)

    def test_zero_iff_rotation(self):
        rng = np.random.default_rng(3)
        Q = random_rotation(rng)
        assert dist_SO3(Q) == pytest.approx(0.0, abs=1e-10)
        assert dist_SO3(1.01 * Q) > 1e-3

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidArgumentError):
            dist_SO3(np.full((3, 3), np.nan))


class TestRigidityFit:
    def test_exact_rigid(self):
        dom = build_grid_domain(((0, 0, 0), (1, 1, 1)), 3)
        Q = random_rotation(np.random.default_rng(4))
        c = np.array([0.3, -0.2, 1.0])
        v = PiecewiseAffineMap(dom, dom.vertices @ Q.T + c)
        fit = rigidity_fit(v, [0.5, 0.5, 0.5], 0.6)
        assert np.allclose(fit.rotation, Q, atol=1e-10)
        assert fit.residual <= 1e-10
        assert np.allclose(fit.affine(dom.vertices), v.values, atol=1e-9)

    def test_rotation_is_orthogonal(self):
        dom = build_grid_domain(((0, 0, 0), (1, 1, 1)), 3)
        rng = np.random.default_rng(5)
        v = PiecewiseAffineMap(
            dom, dom.vertices + 1e-3 * rng.normal(size=dom.vertices.shape))
        fit = rigidity_fit(v, [0.5, 0.5, 0.5], 0.6)
        R = fit.rotation
        assert np.allclose(R.T @ R, np.eye(3), atol=1e-10)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-10)

    def test_perturbation_residual_linear(self):
        dom = build_grid_domain(((0, 0, 0), (1, 1, 1)), 3)
        rng = np.random.default_rng(6)
        noise = rng.normal(size=dom.vertices.shape)
        res = []
        for eps in (1e-3, 2e-3, 4e-3):
            v = PiecewiseAffineMap(dom, dom.vertices + eps * noise)
            res.append(rigidity_fit(v, [0.5] * 3, 0.6).residual)
        assert res[1] == pytest.approx(2 * res[0], rel=0.2)
        assert res[2] == pytest.approx(4 * res[0], rel=0.2)

    def test_optimality_against_sampled_rotations(self):
        dom = build_grid_domain(((0, 0, 0), (1, 1, 1)), 2)
        rng = np.random.default_rng(7)
        v = PiecewiseAffineMap(
            dom, dom.vertices + 0.05 * rng.normal(size=dom.vertices.shape))
        fit = rigidity_fit(v, [0.5] * 3, 0.8)
        vols = dom.simplex_volumes
        G = v.gradients
        for Q in sample_rotations(1000, seed=8):
            other = float(np.sqrt(
                (vols * ((G - Q) ** 2).sum(axis=(1, 2))).sum()))
            assert fit.residual <= other + 1e-12

    def test_reflected_map(self):
        dom = build_grid_domain(((0, 0, 0), (1, 1, 1)), 2)
        v = PiecewiseAffineMap(dom, dom.vertices * [-1.0, 1.0, 1.0])
        fit = rigidity_fit(v, [0.5] * 3, 0.8)
        assert np.linalg.det(fit.rotation) == pytest.approx(1.0, abs=1e-10)
        # Residual matches the L2 dist of the reflection to the best
        # rotation: dist(diag(-1,1,1), SO(3)) = 2 per unit volume.
        assert fit.residual == pytest.approx(2.0, rel=1e-6)


class TestConstantScan:
    @staticmethod
    def _builder(scale):
        return build_grid_domain(
            ((0, 0, 0), (scale, scale, scale)), 3)

    def test_rigid_family_exact(self):
        rng = np.random.default_rng(9)
        Qs = [random_rotation(rng) for _ in range(3)]
        family = [(lambda x, Q=Q: x @ Q.T) for Q in Qs]
        table = rigidity_constant_scan(family, self._builder,
                                       [1.0, 0.5, 0.25])
        assert all(row["exact_rigid_members"] == 3 for row in table)
        assert all(row["constant"] is None for row in table)

    def test_perturbation_family_spread(self):
        rng = np.random.default_rng(10)
        coeffs = [rng.normal(size=(3, 3)) for _ in range(4)]

        def member(c):
            def f(x):
                # Scale-covariant smooth perturbation of the identity.
                s = x.max() if x.size else 1.0
                return x + 0.01 * np.sin(np.pi * x / max(s, 1e-9)) @ c
            return f

        family = [member(c) for c in coeffs]
        scales = [1.0, 0.5, 0.25]
        table = rigidity_constant_scan(family, self._builder, scales)
        cs = [row["constant"] for row in table]
        assert max(cs) / min(cs) < 1.1

    def test_single_nonrigid(self):
        family = [lambda x: x * [1.1, 1.0, 1.0]]
        table = rigidity_constant_scan(family, self._builder, [1.0, 0.5])
        assert all(np.isfinite(row["constant"]) and row["constant"] > 0
                   for row in table)


class TestEnergy:
    def test_kirchhoff_zero(self):
        W = default_density()
        assert energy_Ih(kirchhoff_identity(0.3), W) == pytest.approx(
            0.0, abs=1e-12)

    def test_constant_gradient(self):
        prism = plate_mesh()
        F0 = np.diag([1.5, 1.0, 1.0])
        d = ScaledDeformation(
            PiecewiseAffineMap(prism, prism.vertices @ F0.T), 1.0)
        W = default_density()
        assert energy_Ih(d, W) == pytest.approx(
            W(None, F0) * 1.0, rel=1e-10)

    def test_rigid_motion_invariance(self):
        prism = plate_mesh()
        rng = np.random.default_rng(11)
        vals = prism.vertices + 0.02 * rng.normal(
            size=prism.vertices.shape)
        d = ScaledDeformation(PiecewiseAffineMap(prism, vals), 1.0)
        W = default_density()
        e0 = energy_Ih(d, W)
        Q = random_rotation(rng)
        d2 = ScaledDeformation(
            PiecewiseAffineMap(prism, vals @ Q.T + 3.0), 1.0)
        assert energy_Ih(d2, W) == pytest.approx(e0, rel=1e-9)

    def test_density_screening(self):
        W = screen_density(default_density())
        assert W.zero_at_identity
        assert W.coercive
        assert W.frame_indifferent_left
        assert W.frame_indifferent_right
        assert W.thickness_independent


class TestScalingCheck:
    def test_exact_rigid_pass(self):
        seq = [kirchhoff_identity(h) for h in (1/4, 1/8, 1/16)]
        out = scaling_check(seq, epsilon=1.0)
        assert out["passed"] and out["exact_rigid"]

    def test_stretched_sequence_fails(self):
        prism = plate_mesh()
        seq = []
        for h in (1/4, 1/8, 1/16):
            vals = prism.vertices @ np.diag([1.3, 1.0, h]).T
            seq.append(ScaledDeformation(
                PiecewiseAffineMap(prism, vals), h))
        out = scaling_check(seq, epsilon=0.1)
        assert not out["passed"]
        assert abs(out["slope"]) < 0.2

    def test_needs_three_decreasing(self):
        with pytest.raises(InvalidArgumentError):
            scaling_check([kirchhoff_identity(0.5),
                           kirchhoff_identity(0.25)], 1.0)


class TestMidplaneAverage:
    def test_x3_independent(self):
        prism = plate_mesh()
        vals = np.stack([prism.vertices[:, 0] ** 1,
                         prism.vertices[:, 1],
                         np.zeros(len(prism.vertices))], axis=1)
        d = ScaledDeformation(PiecewiseAffineMap(prism, vals), 0.5)
        avg = midplane_average(d)
        nb = len(prism.base.vertices)
        assert np.allclose(avg.values, vals[:nb], atol=1e-12)

    def test_linear_x3_averages_out(self):
        prism = plate_mesh()
        d = ScaledDeformation(
            PiecewiseAffineMap(prism, prism.vertices.copy()), 1.0)
        avg = midplane_average(d)
        assert np.allclose(avg.values[:, 2], 0.0, atol=1e-12)

    def test_affine_reparametrization_commutes(self):
        prism = plate_mesh()
        rng = np.random.default_rng(12)
        vals = prism.vertices + 0.05 * rng.normal(
            size=prism.vertices.shape)
        d = ScaledDeformation(PiecewiseAffineMap(prism, vals), 1.0)
        avg = midplane_average(d)
        # Affine in-plane change of the *values*: averaging commutes.
        A = np.array([[1.2, 0.1, 0.0], [0.0, 0.9, 0.0], [0.0, 0.0, 1.0]])
        d2 = ScaledDeformation(
            PiecewiseAffineMap(prism, vals @ A.T), 1.0)
        assert np.allclose(midplane_average(d2).values,
                           avg.values @ A.T, atol=1e-12)


class TestShortness:
    def test_constant(self, unit_square_8):
        u = PiecewiseAffineMap(
            unit_square_8,
            np.tile([1.0, 2.0, 3.0], (len(unit_square_8.vertices), 1)))
        assert np.allclose(shortness_residual(u), 0.0)

    def test_flat_isometry(self, unit_square_8):
        u = PiecewiseAffineMap(
            unit_square_8,
            np.c_[unit_square_8.vertices,
                  np.zeros(len(unit_square_8.vertices))])
        assert np.allclose(shortness_residual(u), 0.0, atol=1e-12)

    def test_stretch(self, unit_square_8):
        x = unit_square_8.vertices
        u = PiecewiseAffineMap(
            unit_square_8, np.c_[2 * x[:, 0], x[:, 1], np.zeros(len(x))])
        assert np.allclose(shortness_residual(u), 3.0, atol=1e-10)


class TestIsometryAndII:
    def test_flat(self, unit_square_8):
        u = PiecewiseAffineMap(
            unit_square_8,
            np.c_[unit_square_8.vertices,
                  np.zeros(len(unit_square_8.vertices))])
        res, II = isometry_residual_and_II(u)
        assert np.max(res) <= 1e-12
        assert np.max(np.abs(II)) <= 1e-10

    def test_cylinder_curvatures(self):
        n = 96
        dom = build_grid_domain(((0.0, 0.0), (1.0, 1.0)), n)
        x = dom.vertices
        u = PiecewiseAffineMap(dom, np.stack(
            [np.sin(x[:, 0]), x[:, 1], 1.0 - np.cos(x[:, 0])], axis=1))
        res, II = isometry_residual_and_II(u)
        assert np.max(res) < 1e-3
        eigs = np.linalg.eigvalsh(II)
        # Interior simplices: principal curvatures {0, 1}.
        interior = np.abs(dom.centroids[:, 0] - 0.5) < 0.4
        kmax = np.abs(eigs[interior]).max(axis=1)
        kmin = np.abs(eigs[interior]).min(axis=1)
        assert np.median(kmax) == pytest.approx(1.0, rel=0.02)
        assert np.median(kmin) == pytest.approx(0.0, abs=0.02)

    def test_nonisometric_flagged(self, unit_square_8):
        x = unit_square_8.vertices
        u = PiecewiseAffineMap(
            unit_square_8, np.c_[2 * x[:, 0], x[:, 1], np.zeros(len(x))])
        res, _ = isometry_residual_and_II(u)
        assert np.max(res) > 1.0


class TestVonKarman:
    def test_identity_plate_zero(self):
        d = kirchhoff_identity(0.25)
        u_h, v_h = vk_extract(d, beta=3.0)
        assert np.allclose(u_h.values, 0.0, atol=1e-12)
        assert np.allclose(v_h.values, 0.0, atol=1e-12)

    def test_inplane_roundtrip(self):
        prism = plate_mesh()
        h, beta = 0.25, 3.0
        a = np.array([0.3, -0.1])
        vals = prism.vertices.copy()
        vals[:, :2] += h ** (beta - 2.0) * a
        vals[:, 2] *= h
        d = ScaledDeformation(PiecewiseAffineMap(prism, vals), h)
        u_h, v_h = vk_extract(d, beta)
        assert np.allclose(u_h.values, a, atol=1e-12)
        assert np.allclose(v_h.values, 0.0, atol=1e-12)

    def test_outofplane_roundtrip(self):
        prism = plate_mesh()
        h, beta = 0.25, 3.0
        g = np.sin(prism.vertices[:, 0])
        vals = prism.vertices.copy()
        vals[:, 2] = h * vals[:, 2] + h ** (beta / 2.0 - 1.0) * g
        d = ScaledDeformation(PiecewiseAffineMap(prism, vals), h)
        u_h, v_h = vk_extract(d, beta)
        nb = len(prism.base.vertices)
        assert np.allclose(v_h.values[:, 0], g[:nb], atol=1e-12)

    def test_beta_range(self):
        with pytest.raises(InvalidArgumentError):
            vk_extract(kirchhoff_identity(0.25), beta=2.0)

    def test_zero_residual_cases(self, unit_square_16):
        dom = unit_square_16
        nv = len(dom.vertices)
        # u = 0, v = const.
        u0 = PiecewiseAffineMap(dom, np.zeros((nv, 2)))
        vc = PiecewiseAffineMap(dom, np.full((nv, 1), 2.0))
        res, _ = vk_constraint_residual(u0, vc)
        assert np.max(res) <= 1e-10
        # v = x1, u = (-x1/2, 0).
        v1 = PiecewiseAffineMap(dom, dom.vertices[:, :1].copy())
        u1 = PiecewiseAffineMap(
            dom, np.c_[-dom.vertices[:, 0] / 2.0, np.zeros(nv)])
        res, _ = vk_constraint_residual(u1, v1)
        assert np.max(res) <= 1e-10

    def test_saddle_hessian_oracle(self, unit_square_16):
        dom = unit_square_16
        x = dom.vertices
        v = PiecewiseAffineMap(dom, (x[:, 0] * x[:, 1])[:, None])
        u0 = PiecewiseAffineMap(dom, np.zeros((len(x), 2)))
        res, dets = vk_constraint_residual(u0, v)
        assert np.max(res) > 0.0
        H, interior = hessian_estimates(v)
        assert np.allclose(dets[interior], -1.0, atol=1e-6)
        # Finite-difference oracle of the Hessian of x1*x2.
        assert np.allclose(H[interior],
                           [[0.0, 1.0], [1.0, 0.0]], atol=1e-6)
