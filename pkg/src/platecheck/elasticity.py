"""Scaled gradients, rigidity fits, stored-energy integrals and plate
constraint residuals.

Deformations of the unit-thickness reference plate carry their physical
thickness ``h``; the scaled gradient amplifies the thickness derivative by
``1/h`` so the Kirchhoff identity map has scaled gradient I.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyRegionError,
    InvalidArgumentError,
    UnsupportedMeshError,
)
from .geometry import PiecewiseAffineMap, PrismMesh, TriangulatedDomain

__all__ = [
    "ScaledDeformation",
    "StoredEnergyDensity",
    "RigidityFit",
    "default_density",
    "scaled_gradient",
    "scaled_gradients",
    "dist_SO3",
    "best_rotation",
    "rigidity_fit",
    "rigidity_constant_scan",
    "energy_Ih",
    "dist2_energy",
    "scaling_check",
    "midplane_average",
    "shortness_residual",
    "isometry_residual_and_II",
    "vk_extract",
    "vk_constraint_residual",
]


@dataclass(frozen=True)
class ScaledDeformation:
    """A deformation y of the reference plate S x [-1/2, 1/2] with its
    physical thickness h (the physical map is z(x', h x3) = y(x', x3))."""

    y: PiecewiseAffineMap
    h: float

    def __post_init__(self):
        if not (0 < self.h <= 1):
            raise InvalidArgumentError("thickness h must be in (0, 1]")
        dom = self.y.domain
        if not isinstance(dom, PrismMesh):
            raise UnsupportedMeshError("deformation must live on a PrismMesh")
        z_lo = dom.z0
        z_hi = dom.z0 + dom.height
        if abs(z_lo + 0.5) > 1e-9 or abs(z_hi - 0.5) > 1e-9:
            raise InvalidArgumentError(
                "reference plate must span x3 in [-1/2, 1/2]"
            )


@dataclass
class StoredEnergyDensity:
    """Stored energy W(x, F) with its coercivity constant and the
    admissibility conditions it certifies (checked by sampling)."""

    evaluator: callable          # (x (3,), F (3,3)) -> float
    coercivity: float = 1.0
    frame_indifferent_right: bool = True
    frame_indifferent_left: bool = True
    zero_at_identity: bool = True
    coercive: bool = True
    thickness_independent: bool = True

    def __call__(self, x, F) -> float:
        return float(self.evaluator(x, F))


def default_density() -> StoredEnergyDensity:
    """W(x, F) = dist^2(F, SO(3)): the minimal admissible density."""
    return StoredEnergyDensity(evaluator=lambda x, F: dist_SO3(F) ** 2)


def sample_rotations(n: int, seed: int = 0) -> np.ndarray:
    """n seeded uniform rotations in SO(3) (QR of Gaussian matrices)."""
    rng = np.random.default_rng(seed)
    out = np.empty((n, 3, 3))
    for i in range(n):
        q, r = np.linalg.qr(rng.normal(size=(3, 3)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, [0, 1]] = q[:, [1, 0]]
        out[i] = q
    return out


def screen_density(W: StoredEnergyDensity, n_samples: int = 50,
                   seed: int = 0) -> StoredEnergyDensity:
    """Numerically falsify the admissibility conditions by sampling.

    Right and left rotation invariance are tested separately (the
    conventional statements differ in the multiplication side).
    """
    rng = np.random.default_rng(seed)
    rots = sample_rotations(n_samples, seed=seed + 1)
    eye = np.eye(3)
    right = left = zero = coer = thick = True
    for i in range(n_samples):
        x = rng.uniform(-1, 1, size=3)
        F = eye + 0.5 * rng.normal(size=(3, 3))
        R = rots[i]
        w = W(x, F)
        if abs(W(x, F @ R) - w) > 1e-8 * (1 + abs(w)):
            right = False
        if abs(W(x, R @ F) - w) > 1e-8 * (1 + abs(w)):
            left = False
        if abs(W(x, eye)) > 1e-12:
            zero = False
        if w < W.coercivity * dist_SO3(F) ** 2 - 1e-9:
            coer = False
        z = x.copy()
        z[2] = rng.uniform(-1, 1)
        if abs(W(z, F) - w) > 1e-8 * (1 + abs(w)):
            thick = False
    return StoredEnergyDensity(
        evaluator=W.evaluator, coercivity=W.coercivity,
        frame_indifferent_right=right, frame_indifferent_left=left,
        zero_at_identity=zero, coercive=coer,
        thickness_independent=thick,
    )


@dataclass(frozen=True)
class RigidityFit:
    region_id: object
    rotation: np.ndarray
    translation: np.ndarray
    residual: float              # L2 norm of grad(v) - R over the region
    exact_rigid: bool = False

    def affine(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(x) @ self.rotation.T + self.translation


# -- scaled gradients and SO(3) distance -----------------------------------


def scaled_gradients(d: ScaledDeformation) -> np.ndarray:
    """Per-simplex scaled gradients (grad' y, (1/h) d3 y), shape (ns,3,3)."""
    G = d.y.gradients.copy()
    G[:, :, 2] /= d.h
    return G


def scaled_gradient(d: ScaledDeformation, simplex_id: int) -> np.ndarray:
    return scaled_gradients(d)[simplex_id]


def dist_SO3(F: np.ndarray) -> float:
    """Frobenius distance from a 3x3 matrix to SO(3)."""
    F = np.asarray(F, dtype=float)
    if not np.all(np.isfinite(F)):
        raise InvalidArgumentError("non-finite matrix entries")
    s = np.linalg.svd(F, compute_uv=False)
    sign = 1.0 if np.linalg.det(F) >= 0 else -1.0
    return math.sqrt(
        (s[0] - 1) ** 2 + (s[1] - 1) ** 2 + (s[2] - sign) ** 2
    )


def dist_SO3_many(F: np.ndarray) -> np.ndarray:
    """Vectorized dist_SO3 over a stack of 3x3 matrices."""
    s = np.linalg.svd(F, compute_uv=False)
    sign = np.sign(np.linalg.det(F))
    sign = np.where(sign == 0, 1.0, sign)
    return np.sqrt(
        (s[..., 0] - 1) ** 2 + (s[..., 1] - 1) ** 2
        + (s[..., 2] - sign) ** 2
    )


def best_rotation(M: np.ndarray) -> np.ndarray:
    """Polar rotation factor of M with determinant-sign correction.

    If det(M) < 0, the singular direction of the smallest singular value
    is flipped (standard best-rotation treatment).
    """
    U, _, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, d])
    return U @ D @ Vt


# -- rigidity --------------------------------------------------------------


def _simplices_in_ball(domain: TriangulatedDomain, center, radius,
                       coords: np.ndarray | None = None) -> np.ndarray:
    cents = domain.centroids if coords is None else coords
    center = np.asarray(center, dtype=float)
    return np.nonzero(
        np.linalg.norm(cents - center, axis=1) <= radius
    )[0]


def rigidity_fit(v: PiecewiseAffineMap, center, radius,
                 region_id=None) -> RigidityFit:
    """Best rigid motion R x + b over the simplices in a ball.

    R is the det-corrected polar factor of the volume-averaged gradient
    (the closed-form minimizer of the integrated squared gradient
    deviation); b is the mean of v - R x over the ball.
    """
    dom = v.domain
    ids = _simplices_in_ball(dom, center, radius)
    if len(ids) == 0:
        raise EmptyRegionError("no simplices in the requested ball")
    vols = dom.simplex_volumes[ids]
    G = v.gradients[ids]
    if G.shape[1] != 3 or G.shape[2] != 3:
        raise InvalidArgumentError("rigidity fit requires a 3D-to-3D map")
    M = np.einsum("s,sij->ij", vols, G) / vols.sum()
    R = best_rotation(M)
    res2 = float(np.einsum(
        "s,sij->", vols, (G - R) ** 2
    ))
    # Translation: mean of v - R x, integrated per simplex by vertex average
    # (exact for affine integrands).
    verts = dom.vertices[dom.simplices[ids]]
    vals = v.values[dom.simplices[ids]]
    diff = vals - verts @ R.T
    b = np.einsum("s,sj->j", vols, diff.mean(axis=1)) / vols.sum()
    return RigidityFit(region_id=region_id, rotation=R, translation=b,
                       residual=math.sqrt(max(res2, 0.0)),
                       exact_rigid=res2 < 1e-24)


def dist2_energy_of_map(v: PiecewiseAffineMap,
                        ids: np.ndarray | None = None) -> float:
    """Integral of dist^2(grad v, SO(3)) over the mesh (or a subset)."""
    dom = v.domain
    if ids is None:
        ids = np.arange(len(dom.simplices))
    d = dist_SO3_many(v.gradients[ids])
    return float((dom.simplex_volumes[ids] * d**2).sum())


def rigidity_constant_scan(map_family, domain_builder, scales,
                           ball_fraction: float = 10.0):
    """Empirical rigidity constants across rescaled domains.

    ``map_family`` is a list of callables x -> y (vectorized) applied to
    the mesh built by ``domain_builder(scale)``. For each scale, reports
    max over the family of ||grad v - R||_L2 / ||dist(grad v, SO(3))||_L2.
    Exact-rigid members are reported as such and excluded from the ratio.
    """
    if len(scales) < 2:
        raise InvalidArgumentError("need at least two scales")
    table = []
    for s in scales:
        dom = domain_builder(s)
        center = dom.vertices.mean(axis=0)
        radius = ball_fraction * max(
            np.linalg.norm(dom.vertices - center, axis=1).max(), 1e-30
        )
        worst = 0.0
        n_rigid = 0
        for fmap in map_family:
            v = PiecewiseAffineMap(dom, fmap(dom.vertices))
            fit = rigidity_fit(v, center, radius)
            e2 = dist2_energy_of_map(v)
            if e2 < 1e-24:
                n_rigid += 1
                continue
            worst = max(worst, fit.residual / math.sqrt(e2))
        table.append({
            "scale": float(s),
            "constant": worst if worst > 0 else None,
            "exact_rigid_members": n_rigid,
        })
    return table


# -- energies and scaling --------------------------------------------------


def energy_Ih(d: ScaledDeformation, W: StoredEnergyDensity) -> float:
    """Per-simplex quadrature of W(x, scaled gradient) over the plate."""
    dom = d.y.domain
    G = scaled_gradients(d)
    cents = dom.centroids
    vols = dom.simplex_volumes
    return float(sum(
        vols[s] * W(cents[s], G[s]) for s in range(len(vols))
    ))


def dist2_energy(d: ScaledDeformation) -> float:
    """||dist(scaled gradient, SO(3))||^2 over the reference plate."""
    vals = dist_SO3_many(scaled_gradients(d))
    return float((d.y.domain.simplex_volumes * vals**2).sum())


def scaling_check(sequence, epsilon: float,
                  slope_slack: float = 0.1):
    """Fit log(dist^2 energy) vs log(h); pass iff slope >= 1+eps-slack.

    ``sequence`` is a list of ScaledDeformation with decreasing h.
    Returns a dict with the fitted slope and verdict. All-zero energies
    are reported as an exact-rigid pass.
    """
    hs = np.array([d.h for d in sequence], dtype=float)
    if len(hs) < 3 or np.any(np.diff(hs) >= 0):
        raise InvalidArgumentError("need >= 3 strictly decreasing h values")
    energies = np.array([dist2_energy(d) for d in sequence])
    if np.all(energies < 1e-28):
        return {"passed": True, "slope": math.inf, "exact_rigid": True,
                "energies": energies.tolist(), "h": hs.tolist()}
    if np.any(energies < 1e-28):
        raise InvalidArgumentError(
            "mixed zero and nonzero energies in the sequence"
        )
    slope = float(np.polyfit(np.log(hs), np.log(energies), 1)[0])
    return {
        "passed": slope >= 1.0 + epsilon - slope_slack,
        "slope": slope,
        "exact_rigid": False,
        "energies": energies.tolist(),
        "h": hs.tolist(),
    }


# -- midplane and von Karman extraction ------------------------------------


def _require_layered(dom) -> PrismMesh:
    if not isinstance(dom, PrismMesh):
        raise UnsupportedMeshError("operation requires a layered PrismMesh")
    return dom


def midplane_average(d: ScaledDeformation) -> PiecewiseAffineMap:
    """Vertex-wise trapezoidal average over the x3 fibers.

    Exact for maps affine in x3, so the Kirchhoff ansatz averages back to
    its midsurface.
    """
    dom = _require_layered(d.y.domain)
    nb = len(dom.base.vertices)
    L = dom.levels
    vals = d.y.values.reshape(L + 1, nb, -1)
    w = np.full(L + 1, 1.0 / L)
    w[0] = w[-1] = 0.5 / L
    avg = np.einsum("l,lvj->vj", w, vals)
    return PiecewiseAffineMap(dom.base, avg)


def shortness_residual(u: PiecewiseAffineMap) -> np.ndarray:
    """Per-simplex excess of the largest eigenvalue of grad(u)^T grad(u)
    over 1, clipped at zero. Zero everywhere iff u is short."""
    G = u.gradients
    C = np.einsum("sij,sik->sjk", G, G)
    ev = np.linalg.eigvalsh(C)[:, -1]
    return np.maximum(ev - 1.0, 0.0)


def vertex_averaged_normals(u: PiecewiseAffineMap) -> np.ndarray:
    """Unit vertex normals from area-weighted facet normals u,1 ^ u,2."""
    from .errors import SingularParametrizationError

    dom = u.domain
    if dom.dimension != 2 or u.target_dim != 3:
        raise InvalidArgumentError("normals need a 2D domain mapped to R^3")
    G = u.gradients
    nu = np.cross(G[:, :, 0], G[:, :, 1])
    norms = np.linalg.norm(nu, axis=1)
    if np.any(norms < 1e-12):
        raise SingularParametrizationError("degenerate facet normal")
    weights = dom.simplex_volumes
    vert_n = np.zeros((len(dom.vertices), 3))
    np.add.at(vert_n, dom.simplices.ravel(),
              np.repeat((nu / norms[:, None]) * weights[:, None], 3, axis=0))
    vnorm = np.linalg.norm(vert_n, axis=1)
    if np.any(vnorm < 1e-12):
        raise SingularParametrizationError("degenerate vertex normal")
    return vert_n / vnorm[:, None]


def isometry_residual_and_II(u: PiecewiseAffineMap):
    """Per-simplex isometry residual and second fundamental form.

    Residual: ||grad(u)^T grad(u) - I||_F. The shape operator uses
    area-weighted vertex-averaged normals; II = grad(u)^T grad(nu).
    """
    dom = u.domain
    normals = vertex_averaged_normals(u)
    nu_map = PiecewiseAffineMap(dom, normals)
    G = u.gradients
    C = np.einsum("sij,sik->sjk", G, G)
    residual = np.linalg.norm(
        (C - np.eye(2)).reshape(len(C), -1), axis=1
    )
    II = np.einsum("sij,sik->sjk", G, nu_map.gradients)
    # Symmetrize: discrete normals introduce a small antisymmetric part.
    II = 0.5 * (II + np.swapaxes(II, 1, 2))
    return residual, II


def vk_extract(d: ScaledDeformation, beta: float):
    """Scaled in-plane / out-of-plane displacement extraction.

    u_h = h^(2-beta) (midplane average of (y1, y2) - x'),
    v_h = h^(1-beta/2) (midplane average of y3), for 2 < beta < 4.
    """
    if not (2.0 < beta < 4.0):
        raise InvalidArgumentError("beta must lie in (2, 4)")
    dom = _require_layered(d.y.domain)
    avg = midplane_average(d)
    h = d.h
    u_vals = h ** (2.0 - beta) * (avg.values[:, :2] - dom.base.vertices)
    v_vals = h ** (1.0 - beta / 2.0) * avg.values[:, 2]
    return (PiecewiseAffineMap(dom.base, u_vals),
            PiecewiseAffineMap(dom.base, v_vals))


def hessian_estimates(v: PiecewiseAffineMap):
    """Per-vertex Hessian of a scalar field by weighted linear regression
    of the piecewise-constant gradient field; returns (hessians, interior
    vertex mask). Exact for globally quadratic fields on interior stars."""
    dom = v.domain
    grads = v.gradients[:, 0, :]
    cents = dom.centroids
    vols = dom.simplex_volumes
    nv = len(dom.vertices)
    stars: list[list[int]] = [[] for _ in range(nv)]
    for s, tri in enumerate(dom.simplices):
        for vid in tri:
            stars[vid].append(s)
    boundary_vertices = np.zeros(nv, dtype=bool)
    boundary_vertices[np.unique(dom.boundary_facets)] = True
    H = np.full((nv, 2, 2), np.nan)
    for vid in range(nv):
        if boundary_vertices[vid]:
            continue
        ids = stars[vid]
        X = np.column_stack([
            np.ones(len(ids)),
            cents[ids] - dom.vertices[vid],
        ])
        w = np.sqrt(vols[ids])
        sol, *_ = np.linalg.lstsq(X * w[:, None], grads[ids] * w[:, None],
                                  rcond=None)
        Hv = sol[1:, :].T
        H[vid] = 0.5 * (Hv + Hv.T)
    return H, ~boundary_vertices


def vk_constraint_residual(u: PiecewiseAffineMap, v: PiecewiseAffineMap):
    """Residual of the linearized isometry constraint.

    Returns (per-simplex ||sym grad'(u) + 1/2 grad'(v) x grad'(v)||_F,
    per-interior-vertex det of the estimated Hessian of v).
    """
    if u.target_dim != 2:
        raise InvalidArgumentError("u must be an in-plane (R^2) map")
    Gu = u.gradients
    gv = v.gradients[:, 0, :]
    sym = 0.5 * (Gu + np.swapaxes(Gu, 1, 2))
    outer = 0.5 * np.einsum("si,sj->sij", gv, gv)
    residual = np.linalg.norm(
        (sym + outer).reshape(len(Gu), -1), axis=1
    )
    H, interior = hessian_estimates(v)
    dets = np.full(len(H), np.nan)
    dets[interior] = np.linalg.det(H[interior])
    return residual, dets
