"""Brouwer degree of piecewise-affine maps.

Three independent routes: the Jacobian-sign sum over preimages, the
boundary route (winding number in 2D, total solid angle in 3D), and the
integral formula with a compactly supported test bump. Degree fields of
cylinder extensions evaluate the boundary route per sample point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    BoundaryProximityError,
    InconsistencyError,
    InvalidArgumentError,
    IrregularValueError,
)
from .geometry import PiecewiseAffineMap, PrismMesh

__all__ = [
    "DegreeResult",
    "DegreeField",
    "degree_jacobian",
    "degree_boundary",
    "degree_integral",
    "degree_field",
    "level_set_boundary_check",
    "boundary_distance",
    "perturb_target",
    "RadialBump",
    "winding_total",
]

# Residual of the winding/solid-angle rounding above which the mesh is
# considered too coarse for the boundary route.
_ROUNDING_RESIDUAL_LIMIT = 0.1


@dataclass(frozen=True)
class DegreeResult:
    value: int
    method: str
    regular: bool
    margin: float


@dataclass
class DegreeField:
    """Per-sample degrees of ``deg(u_hat1, U_hat1, u2(x))``.

    Samples whose image lies within tolerance of the extension's boundary
    image form the exclusion set E; every sample is classified exactly once.
    """

    samples: np.ndarray
    values: np.ndarray          # int degree; only meaningful off E
    in_exclusion: np.ndarray    # bool mask of E membership
    margins: np.ndarray
    tolerance: float
    grid_shape: tuple | None = None
    results: list = field(default_factory=list)

    def level_set(self, k: int) -> np.ndarray:
        return (~self.in_exclusion) & (self.values == k)

    def observed_degrees(self) -> np.ndarray:
        return np.unique(self.values[~self.in_exclusion])


def default_tolerance(f: PiecewiseAffineMap) -> float:
    """Boundary-proximity tolerance: twice the image mesh size."""
    return 2.0 * f.image_mesh_size()


def boundary_distance(boundary_image: np.ndarray,
                      points: np.ndarray) -> np.ndarray:
    """Distance from points to the image of the boundary facets.

    ``boundary_image`` has shape (nf, d, m): nf facets with d vertices in
    m-dimensional space (segments in 2D, triangles in 3D). Exact
    point-to-segment / point-to-triangle distances, with a KD-tree over
    facet centroids as broad phase.
    """
    points = np.atleast_2d(points)
    facets = boundary_image
    cent = facets.mean(axis=1)
    rad = np.linalg.norm(facets - cent[:, None, :], axis=2).max(axis=1)
    rmax = float(rad.max()) if len(rad) else 0.0
    tree = cKDTree(cent)
    # Nearest centroid gives an upper bound; widen by facet radius.
    dnear, _ = tree.query(points)
    out = np.empty(len(points))
    for i, p in enumerate(points):
        cut = dnear[i] + 2.0 * rmax
        cand = tree.query_ball_point(p, cut)
        fs = facets[cand]
        if fs.shape[1] == 2:
            d = _point_segment_distance(p, fs)
        else:
            d = _point_triangle_distance(p, fs)
        out[i] = d.min()
    return out


def _point_segment_distance(p, segs):
    a, b = segs[:, 0], segs[:, 1]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom < 1e-300, 1.0, denom)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(p - proj, axis=1)


def _point_triangle_distance(p, tris):
    # Ericson-style closest point on triangle, vectorized.
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    closest = np.empty_like(a)
    done = np.zeros(len(a), dtype=bool)

    m = (d1 <= 0) & (d2 <= 0)
    closest[m] = a[m]
    done |= m
    m = (~done) & (d3 >= 0) & (d4 <= d3)
    closest[m] = b[m]
    done |= m
    m = (~done) & (d6 >= 0) & (d5 <= d6)
    closest[m] = c[m]
    done |= m

    vc = d1 * d4 - d3 * d2
    m = (~done) & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    t = np.where(np.abs(d1 - d3) > 1e-300, d1 / (d1 - d3), 0.0)
    closest[m] = a[m] + t[m, None] * ab[m]
    done |= m
    vb = d5 * d2 - d1 * d6
    m = (~done) & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    t = np.where(np.abs(d2 - d6) > 1e-300, d2 / (d2 - d6), 0.0)
    closest[m] = a[m] + t[m, None] * ac[m]
    done |= m
    va = d3 * d6 - d5 * d4
    m = (~done) & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    denom = (d4 - d3) + (d5 - d6)
    t = np.where(np.abs(denom) > 1e-300, (d4 - d3) / denom, 0.0)
    closest[m] = b[m] + t[m, None] * (c[m] - b[m])
    done |= m

    m = ~done
    denom = va + vb + vc
    denom = np.where(np.abs(denom) > 1e-300, denom, 1.0)
    v = vb / denom
    w = vc / denom
    closest[m] = a[m] + v[m, None] * ab[m] + w[m, None] * ac[m]
    return np.linalg.norm(p - closest, axis=1)


def perturb_target(y: np.ndarray, tolerance: float,
                   seed: int = 0) -> np.ndarray:
    """Seeded Sard-style perturbation of magnitude tolerance/2."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=len(y))
    v *= (tolerance / 2.0) / np.linalg.norm(v)
    return np.asarray(y, dtype=float) + v


def degree_jacobian(f: PiecewiseAffineMap, y,
                    tolerance: float | None = None) -> DegreeResult:
    """Degree as the sum of Jacobian signs over the preimages of y."""
    y = np.asarray(y, dtype=float)
    if f.target_dim != f.domain.dimension:
        raise InvalidArgumentError(
            "jacobian route needs equal domain and target dimensions"
        )
    if tolerance is None:
        tolerance = default_tolerance(f)
    margin = float(boundary_distance(f.boundary_image(), y[None])[0])
    if margin <= tolerance:
        raise BoundaryProximityError(
            f"target within {margin:.3g} of boundary image", margin
        )
    dets = np.linalg.det(f.gradients)
    # Locate y in the image simplices via barycentric coordinates. A tiny
    # deterministic offset in a generic direction breaks ties when y lands
    # exactly on an image facet or vertex, so every preimage is counted in
    # exactly one simplex.
    img = f.image_simplices()
    d = f.domain.dimension
    shift = np.array([1.0, 1.0 / math.sqrt(2.0), 1.0 / math.sqrt(3.0)][:d])
    yq = y + 1e-8 * f.image_mesh_size() * shift / np.linalg.norm(shift)
    A = np.swapaxes(img[:, 1:, :] - img[:, :1, :], 1, 2)
    nonsing = np.abs(dets) > 1e-13
    lam = np.full((len(img), d), np.nan)
    rhs = (yq - img[:, 0, :])[..., None]
    lam[nonsing] = np.linalg.solve(A[nonsing], rhs[nonsing])[..., 0]
    lam0 = 1.0 - lam.sum(axis=1)
    inside = nonsing & np.all(lam > 0.0, axis=1) & (lam0 > 0.0)
    if np.any(~nonsing):
        # A degenerate simplex whose image contains y makes it irregular.
        hit_tol = 1e-9 * (f.image_mesh_size() + 1.0)
        for s in np.nonzero(~nonsing)[0]:
            dist = (_point_segment_distance(y, img[s][None, :2])
                    if d == 2 else
                    _point_triangle_distance(y, img[s][None, :3]))
            if dist.min() < hit_tol:
                raise IrregularValueError(
                    f"near-degenerate simplex {s} meets the target; "
                    "perturb y (see perturb_target)"
                )
    value = int(np.sign(dets[inside]).sum())
    return DegreeResult(value=value, method="jacobian-sum", regular=True,
                        margin=margin)


def _winding_2d(segments: np.ndarray, y: np.ndarray) -> float:
    a = segments[:, 0] - y
    b = segments[:, 1] - y
    ang = np.arctan2(
        a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0],
        np.einsum("ij,ij->i", a, b),
    )
    return float(ang.sum() / (2.0 * math.pi))


def _solid_angle_3d(triangles: np.ndarray, y: np.ndarray) -> float:
    # Van Oosterom & Strackee two-argument arctangent formulation.
    a = triangles[:, 0] - y
    b = triangles[:, 1] - y
    c = triangles[:, 2] - y
    la = np.linalg.norm(a, axis=1)
    lb = np.linalg.norm(b, axis=1)
    lc = np.linalg.norm(c, axis=1)
    triple = np.einsum("ij,ij->i", a, np.cross(b, c))
    denom = (la * lb * lc
             + np.einsum("ij,ij->i", a, b) * lc
             + np.einsum("ij,ij->i", a, c) * lb
             + np.einsum("ij,ij->i", b, c) * la)
    omega = 2.0 * np.arctan2(triple, denom)
    return float(omega.sum() / (4.0 * math.pi))


def winding_total(boundary_image: np.ndarray, y: np.ndarray) -> float:
    """Raw (unrounded) winding / normalized solid angle of a boundary image."""
    if boundary_image.shape[1] == 2:
        return _winding_2d(boundary_image, y)
    return _solid_angle_3d(boundary_image, y)


def degree_boundary(f: PiecewiseAffineMap, y,
                    tolerance: float | None = None,
                    boundary_image: np.ndarray | None = None) -> DegreeResult:
    """Degree from boundary values only (winding / solid angle)."""
    y = np.asarray(y, dtype=float)
    if boundary_image is None:
        boundary_image = f.boundary_image()
    if tolerance is None:
        tolerance = default_tolerance(f)
    margin = float(boundary_distance(boundary_image, y[None])[0])
    if margin <= tolerance:
        raise BoundaryProximityError(
            f"target within {margin:.3g} of boundary image", margin
        )
    raw = winding_total(boundary_image, y)
    value = int(round(raw))
    residual = abs(raw - value)
    if residual >= _ROUNDING_RESIDUAL_LIMIT:
        raise InconsistencyError(
            f"winding residual {residual:.3g} >= {_ROUNDING_RESIDUAL_LIMIT}; "
            "mesh too coarse"
        )
    return DegreeResult(value=value, method="boundary", regular=True,
                        margin=margin)


class RadialBump:
    """Normalized C^{k-1} radial test bump ``(1 - |z-c|^2/r^2)^k / Z``."""

    def __init__(self, center, radius: float, k: int = 4):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.k = int(k)
        n = len(self.center)
        # Integral of (1-|u|^2)^k over the unit ball.
        ball = math.pi ** (n / 2) / math.gamma(n / 2 + 1)
        factor = (n / 2) * math.gamma(n / 2) * math.gamma(k + 1) \
            / math.gamma(n / 2 + k + 1)
        self.norm = ball * factor * self.radius**n

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        u2 = ((z - self.center) ** 2).sum(axis=1) / self.radius**2
        out = np.where(u2 < 1.0, (1.0 - np.minimum(u2, 1.0)) ** self.k, 0.0)
        return out / self.norm


def _refine_simplex(verts: np.ndarray, level: int) -> np.ndarray:
    """Uniform refinement of one simplex into sub-simplices, (ns, d+1, m)."""
    out = verts[None]
    for _ in range(level):
        pieces = []
        for s in out:
            if s.shape[0] == 3:
                m01 = (s[0] + s[1]) / 2
                m02 = (s[0] + s[2]) / 2
                m12 = (s[1] + s[2]) / 2
                pieces += [
                    np.array([s[0], m01, m02]),
                    np.array([m01, s[1], m12]),
                    np.array([m02, m12, s[2]]),
                    np.array([m01, m12, m02]),
                ]
            else:
                mids = {(i, j): (s[i] + s[j]) / 2
                        for i in range(4) for j in range(i + 1, 4)}
                m = mids
                pieces += [
                    np.array([s[0], m[0, 1], m[0, 2], m[0, 3]]),
                    np.array([m[0, 1], s[1], m[1, 2], m[1, 3]]),
                    np.array([m[0, 2], m[1, 2], s[2], m[2, 3]]),
                    np.array([m[0, 3], m[1, 3], m[2, 3], s[3]]),
                    np.array([m[0, 1], m[0, 2], m[0, 3], m[1, 3]]),
                    np.array([m[0, 1], m[0, 2], m[1, 2], m[1, 3]]),
                    np.array([m[0, 2], m[1, 2], m[1, 3], m[2, 3]]),
                    np.array([m[0, 2], m[0, 3], m[1, 3], m[2, 3]]),
                ]
        out = np.stack(pieces)
    return out


def _simplex_quadrature(verts: np.ndarray):
    """Degree-2 quadrature nodes and weights on simplices (ns, d+1, m)."""
    d = verts.shape[1] - 1
    if d == 2:
        # Midpoint-of-edges rule, exact for quadratics.
        nodes = np.stack([
            (verts[:, 0] + verts[:, 1]) / 2,
            (verts[:, 1] + verts[:, 2]) / 2,
            (verts[:, 0] + verts[:, 2]) / 2,
        ], axis=1)
        weights = np.full(3, 1.0 / 3.0)
    else:
        a = (5.0 + 3.0 * math.sqrt(5.0)) / 20.0
        b = (5.0 - math.sqrt(5.0)) / 20.0
        lam = np.full((4, 4), b)
        np.fill_diagonal(lam, a)
        nodes = np.einsum("qk,skm->sqm", lam, verts)
        weights = np.full(4, 0.25)
    return nodes, weights


def _integrate_bump_over_simplices(verts: np.ndarray, phi,
                                   level: int) -> np.ndarray:
    """Per-simplex integral of phi over image simplices (ns, d+1, d)."""
    ns = len(verts)
    out = np.empty(ns)
    edges = np.swapaxes(verts[:, 1:, :] - verts[:, :1, :], 1, 2)
    vols = np.abs(np.linalg.det(edges)) / math.factorial(verts.shape[2])
    for s in range(ns):
        sub = _refine_simplex(verts[s], level)
        nodes, w = _simplex_quadrature(sub)
        vals = phi(nodes.reshape(-1, nodes.shape[-1])).reshape(nodes.shape[:2])
        subvol = vols[s] / len(sub)
        out[s] = float((vals @ w).sum() * subvol)
    return out


def degree_integral(f: PiecewiseAffineMap, phi: RadialBump,
                    refine_level: int = 3,
                    tolerance: float | None = None):
    """Degree via the integral formula with test bump phi.

    Per simplex T, ``int_T phi(f(x)) det(grad f) dx`` equals
    ``sgn(det) * int_{f(T)} phi``, integrated by refined degree-2
    quadrature over the image simplex. Returns ``(estimate, error)`` where
    the error is the observed difference between the two finest levels.
    """
    if f.target_dim != f.domain.dimension:
        raise InvalidArgumentError(
            "integral route needs equal domain and target dimensions"
        )
    if tolerance is None:
        tolerance = default_tolerance(f)
    margin = float(
        boundary_distance(f.boundary_image(), phi.center[None])[0]
    )
    if margin <= phi.radius:
        raise InvalidArgumentError(
            "test bump support touches the boundary image"
        )
    signs = np.sign(np.linalg.det(f.gradients))
    img = f.image_simplices()
    # Skip simplices whose image cannot meet the support.
    cent = img.mean(axis=1)
    rad = np.linalg.norm(img - cent[:, None, :], axis=2).max(axis=1)
    near = np.linalg.norm(cent - phi.center, axis=1) <= rad + phi.radius
    img = img[near]
    signs = signs[near]
    if len(img) == 0:
        return 0.0, 0.0
    coarse = _integrate_bump_over_simplices(img, phi, max(refine_level - 1, 0))
    fine = _integrate_bump_over_simplices(img, phi, refine_level)
    est = float((signs * fine).sum())
    err = abs(est - float((signs * coarse).sum()))
    return est, err


def degree_field(u_hat1: PiecewiseAffineMap, u2: PiecewiseAffineMap,
                 samples: np.ndarray, tolerance: float | None = None,
                 grid_shape: tuple | None = None) -> DegreeField:
    """Degrees ``deg(u_hat1, U_hat1, u2(x))`` at the given samples.

    Uses the boundary (solid angle) route, which is robust for continuous
    extensions. Samples whose image is within tolerance of the extension's
    boundary image are assigned to the exclusion set instead of failing.
    """
    if not isinstance(u_hat1.domain, PrismMesh):
        raise InvalidArgumentError("u_hat1 must live on a PrismMesh")
    samples = np.atleast_2d(samples)
    targets = u2(samples)
    if targets.shape[1] != u_hat1.target_dim:
        raise InvalidArgumentError("u2 must map into the same target space")
    if tolerance is None:
        tolerance = default_tolerance(u_hat1)
    boundary = u_hat1.boundary_image()
    # Drop degenerate boundary triangles (e.g. cone apex caps).
    areas = 0.5 * np.linalg.norm(
        np.cross(boundary[:, 1] - boundary[:, 0],
                 boundary[:, 2] - boundary[:, 0]), axis=1
    ) if boundary.shape[1] == 3 else None
    margins = boundary_distance(boundary, targets)
    in_E = margins <= tolerance
    values = np.zeros(len(samples), dtype=int)
    nondeg = boundary
    if areas is not None:
        nondeg = boundary[areas > 1e-16]
    for i in np.nonzero(~in_E)[0]:
        raw = winding_total(nondeg, targets[i])
        k = int(round(raw))
        if abs(raw - k) >= _ROUNDING_RESIDUAL_LIMIT:
            in_E[i] = True
        else:
            values[i] = k
    return DegreeField(samples=samples, values=values, in_exclusion=in_E,
                       margins=margins, tolerance=tolerance,
                       grid_shape=grid_shape)


def level_set_boundary_check(field: DegreeField, u2: PiecewiseAffineMap,
                             boundary_image: np.ndarray,
                             tolerance: float | None = None,
                             segment_samples: int = 9) -> list:
    """Degree-constancy diagnostic for adjacent samples.

    For each grid-adjacent sample pair with different degrees, the segment
    between their images must pass within tolerance of the extension's
    boundary image; returns the list of violating pairs.
    """
    if field.grid_shape is None:
        raise InvalidArgumentError("field must carry a grid_shape")
    if tolerance is None:
        tolerance = field.tolerance
    shape = field.grid_shape
    idx = np.arange(len(field.samples)).reshape(shape)
    pairs = []
    pairs.append(np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1))
    pairs.append(np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1))
    pairs = np.concatenate(pairs)
    ok = ~(field.in_exclusion[pairs[:, 0]] | field.in_exclusion[pairs[:, 1]])
    diff = field.values[pairs[:, 0]] != field.values[pairs[:, 1]]
    check = pairs[ok & diff]
    violations = []
    ts = np.linspace(0.0, 1.0, segment_samples)
    for a, b in check:
        ya = u2(field.samples[a][None])[0]
        yb = u2(field.samples[b][None])[0]
        seg = ya[None] * (1 - ts[:, None]) + yb[None] * ts[:, None]
        d = boundary_distance(boundary_image, seg)
        if d.min() > tolerance:
            violations.append((int(a), int(b), float(d.min())))
    return violations
