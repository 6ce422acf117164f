"""Generators for pathological and well-behaved deformation sequences.

Two families bracket the thin-plate energy-scaling premise: a cavitation
strip sequence that is almost-everywhere injective element-wise but
converges to a 2-to-1 map (and keeps its elastic energy bounded below),
and Kirchhoff-ansatz recovery sequences over isometric midsurfaces that
satisfy the premise with slope 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .elasticity import (
    ScaledDeformation,
    isometry_residual_and_II,
    vertex_averaged_normals,
)
from .errors import InvalidArgumentError
from .geometry import PiecewiseAffineMap, PrismMesh, TriangulatedDomain

__all__ = [
    "MSParams",
    "RecoverySequence",
    "cavitation_block",
    "ms_element",
    "ms_limit",
    "ms_discrepancy",
    "thicken",
    "kirchhoff_ansatz",
    "crossing_scenario",
]

# Discretization knobs for the cavitation block mesh: radial rings,
# boundary points per half-side (8*m points around a ring), and the
# normalized radius of the central puncture. A continuous map that is
# the identity on the cell boundary has degree one everywhere inside and
# therefore cannot leave the cavity uncovered; the puncture is the
# discrete stand-in for the cavitation singularity.
_RINGS = 3
_SIDE_POINTS = 2
_PUNCTURE = 0.02


@dataclass
class MSParams:
    """Cavitation-strip parameters.

    The strip is [0, 2 + body_length] x [0, 1]: two unit end squares
    joined by a body of the given length. rho is the cavity radius
    fraction of a block cell; 2^k blocks per end-square side; bend_radius
    is the turn radius of the loop carrying one end over the other (must
    exceed the strip half-width or the inner edge folds).
    """

    body_length: float = 4.0
    rho: float = 0.25
    k: int = 0
    bend_radius: float = 1.5

    def __post_init__(self):
        if not 0 < self.rho < 0.5:
            raise InvalidArgumentError("rho must be in (0, 1/2)")
        if self.k < 0:
            raise InvalidArgumentError("k must be >= 0")
        if self.body_length <= 0:
            raise InvalidArgumentError("body_length must be positive")

    @property
    def length(self) -> float:
        return 2.0 + self.body_length


@dataclass
class RecoverySequence:
    """Limit midsurfaces with a thickness ladder generator.

    ``generator(h)`` returns the pair of ScaledDeformations for the two
    plate pieces; midplane averages converge to the midsurfaces vertex-
    wise (exactly, for the Kirchhoff ansatz).
    """

    u1: PiecewiseAffineMap
    u2: PiecewiseAffineMap
    generator: object

    def ladder(self, hs) -> list:
        return [self.generator(h) for h in hs]


# -- cavitation block ------------------------------------------------------


def _ring_boundary_points(m: int) -> np.ndarray:
    """8m points walking the boundary of [-1/2, 1/2]^2 counterclockwise,
    corners included."""
    step = 1.0 / (2 * m)
    pts = []
    for i in range(2 * m):                       # bottom: left -> right
        pts.append((-0.5 + i * step, -0.5))
    for i in range(2 * m):                       # right: bottom -> top
        pts.append((0.5, -0.5 + i * step))
    for i in range(2 * m):                       # top: right -> left
        pts.append((0.5 - i * step, 0.5))
    for i in range(2 * m):                       # left: top -> bottom
        pts.append((-0.5, 0.5 - i * step))
    return np.array(pts)


def _annulus_mesh(m: int = _SIDE_POINTS, rings: int = _RINGS,
                  eta: float = _PUNCTURE):
    """Punctured-square mesh: concentric square rings from radius factor
    eta out to the cell boundary, centered coordinates."""
    b = _ring_boundary_points(m)
    n = len(b)
    ts = np.linspace(eta, 1.0, rings + 1)
    verts = np.concatenate([t * b for t in ts])
    tris = []
    for j in range(rings):
        for i in range(n):
            a0 = j * n + i
            a1 = j * n + (i + 1) % n
            b0 = (j + 1) * n + i
            b1 = (j + 1) * n + (i + 1) % n
            tris.append((a0, a1, b1))
            tris.append((a0, b1, b0))
    tris = np.array(tris, dtype=int)
    # Enforce positive orientation.
    p = verts[tris]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    flip = area2 < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return verts, tris


def _cavitation_values(verts: np.ndarray, rho: float,
                       eta: float = _PUNCTURE) -> np.ndarray:
    """Radial cavity-opening profile on centered annulus coordinates:
    the inner ring lands on the circle of radius rho, the outer ring is
    fixed."""
    r = np.linalg.norm(verts, axis=1)
    d = verts / r[:, None]
    # Normalized radius within the direction-dependent cell extent.
    reach = 0.5 / np.max(np.abs(d), axis=1)
    t = r / reach
    s = np.clip((t - eta) / (1.0 - eta), 0.0, 1.0)
    new_r = rho + (reach - rho) * s
    return new_r[:, None] * d


def cavitation_block(rho: float) -> PiecewiseAffineMap:
    """Cavity-opening map of the (punctured) unit cell.

    Identity on the cell boundary; the puncture of normalized radius
    _PUNCTURE is expanded radially to a cavity of radius rho around the
    center, so the image omits the open disk of radius rho. Injective on
    the mesh.
    """
    if not 0 < rho < 0.5:
        raise InvalidArgumentError("rho must be in (0, 1/2)")
    verts, tris = _annulus_mesh()
    dom = TriangulatedDomain(verts + 0.5, tris, check_overlap=False)
    vals = _cavitation_values(verts, rho) + 0.5
    return PiecewiseAffineMap(dom, vals)


# -- strip assembly --------------------------------------------------------


_MIN_BEND = 0.55    # below this the inner tube edge folds (half-width 1/2)
_SIDE_CLEAR = 0.6   # horizontal stand-off of the vertical tube legs


def _check_bend(radius: float):
    if radius < _MIN_BEND:
        raise InvalidArgumentError(
            f"bend_radius {radius:g} folds the strip onto itself; "
            f"minimal feasible radius is {_MIN_BEND}"
        )


def _bend_path(radius: float):
    """Rounded loop from (1, 1/2) over both squares to (0, 1/2).

    Straight legs and quarter turns; the strip is carried as the unit-
    width normal neighborhood of this path, so it is embedded whenever
    the turn radius exceeds the half-width.
    """
    Rc = radius
    M = _SIDE_CLEAR
    H = 1.4 + Rc
    q = 0.5 * math.pi * Rc
    # (length, kind, data): kind "line" -> (start, direction),
    # "arc" -> (center, start angle, ccw).
    pieces = [
        (M, "line", (np.array([1.0, 0.5]), np.array([1.0, 0.0]))),
        (q, "arc", (np.array([1.0 + M, 0.5 + Rc]), -0.5 * math.pi)),
        (H - 0.5 - Rc, "line",
         (np.array([1.0 + M + Rc, 0.5 + Rc]), np.array([0.0, 1.0]))),
        (q, "arc", (np.array([1.0 + M, H]), 0.0)),
        (1.0 + 2 * M, "line",
         (np.array([1.0 + M, H + Rc]), np.array([-1.0, 0.0]))),
        (q, "arc", (np.array([-M, H]), 0.5 * math.pi)),
        (H - 0.5 - Rc, "line",
         (np.array([-M - Rc, H]), np.array([0.0, -1.0]))),
        (q, "arc", (np.array([-M, 0.5 + Rc]), math.pi)),
        (M, "line", (np.array([-M, 0.5]), np.array([1.0, 0.0]))),
    ]
    total = sum(p[0] for p in pieces)
    return pieces, total


def _body_map(x: np.ndarray, y: np.ndarray, params: MSParams) -> np.ndarray:
    pieces, total = _bend_path(params.bend_radius)
    t = np.clip((x - 1.0) / params.body_length, 0.0, 1.0) * total
    out = np.empty((len(t), 2))
    done = np.zeros(len(t), dtype=bool)
    acc = 0.0
    for length, kind, data in pieces:
        sel = (~done) & (t <= acc + length + 1e-12)
        if sel.any():
            loc = t[sel] - acc
            if kind == "line":
                start, direction = data
                c = start[None] + loc[:, None] * direction[None]
                n = np.array([-direction[1], direction[0]])
                out[sel] = c + (y[sel] - 0.5)[:, None] * n[None]
            else:
                center, a0 = data
                Rc = params.bend_radius
                a = a0 + loc / Rc
                c = center[None] + Rc * np.stack(
                    [np.cos(a), np.sin(a)], axis=1)
                # Tangent of a ccw arc is (-sin, cos); left normal points
                # back toward the center.
                n = -np.stack([np.cos(a), np.sin(a)], axis=1)
                out[sel] = c + (y[sel] - 0.5)[:, None] * n
            done |= sel
        acc += length
    return out


def _dedup(verts: np.ndarray, tris: np.ndarray, vals: np.ndarray,
           decimals: int = 9):
    key = np.round(verts, decimals)
    _, first, inverse = np.unique(key, axis=0, return_index=True,
                                  return_inverse=True)
    return verts[first], inverse[tris], vals[first]


def _block_grid(params: MSParams):
    n = 2 ** params.k
    b = 1.0 / n
    return n, b


def _end1_pieces(params: MSParams, with_cavities: bool):
    """Left end square: a conforming lattice of cavitation blocks (or
    plain identity blocks for the limit)."""
    n, b = _block_grid(params)
    cverts, ctris = _annulus_mesh()
    vlist, tlist, wlist = [], [], []
    for i in range(n):
        for j in range(n):
            center = np.array([(i + 0.5) * b, (j + 0.5) * b])
            verts = b * cverts + center
            if with_cavities:
                vals = b * _cavitation_values(cverts, params.rho) + center
            else:
                vals = verts.copy()
            vlist.append(verts)
            tlist.append(ctris)
            wlist.append(vals)
    return vlist, tlist, wlist


def _end2_pieces(params: MSParams, mode: str):
    """Right end square [L-1, L] x [0, 1].

    mode "overlay": rigid translation onto the left square (limit).
    mode "cavities": each block is a scaled cavitation block contracted
    into the cavity of the corresponding left-end block; blocks are
    mesh-torn from each other (duplicated vertices), the discrete
    counterpart of the gradient concentration that makes the true
    construction live below W^{1,2}.
    """
    n, b = _block_grid(params)
    L = params.length
    cverts, ctris = _annulus_mesh()
    contraction = 0.95 * params.rho * math.sqrt(2.0)
    vlist, tlist, wlist = [], [], []
    for i in range(n):
        for j in range(n):
            center = np.array([L - 1 + (i + 0.5) * b, (j + 0.5) * b])
            verts = b * cverts + center
            target_center = np.array([(i + 0.5) * b, (j + 0.5) * b])
            if mode == "overlay":
                vals = verts + (target_center - center)
            else:
                local = b * _cavitation_values(cverts, params.rho)
                vals = contraction * local + target_center
            vlist.append(verts)
            tlist.append(ctris)
            wlist.append(vals)
    return vlist, tlist, wlist


def _body_pieces(params: MSParams, nx: int = 96):
    n, _ = _block_grid(params)
    ny = 2 * _SIDE_POINTS * n
    xs = np.linspace(1.0, 1.0 + params.body_length, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = np.arange(len(verts)).reshape(nx + 1, ny + 1)
    tris = []
    for i in range(nx):
        for j in range(ny):
            a, bb, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], \
                idx[i, j + 1]
            tris.append((a, bb, c))
            tris.append((a, c, d))
    vals = _body_map(verts[:, 0], verts[:, 1], params)
    return [verts], [np.array(tris, dtype=int)], [vals]


def _concat(piece_sets):
    """Concatenate (vlist, tlist, wlist) sets with global indexing."""
    verts, tris, vals = [], [], []
    off = 0
    for vlist, tlist, wlist in piece_sets:
        base = off
        for v, t, w in zip(vlist, tlist, wlist):
            verts.append(v)
            tris.append(t + base)
            vals.append(w)
            base += len(v)
        off = base
    return (np.concatenate(verts), np.concatenate(tris),
            np.concatenate(vals))


def ms_element(params: MSParams) -> PiecewiseAffineMap:
    """One element of the cavitation-strip sequence.

    Left end opens a 2^k x 2^k cavity lattice, the body arches over the
    top, and the right end's blocks contract into the left end's
    cavities. Almost-everywhere injective at mesh resolution.
    """
    _check_bend(params.bend_radius)
    end1 = _end1_pieces(params, with_cavities=True)
    body = _body_pieces(params)
    end2 = _end2_pieces(params, mode="cavities")
    verts, tris, vals = _concat([end1, body])
    # end1 blocks conform with each other and with the body edge.
    verts, tris, vals = _dedup(verts, tris, vals)
    v2, t2, w2 = _concat([end2])
    tris = np.concatenate([tris, t2 + len(verts)])
    verts = np.concatenate([verts, v2])
    vals = np.concatenate([vals, w2])
    dom = TriangulatedDomain(verts, tris, check_overlap=False)
    return PiecewiseAffineMap(dom, vals)


def ms_limit(params: MSParams | None = None) -> PiecewiseAffineMap:
    """Weak limit of the cavitation strip: no cavities, the right end
    exactly overlays the left end (2-to-1 there)."""
    if params is None:
        params = MSParams()
    _check_bend(params.bend_radius)
    end1 = _end1_pieces(params, with_cavities=False)
    body = _body_pieces(params)
    end2 = _end2_pieces(params, mode="overlay")
    verts, tris, vals = _concat([end1, body, end2])
    verts, tris, vals = _dedup(verts, tris, vals)
    dom = TriangulatedDomain(verts, tris, check_overlap=False)
    return PiecewiseAffineMap(dom, vals)


def ms_discrepancy(params: MSParams) -> float:
    """Sup-distance between the strip element and its weak limit.

    Both maps are piecewise affine over the same raw block/body meshes,
    so the supremum over the strip is attained at mesh vertices.
    """
    sup = 0.0
    for mode_pair in (
        (_end1_pieces(params, True), _end1_pieces(params, False)),
        (_end2_pieces(params, "cavities"), _end2_pieces(params, "overlay")),
    ):
        (_, _, wa), (_, _, wb) = mode_pair
        for a, b in zip(wa, wb):
            sup = max(sup, float(np.linalg.norm(a - b, axis=1).max()))
    return sup


def thicken(f: PiecewiseAffineMap, h: float,
            levels: int = 1) -> ScaledDeformation:
    """Trivial thickening of a planar map: y(x', x3) = (f(x'), h x3)."""
    if f.domain.dimension != 2 or f.target_dim != 2:
        raise InvalidArgumentError("thicken expects a 2D -> 2D map")
    prism = PrismMesh(f.domain, levels, 1.0, z0=-0.5)
    nb = len(f.domain.vertices)
    reps = levels + 1
    vals = np.empty((reps * nb, 3))
    vals[:, :2] = np.tile(f.values, (reps, 1))
    vals[:, 2] = h * prism.vertices[:, 2]
    return ScaledDeformation(PiecewiseAffineMap(prism, vals), h)


# -- recovery sequences ----------------------------------------------------


def kirchhoff_ansatz(u: PiecewiseAffineMap, h: float,
                     levels: int = 2,
                     isometry_tolerance: float = 1e-8) -> ScaledDeformation:
    """y_h(x', x3) = u(x') + h x3 nu(x') over an isometric midsurface."""
    residual, _ = isometry_residual_and_II(u)
    if float(np.max(residual)) > isometry_tolerance:
        raise InvalidArgumentError(
            "midsurface is not isometric within tolerance "
            f"(residual {float(np.max(residual)):.3g})"
        )
    nu = vertex_averaged_normals(u)
    nu = nu / np.linalg.norm(nu, axis=1)[:, None]
    prism = PrismMesh(u.domain, levels, 1.0, z0=-0.5)
    nb = len(u.domain.vertices)
    reps = levels + 1
    vals = (np.tile(u.values, (reps, 1))
            + h * prism.vertices[:, 2:3] * np.tile(nu, (reps, 1)))
    return ScaledDeformation(PiecewiseAffineMap(prism, vals), h)


def _grid_domain(bounds, nx, ny):
    (x0, y0), (x1, y1) = bounds
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = np.arange(len(verts)).reshape(nx + 1, ny + 1)
    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], \
                idx[i, j + 1]
            tris.append((a, b, c))
            tris.append((a, c, d))
    return TriangulatedDomain(verts, np.array(tris, dtype=int),
                              check_overlap=False)


def crossing_scenario(separation: float = 0.5, angle: float = 90.0,
                      resolution: int = 24,
                      slab_thickness: float = 0.3) -> tuple:
    """A flat sheet and an isometric cylinder arc crossing its plane.

    Returns (u1, u2, RecoverySequence). u1 is the identity embedding of
    the unit square at height 0; u2 lives on a disjoint rectangle at the
    given domain separation and rolls onto a cylinder whose arc crosses
    the plane z = 0 at the given angle (degrees). angle = 0 places the
    arc strictly above the extension slab instead (the no-contact case).
    """
    if separation <= 0:
        raise InvalidArgumentError("separation must be positive")
    if not 0 <= angle <= 90:
        raise InvalidArgumentError("angle must be in [0, 90] degrees")
    dom1 = _grid_domain(((0.0, 0.0), (1.0, 1.0)), resolution, resolution)
    u1 = PiecewiseAffineMap(
        dom1, np.c_[dom1.vertices, np.zeros(len(dom1.vertices))]
    )

    arc_len = 0.3
    width = 0.5
    x_start = 1.0 + separation
    # The arc direction is meshed much finer than the width: the chordal
    # tilt between per-element tangent planes and vertex normals puts an
    # h-independent floor ~ (arc cell / R)^2 under the Kirchhoff-ansatz
    # energy, and the premise slope needs that floor well below the h^2
    # bending term at the smallest ladder thickness.
    nx = max(4, 4 * resolution)
    dom2 = _grid_domain(((x_start, 0.0), (x_start + arc_len, width)),
                        nx, resolution)
    R = 0.3
    s = dom2.vertices[:, 0] - x_start - arc_len / 2.0
    t = dom2.vertices[:, 1]
    if angle == 0:
        phi_c = math.pi / 2.0
    else:
        phi_c = math.pi / 2.0 - math.radians(angle)
    phi = phi_c + s / R
    cx, cy = 0.45, 0.25
    if angle == 0:
        cz = slab_thickness + 0.1 + R * math.sin(phi_c)
        z_sign = 1.0
    else:
        cz = -R * math.sin(phi_c)
        z_sign = 1.0
    vals2 = np.stack([
        cx + R * (np.cos(phi) - math.cos(phi_c)),
        cy + t,
        cz + z_sign * R * np.sin(phi),
    ], axis=1)
    u2 = PiecewiseAffineMap(dom2, vals2)

    # The chordal discretization of the cylinder shortens the metric by
    # O(mesh^2); accept that as isometric (the continuum surface is).
    iso_tol = 4.0 * (arc_len / nx / R) ** 2

    def generator(h):
        return (kirchhoff_ansatz(u1, h),
                kirchhoff_ansatz(u2, h, isometry_tolerance=iso_tol))

    return u1, u2, RecoverySequence(u1=u1, u2=u2, generator=generator)
