"""Simplicial meshes, prism extrusions, piecewise-affine maps and pixel sets.

All types are immutable after construction (arrays are set non-writeable),
so they can be shared freely across workers.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "TriangulatedDomain",
    "PrismMesh",
    "PiecewiseAffineMap",
    "PixelSet",
    "build_grid_domain",
    "extrude_cylinder",
    "sample_interior",
    "measure_of",
]

# Barycentric tolerance factor relative to mesh size; boundary-ambiguous
# points go to the lowest-index simplex.
_BARY_TOL_FACTOR = 1e-12


def _signed_volumes(vertices: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    """Signed volume of each simplex (area in 2D, volume in 3D)."""
    v = vertices[simplices]
    edges = v[:, 1:, :] - v[:, :1, :]
    dets = np.linalg.det(edges)
    return dets / math.factorial(vertices.shape[1])


class TriangulatedDomain:
    """A conforming simplicial mesh of a 2D or 3D domain.

    Simplices are repaired to positive orientation on construction;
    degenerate or overlapping simplices are rejected.
    """

    def __init__(self, vertices, simplices, check_overlap: bool = True):
        vertices = np.asarray(vertices, dtype=float)
        simplices = np.asarray(simplices, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
            raise InvalidArgumentError("vertices must be (n, 2) or (n, 3)")
        dim = vertices.shape[1]
        if simplices.ndim != 2 or simplices.shape[1] != dim + 1:
            raise InvalidArgumentError(
                f"simplices must have {dim + 1} vertices in dimension {dim}"
            )
        self.dimension = dim
        self.vertices = vertices
        self.simplices = simplices.copy()

        # Orientation repair: swap two vertices of negatively oriented
        # simplices; reject degenerate ones.
        vols = _signed_volumes(vertices, self.simplices)
        scale = float(np.max(np.abs(vertices))) + 1.0
        degenerate = np.abs(vols) < 1e-14 * scale**dim
        if np.any(degenerate):
            raise InvalidArgumentError(
                f"{int(degenerate.sum())} degenerate simplices"
            )
        flip = vols < 0
        if np.any(flip):
            s = self.simplices
            s[flip, -1], s[flip, -2] = s[flip, -2].copy(), s[flip, -1].copy()
        self.simplex_volumes = np.abs(vols)

        diam = self._simplex_diameters()
        self.mesh_size = float(diam.max())
        self.boundary_facets = self._compute_boundary_facets()
        self._index = None
        if check_overlap:
            self._check_interior_disjoint()
        for arr in (self.vertices, self.simplices, self.simplex_volumes,
                    self.boundary_facets):
            arr.setflags(write=False)

    # -- derived quantities -------------------------------------------------

    def _simplex_diameters(self) -> np.ndarray:
        v = self.vertices[self.simplices]
        d = self.dimension
        diam = np.zeros(len(self.simplices))
        for i in range(d + 1):
            for j in range(i + 1, d + 1):
                diam = np.maximum(
                    diam, np.linalg.norm(v[:, i] - v[:, j], axis=1)
                )
        return diam

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.simplices].mean(axis=1)

    @property
    def volume(self) -> float:
        return float(self.simplex_volumes.sum())

    def _compute_boundary_facets(self) -> np.ndarray:
        """Facets incident to exactly one simplex, oriented outward."""
        d = self.dimension
        faces = []
        owners = []
        for i in range(d + 1):
            idx = [j for j in range(d + 1) if j != i]
            faces.append(self.simplices[:, idx])
            owners.append(np.arange(len(self.simplices)))
        faces = np.concatenate(faces)
        owners = np.concatenate(owners)
        key = np.sort(faces, axis=1)
        _, inverse, counts = np.unique(
            key, axis=0, return_inverse=True, return_counts=True
        )
        boundary_mask = counts[inverse] == 1
        bfaces = faces[boundary_mask]
        bowners = owners[boundary_mask]
        # Flip each facet so its normal points away from the owner centroid.
        out = bfaces.copy()
        cent = self.centroids[bowners]
        fv = self.vertices[out]
        if d == 2:
            edge = fv[:, 1] - fv[:, 0]
            normal = np.stack([edge[:, 1], -edge[:, 0]], axis=1)
        else:
            normal = np.cross(fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0])
        inward = np.einsum("ij,ij->i", normal, cent - fv[:, 0]) > 0
        out[inward, 0], out[inward, 1] = (
            out[inward, 1].copy(), out[inward, 0].copy()
        )
        return out

    # -- point location -----------------------------------------------------

    def _spatial_index(self):
        if self._index is None:
            self._index = _SimplexIndex(self)
        return self._index

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Simplex index containing each point, or -1 if outside.

        Membership uses barycentric coordinates with tolerance
        ``1e-12 * mesh_size``; ambiguous points go to the lowest-index
        simplex.
        """
        return self._spatial_index().locate(np.atleast_2d(points))

    def barycentric(self, points: np.ndarray, simplex_ids: np.ndarray):
        """Barycentric coordinates of points w.r.t. given simplices."""
        points = np.atleast_2d(points)
        v = self.vertices[self.simplices[simplex_ids]]
        d = self.dimension
        A = np.swapaxes(v[:, 1:, :] - v[:, :1, :], 1, 2)
        rhs = points - v[:, 0, :]
        lam = np.linalg.solve(A, rhs[..., None])[..., 0]
        lam0 = 1.0 - lam.sum(axis=1, keepdims=True)
        return np.concatenate([lam0, lam], axis=1)

    def _check_interior_disjoint(self):
        # Each simplex centroid must lie in no other simplex's interior.
        idx = self._spatial_index()
        cents = self.centroids
        hits = idx.locate(cents, count_strict=True)
        if np.any(hits > 1):
            bad = int(np.argmax(hits > 1))
            raise InvalidArgumentError(
                f"overlapping simplices near centroid of simplex {bad}"
            )


class _SimplexIndex:
    """Uniform-grid spatial hash over simplex bounding boxes."""

    def __init__(self, domain: TriangulatedDomain):
        self.domain = domain
        v = domain.vertices[domain.simplices]
        self.lo = v.min(axis=1)
        self.hi = v.max(axis=1)
        self.origin = domain.vertices.min(axis=0)
        self.cell = max(domain.mesh_size, 1e-30)
        self.table: dict[tuple, list[int]] = {}
        lo_cells = np.floor((self.lo - self.origin) / self.cell).astype(int)
        hi_cells = np.floor((self.hi - self.origin) / self.cell).astype(int)
        d = domain.dimension
        for s in range(len(domain.simplices)):
            ranges = [
                range(lo_cells[s, k], hi_cells[s, k] + 1) for k in range(d)
            ]
            if d == 2:
                for i in ranges[0]:
                    for j in ranges[1]:
                        self.table.setdefault((i, j), []).append(s)
            else:
                for i in ranges[0]:
                    for j in ranges[1]:
                        for k in ranges[2]:
                            self.table.setdefault((i, j, k), []).append(s)

    def candidates(self, point: np.ndarray) -> list[int]:
        key = tuple(np.floor((point - self.origin) / self.cell).astype(int))
        return self.table.get(key, [])

    def locate(self, points: np.ndarray, count_strict: bool = False):
        dom = self.domain
        tol = _BARY_TOL_FACTOR * dom.mesh_size
        out = np.full(len(points), -1, dtype=np.int64)
        counts = np.zeros(len(points), dtype=np.int64)
        for i, p in enumerate(points):
            cand = self.candidates(p)
            if not cand:
                continue
            cand = sorted(cand)
            ids = np.array(cand)
            lam = dom.barycentric(np.repeat(p[None], len(ids), 0), ids)
            if count_strict:
                strict = np.all(lam > tol, axis=1)
                counts[i] = int(strict.sum())
            inside = np.all(lam >= -tol, axis=1)
            if np.any(inside):
                out[i] = ids[int(np.argmax(inside))]
        return counts if count_strict else out


class PrismMesh(TriangulatedDomain):
    """Conforming tetrahedralization of ``base x [z0, z0 + height]``.

    Vertices are ordered level by level; the bottom level is vertex-identical
    to the base mesh, realizing the identification of U with U x {0}.
    """

    def __init__(self, base: TriangulatedDomain, levels: int, height: float,
                 z0: float = 0.0):
        if base.dimension != 2:
            raise InvalidArgumentError("prism base must be 2D")
        if levels < 1:
            raise InvalidArgumentError("levels must be >= 1")
        if height <= 0:
            raise InvalidArgumentError("height must be positive")
        self.base = base
        self.levels = int(levels)
        self.height = float(height)
        self.z0 = float(z0)
        nb = len(base.vertices)
        zs = z0 + height * np.arange(levels + 1) / levels
        verts = np.concatenate([
            np.column_stack([base.vertices, np.full(nb, z)]) for z in zs
        ])
        tets = []
        for lev in range(levels):
            off_b = lev * nb
            off_t = (lev + 1) * nb
            for tri in base.simplices:
                tets.extend(_split_prism(
                    [off_b + tri[0], off_b + tri[1], off_b + tri[2],
                     off_t + tri[0], off_t + tri[1], off_t + tri[2]]
                ))
        super().__init__(verts, np.array(tets), check_overlap=False)
        self.tetrahedra = self.simplices


def _split_prism(p: list[int]) -> list[list[int]]:
    """Split prism (bottom p[0:3], top p[3:6]) into 3 conforming tets.

    Uses the smallest-global-index rule so that quad-face diagonals agree
    between neighboring prisms (Dompierre et al. style).
    """
    rot = int(np.argmin(p[:3]))
    idx = [rot, (rot + 1) % 3, (rot + 2) % 3]
    v = [p[idx[0]], p[idx[1]], p[idx[2]],
         p[3 + idx[0]], p[3 + idx[1]], p[3 + idx[2]]]
    if min(v[1], v[5]) < min(v[2], v[4]):
        return [[v[0], v[1], v[2], v[5]],
                [v[0], v[1], v[5], v[4]],
                [v[0], v[4], v[5], v[3]]]
    return [[v[0], v[1], v[2], v[4]],
            [v[0], v[4], v[2], v[5]],
            [v[0], v[4], v[5], v[3]]]


class PiecewiseAffineMap:
    """A map sampled at mesh vertices, affine on each simplex."""

    def __init__(self, domain: TriangulatedDomain, values):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if len(values) != len(domain.vertices):
            raise InvalidArgumentError(
                "values length must equal vertex count"
            )
        if values.shape[1] not in (1, 2, 3):
            raise InvalidArgumentError("target dimension must be 1, 2 or 3")
        self.domain = domain
        self.values = values
        self.gradients = self._compute_gradients()
        self.values.setflags(write=False)
        self.gradients.setflags(write=False)

    @property
    def target_dim(self) -> int:
        return self.values.shape[1]

    def _compute_gradients(self) -> np.ndarray:
        dom = self.domain
        v = dom.vertices[dom.simplices]
        y = self.values[dom.simplices]
        X = np.swapaxes(v[:, 1:, :] - v[:, :1, :], 1, 2)
        Y = np.swapaxes(y[:, 1:, :] - y[:, :1, :], 1, 2)
        return Y @ np.linalg.inv(X)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        ids = self.domain.locate(points)
        if np.any(ids < 0):
            raise InvalidArgumentError("point outside the domain")
        lam = self.domain.barycentric(points, ids)
        vals = self.values[self.domain.simplices[ids]]
        return np.einsum("pk,pkj->pj", lam, vals)

    def image_simplices(self) -> np.ndarray:
        """Vertex positions of each image simplex, shape (ns, d+1, m)."""
        return self.values[self.domain.simplices]

    def image_mesh_size(self) -> float:
        v = self.image_simplices()
        d = self.domain.dimension
        best = 0.0
        for i in range(d + 1):
            for j in range(i + 1, d + 1):
                best = max(best, float(
                    np.linalg.norm(v[:, i] - v[:, j], axis=1).max()
                ))
        return best

    def boundary_image(self) -> np.ndarray:
        """Image of the oriented boundary facets, shape (nf, d, m)."""
        return self.values[self.domain.boundary_facets]

    def with_values(self, values) -> "PiecewiseAffineMap":
        return PiecewiseAffineMap(self.domain, values)


class PixelSet:
    """A binary set on a uniform grid; areas and perimeters are exact."""

    def __init__(self, origin, cell: float, mask):
        self.origin = np.asarray(origin, dtype=float)
        self.cell = float(cell)
        self.mask = np.asarray(mask, dtype=bool)
        if self.cell <= 0:
            raise InvalidArgumentError("cell size must be positive")
        if self.mask.ndim != len(self.origin):
            raise InvalidArgumentError("mask rank must match origin length")
        self.origin.setflags(write=False)
        self.mask.setflags(write=False)

    @property
    def dimension(self) -> int:
        return self.mask.ndim

    @property
    def volume(self) -> float:
        return float(self.mask.sum()) * self.cell**self.mask.ndim

    def points(self) -> np.ndarray:
        """Centers of the occupied cells."""
        idx = np.argwhere(self.mask)
        return self.origin + (idx + 0.5) * self.cell

    def is_empty(self) -> bool:
        return not bool(self.mask.any())

    @staticmethod
    def from_points(points: np.ndarray, cell: float,
                    bounds=None) -> "PixelSet":
        """Rasterize a point cloud onto a grid of the given cell size."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if bounds is None:
            lo = points.min(axis=0) - cell
            hi = points.max(axis=0) + cell
        else:
            lo, hi = (np.asarray(b, dtype=float) for b in bounds)
        shape = np.maximum(np.ceil((hi - lo) / cell).astype(int), 1)
        mask = np.zeros(shape, dtype=bool)
        idx = np.floor((points - lo) / cell).astype(int)
        idx = np.clip(idx, 0, shape - 1)
        mask[tuple(idx.T)] = True
        return PixelSet(lo, cell, mask)

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        idx = np.floor((points - self.origin) / self.cell).astype(int)
        shape = np.array(self.mask.shape)
        ok = np.all((idx >= 0) & (idx < shape), axis=1)
        out = np.zeros(len(points), dtype=bool)
        if ok.any():
            out[ok] = self.mask[tuple(idx[ok].T)]
        return out


# -- constructors ----------------------------------------------------------


def build_grid_domain(bounds, resolution: int) -> TriangulatedDomain:
    """Uniform triangulation of an axis-aligned box.

    2D: 2 triangles per cell. 3D: 6 tetrahedra per cell (Kuhn subdivision,
    conforming across cells).
    """
    if resolution < 1:
        raise InvalidArgumentError("resolution must be >= 1")
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    if lo.shape != hi.shape or lo.shape[0] not in (2, 3):
        raise InvalidArgumentError("bounds must be a 2D or 3D box")
    if np.any(hi <= lo):
        raise InvalidArgumentError("degenerate box")
    d = len(lo)
    n = int(resolution)
    axes = [np.linspace(lo[k], hi[k], n + 1) for k in range(d)]
    grids = np.meshgrid(*axes, indexing="ij")
    verts = np.column_stack([g.ravel() for g in grids])

    def vid(*idx):
        out = 0
        for k in range(d):
            out = out * (n + 1) + idx[k]
        return out

    simplices = []
    if d == 2:
        for i in range(n):
            for j in range(n):
                a, b = vid(i, j), vid(i + 1, j)
                c, e = vid(i + 1, j + 1), vid(i, j + 1)
                simplices.append([a, b, c])
                simplices.append([a, c, e])
    else:
        # Kuhn: six tets per cube, one per permutation of axis order.
        from itertools import permutations

        perms = sorted(permutations(range(3)))
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    base = (i, j, k)
                    for perm in perms:
                        path = [base]
                        cur = list(base)
                        for ax in perm:
                            cur = cur.copy()
                            cur[ax] += 1
                            path.append(tuple(cur))
                        simplices.append([vid(*p) for p in path])
    return TriangulatedDomain(verts, np.array(simplices),
                              check_overlap=(n <= 32))


def extrude_cylinder(base: TriangulatedDomain, levels: int,
                     height: float, z0: float = 0.0) -> PrismMesh:
    """Tetrahedral mesh of the cylinder ``base x [z0, z0 + height]``."""
    return PrismMesh(base, levels, height, z0=z0)


# -- sampling and measures -------------------------------------------------


def sample_interior(domain: TriangulatedDomain, n: int,
                    seed: int = 0) -> np.ndarray:
    """n reproducible points strictly inside the domain.

    Sample counts are stratified by simplex volume (largest-remainder
    allocation), then drawn uniformly per simplex.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    vols = domain.simplex_volumes
    total = vols.sum()
    if total <= 0:
        raise InvalidArgumentError("empty domain")
    quota = n * vols / total
    counts = np.floor(quota).astype(int)
    short = n - counts.sum()
    if short > 0:
        order = np.argsort(-(quota - counts), kind="stable")
        counts[order[:short]] += 1
    rng = np.random.default_rng(seed)
    d = domain.dimension
    pieces = []
    verts = domain.vertices[domain.simplices]
    for s in np.nonzero(counts)[0]:
        c = counts[s]
        u = np.sort(rng.random((c, d)), axis=1)
        lam = np.diff(np.concatenate(
            [np.zeros((c, 1)), u, np.ones((c, 1))], axis=1), axis=1)
        pieces.append(lam @ verts[s])
    return np.concatenate(pieces)


def measure_of(domain, predicate=None, *, pixels: PixelSet | None = None,
               n: int = 65536, seed: int = 0):
    """Estimate the measure of a subset, with a confidence radius.

    Either a ``PixelSet`` (exact cell count, radius 0) or a predicate over
    sample points of ``domain`` (stratified Monte Carlo).
    Returns ``(estimate, radius)``.
    """
    if pixels is not None:
        return pixels.volume, 0.0
    if predicate is None:
        raise InvalidArgumentError("need a predicate or a PixelSet")
    pts = sample_interior(domain, n, seed=seed)
    hits = np.asarray(predicate(pts), dtype=bool)
    if hits.shape != (len(pts),):
        raise InvalidArgumentError("predicate must map points to booleans")
    vol = domain.volume
    k = int(hits.sum())
    if k == 0:
        return 0.0, 3.0 * vol / n
    p = k / n
    radius = vol * (3.0 * math.sqrt(p * (1 - p) / n) + 1.0 / n)
    return vol * p, radius
