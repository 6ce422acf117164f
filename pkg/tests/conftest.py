"""Shared mesh builders and map generators for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest

from platecheck.geometry import (
    PiecewiseAffineMap,
    TriangulatedDomain,
    build_grid_domain,
)


def disk_domain(rings: int = 8, sectors: int = 24,
                radius: float = 1.0) -> TriangulatedDomain:
    """Triangulated disk: a center vertex surrounded by concentric rings."""
    verts = [np.zeros(2)]
    for j in range(1, rings + 1):
        r = radius * j / rings
        ang = 2.0 * np.pi * np.arange(sectors) / sectors
        verts.extend(np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1))
    verts = np.asarray(verts)
    tris = []
    for i in range(sectors):
        tris.append((0, 1 + i, 1 + (i + 1) % sectors))
    for j in range(1, rings):
        a = 1 + (j - 1) * sectors
        b = 1 + j * sectors
        for i in range(sectors):
            i2 = (i + 1) % sectors
            tris.append((a + i, b + i, b + i2))
            tris.append((a + i, b + i2, a + i2))
    return TriangulatedDomain(verts, np.array(tris, dtype=int))


def complex_square_map(dom: TriangulatedDomain) -> PiecewiseAffineMap:
    """(x1, x2) -> (x1^2 - x2^2, 2 x1 x2), the degree-2 example."""
    x = dom.vertices
    vals = np.stack([x[:, 0] ** 2 - x[:, 1] ** 2,
                     2.0 * x[:, 0] * x[:, 1]], axis=1)
    return PiecewiseAffineMap(dom, vals)


def perturbed_identity(dom: TriangulatedDomain, rng,
                       amplitude: float = 0.05) -> PiecewiseAffineMap:
    """Identity plus a smooth interior perturbation (degree stays 1)."""
    x = dom.vertices
    r = np.linalg.norm(x - x.mean(axis=0), axis=1)
    envelope = np.clip(1.0 - r / max(r.max(), 1e-12), 0.0, 1.0) ** 2
    shift = rng.normal(size=x.shape) * amplitude * envelope[:, None]
    return PiecewiseAffineMap(dom, x + shift)


def fold_map(resolution: int = 16) -> PiecewiseAffineMap:
    """x1 -> |x1| on [-1, 1] x [0, 1]: an exact two-fold cover."""
    dom = build_grid_domain(((-1.0, 0.0), (1.0, 1.0)), resolution)
    vals = dom.vertices.copy()
    vals[:, 0] = np.abs(vals[:, 0])
    return PiecewiseAffineMap(dom, vals)


def random_rotation(rng) -> np.ndarray:
    A = rng.normal(size=(3, 3))
    Q, R = np.linalg.qr(A)
    Q = Q @ np.diag(np.sign(np.diag(R)))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


@pytest.fixture(scope="session")
def unit_square_8():
    return build_grid_domain(((0.0, 0.0), (1.0, 1.0)), 8)


@pytest.fixture(scope="session")
def unit_square_16():
    return build_grid_domain(((0.0, 0.0), (1.0, 1.0)), 16)


@pytest.fixture(scope="session")
def disk_8():
    return disk_domain(rings=8, sectors=24)


@pytest.fixture(scope="session")
def crossing():
    from platecheck.pathology import crossing_scenario
    return crossing_scenario(angle=90.0)
