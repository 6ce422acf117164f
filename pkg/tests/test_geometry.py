"""Mesh construction, sampling, and measure-of-set utilities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from platecheck.errors import InvalidArgumentError
from platecheck.geometry import (
    PixelSet,
    build_grid_domain,
    extrude_cylinder,
    measure_of,
    sample_interior,
)


class TestGridDomain:
    def test_minimal_split(self):
        dom = build_grid_domain(((0, 0), (1, 1)), 1)
        assert len(dom.vertices) == 4
        assert len(dom.simplices) == 2

    @pytest.mark.parametrize("n", [2, 3, 7])
    def test_triangle_count(self, n):
        dom = build_grid_domain(((0, 0), (1, 1)), n)
        assert len(dom.simplices) == 2 * n * n

    def test_unit_cube_kuhn(self):
        dom = build_grid_domain(((0, 0, 0), (1, 1, 1)), 1)
        assert len(dom.simplices) == 6
        assert dom.simplex_volumes.sum() == pytest.approx(1.0, abs=1e-12)

    def test_invalid_resolution(self):
        with pytest.raises(InvalidArgumentError):
            build_grid_domain(((0, 0), (1, 1)), 0)

    def test_orientation_positive(self, unit_square_8):
        assert np.all(unit_square_8.simplex_volumes > 0)

    @settings(max_examples=25, deadline=None)
    @given(res=st.integers(1, 6),
           w=st.floats(0.5, 3.0), h=st.floats(0.5, 3.0))
    def test_partition_of_box(self, res, w, h):
        dom = build_grid_domain(((0.0, 0.0), (w, h)), res)
        assert dom.simplex_volumes.sum() == pytest.approx(
            w * h, rel=1e-10)

    def test_boundary_closure(self, unit_square_8):
        # Each boundary vertex of a closed 2D boundary appears in exactly
        # two boundary facets.
        facets = unit_square_8.boundary_facets
        counts = np.bincount(facets.ravel())
        used = counts[np.unique(facets.ravel())]
        assert np.all(used == 2)


class TestExtrusion:
    def test_unit_square_prism(self):
        base = build_grid_domain(((0, 0), (1, 1)), 1)
        prism = extrude_cylinder(base, 1, 1.0)
        assert len(prism.simplices) == 6
        assert prism.simplex_volumes.sum() == pytest.approx(1.0, abs=1e-12)

    def test_two_levels(self):
        base = build_grid_domain(((0, 0), (1, 1)), 1)
        prism = extrude_cylinder(base, 2, 1.0)
        assert len(prism.simplices) == 12

    def test_bottom_face_identical(self, unit_square_8):
        prism = extrude_cylinder(unit_square_8, 2, 0.5)
        nb = len(unit_square_8.vertices)
        assert np.array_equal(prism.vertices[:nb, :2],
                              unit_square_8.vertices)
        assert np.all(prism.vertices[:nb, 2] == 0.0)

    def test_disk_volume(self):
        from conftest import disk_domain
        base = disk_domain(rings=10, sectors=40)
        area = base.simplex_volumes.sum()
        prism = extrude_cylinder(base, 3, 0.7)
        assert prism.simplex_volumes.sum() == pytest.approx(
            area * 0.7, rel=1e-10)

    def test_3d_base_rejected(self):
        cube = build_grid_domain(((0, 0, 0), (1, 1, 1)), 1)
        with pytest.raises(InvalidArgumentError):
            extrude_cylinder(cube, 1, 1.0)


class TestSampling:
    def test_inside_and_deterministic(self, unit_square_8):
        a = sample_interior(unit_square_8, 4, seed=0)
        b = sample_interior(unit_square_8, 4, seed=0)
        assert np.array_equal(a, b)
        assert np.all((a > 0.0) & (a < 1.0))

    def test_different_seed_differs(self, unit_square_8):
        a = sample_interior(unit_square_8, 64, seed=0)
        b = sample_interior(unit_square_8, 64, seed=1)
        assert not np.array_equal(a, b)

    def test_uniformity(self, unit_square_8):
        pts = sample_interior(unit_square_8, 10_000, seed=3)
        # 4x4 cells; multinomial 3-sigma band around n/16.
        counts, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=4,
                                      range=[[0, 1], [0, 1]])
        n, p = 10_000, 1.0 / 16.0
        sigma = np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(counts - n * p) < 3.5 * sigma)


class TestMeasureOf:
    def test_half_plane(self, unit_square_8):
        est, rad = measure_of(unit_square_8, lambda x: x[:, 0] < 0.5)
        assert abs(est - 0.5) <= rad

    def test_always_false(self, unit_square_8):
        est, _ = measure_of(unit_square_8, lambda x: np.zeros(len(x), bool))
        assert est == 0.0

    def test_disk_area(self, unit_square_8):
        c = np.array([0.5, 0.5])
        est, _ = measure_of(
            unit_square_8,
            lambda x: np.linalg.norm(x - c, axis=1) < 0.25)
        assert est == pytest.approx(np.pi / 16.0, rel=0.02)


class TestPixelSet:
    def test_volume_exact(self):
        mask = np.zeros((8, 8), dtype=bool)
        mask[2:5, 1:7] = True
        px = PixelSet([0.0, 0.0], 0.125, mask)
        assert px.volume == 18 * 0.125**2

    def test_points_are_cell_centers(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[0, 0] = True
        px = PixelSet([1.0, 2.0], 0.5, mask)
        assert np.allclose(px.points(), [[1.25, 2.25]])
