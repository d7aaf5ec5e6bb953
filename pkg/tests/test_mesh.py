import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltslf.mesh import (COARSE, DIRICHLET, FINE, NEUMANN, MeshError, _finalize, bisect_elements,
                        build_interval, build_lshape_mesh, build_uniform_interval,
                        build_unit_square, check_mesh, default_threshold, element_neighbors,
                        facet_map, has_hanging_nodes, partition_fine, quality, refine_corner)


def _interior_facets_shared_twice(mesh):
    fm = facet_map(mesh.elements, mesh.dim)
    boundary = {tuple(sorted(f)) for f in mesh.facets.tolist()}
    for key, owners in fm.items():
        if key in boundary:
            assert len(owners) == 1
        else:
            assert len(owners) == 2


class TestInterval:
    def test_four_elements(self):
        m = build_uniform_interval(4, 1.0)
        np.testing.assert_allclose(m.points[:, 0], [0, 0.25, 0.5, 0.75, 1.0])
        q = quality(m)
        assert q.h == pytest.approx(0.25) and q.h_min == pytest.approx(0.25)
        assert len(m.facets) == 2

    def test_single_element(self):
        m = build_uniform_interval(1, 2.0)
        assert m.n_elements == 1
        assert m.diameters()[0] == pytest.approx(2.0)

    def test_uniform_quality(self):
        q = quality(build_uniform_interval(8, 1.0))
        assert q.c_qu == 1.0 and q.gamma == 1.0

    def test_zero_elements_rejected(self):
        with pytest.raises(MeshError):
            build_uniform_interval(0)

    def test_neighbor_ratio_gamma(self):
        m = build_interval([0.0, 0.1, 0.4, 1.0])
        assert quality(m).gamma == pytest.approx(3.0)

    def test_non_monotone_nodes_rejected(self):
        with pytest.raises(MeshError):
            build_interval([0.0, 0.5, 0.4])

    def test_boundary_tag(self):
        m = build_uniform_interval(3, boundary=DIRICHLET)
        assert m.facet_tags == (DIRICHLET, DIRICHLET)


class TestQuality:
    def test_equilateral(self):
        m = _finalize([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]], [[0, 1, 2]])
        assert quality(m).gamma == pytest.approx(math.sqrt(3), rel=1e-12)

    def test_twice_refined_lshape_ratio(self, lshape_refined):
        assert quality(lshape_refined).c_qu == pytest.approx(4.0)


class TestLShape:
    def test_element_count_quarter(self):
        m = build_lshape_mesh(0.25)
        assert m.n_elements == 24
        assert all(t == NEUMANN for t in m.facet_tags)

    @pytest.mark.parametrize("h", [0.5, 0.25, 0.125, 1 / 16])
    def test_area_and_corner(self, h):
        m = build_lshape_mesh(h)
        check_mesh(m)
        assert m.volumes().sum() == pytest.approx(0.75, rel=1e-12)
        assert np.min(np.linalg.norm(m.points - [0.5, 0.5], axis=1)) == 0.0
        _interior_facets_shared_twice(m)
        # congruent right triangles with legs h
        np.testing.assert_allclose(m.diameters(), h * math.sqrt(2), rtol=1e-12)

    def test_six_corner_triangles(self):
        m = build_lshape_mesh(0.125)
        c = np.argmin(np.linalg.norm(m.points - [0.5, 0.5], axis=1))
        assert np.sum(np.any(m.elements == c, axis=1)) == 6

    @pytest.mark.parametrize("h", [0.3, 0.2, -0.1])
    def test_non_divisible_rejected(self, h):
        with pytest.raises(MeshError):
            build_lshape_mesh(h)


class TestRefinement:
    def test_area_and_conformity(self, lshape_refined):
        assert lshape_refined.volumes().sum() == pytest.approx(0.75, rel=1e-12)
        assert not has_hanging_nodes(lshape_refined)
        _interior_facets_shared_twice(lshape_refined)

    def test_corner_must_be_vertex(self):
        with pytest.raises(MeshError):
            refine_corner(build_lshape_mesh(0.125), corner=(0.51, 0.5))

    def test_closure_keeps_conformity(self):
        m = build_unit_square(4)
        for k in range(3):
            m = bisect_elements(m, [0, k + 3])
            check_mesh(m)
        assert m.volumes().sum() == pytest.approx(1.0, rel=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(0, 31), min_size=1, max_size=6))
    def test_random_bisection_conforming(self, marked):
        m = bisect_elements(build_unit_square(4), marked)
        assert not has_hanging_nodes(m)
        assert m.volumes().sum() == pytest.approx(1.0, rel=1e-12)
        assert quality(m).gamma < 2 * quality(build_unit_square(4)).gamma

    def test_hanging_node_detected(self):
        pts = [[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]]
        check_mesh(_finalize(pts, [[0, 1, 2], [0, 2, 3]]))
        # lower triangle split at the diagonal midpoint, upper one left alone
        with pytest.raises(MeshError, match="hanging"):
            _finalize(pts, [[0, 1, 4], [1, 2, 4], [0, 2, 3]])


class TestPartition:
    def test_innermost_thirty(self, lshape_refined):
        m0 = partition_fine(lshape_refined, default_threshold(lshape_refined), 0)
        assert int(np.sum(m0.regions == FINE)) == 30

    def test_overlap_superset(self, lshape_refined):
        thr = default_threshold(lshape_refined)
        f0 = partition_fine(lshape_refined, thr, 0).regions == FINE
        f1 = partition_fine(lshape_refined, thr, 1).regions == FINE
        assert np.all(f1[f0]) and f1.sum() > f0.sum()

    def test_idempotent(self, lshape_refined):
        thr = default_threshold(lshape_refined)
        a = partition_fine(lshape_refined, thr, 1)
        b = partition_fine(a, thr, 1)
        np.testing.assert_array_equal(a.regions, b.regions)

    def test_uniform_threshold_h_all_fine(self):
        m = build_unit_square(3)
        out = partition_fine(m, quality(m).h, 0)
        assert np.all(out.regions == FINE)

    def test_overlap_ring_is_neighbours(self, lshape_refined):
        thr = default_threshold(lshape_refined)
        f0 = partition_fine(lshape_refined, thr, 0).regions == FINE
        f1 = partition_fine(lshape_refined, thr, 1).regions == FINE
        nbrs = element_neighbors(lshape_refined)
        ring = {n for e in np.flatnonzero(f0) for n in nbrs[e]}
        assert set(np.flatnonzero(f1)) == set(np.flatnonzero(f0)) | ring

    @pytest.mark.parametrize("thr", [0.0, -1.0, 10.0])
    def test_bad_threshold(self, thr):
        with pytest.raises(MeshError):
            partition_fine(build_unit_square(2), thr)

    def test_regions_default_coarse(self):
        assert np.all(build_unit_square(2).regions == COARSE)
