import numpy as np
import pytest

from stabmdp.errors import EmptySet, Unbounded
from stabmdp.polytope import (
    Polytope,
    box,
    minkowski_sum_vertices,
    polygon_area,
    polytope_from_vertices,
    regular_polygon,
    support_from_vertices,
)
from oracles import support_of_vertices


class TestSupport:
    def test_unit_box_axis(self):
        b = box([-1.0, -1.0], [1.0, 1.0])
        assert b.support([1.0, 0.0]) == pytest.approx(1.0, abs=1e-9)

    def test_unit_box_diagonal(self):
        b = box([-1.0, -1.0], [1.0, 1.0])
        assert b.support([1.0, 1.0]) == pytest.approx(2.0, abs=1e-9)

    def test_random_polytopes_match_vertex_maximum(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            pts = rng.standard_normal((8, 2))
            poly = polytope_from_vertices(pts)
            verts = poly.vertices()
            for _ in range(5):
                d = rng.standard_normal(2)
                assert poly.support(d) == pytest.approx(
                    support_of_vertices(verts, d), abs=1e-8
                )

    def test_unbounded_direction(self):
        half = Polytope([[1.0, 0.0]], [1.0])
        with pytest.raises(Unbounded):
            half.support([0.0, 1.0])

    def test_empty_set(self):
        empty = Polytope([[1.0], [-1.0]], [-1.0, -1.0])
        with pytest.raises(EmptySet):
            empty.support([1.0])


class TestVertices:
    def test_interval(self):
        iv = box([-2.0], [3.0])
        assert np.allclose(sorted(iv.vertices().ravel()), [-2.0, 3.0])

    def test_square_vertices(self):
        b = box([-1.0, -1.0], [1.0, 1.0])
        verts = b.vertices()
        assert verts.shape == (4, 2)
        assert polygon_area(verts) == pytest.approx(4.0)

    def test_octagon_area(self):
        oct_set = regular_polygon(8, 1.0)
        # area of a regular octagon with circumradius R: 2 sqrt(2) R^2
        assert polygon_area(oct_set.vertices()) == pytest.approx(2.0 * np.sqrt(2.0), abs=1e-10)


class TestAlgebra:
    def test_minkowski_sum_of_boxes(self):
        a = box([-1.0, -1.0], [1.0, 1.0]).vertices()
        b = box([-0.5, -0.5], [0.5, 0.5]).vertices()
        s = minkowski_sum_vertices(a, b)
        assert polygon_area(s) == pytest.approx(9.0)

    def test_prune_removes_redundant_facets(self):
        b = box([-1.0, -1.0], [1.0, 1.0])
        loose = b.intersect(Polytope([[1.0, 0.0]], [5.0]))
        pruned = loose.prune()
        assert pruned.n_facets == 4

    def test_translate_and_contains(self):
        b = box([-1.0, -1.0], [1.0, 1.0]).translate([3.0, 0.0])
        assert b.contains([3.9, 0.0])
        assert not b.contains([1.0, 0.0])

    def test_chebyshev_center_of_box(self):
        center, radius = box([0.0, 0.0], [2.0, 4.0]).chebyshev_center()
        assert radius == pytest.approx(1.0, abs=1e-9)
        assert center[0] == pytest.approx(1.0, abs=1e-7)

    def test_emptiness(self):
        assert Polytope([[1.0], [-1.0]], [-1.0, -1.0]).is_empty()
        assert not box([0.0], [1.0]).is_empty()


class TestSerialization:
    def test_round_trip(self):
        b = regular_polygon(6, 0.3)
        again = Polytope.from_text(b.to_text())
        assert np.allclose(again.f_mat, b.f_mat)
        assert np.allclose(again.g_vec, b.g_vec)

    def test_rows_normalized_on_construction(self):
        p = Polytope([[3.0, 4.0]], [10.0])
        assert np.linalg.norm(p.f_mat[0]) == pytest.approx(1.0)
        assert p.g_vec[0] == pytest.approx(2.0)


class TestSupportHelpers:
    def test_support_from_vertices_octagon(self):
        oct_set = regular_polygon(8, 0.1)
        verts = oct_set.vertices()
        d = np.array([1.0, 1.0]) / np.sqrt(2.0)
        # a vertex sits at 45 degrees, so the support in that direction is R
        assert support_from_vertices(verts, d) == pytest.approx(0.1, abs=1e-12)
