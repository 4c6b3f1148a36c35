"""Tests for mesh generation, refinement, quadrature and normals."""

import math

import numpy as np
import pytest

from slipflow import mesh as msh
from slipflow.fracgeom import graph_from_profile


@pytest.fixture
def sine_graph():
    return graph_from_profile(
        lambda x: 0.1 * np.sin(np.pi * x),
        lambda x: 0.1 * np.pi * np.cos(np.pi * x),
        center=0.5, delta=0.5, s=4.0)


class TestQuadrature:
    @pytest.mark.parametrize("degree", [1, 2, 4, 6, 8, 10])
    def test_monomial_exactness(self, degree):
        rule = msh.triangle_rule(degree)
        assert rule.degree >= degree
        # reference triangle (0,0)-(1,0)-(0,1): integral of x^a y^b is
        # a! b! / (a+b+2)!
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        xy = np.einsum("qk,kd->qd", rule.points, verts)
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                approx = 0.5 * np.sum(rule.weights * xy[:, 0] ** a * xy[:, 1] ** b)
                exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
                assert abs(approx - exact) < 1e-14

    @pytest.mark.parametrize("degree", [1, 2, 4, 6, 12])
    def test_weights_sum_to_one(self, degree):
        rule = msh.triangle_rule(degree)
        assert abs(rule.weights.sum() - 1.0) < 1e-14


class TestSquare:
    def test_counts_and_corners(self):
        m = msh.square_mesh(0.5)
        assert m.num_triangles >= 8
        for corner in [(0, 0), (1, 0), (0, 1), (1, 1)]:
            d = np.linalg.norm(m.vertices - np.array(corner), axis=1)
            assert d.min() < 1e-14

    def test_area_exact(self):
        m = msh.square_mesh(0.23)
        assert abs(m.area() - 1.0) < 1e-12

    def test_validates(self):
        msh.square_mesh(0.2).validate()


class TestDisc:
    def test_area_deficit(self):
        m = msh.disc_mesh(0.1)
        assert abs(m.area() - math.pi) < 1e-2

    def test_refine_drops_area_error_4x(self):
        m = msh.disc_mesh(0.25)
        e0 = math.pi - m.area()
        m1 = msh.refine(m)
        e1 = math.pi - m1.area()
        m2 = msh.refine(m1)
        e2 = math.pi - m2.area()
        assert e0 / e1 == pytest.approx(4.0, rel=0.25)
        assert e1 / e2 == pytest.approx(4.0, rel=0.25)

    def test_boundary_tagged_curved(self):
        m = msh.disc_mesh(0.3)
        assert set(m.boundary_tags) == {"curved"}


class TestHalfDisc:
    def test_area(self):
        m = msh.half_disc_mesh(0.08)
        assert abs(m.area() - math.pi / 2) < 1e-2

    def test_tags(self):
        m = msh.half_disc_mesh(0.2)
        assert set(m.boundary_tags) == {"flat", "curved"}
        flat = m.edges_with_tag("flat")
        for e in m.boundary_edges[flat]:
            assert np.allclose(m.vertices[e][:, 1], 0.0)


class TestBubble:
    def test_strict_inclusions(self):
        # sampled point membership: lower half-ball of radius delta inside,
        # domain inside lower half-ball of radius 3 delta / 2
        geo = msh.bubble_geometry(delta=0.4)
        rng = np.random.default_rng(11)
        pts = rng.uniform(-0.65, 0.65, size=(4000, 2))
        pts[:, 1] = -np.abs(pts[:, 1])
        r = np.linalg.norm(pts, axis=1)
        inner = (r < 0.4 * 0.999) & (pts[:, 1] < -1e-9)
        assert msh.BubbleGeometry.contains(geo, pts[inner]).all()
        inside = msh.BubbleGeometry.contains(geo, pts)
        assert (r[inside] < 1.5 * 0.4).all()
        # strictness: a margin exists on both sides
        ring = (r > 0.4 * 1.001) & (r < 0.4 * 1.17) & (pts[:, 1] < -0.2)
        assert inside[ring].any()
        assert (r[inside].max() < 1.5 * 0.4 * 0.999)

    def test_mesh_validates_and_rings_present(self):
        geo = msh.bubble_geometry(delta=0.4)
        m = msh.bubble_mesh(geo, h=0.05)
        r = np.linalg.norm(m.vertices - geo.center, axis=1)
        assert np.isclose(r, 0.2).any()
        assert np.isclose(r, 0.4).any()

    def test_no_ring_straddling_elements(self):
        # elements whose centroid lies outside the support circle must have
        # all vertices at radius >= delta
        geo = msh.bubble_geometry(delta=0.4)
        m = msh.bubble_mesh(geo, h=0.05)
        coords = m.triangle_coords()
        cent = coords.mean(axis=1)
        rc = np.linalg.norm(cent - geo.center, axis=1)
        rv = np.linalg.norm(coords - geo.center, axis=2)
        outside = rc > 0.4
        assert (rv[outside] >= 0.4 - 1e-12).all()


class TestBelowGraph:
    def test_top_vertices_on_graph(self, sine_graph):
        m = msh.below_graph_mesh(sine_graph, 0.1, x_lo=0.0, x_hi=1.0, y_lo=-1.0)
        top = m.edges_with_tag("graph-top")
        vids = np.unique(m.boundary_edges[top])
        x = m.vertices[vids]
        assert np.allclose(x[:, 1], sine_graph.eval(x[:, :1]).ravel(), atol=1e-15)

    def test_refine_projects_top_midpoints(self, sine_graph):
        m = msh.below_graph_mesh(sine_graph, 0.2, x_lo=0.0, x_hi=1.0, y_lo=-1.0)
        r = msh.refine(m)
        top = r.edges_with_tag("graph-top")
        vids = np.unique(r.boundary_edges[top])
        x = r.vertices[vids]
        assert np.allclose(x[:, 1], sine_graph.eval(x[:, :1]).ravel(), atol=1e-15)


class TestRefine:
    def test_quadruples_and_preserves_area(self):
        m = msh.square_mesh(0.34)
        r = msh.refine(m)
        assert r.num_triangles == 4 * m.num_triangles
        assert abs(r.area() - m.area()) < 1e-12

    def test_parent_vertices_nest(self):
        m = msh.square_mesh(0.4)
        r = msh.refine(m)
        assert np.allclose(r.vertices[: m.num_vertices], m.vertices)

    def test_h_halves(self):
        m = msh.square_mesh(0.4)
        r = msh.refine(m)
        assert r.h == pytest.approx(m.h / 2)


class TestNormals:
    def test_square_bottom(self):
        m = msh.square_mesh(0.5)
        normals = msh.boundary_normals(m)
        for v, n in normals.items():
            x, y = m.vertices[v]
            if abs(y) < 1e-14 and 1e-6 < x < 1 - 1e-6:
                assert np.allclose(n, [0.0, -1.0])

    def test_flat_graph_top(self):
        g = graph_from_profile(lambda x: 0.0 * x, lambda x: 0.0 * x,
                               center=0.5, delta=0.5, s=4.0)
        m = msh.below_graph_mesh(g, 0.25, x_lo=0.0, x_hi=1.0, y_lo=-1.0)
        normals = msh.boundary_normals(m, graph=g)
        top = np.unique(m.boundary_edges[m.edges_with_tag("graph-top")])
        for v in top:
            assert np.allclose(normals[v], [0.0, 1.0])

    def test_slope_one_graph_normal(self):
        g = graph_from_profile(lambda x: x - 0.5, lambda x: np.ones_like(x),
                               center=0.5, delta=0.5, s=4.0)
        m = msh.below_graph_mesh(g, 0.25, x_lo=0.05, x_hi=0.95, y_lo=-2.0)
        normals = msh.boundary_normals(m, graph=g)
        top = np.unique(m.boundary_edges[m.edges_with_tag("graph-top")])
        expect = np.array([-1.0, 1.0]) / math.sqrt(2.0)
        for v in top:
            assert np.allclose(normals[v], expect)

    def test_corner_detection(self):
        m = msh.square_mesh(0.5)
        corners = msh.corner_vertices(m)
        pts = m.vertices[sorted(corners)]
        assert len(corners) == 4
        assert set(map(tuple, np.round(pts, 12))) == {(0, 0), (1, 0), (0, 1), (1, 1)}


class TestIO:
    def test_roundtrip_with_fields(self, tmp_path, sine_graph):
        m = msh.below_graph_mesh(sine_graph, 0.2, x_lo=0.0, x_hi=1.0, y_lo=-1.0)
        vals = np.arange(m.num_vertices, dtype=float)
        vecs = np.stack([vals, -vals], axis=1)
        path = tmp_path / "mesh.txt"
        msh.write_mesh(m, path, fields={"u": vecs, "p": vals})
        m2, fields = msh.read_mesh(path)
        assert np.allclose(m2.vertices, m.vertices)
        assert np.array_equal(m2.triangles, m.triangles)
        assert np.array_equal(m2.boundary_edges, m.boundary_edges)
        assert list(m2.boundary_tags) == list(m.boundary_tags)
        assert np.allclose(fields["u"], vecs)
        assert np.allclose(fields["p"], vals)

    def test_rejects_too_coarse(self):
        with pytest.raises(msh.MeshError):
            msh.square_mesh(5.0)


def test_gauss_interval():
    x, w = msh.gauss_interval(6, -1.0, 3.0)
    for k in range(10):
        approx = np.sum(w * x ** k)
        exact = (3.0 ** (k + 1) - (-1.0) ** (k + 1)) / (k + 1)
        assert abs(approx - exact) < 1e-12 * max(1, abs(exact))
