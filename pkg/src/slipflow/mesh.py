"""Conforming triangulations of the 2-D domains used by the solvers.

Generators are deterministic structured templates: a sheared lattice for
squares and below-graph strips, concentric ring point sets triangulated by
Delaunay for discs, half-discs and corner-rounded half-ball ("bubble")
domains.  The Delaunay connectivity keeps the P1 Laplace stiffness matrix
an M-matrix, which the harmonic-extension maximum-principle checks rely on.

Boundary edges are stored in triangle-CCW orientation (domain on the left),
tagged with one of ``graph-top | flat | curved | side``, and optionally
carry projectors used by :func:`refine` to push new midpoints back onto the
exact curved geometry.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import Delaunay



def _count(ratio: float) -> int:
    """Ceil with a relative guard so near-integer ratios are scale-stable."""
    return int(math.ceil(ratio * (1.0 - 1e-9)))

class MeshError(Exception):
    """Raised for unusable geometry or resolution requests."""


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points/weights on the reference triangle.

    Weights sum to one (they are relative to the triangle measure), so the
    integral of ``f`` over a physical triangle T is
    ``area(T) * sum(w_i * f(p_i))``.
    """

    points: np.ndarray   # (nq, 3) barycentric
    weights: np.ndarray  # (nq,)
    degree: int

    def physical_points(self, verts: np.ndarray) -> np.ndarray:
        """Map to (ntri, nq, 2) given triangle vertices (ntri, 3, 2)."""
        return np.einsum("qk,tkd->tqd", self.points, verts)


def _rule_centroid() -> QuadratureRule:
    return QuadratureRule(np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0]), 1)


def _rule_deg2() -> QuadratureRule:
    pts = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
    return QuadratureRule(pts, np.full(3, 1 / 3), 2)


def _rule_deg4() -> QuadratureRule:
    a, b = 0.445948490915965, 0.091576213509771
    wa, wb = 0.223381589678011, 0.109951743655322
    pts, wts = [], []
    for c, w in ((a, wa), (b, wb)):
        for perm in ((c, c, 1 - 2 * c), (c, 1 - 2 * c, c), (1 - 2 * c, c, c)):
            pts.append(perm)
            wts.append(w)
    return QuadratureRule(np.array(pts), np.array(wts), 4)


def _rule_deg6() -> QuadratureRule:
    """Fully symmetric 12-point rule, exact to degree 6.

    Invariance under all vertex permutations makes integrals on mirrored
    element pairs cancel exactly, which the reflection checks rely on.
    """
    pts, wts = [], []
    for a, w in ((0.063089014491502, 0.050844906370207),
                 (0.249286745170910, 0.116786275726379)):
        for perm in ((1 - 2 * a, a, a), (a, 1 - 2 * a, a), (a, a, 1 - 2 * a)):
            pts.append(perm)
            wts.append(w)
    a, b, w = 0.310352451033785, 0.053145049844816, 0.082851075618374
    c = 1.0 - a - b
    for perm in ((a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)):
        pts.append(perm)
        wts.append(w)
    return QuadratureRule(np.array(pts), np.array(wts), 6)


def _rule_duffy(n: int) -> QuadratureRule:
    """Tensor Gauss rule collapsed onto the triangle; exact to degree 2n - 2."""
    x, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    U, V = np.meshgrid(u, u, indexing="ij")
    WU, WV = np.meshgrid(wu, wu, indexing="ij")
    # map (u, v) in the unit square to (x, y) = (u, v (1 - u)); the area
    # factor (1 - u) folds into the weights, normalized to sum 1
    lam1 = U.ravel()
    lam2 = (V * (1.0 - U)).ravel()
    lam0 = 1.0 - lam1 - lam2
    wts = (WU * WV * (1.0 - U)).ravel()
    wts = 2.0 * wts  # unit-square mass 1/2 -> relative weights
    return QuadratureRule(np.stack([lam0, lam1, lam2], axis=1), wts, 2 * n - 2)


def triangle_rule(degree: int) -> QuadratureRule:
    """Smallest stocked rule exact to (at least) the requested degree.

    Up to degree 6 the rules are fully symmetric (invariant under vertex
    permutations); beyond that a collapsed tensor Gauss rule is used.
    """
    if degree <= 1:
        return _rule_centroid()
    if degree == 2:
        return _rule_deg2()
    if degree <= 4:
        return _rule_deg4()
    if degree <= 6:
        return _rule_deg6()
    return _rule_duffy((degree + 2) // 2 + 1)


def gauss_interval(n: int, a: float = 0.0, b: float = 1.0):
    """n-point Gauss-Legendre nodes/weights on (a, b)."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


# ---------------------------------------------------------------------------
# mesh container


@dataclass
class TriMesh:
    """Conforming triangle mesh with tagged, oriented boundary edges."""

    vertices: np.ndarray        # (nv, 2)
    triangles: np.ndarray       # (nt, 3) int, CCW
    boundary_edges: np.ndarray  # (ne, 2) int, CCW along the boundary
    boundary_tags: np.ndarray   # (ne,) unicode
    projectors: dict = field(default_factory=dict)  # tag -> point projector

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.boundary_edges = np.asarray(self.boundary_edges, dtype=np.int64)
        self.boundary_tags = np.asarray(self.boundary_tags)

    # -- derived quantities ------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    def triangle_coords(self) -> np.ndarray:
        """Vertex coordinates per triangle, (nt, 3, 2)."""
        return self.vertices[self.triangles]

    def signed_areas(self) -> np.ndarray:
        t = self.triangle_coords()
        d1 = t[:, 1] - t[:, 0]
        d2 = t[:, 2] - t[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    @property
    def h(self) -> float:
        """Longest edge length."""
        t = self.triangle_coords()
        e = np.concatenate([t[:, 1] - t[:, 0], t[:, 2] - t[:, 1], t[:, 0] - t[:, 2]])
        return float(np.sqrt((e ** 2).sum(axis=1)).max())

    def min_angle(self) -> float:
        """Smallest interior angle in degrees."""
        t = self.triangle_coords()
        angles = []
        for i in range(3):
            a = t[:, (i + 1) % 3] - t[:, i]
            b = t[:, (i + 2) % 3] - t[:, i]
            cosv = (a * b).sum(axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(cosv, -1.0, 1.0))))
        return float(np.min(angles))

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def edges_with_tag(self, tags) -> np.ndarray:
        if isinstance(tags, str):
            tags = (tags,)
        mask = np.isin(self.boundary_tags, list(tags))
        return np.nonzero(mask)[0]

    def vertex_tags(self) -> dict:
        """Map boundary vertex -> set of incident edge tags."""
        out: dict = {}
        for (a, b), tag in zip(self.boundary_edges, self.boundary_tags):
            out.setdefault(int(a), set()).add(str(tag))
            out.setdefault(int(b), set()).add(str(tag))
        return out

    # -- validation ----------------------------------------------------------

    def validate(self):
        """Check orientation, conformity and boundary-loop structure."""
        if (self.signed_areas() <= 0).any():
            raise MeshError("non-positive triangle area (orientation broken)")
        counts: dict = {}
        for tri in self.triangles:
            for i in range(3):
                key = tuple(sorted((int(tri[i]), int(tri[(i + 1) % 3]))))
                counts[key] = counts.get(key, 0) + 1
        bad = [k for k, c in counts.items() if c > 2]
        if bad:
            raise MeshError(f"non-conforming edges: {bad[:5]}")
        boundary = {k for k, c in counts.items() if c == 1}
        listed = {tuple(sorted(map(int, e))) for e in self.boundary_edges}
        if boundary != listed:
            raise MeshError("boundary edge list does not match single-triangle edges")
        # closed loops: every boundary vertex has exactly one outgoing and
        # one incoming oriented edge
        outs = {int(a) for a, _ in self.boundary_edges}
        ins = {int(b) for _, b in self.boundary_edges}
        if outs != ins or len(outs) != len(self.boundary_edges):
            raise MeshError("boundary edges do not form closed loops")
        for v, tags in self.vertex_tags().items():
            if not tags:
                raise MeshError(f"untagged boundary vertex {v}")
        return self


# ---------------------------------------------------------------------------
# construction helpers


def _orient_ccw(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    t = vertices[triangles]
    d1 = t[:, 1] - t[:, 0]
    d2 = t[:, 2] - t[:, 0]
    flip = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) < 0
    triangles = triangles.copy()
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    return triangles


def _boundary_from_triangles(triangles: np.ndarray):
    """Oriented boundary edges (a, b) appearing in exactly one triangle."""
    seen: dict = {}
    for tri in triangles:
        for i in range(3):
            a, b = int(tri[i]), int(tri[(i + 1) % 3])
            key = (min(a, b), max(a, b))
            if key in seen:
                seen[key] = None
            else:
                seen[key] = (a, b)
    edges = [v for v in seen.values() if v is not None]
    return np.array(edges, dtype=np.int64)


def _finish(vertices, triangles, tagger, projectors=None, min_boundary_edges=8) -> TriMesh:
    triangles = _orient_ccw(vertices, triangles)
    if len(np.unique(triangles)) != len(vertices):
        raise MeshError("triangulation dropped input points")
    edges = _boundary_from_triangles(triangles)
    if len(edges) < min_boundary_edges:
        raise MeshError(
            f"target size too coarse: only {len(edges)} boundary edges (need >= {min_boundary_edges})")
    tags = np.array([tagger(vertices[a], vertices[b]) for a, b in edges])
    mesh = TriMesh(vertices, triangles, edges, tags, projectors or {})
    return mesh.validate()


def _ring_points(center, radius_of_angle: Callable[[np.ndarray], np.ndarray],
                 h: float, angle_lo: float, angle_hi: float, closed: bool):
    """Concentric ring point cloud for a star-shaped sector domain.

    ``closed`` marks a full 2*pi sweep, where the seam point must not be
    duplicated.  Coordinates within roundoff of the axis through the center
    are snapped onto it so sector boundaries are exact.
    """
    cx, cy = center
    r_probe = float(np.max(radius_of_angle(np.linspace(angle_lo, angle_hi, 181))))
    n_r = max(3, _count(r_probe / h))
    pts = [(cx, cy)]
    for i in range(1, n_r + 1):
        frac = i / n_r
        arc = frac * r_probe * (angle_hi - angle_lo)
        n_a = max(4, _count(arc / h))
        angles = np.linspace(angle_lo, angle_hi, n_a + 1)
        if closed:
            angles = angles[:-1]
        radii = frac * radius_of_angle(angles)
        for ang, r in zip(angles, radii):
            pts.append((cx + r * math.cos(ang), cy + r * math.sin(ang)))
    out = np.array(pts)
    snap = np.abs(out[:, 1] - cy) < 1e-13 * r_probe
    out[snap, 1] = cy
    return out


def _delaunay_mesh(points: np.ndarray, tagger, projectors=None) -> TriMesh:
    tri = Delaunay(points)
    return _finish(points, tri.simplices, tagger, projectors)


# ---------------------------------------------------------------------------
# generators


def square_mesh(h: float, a: float = 0.0, b: float = 1.0, c: float = 0.0, d: float = 1.0) -> TriMesh:
    """Structured lattice triangulation of the rectangle (a,b) x (c,d)."""
    if h <= 0:
        raise MeshError("mesh size must be positive")
    nx = max(1, _count((b - a) / h))
    ny = max(1, _count((d - c) / h))
    xs = np.linspace(a, b, nx + 1)
    ys = np.linspace(c, d, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))

    def tagger(p, q):
        return "side"

    return _finish(verts, np.array(tris), tagger)


def disc_mesh(h: float, center=(0.0, 0.0), radius: float = 1.0) -> TriMesh:
    """Concentric-ring Delaunay triangulation of a disc."""
    if h <= 0 or radius <= 0:
        raise MeshError("mesh size and radius must be positive")
    center = np.asarray(center, dtype=float)

    def rho(ang):
        return np.full_like(np.asarray(ang, dtype=float), radius)

    pts = _ring_points(center, rho, h, -math.pi, math.pi, closed=True)

    def tagger(p, q):
        return "curved"

    def project(points):
        v = points - center
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        return center + radius * v / nrm

    return _delaunay_mesh(pts, tagger, {"curved": project})


def half_disc_mesh(h: float, center=(0.0, 0.0), radius: float = 1.0, side: str = "lower") -> TriMesh:
    """Half disc, flat diameter tagged ``flat``, arc tagged ``curved``."""
    if side not in ("lower", "upper"):
        raise MeshError("side must be 'lower' or 'upper'")
    center = np.asarray(center, dtype=float)
    lo, hi = (-math.pi, 0.0) if side == "lower" else (0.0, math.pi)

    def rho(ang):
        return np.full_like(np.asarray(ang, dtype=float), radius)

    pts = _ring_points(center, rho, h, lo, hi, closed=False)
    tol = 1e-10 * radius

    def tagger(p, q):
        if abs(p[1] - center[1]) < tol and abs(q[1] - center[1]) < tol:
            return "flat"
        return "curved"

    def project(points):
        v = points - center
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        return center + radius * v / nrm

    return _delaunay_mesh(pts, tagger, {"curved": project})


@dataclass(frozen=True)
class BubbleGeometry:
    """Corner-rounded lower half-ball of size delta on the interface.

    The flat top covers (-x_fillet, x_fillet) on the axis, a circular
    fillet of radius ``fillet`` joins it tangentially to the main arc of
    radius ``big_radius`` < 3 delta / 2, and the closure fits strictly
    between the half-balls of radius delta and 3 delta / 2.
    """

    center: np.ndarray
    delta: float
    big_radius: float
    fillet: float

    @property
    def x_fillet(self) -> float:
        return math.sqrt(self.big_radius ** 2 - 2.0 * self.big_radius * self.fillet)

    def boundary_radius(self, angles: np.ndarray) -> np.ndarray:
        """Star-shaped boundary distance from the center for angles in [-pi, 0]."""
        ang = np.asarray(angles, dtype=float)
        xc, r, R = self.x_fillet, self.fillet, self.big_radius
        phi_t = math.atan2(-r, xc)  # tangency angle of the right fillet
        rho = np.full(ang.shape, R)
        # right fillet sector: far intersection of the ray with the fillet circle
        m = ang > phi_t
        if m.any():
            e = np.stack([np.cos(ang[m]), np.sin(ang[m])], axis=-1)
            proj = e[:, 0] * xc + e[:, 1] * (-r)
            disc = np.maximum(proj ** 2 - xc ** 2, 0.0)
            rho[m] = proj + np.sqrt(disc)
        # left fillet sector (mirror)
        m = ang < -math.pi - phi_t
        if m.any():
            mirrored = -math.pi - ang[m]
            e = np.stack([np.cos(mirrored), np.sin(mirrored)], axis=-1)
            proj = e[:, 0] * xc + e[:, 1] * (-r)
            disc = np.maximum(proj ** 2 - xc ** 2, 0.0)
            rho[m] = proj + np.sqrt(disc)
        return rho

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float)) - self.center
        ang = np.clip(np.arctan2(p[:, 1], p[:, 0]), -math.pi, 0.0)
        rad = np.linalg.norm(p, axis=1)
        below = p[:, 1] < tol
        return below & (rad < self.boundary_radius(ang) + tol)


def bubble_geometry(center=(0.0, 0.0), delta: float = 1.0,
                    fillet_ratio: float = 0.25, shrink: float = 1.0 / 30.0) -> BubbleGeometry:
    """Default corner-rounded geometry for a given interface point and size."""
    center = np.asarray(center, dtype=float)
    if abs(center[1]) > 1e-14 * max(1.0, delta):
        raise MeshError("bubble center must lie on the interface {x_n = 0}")
    big = 1.5 * delta * (1.0 - shrink)
    geo = BubbleGeometry(center=center, delta=delta, big_radius=big, fillet=fillet_ratio * delta)
    if geo.x_fillet <= delta:
        raise MeshError("fillet too large: flat top no longer covers the data disc")
    return geo


def bubble_mesh(geo: BubbleGeometry, h: float) -> TriMesh:
    """Ring/Delaunay triangulation of a bubble domain.

    The radial ladder places rings exactly on the half and full data radii
    (delta/2 and delta) so that cutoff-multiplied fields vanish identically
    outside the support circle, element by element.
    """
    if h <= 0:
        raise MeshError("mesh size must be positive")
    delta, center = geo.delta, geo.center
    inner = max(4, 2 * _count(0.5 * delta / h))   # even count: hits delta/2
    outer = max(2, _count((geo.big_radius - delta) / h))

    pts = [tuple(center)]
    # inner rings: exact circles up to radius delta
    for r in np.linspace(0.0, delta, inner + 1)[1:]:
        arc = r * math.pi
        n_a = max(4, _count(arc / h))
        angles = np.linspace(-math.pi, 0.0, n_a + 1)
        for ang in angles:
            pts.append((center[0] + r * math.cos(ang), center[1] + r * math.sin(ang)))
    # outer rings: interpolate between the delta circle and the true boundary
    for k in range(1, outer + 1):
        t = k / outer
        arc = geo.big_radius * math.pi
        n_a = max(4, _count(arc / h))
        angles = np.linspace(-math.pi, 0.0, n_a + 1)
        rho = delta + t * (geo.boundary_radius(angles) - delta)
        for ang, r in zip(angles, rho):
            pts.append((center[0] + r * math.cos(ang), center[1] + r * math.sin(ang)))

    points = np.array(pts)
    snap = np.abs(points[:, 1] - center[1]) < 1e-13 * geo.big_radius
    points[snap, 1] = center[1]
    tol = 1e-10 * delta

    def tagger(p, q):
        if abs(p[1] - center[1]) < tol and abs(q[1] - center[1]) < tol:
            return "flat"
        return "curved"

    def project(pnts):
        v = np.atleast_2d(pnts) - center
        ang = np.clip(np.arctan2(v[:, 1], v[:, 0]), -math.pi, 0.0)
        rho = geo.boundary_radius(ang)
        out = center + np.stack([rho * np.cos(ang), rho * np.sin(ang)], axis=-1)
        return out

    return _delaunay_mesh(points, tagger, {"curved": project})


def annulus_mesh(h: float, center=(0.0, 0.0), r_inner: float = 0.5,
                 r_outer: float = 1.0) -> TriMesh:
    """Structured ring triangulation of an annulus (both circles ``curved``)."""
    if not 0 < r_inner < r_outer:
        raise MeshError("need 0 < r_inner < r_outer")
    center = np.asarray(center, dtype=float)
    n_r = max(2, _count((r_outer - r_inner) / h))
    n_a = max(8, _count(2.0 * math.pi * r_outer / h))
    radii = np.linspace(r_inner, r_outer, n_r + 1)
    angles = np.linspace(-math.pi, math.pi, n_a + 1)[:-1]

    verts = np.empty(((n_r + 1) * n_a, 2))
    for i, r in enumerate(radii):
        verts[i * n_a:(i + 1) * n_a, 0] = center[0] + r * np.cos(angles)
        verts[i * n_a:(i + 1) * n_a, 1] = center[1] + r * np.sin(angles)

    tris = []
    for i in range(n_r):
        for j in range(n_a):
            jn = (j + 1) % n_a
            v00, v01 = i * n_a + j, i * n_a + jn
            v10, v11 = (i + 1) * n_a + j, (i + 1) * n_a + jn
            tris.append((v00, v01, v11))
            tris.append((v00, v11, v10))

    def tagger(p, q):
        return "curved"

    mid = 0.5 * (r_inner + r_outer)

    def project(points):
        v = np.atleast_2d(points) - center
        r = np.linalg.norm(v, axis=-1, keepdims=True)
        target = np.where(r < mid, r_inner, r_outer)
        return center + target * v / r

    return _finish(verts, np.array(tris), tagger, {"curved": project})


def below_graph_mesh(graph, h: float, x_lo: float, x_hi: float, y_lo: float) -> TriMesh:
    """Sheared lattice for the strip between y = y_lo and the graph curve.

    Top-row vertices sit exactly on (x, omega(x)); top edges are tagged
    ``graph-top``, the bottom ``flat`` and the lateral sides ``side``.
    """
    if h <= 0:
        raise MeshError("mesh size must be positive")
    nx = max(2, _count((x_hi - x_lo) / h))
    xs = np.linspace(x_lo, x_hi, nx + 1)
    tops = graph.eval(xs.reshape(-1, 1)).ravel()
    if (tops <= y_lo).any():
        raise MeshError("graph dips below the bottom of the requested box")
    ny = max(2, _count((tops.max() - y_lo) / h))
    fracs = np.linspace(0.0, 1.0, ny + 1)

    verts = np.empty(((nx + 1) * (ny + 1), 2))
    for i, x in enumerate(xs):
        ys = y_lo + fracs * (tops[i] - y_lo)
        sl = slice(i * (ny + 1), (i + 1) * (ny + 1))
        verts[sl, 0] = x
        verts[sl, 1] = ys

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))

    tol = 1e-12 * max(x_hi - x_lo, 1.0)

    def tagger(p, q):
        if abs(p[0] - x_lo) < tol and abs(q[0] - x_lo) < tol:
            return "side"
        if abs(p[0] - x_hi) < tol and abs(q[0] - x_hi) < tol:
            return "side"
        if abs(p[1] - y_lo) < tol and abs(q[1] - y_lo) < tol:
            return "flat"
        return "graph-top"

    def project(points):
        p = np.atleast_2d(points).astype(float).copy()
        p[:, 1] = graph.eval(p[:, :1]).ravel()
        return p

    return _finish(verts, np.array(tris), tagger, {"graph-top": project})


def mesh_domain(kind: str, h: float, **kw) -> TriMesh:
    """Dispatch on a domain descriptor name; used by the CLI front end."""
    kind = kind.replace("_", "-")
    if kind == "square":
        return square_mesh(h, **kw)
    if kind == "disc":
        return disc_mesh(h, **kw)
    if kind == "half-disc":
        return half_disc_mesh(h, **kw)
    if kind == "bubble":
        geo = kw.pop("geometry", None) or bubble_geometry(**kw)
        return bubble_mesh(geo, h)
    if kind == "below-graph":
        return below_graph_mesh(**kw, h=h)
    raise MeshError(f"unknown domain kind {kind!r}")


# ---------------------------------------------------------------------------
# refinement


def refine(mesh: TriMesh) -> TriMesh:
    """Uniform midpoint refinement.

    Every triangle splits into four; midpoints of boundary edges whose tag
    carries a projector (graph tops, circular arcs) are pushed back onto
    the exact geometry.
    """
    verts = [tuple(v) for v in mesh.vertices]
    edge_mid: dict = {}
    edge_tag = {tuple(sorted(map(int, e))): str(t)
                for e, t in zip(mesh.boundary_edges, mesh.boundary_tags)}

    def midpoint(a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        if key in edge_mid:
            return edge_mid[key]
        p = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
        tag = edge_tag.get(key)
        if tag is not None and tag in mesh.projectors:
            p = np.asarray(mesh.projectors[tag](p.reshape(1, 2))).reshape(2)
        verts.append(tuple(p))
        edge_mid[key] = len(verts) - 1
        return edge_mid[key]

    tris = []
    for (i, j, k) in mesh.triangles:
        a, b, c = midpoint(i, j), midpoint(j, k), midpoint(k, i)
        tris.extend([(i, a, c), (a, j, b), (c, b, k), (a, b, c)])

    new_edges, new_tags = [], []
    for (i, j), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        m = edge_mid[(min(int(i), int(j)), max(int(i), int(j)))]
        new_edges.extend([(int(i), m), (m, int(j))])
        new_tags.extend([str(tag), str(tag)])

    out = TriMesh(np.array(verts), np.array(tris, dtype=np.int64),
                  np.array(new_edges, dtype=np.int64), np.array(new_tags),
                  dict(mesh.projectors))
    out.triangles = _orient_ccw(out.vertices, out.triangles)
    return out.validate()


# ---------------------------------------------------------------------------
# boundary normals


def boundary_normals(mesh: TriMesh, graph=None, tags=None) -> dict:
    """Outward unit normal per boundary vertex.

    Vertices on ``graph-top`` edges get the exact normal from the graph
    derivative; all others average the adjacent (outward) edge normals.
    Restricting ``tags`` averages only over edges with those tags, which is
    what single-side constraints need at shared corners.

    Returns ``{vertex: unit normal}``.
    """
    if tags is not None and isinstance(tags, str):
        tags = (tags,)
    acc: dict = {}
    graph_vertices = set()
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        if tags is not None and str(tag) not in tags:
            continue
        pa, pb = mesh.vertices[int(a)], mesh.vertices[int(b)]
        e = pb - pa
        n = np.array([e[1], -e[0]])
        ln = np.linalg.norm(n)
        if ln == 0:
            raise MeshError("degenerate boundary edge")
        n /= ln
        for v in (int(a), int(b)):
            acc.setdefault(v, []).append(n)
            if str(tag) == "graph-top":
                graph_vertices.add(v)

    out = {}
    for v, ns in acc.items():
        if v in graph_vertices:
            if graph is None:
                raise MeshError("graph-top edges present but no graph supplied")
            x = mesh.vertices[v]
            slope = graph.grad_eval(np.array([[x[0]]])).ravel()[0]
            n = np.array([-slope, 1.0]) / math.sqrt(1.0 + slope * slope)
        else:
            n = np.mean(ns, axis=0)
            n /= np.linalg.norm(n)
        out[v] = n
    return out


def corner_vertices(mesh: TriMesh, angle_tol_deg: float = 30.0, tags=None) -> set:
    """Boundary vertices where adjacent edge normals disagree by more than the tolerance."""
    if tags is not None and isinstance(tags, str):
        tags = (tags,)
    acc: dict = {}
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        if tags is not None and str(tag) not in tags:
            continue
        pa, pb = mesh.vertices[int(a)], mesh.vertices[int(b)]
        e = pb - pa
        n = np.array([e[1], -e[0]])
        n /= np.linalg.norm(n)
        for v in (int(a), int(b)):
            acc.setdefault(v, []).append(n)
    cos_tol = math.cos(math.radians(angle_tol_deg))
    corners = set()
    for v, ns in acc.items():
        if len(ns) >= 2:
            c = float(np.dot(ns[0], ns[-1]))
            if c < cos_tol:
                corners.add(v)
    return corners


# ---------------------------------------------------------------------------
# file format
#
#   nv nt ne
#   nv lines "x y"
#   nt lines "i j k"          (0-based)
#   ne lines "i j tag"
#   optional blocks: "field <name> <ncomp> <nvals>" + nvals lines


def write_mesh(mesh: TriMesh, path, fields: Optional[dict] = None):
    buf = io.StringIO()
    nv, nt, ne = mesh.num_vertices, mesh.num_triangles, len(mesh.boundary_edges)
    buf.write(f"{nv} {nt} {ne}\n")
    for x, y in mesh.vertices:
        buf.write(f"{x:.17g} {y:.17g}\n")
    for i, j, k in mesh.triangles:
        buf.write(f"{i} {j} {k}\n")
    for (i, j), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        buf.write(f"{i} {j} {tag}\n")
    for name, vals in (fields or {}).items():
        arr = np.atleast_2d(np.asarray(vals, dtype=float))
        if arr.shape[0] == 1:
            arr = arr.T
        buf.write(f"field {name} {arr.shape[1]} {arr.shape[0]}\n")
        for row in arr:
            buf.write(" ".join(f"{v:.17g}" for v in row) + "\n")
    with open(path, "w") as f:
        f.write(buf.getvalue())


def read_mesh(path):
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    nv, nt, ne = map(int, lines[0].split())
    p = 1
    verts = np.array([[float(v) for v in lines[p + i].split()] for i in range(nv)])
    p += nv
    tris = np.array([[int(v) for v in lines[p + i].split()] for i in range(nt)], dtype=np.int64)
    p += nt
    edges, tags = [], []
    for i in range(ne):
        a, b, tag = lines[p + i].split()
        edges.append((int(a), int(b)))
        tags.append(tag)
    p += ne
    fields = {}
    while p < len(lines):
        head = lines[p].split()
        if head[0] != "field":
            raise MeshError(f"unexpected trailer line: {lines[p]!r}")
        name, ncomp, nvals = head[1], int(head[2]), int(head[3])
        vals = np.array([[float(v) for v in lines[p + 1 + i].split()] for i in range(nvals)])
        fields[name] = vals if ncomp > 1 else vals.ravel()
        p += 1 + nvals
    mesh = TriMesh(verts, tris, np.array(edges, dtype=np.int64), np.array(tags))
    return (mesh, fields) if fields else (mesh, {})


def quality_csv(mesh: TriMesh) -> str:
    return "min_angle_deg,h\n" + f"{mesh.min_angle():.6f},{mesh.h:.8f}\n"
