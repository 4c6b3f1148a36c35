"""Boundary flattening: compactly supported graphs, harmonic extension on a
corner-rounded half-ball, cutoff multiplication, and the resulting shear map.

The map sends the reference lower half-space to the physical domain by
perturbing only the last coordinate,

    x' = X',    x_n = X_n + E(X),

where E is the cutoff-multiplied harmonic extension of the (normalized,
compactly supported) boundary height.  Its gradient is the identity plus a
last-row rank-one update, so the determinant, the inverse gradient and the
Newton inverse are all cheap and explicit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import matplotlib.tri as mtri
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fracgeom import BoundaryGraph, CutoffFunction, make_cutoff, normalize_graph
from .mesh import BubbleGeometry, TriMesh, bubble_geometry, bubble_mesh


class ExtensionError(Exception):
    """Raised for bad boundary data or a degenerate discrete system."""


class JacobianGapError(Exception):
    """Raised when the shear perturbation is too steep to invert safely."""


# ---------------------------------------------------------------------------
# nodal scalar fields


@dataclass
class ExtensionField:
    """Piecewise-linear scalar field on a triangulation of the lower half-plane.

    Evaluation outside the carrier returns zero (the fields this represents
    are supported inside it); queries on or marginally above the interface
    are clamped just below it so the top-face trace is what interpolation
    along the top edges gives.
    """

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.num_vertices,):
            raise ExtensionError("one nodal value per mesh vertex required")
        if not np.isfinite(self.values).all():
            raise ExtensionError("non-finite nodal values")
        tri = mtri.Triangulation(self.mesh.vertices[:, 0], self.mesh.vertices[:, 1],
                                 self.mesh.triangles)
        self._interp = mtri.LinearTriInterpolator(tri, self.values)
        self._top = float(self.mesh.vertices[:, 1].max())
        self._clamp = self._top - 1e-12 * max(1.0, self.mesh.h)

    def _query(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        x = p[:, 0]
        y = np.minimum(p[:, 1], self._clamp)
        return x, y

    def eval(self, points) -> np.ndarray:
        x, y = self._query(points)
        return np.ma.filled(self._interp(x, y), 0.0)

    def grad(self, points) -> np.ndarray:
        x, y = self._query(points)
        gx, gy = self._interp.gradient(x, y)
        return np.stack([np.ma.filled(gx, 0.0), np.ma.filled(gy, 0.0)], axis=1)

    def hess(self, points):
        """Second derivatives of the piecewise-linear interpolant vanish."""
        p = np.atleast_2d(points)
        return np.zeros((p.shape[0], 2, 2))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def grad_sup_norm(self) -> float:
        """Max gradient magnitude over elements (the interpolant is P1)."""
        g = _element_gradients(self.mesh, self.values)
        return float(np.max(np.linalg.norm(g, axis=1)))

    def save(self, path):
        """Write carrier and nodal values in the mesh+fields text format."""
        from .mesh import write_mesh

        write_mesh(self.mesh, path, fields={"extension": self.values})

    @classmethod
    def load(cls, path) -> "ExtensionField":
        from .mesh import read_mesh

        mesh, fields = read_mesh(path)
        if "extension" not in fields:
            raise ExtensionError(f"{path} carries no extension values")
        return cls(mesh=mesh, values=fields["extension"])


def _element_gradients(mesh: TriMesh, values: np.ndarray) -> np.ndarray:
    """Constant gradient of the P1 interpolant per triangle, (nt, 2)."""
    t = mesh.triangle_coords()
    v = values[mesh.triangles]
    d1 = t[:, 1] - t[:, 0]
    d2 = t[:, 2] - t[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    w1 = v[:, 1] - v[:, 0]
    w2 = v[:, 2] - v[:, 0]
    gx = (w1 * d2[:, 1] - w2 * d1[:, 1]) / det
    gy = (-w1 * d2[:, 0] + w2 * d1[:, 0]) / det
    return np.stack([gx, gy], axis=1)


# ---------------------------------------------------------------------------
# compact support + harmonic extension + cutoff multiplication


@dataclass(frozen=True)
class CompactGraph:
    """Boundary height multiplied by a cutoff evaluated on the curve itself."""

    graph: BoundaryGraph
    cutoff: CutoffFunction

    def eval(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        inside = np.abs(pts[:, 0] - self.graph.center[0]) < self.graph.delta
        out = np.zeros(pts.shape[0])
        if inside.any():
            x = pts[inside]
            w = self.graph.eval(x)
            curve = np.stack([x[:, 0], w], axis=1)
            out[inside] = self.cutoff.eval(curve) * w
        return out

    def grad_eval(self, pts) -> np.ndarray:
        """Chain rule through the curve parametrization y -> (y, omega(y))."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        inside = np.abs(pts[:, 0] - self.graph.center[0]) < self.graph.delta
        out = np.zeros((pts.shape[0], 1))
        if inside.any():
            x = pts[inside]
            w = self.graph.eval(x)
            wp = self.graph.grad_eval(x)[:, 0]
            curve = np.stack([x[:, 0], w], axis=1)
            rho = self.cutoff.eval(curve)
            drho = self.cutoff.grad_eval(curve)
            along = drho[:, 0] + drho[:, 1] * wp
            out[inside, 0] = along * w + rho * wp
        return out


def compact_support_graph(g: BoundaryGraph, rho: CutoffFunction) -> CompactGraph:
    """Multiply the height by the cutoff along the curve.

    The product agrees with the height wherever the curve stays inside the
    cutoff plateau and vanishes at the patch rim, so extending it by zero
    gives continuous boundary data.
    """
    if not g.normalized:
        raise ExtensionError("normalize the graph before compactifying")
    if abs(rho.center[0] - g.center[0]) > 1e-12 * g.delta or \
            abs(rho.delta - g.delta) > 1e-12 * g.delta:
        raise ExtensionError("cutoff must be centered on the patch with matching radius")
    return CompactGraph(graph=g, cutoff=rho)


def harmonic_extension(cw, geo: BubbleGeometry, h: float) -> ExtensionField:
    """Discrete harmonic field matching cw on the flat top, zero elsewhere.

    Linear elements on a Delaunay triangulation of the bubble; the direct
    sparse solve is accepted only if the relative residual is below 1e-12.
    """
    return harmonic_extension_on_mesh(cw, bubble_mesh(geo, h))


def harmonic_extension_on_mesh(cw, mesh: TriMesh) -> ExtensionField:
    """Same solve on a caller-supplied carrier (refinement studies)."""
    data = np.zeros(mesh.num_vertices)
    flat_nodes = np.unique(mesh.boundary_edges[mesh.edges_with_tag("flat")])
    vals = cw.eval(mesh.vertices[flat_nodes])
    if not np.isfinite(vals).all():
        raise ExtensionError("boundary data produced non-finite values")
    data[flat_nodes] = vals
    curved_nodes = np.unique(mesh.boundary_edges[mesh.edges_with_tag("curved")])
    overlap = np.intersect1d(flat_nodes, curved_nodes)
    if overlap.size:
        mism = np.abs(data[overlap])
        if mism.max() > 1e-10 * max(1.0, np.abs(vals).max()):
            raise ExtensionError("boundary data discontinuous at the top corners")
        data[overlap] = 0.0

    values = _solve_laplace_dirichlet(mesh, dirichlet_nodes=np.unique(mesh.boundary_edges),
                                      dirichlet_values=data)
    return ExtensionField(mesh=mesh, values=values)


def _p1_stiffness(mesh: TriMesh) -> sp.csr_matrix:
    t = mesh.triangle_coords()
    areas = mesh.signed_areas()
    # gradients of the three barycentric basis functions
    grads = np.empty((mesh.num_triangles, 3, 2))
    for i in range(3):
        opp = t[:, (i + 2) % 3] - t[:, (i + 1) % 3]
        grads[:, i, 0] = -opp[:, 1]
        grads[:, i, 1] = opp[:, 0]
    grads /= (2.0 * areas)[:, None, None]
    local = np.einsum("tid,tjd,t->tij", grads, grads, areas)
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)),
                      shape=(mesh.num_vertices, mesh.num_vertices))
    return K.tocsr()


def _solve_laplace_dirichlet(mesh: TriMesh, dirichlet_nodes, dirichlet_values) -> np.ndarray:
    K = _p1_stiffness(mesh)
    n = mesh.num_vertices
    fixed = np.zeros(n, dtype=bool)
    fixed[dirichlet_nodes] = True
    free = ~fixed
    u = dirichlet_values.astype(float).copy()
    rhs = -K[free][:, fixed] @ u[fixed]
    Kff = K[free][:, free].tocsc()
    try:
        u[free] = spla.spsolve(Kff, rhs)
    except RuntimeError as exc:
        raise ExtensionError(f"singular stiffness matrix: {exc}") from exc
    if not np.isfinite(u).all():
        raise ExtensionError("singular stiffness matrix (non-finite solution)")
    res = np.linalg.norm(Kff @ u[free] - rhs)
    scale = max(np.linalg.norm(rhs), np.linalg.norm(Kff @ u[free]), 1e-300)
    if res > 1e-12 * scale and res > 1e-300:
        raise ExtensionError(f"discrete residual {res:.3e} exceeds tolerance")
    return u


def full_extension(ew: ExtensionField, rho: CutoffFunction) -> ExtensionField:
    """Cutoff-multiplied extension, re-interpolated nodally.

    Nodal values are the pointwise products, so the result agrees with the
    raw extension on the plateau and vanishes identically outside the
    support ball (the mesh carries a ring of vertices exactly on it).
    """
    w = rho.eval(ew.mesh.vertices)
    return ExtensionField(mesh=ew.mesh, values=ew.values * w)


# ---------------------------------------------------------------------------
# shear maps


class VerticalShearMap:
    """Map of the form x' = X', x_n = X_n + E(X), for a scalar field E.

    ``E`` must provide ``eval`` and ``grad``; ``hess`` is optional (used by
    the transport-operator decompositions; absent means identically zero,
    as for piecewise-linear extensions).
    """

    def __init__(self, ext, support_center, support_radius, graph: Optional[BoundaryGraph] = None,
                 newton_tol: float = 1e-12, newton_max: int = 50):
        self.ext = ext
        self.support_center = np.asarray(support_center, dtype=float)
        self.support_radius = float(support_radius)
        self.graph = graph
        self.newton_tol = newton_tol
        self.newton_max = newton_max

    @property
    def dimension(self) -> int:
        return 2

    def eval(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = X.copy()
        out[:, 1] += self.ext.eval(X)
        return out

    def grad(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        g = self.ext.grad(X)
        out = np.zeros((X.shape[0], 2, 2))
        out[:, 0, 0] = 1.0
        out[:, 1, 1] = 1.0 + g[:, 1]
        out[:, 1, 0] = g[:, 0]
        return out

    def jacobian(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return 1.0 + self.ext.grad(X)[:, 1]

    def inverse(self, x) -> np.ndarray:
        """Newton solve of X_n + E(x', X_n) = x_n with x' fixed."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xn = x[:, 1]
        probe = np.stack([x[:, 0], xn], axis=1)
        t = xn - self.ext.eval(probe)
        for _ in range(self.newton_max):
            pts = np.stack([x[:, 0], t], axis=1)
            resid = t + self.ext.eval(pts) - xn
            if np.max(np.abs(resid)) <= self.newton_tol:
                break
            slope = 1.0 + self.ext.grad(pts)[:, 1]
            t = t - resid / slope
        else:
            raise JacobianGapError("inverse iteration did not converge; shrink the patch")
        return np.stack([x[:, 0], t], axis=1)

    # -- transport-operator ingredients ------------------------------------

    def pinv_ref(self, X) -> np.ndarray:
        """J (grad Psi)^{-1} evaluated in reference coordinates, (m, 2, 2)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        g = self.ext.grad(X)
        out = np.zeros((X.shape[0], 2, 2))
        out[:, 0, 0] = 1.0 + g[:, 1]
        out[:, 1, 0] = -g[:, 0]
        out[:, 1, 1] = 1.0
        return out

    def grad_pinv_ref(self, X) -> np.ndarray:
        """Gradient of the above, (m, 2, 2, 2) indexed [point, i, k, j] = d_j (.)_{ik}."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        H = self.ext.hess(X) if hasattr(self.ext, "hess") else np.zeros((X.shape[0], 2, 2))
        out = np.zeros((X.shape[0], 2, 2, 2))
        out[:, 0, 0, :] = H[:, 1, :]
        out[:, 1, 0, :] = -H[:, 0, :]
        return out


class Diffeomorphism(VerticalShearMap):
    """Graph-built flattening map with its quantitative certificates."""

    def __init__(self, ext: ExtensionField, support_center, support_radius,
                 graph: Optional[BoundaryGraph] = None, gap: float = None):
        super().__init__(ext, support_center, support_radius, graph)
        self.gap = gap

    @property
    def delta(self) -> float:
        return self.support_radius


class AffineMap:
    """Affine synthetic map x = A X + b (rotations for transport tests)."""

    def __init__(self, A, b=None):
        self.A = np.asarray(A, dtype=float)
        self.b = np.zeros(self.A.shape[0]) if b is None else np.asarray(b, dtype=float)
        self.Ainv = np.linalg.inv(self.A)
        self.detA = float(np.linalg.det(self.A))
        if self.detA <= 0:
            raise ValueError("affine test maps must preserve orientation")
        self.support_center = np.zeros(self.A.shape[0])
        self.support_radius = np.inf

    def eval(self, X):
        return np.atleast_2d(X) @ self.A.T + self.b

    def grad(self, X):
        m = np.atleast_2d(X).shape[0]
        return np.broadcast_to(self.A, (m, *self.A.shape)).copy()

    def jacobian(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.detA)

    def inverse(self, x):
        return (np.atleast_2d(x) - self.b) @ self.Ainv.T

    def pinv_ref(self, X):
        m = np.atleast_2d(X).shape[0]
        return np.broadcast_to(self.detA * self.Ainv, (m, 2, 2)).copy()

    def grad_pinv_ref(self, X):
        return np.zeros((np.atleast_2d(X).shape[0], 2, 2, 2))


def identity_map() -> AffineMap:
    return AffineMap(np.eye(2))


def rotation_map(angle: float) -> AffineMap:
    c, s = math.cos(angle), math.sin(angle)
    return AffineMap(np.array([[c, -s], [s, c]]))


# ---------------------------------------------------------------------------
# analytic shear maps (closed-form derivatives, for transport tests)


class _SympyField:
    """Scalar field with eval/grad/hess generated from a sympy expression."""

    def __init__(self, expr, symbols):
        import sympy as sym
        x, y = symbols
        self._f = sym.lambdify((x, y), expr, "numpy")
        self._g = [sym.lambdify((x, y), sym.diff(expr, v), "numpy") for v in (x, y)]
        self._h = [[sym.lambdify((x, y), sym.diff(expr, a, b), "numpy") for b in (x, y)]
                   for a in (x, y)]

    def eval(self, pts):
        p = np.atleast_2d(pts)
        return np.broadcast_to(np.asarray(self._f(p[:, 0], p[:, 1]), dtype=float), (p.shape[0],)).copy()

    def grad(self, pts):
        p = np.atleast_2d(pts)
        cols = [np.broadcast_to(np.asarray(g(p[:, 0], p[:, 1]), dtype=float), (p.shape[0],))
                for g in self._g]
        return np.stack(cols, axis=1)

    def hess(self, pts):
        p = np.atleast_2d(pts)
        out = np.empty((p.shape[0], 2, 2))
        for i in range(2):
            for j in range(2):
                out[:, i, j] = np.broadcast_to(
                    np.asarray(self._h[i][j](p[:, 0], p[:, 1]), dtype=float), (p.shape[0],))
        return out


def analytic_shear_map(center=(0.0, 0.0), delta: float = 0.5, amplitude: float = 0.05,
                       freq=(2.0, 1.0), phase: float = 0.3) -> VerticalShearMap:
    """Shear map with a closed-form C^2 bump perturbation.

    The bump (1 - r^2/delta^2)^3 sin(k . X + phase) vanishes to second
    order on the support circle, so the map has genuine curvature inside
    the ball and is exactly the identity outside it.
    """
    import sympy as sym
    x, y = sym.symbols("x y", real=True)
    cx, cy = center
    r2 = ((x - cx) ** 2 + (y - cy) ** 2) / delta ** 2
    bump = sym.Piecewise(((1 - r2) ** 3, r2 < 1), (0, True))
    expr = amplitude * bump * sym.sin(freq[0] * x + freq[1] * y + phase)
    field = _SympyField(expr, (x, y))
    m = VerticalShearMap(field, support_center=np.asarray(center, dtype=float),
                         support_radius=delta)
    # the construction is only valid while the shear stays invertible
    probe = _support_grid(m, 24)
    if np.max(np.abs(1.0 - m.jacobian(probe))) >= 0.5:
        raise JacobianGapError("analytic bump too steep; lower the amplitude")
    return m


# ---------------------------------------------------------------------------
# certificates and the build pipeline


def _support_grid(map_like, n: int) -> np.ndarray:
    c = map_like.support_center
    d = map_like.support_radius
    xs = np.linspace(c[0] - d, c[0] + d, n)
    ys = np.linspace(c[1] - d, c[1] - 1e-9 * d, n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    keep = np.linalg.norm(pts - c, axis=1) <= d
    return pts[keep]


def jacobian_gap(d: VerticalShearMap, resolution: Optional[float] = None) -> float:
    """Sup of |1 - det grad| over a tensor grid on the support half-ball.

    The grid spacing defaults to half the carrier mesh size so every
    element of a piecewise-linear perturbation is sampled.
    """
    if isinstance(d.ext, ExtensionField):
        h = d.ext.mesh.h if resolution is None else resolution
    else:
        h = (d.support_radius / 24.0) if resolution is None else resolution
    n = max(8, int(math.ceil(2.0 * d.support_radius / (0.5 * h))) + 1)
    pts = _support_grid(d, n)
    return float(np.max(np.abs(1.0 - d.jacobian(pts))))


def build_diffeomorphism(tilde: ExtensionField, center, delta: float,
                         graph: Optional[BoundaryGraph] = None) -> Diffeomorphism:
    """Wrap a cutoff-multiplied extension into a certified shear map."""
    center = np.asarray(center, dtype=float)
    d = Diffeomorphism(ext=tilde, support_center=center, support_radius=delta, graph=graph)
    gap = jacobian_gap(d)
    if gap >= 0.5:
        raise JacobianGapError(
            f"jacobian gap {gap:.3f} >= 1/2: choose a smaller patch radius")
    d.gap = gap
    return d


@dataclass
class FlatteningReport:
    """Everything produced while flattening one boundary patch."""

    graph: BoundaryGraph
    cutoff: CutoffFunction
    compact: CompactGraph
    geometry: BubbleGeometry
    extension: ExtensionField
    tilde: ExtensionField
    map: Diffeomorphism
    delta: float
    gap: float


def flatten_graph(g: BoundaryGraph, h_rel: float = 1 / 16, delta: Optional[float] = None,
                  auto_shrink: bool = True, gap_target: float = 0.4,
                  max_halvings: int = 12) -> FlatteningReport:
    """Full pipeline: normalize, compactify, extend harmonically, cut off, map.

    ``h_rel`` is the carrier mesh size relative to the patch radius.  With
    ``auto_shrink`` the radius is halved until the jacobian gap drops under
    ``gap_target`` (margin below the hard 1/2 invertibility threshold).
    """
    g = g if g.normalized else normalize_graph(g)
    delta = g.delta if delta is None else delta

    last_exc = None
    for _ in range(max_halvings + 1):
        gd = _restrict_graph(g, delta)
        center_n = np.array([gd.center[0], 0.0])
        rho = make_cutoff(center_n, delta)
        cw = compact_support_graph(gd, rho)
        geo = bubble_geometry(center=center_n, delta=delta)
        ew = harmonic_extension(cw, geo, h=h_rel * delta)
        tilde = full_extension(ew, rho)
        try:
            dmap = build_diffeomorphism(tilde, center_n, delta, graph=gd)
        except JacobianGapError as exc:
            last_exc = exc
            if not auto_shrink:
                raise
            delta *= 0.5
            continue
        if dmap.gap < gap_target or not auto_shrink:
            return FlatteningReport(graph=gd, cutoff=rho, compact=cw, geometry=geo,
                                    extension=ew, tilde=tilde, map=dmap,
                                    delta=delta, gap=dmap.gap)
        delta *= 0.5
    raise JacobianGapError(f"no admissible radius found (last: {last_exc})")


def _restrict_graph(g: BoundaryGraph, delta: float) -> BoundaryGraph:
    """Re-normalize a graph on a smaller patch radius."""
    if abs(delta - g.delta) < 1e-15 * g.delta:
        return g
    smaller = BoundaryGraph(center=g.center.copy(), delta=delta, eval=g.eval,
                            grad_eval=g.grad_eval, s=g.s, normalized=False)
    return normalize_graph(smaller)


def gap_scaling_study(profile: Callable, profile_grad: Callable, s: float,
                      ks=range(1, 7), amplitude: float = 0.2,
                      h_rel: float = 1 / 12) -> dict:
    """Jacobian gap across dyadic patch radii for a fixed rescaled profile.

    The profile is a unit-interval shape; at radius delta it is rescaled by
    delta^{2 - n/s} so its fractional seminorm is radius-independent, which
    isolates the radius dependence of the gap.  Returns the radii, gaps and
    the fitted log-log slope.
    """
    n = 2
    a = 2.0 - n / s
    deltas, gaps = [], []
    for k in ks:
        d = 2.0 ** (-int(k))
        amp = amplitude * d ** a

        def ev(x, d=d, amp=amp):
            return amp * profile(x / d)

        def gev(x, d=d, amp=amp):
            return (amp / d) * profile_grad(x / d)

        g = BoundaryGraph(center=np.array([0.0]), delta=d,
                          eval=lambda p, ev=ev: ev(p[..., 0]),
                          grad_eval=lambda p, gev=gev: gev(p[..., 0]).reshape(-1, 1),
                          s=s, normalized=True)
        rep = flatten_graph(g, h_rel=h_rel, auto_shrink=False)
        deltas.append(d)
        gaps.append(rep.gap)
    slope = float(np.polyfit(np.log(deltas), np.log(gaps), 1)[0])
    return {"deltas": np.array(deltas), "gaps": np.array(gaps), "slope": slope}


def self_convergence_orders(cw, geo: BubbleGeometry, h0: float, levels: int = 3,
                            n_probe: int = 25) -> np.ndarray:
    """Observed L-infinity orders of the harmonic extension under h-halving.

    Solves on a nested midpoint-refined mesh hierarchy (curved midpoints
    projected back onto the bubble boundary), compares at interior probe
    points against a reference two refinements finer than the last level,
    and returns the per-level orders log2(e_k / e_{k+1}).
    """
    from .mesh import refine

    rng = np.random.default_rng(1234)
    ang = rng.uniform(-math.pi * 0.9, -math.pi * 0.1, n_probe)
    rad = rng.uniform(0.15, 0.8, n_probe) * geo.delta
    probe = geo.center + np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)

    meshes = [bubble_mesh(geo, h0)]
    for _ in range(levels + 1):
        meshes.append(refine(meshes[-1]))
    sols = [harmonic_extension_on_mesh(cw, m).eval(probe) for m in meshes]
    ref = sols[-1]
    errs = np.array([np.max(np.abs(s - ref)) for s in sols[:levels]])
    steps = np.log2(errs[:-1] / errs[1:])
    fitted = float(np.polyfit(np.arange(levels) * math.log(0.5), np.log(errs), 1)[0])
    return {"errors": errs, "orders": steps, "fitted_order": fitted}
