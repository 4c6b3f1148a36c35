"""Stokes solver with slip and friction boundary conditions.

Continuous quadratic velocity / linear pressure elements on triangles.
Impermeability (u . n = 0) is imposed exactly at boundary nodes by rotating
their velocity degrees of freedom into normal/tangential frames and
eliminating the normal one; the pressure is fixed by one mean-zero
constraint row; tangential rigid motions, present on rotationally
symmetric domains, are removed by mass-orthogonality constraint rows
unless a positive friction term already controls them.

Conventions: strain e(u) = (grad u + grad u^T)/2, stress eta e(u) - p I,
momentum residual -div(stress) = f, mass residual div u = g, boundary
condition u . n = phi and beta T u + T stress n = psi with T the
tangential projector.  Manufactured right-hand sides are derived from
these formulas symbolically, so the assembled forms and the data can
never drift apart.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TriMesh, gauss_interval, refine, square_mesh, triangle_rule


class DataError(Exception):
    """Raised for inadmissible problem data (signs, tangentiality, shapes)."""


class CompatibilityError(Exception):
    """Raised when the data violates a solvability constraint; carries the defect."""

    def __init__(self, message, defect):
        super().__init__(f"{message} (measured defect {defect:.3e})")
        self.defect = defect


class SingularSystemError(Exception):
    def __init__(self, message, min_pivot=None):
        super().__init__(message)
        self.min_pivot = min_pivot


# ---------------------------------------------------------------------------
# quadratic scalar space


@dataclass
class P2Space:
    """Vertex + edge-midpoint nodes of a triangulation."""

    mesh: TriMesh
    edges: np.ndarray          # (nE, 2) sorted vertex pairs
    element_dofs: np.ndarray   # (nt, 6): v0 v1 v2 m01 m12 m20
    coords: np.ndarray         # (n_scalar, 2)

    @classmethod
    def build(cls, mesh: TriMesh) -> "P2Space":
        tris = mesh.triangles
        pairs = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        pairs.sort(axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        nt = tris.shape[0]
        dofs = np.empty((nt, 6), dtype=np.int64)
        dofs[:, :3] = tris
        nv = mesh.num_vertices
        dofs[:, 3] = nv + inverse[:nt]
        dofs[:, 4] = nv + inverse[nt:2 * nt]
        dofs[:, 5] = nv + inverse[2 * nt:]
        coords = np.concatenate([mesh.vertices,
                                 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])
        return cls(mesh=mesh, edges=edges, element_dofs=dofs, coords=coords)

    @property
    def n_scalar(self) -> int:
        return self.coords.shape[0]

    def edge_id(self, a: int, b: int) -> int:
        key = np.array([min(a, b), max(a, b)])
        idx = np.searchsorted(self.edges[:, 0], key[0])
        while idx < len(self.edges) and self.edges[idx, 0] == key[0]:
            if self.edges[idx, 1] == key[1]:
                return idx
            idx += 1
        raise KeyError(f"edge {a}-{b} not in mesh")

    def midpoint_node(self, a: int, b: int) -> int:
        return self.mesh.num_vertices + self.edge_id(a, b)


def _p2_values(lam: np.ndarray) -> np.ndarray:
    """P2 basis values at barycentric points, (nq, 6)."""
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    return np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
    ], axis=1)


def _p1_gradients(mesh: TriMesh):
    """Barycentric gradients per element, (nt, 3, 2), and areas."""
    t = mesh.triangle_coords()
    areas = mesh.signed_areas()
    grads = np.empty((mesh.num_triangles, 3, 2))
    for i in range(3):
        opp = t[:, (i + 2) % 3] - t[:, (i + 1) % 3]
        grads[:, i, 0] = -opp[:, 1]
        grads[:, i, 1] = opp[:, 0]
    grads /= (2.0 * areas)[:, None, None]
    return grads, areas


def _p2_gradients(lam: np.ndarray, bary_grads: np.ndarray) -> np.ndarray:
    """P2 basis gradients at barycentric points, (nt, nq, 6, 2)."""
    G = bary_grads  # (nt, 3, 2)
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    nt = G.shape[0]
    nq = lam.shape[0]
    out = np.empty((nt, nq, 6, 2))
    for i, li in enumerate((l0, l1, l2)):
        out[:, :, i, :] = (4 * li - 1)[None, :, None] * G[:, None, i, :]
    pairs = ((0, 1), (1, 2), (2, 0))
    ls = (l0, l1, l2)
    for k, (a, b) in enumerate(pairs):
        out[:, :, 3 + k, :] = 4 * (ls[b][None, :, None] * G[:, None, a, :]
                                   + ls[a][None, :, None] * G[:, None, b, :])
    return out


def _edge_p2_values(t: np.ndarray) -> np.ndarray:
    """1-D quadratic shapes along an edge (endpoint a, endpoint b, midpoint)."""
    return np.stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)], axis=1)


# ---------------------------------------------------------------------------
# problem data


def as_field(value, ncomp: int) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap constants/tuples into vectorized callables on (m,2) points."""
    if callable(value):
        return value
    arr = np.asarray(value, dtype=float)

    def f(p):
        m = np.atleast_2d(p).shape[0]
        if ncomp == 1:
            return np.full(m, float(arr))
        return np.tile(arr.reshape(1, ncomp), (m, 1))

    return f


@dataclass
class StokesProblem:
    """Data bundle for one solve."""

    mesh: TriMesh
    viscosity: float = 1.0
    beta: object = 0.0            # scalar or callable on boundary points
    f: object = (0.0, 0.0)        # body force
    g: object = 0.0               # divergence data
    psi: object = (0.0, 0.0)      # tangential traction data
    phi: object = None            # normal trace data (None means zero)
    slip_tags: object = ("side", "flat", "curved", "graph-top")  # tags or edge predicate
    graph: object = None          # exact-normal source for graph-top edges

    def __post_init__(self):
        if self.viscosity <= 0:
            raise DataError("viscosity must be positive")
        self.f = as_field(self.f, 2)
        self.g = as_field(self.g, 1)
        self.psi = as_field(self.psi, 2)
        self.beta = as_field(self.beta, 1)
        if self.phi is not None:
            self.phi = as_field(self.phi, 1)

    def slip_edge_indices(self) -> np.ndarray:
        """Indices of constrained boundary edges.

        ``slip_tags`` is either a tag collection or a predicate
        ``(endpoint_a, endpoint_b, tag) -> bool`` for finer selections
        (single-side constraints).
        """
        if callable(self.slip_tags):
            m = self.mesh
            sel = [i for i, (e, t) in enumerate(zip(m.boundary_edges, m.boundary_tags))
                   if self.slip_tags(m.vertices[e[0]], m.vertices[e[1]], str(t))]
            return np.asarray(sel, dtype=np.int64)
        return self.mesh.edges_with_tag(self.slip_tags)


# ---------------------------------------------------------------------------
# constrained node bookkeeping


@dataclass
class SlipConstraints:
    rotated: dict          # scalar node -> unit normal
    fixed: set             # scalar nodes with both components pinned

    @property
    def num_rotated(self) -> int:
        return len(self.rotated)


def slip_constraints(space: P2Space, edge_indices, graph=None,
                     corner_angle_deg: float = 30.0) -> SlipConstraints:
    """Normals for every constrained scalar node (vertices and midpoints).

    Vertices average the adjacent constrained-edge normals (exact graph
    normals on graph tops); corners with genuinely distinct normals are
    pinned completely.  Midpoint nodes take the straight-edge normal, or
    the exact graph normal at their abscissa.
    """
    mesh = space.mesh
    if len(edge_indices) == 0:
        return SlipConstraints(rotated={}, fixed=set())
    sel_edges = mesh.boundary_edges[edge_indices]
    sel_tags = mesh.boundary_tags[edge_indices]

    acc: dict = {}
    graph_nodes = set()
    rotated = {}
    for (a, b), tag in zip(sel_edges, sel_tags):
        pa, pb = mesh.vertices[int(a)], mesh.vertices[int(b)]
        e = pb - pa
        n = np.array([e[1], -e[0]])
        n /= np.linalg.norm(n)
        for vtx in (int(a), int(b)):
            acc.setdefault(vtx, []).append(n)
            if str(tag) == "graph-top":
                graph_nodes.add(vtx)
        mid = space.midpoint_node(int(a), int(b))
        if str(tag) == "graph-top":
            graph_nodes.add(mid)
            rotated[mid] = _graph_normal(graph, 0.5 * (pa[0] + pb[0]))
        else:
            rotated[mid] = n

    cos_tol = math.cos(math.radians(corner_angle_deg))
    fixed = set()
    for vtx, ns in acc.items():
        if vtx in graph_nodes:
            rotated[vtx] = _graph_normal(graph, mesh.vertices[vtx][0])
            continue
        if len(ns) >= 2 and float(np.dot(ns[0], ns[-1])) < cos_tol:
            fixed.add(vtx)
            continue
        n = np.mean(ns, axis=0)
        rotated[vtx] = n / np.linalg.norm(n)
    for vtx in fixed:
        rotated.pop(vtx, None)
    return SlipConstraints(rotated=rotated, fixed=fixed)


def _graph_normal(graph, abscissa: float) -> np.ndarray:
    if graph is None:
        raise DataError("graph-top edges constrained but no graph supplied")
    slope = graph.grad_eval(np.array([[abscissa]])).ravel()[0]
    return np.array([-slope, 1.0]) / math.sqrt(1.0 + slope * slope)


# ---------------------------------------------------------------------------
# assembly


@dataclass
class SaddleSystem:
    """Assembled blocks plus the constraint transformation."""

    space: P2Space
    A: sp.csr_matrix           # viscous block, interleaved velocity dofs
    B: sp.csr_matrix           # divergence coupling (np x 2N)
    Tb: sp.csr_matrix          # boundary friction block
    M_vel: sp.csr_matrix       # velocity mass (vector)
    K_grad: sp.csr_matrix      # full-gradient Gramian (vector)
    F: np.ndarray              # momentum load
    G: np.ndarray              # mass load
    mean_row: np.ndarray       # pressure mean weights
    R: sp.csr_matrix           # rotation into normal/tangential frames
    keep: np.ndarray           # velocity dofs that remain unknowns
    constraints: SlipConstraints
    friction_active: bool

    @property
    def n_vel(self) -> int:
        return self.A.shape[0]

    @property
    def n_pre(self) -> int:
        return self.B.shape[0]

    def reduced(self, mat: sp.spmatrix) -> sp.csr_matrix:
        mat = (self.R.T @ mat @ self.R).tocsr()
        return mat[self.keep][:, self.keep]

    def reduced_rect(self, mat: sp.spmatrix) -> sp.csr_matrix:
        return (mat @ self.R).tocsr()[:, self.keep]

    def reduced_vec(self, vec: np.ndarray) -> np.ndarray:
        return (self.R.T @ vec)[self.keep]

    def expand(self, reduced_vec: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_vel)
        full[self.keep] = reduced_vec
        return self.R @ full


def assemble(problem: StokesProblem, quad_degree: int = 6) -> SaddleSystem:
    """Assemble all blocks and the slip transformation.

    The quadrature degree must be at least twice the velocity degree; the
    default integrates quartic basis products exactly and leaves only the
    data-interpolation error.
    """
    if quad_degree < 4:
        raise DataError("quadrature degree must be at least twice the velocity degree")
    mesh = problem.mesh
    space = P2Space.build(mesh)
    rule = triangle_rule(quad_degree)
    lam, w = rule.points, rule.weights
    nq = w.size

    bary_grads, areas = _p1_gradients(mesh)
    vals = _p2_values(lam)                      # (nq, 6)
    grads = _p2_gradients(lam, bary_grads)      # (nt, nq, 6, 2)
    xq = rule.physical_points(mesh.triangle_coords())  # (nt, nq, 2)
    wq = w[None, :] * areas[:, None]            # (nt, nq)

    eta = problem.viscosity

    # viscous block: strain(u):strain(v) pairs to
    #   1/2 [ delta_ab grad_i . grad_j + d_b phi_i d_a phi_j ]
    nt = mesh.num_triangles
    dot = np.einsum("tqid,tqjd,tq->tij", grads, grads, wq)
    A_loc = np.zeros((nt, 6, 2, 6, 2))
    for aa in range(2):
        for bb in range(2):
            cross = np.einsum("tqi,tqj,tq->tij", grads[:, :, :, bb], grads[:, :, :, aa], wq)
            A_loc[:, :, aa, :, bb] = 0.5 * eta * (((aa == bb) * dot) + cross)

    # divergence coupling: int p1_k * d_b phi_j
    B_loc = np.einsum("q,qk,tqjb,tq->tkjb", np.ones(nq), lam, grads, wq)

    # vector mass and gradient Gramian (norm Gramians for the estimators)
    mass_scalar = np.einsum("qi,qj,tq->tij", vals, vals, wq)
    grad_scalar = np.einsum("tqid,tqjd,tq->tij", grads, grads, wq)

    # loads
    fq = problem.f(xq.reshape(-1, 2)).reshape(nt, nq, 2)
    gq = problem.g(xq.reshape(-1, 2)).reshape(nt, nq)
    F_loc = np.einsum("tqa,qi,tq->tia", fq, vals, wq)
    G_loc = np.einsum("tq,qk,tq->tk", gq, lam, wq)

    # scatter
    dofs = space.element_dofs
    n_scalar = space.n_scalar
    n_vel = 2 * n_scalar
    vd = np.stack([2 * dofs, 2 * dofs + 1], axis=2)  # (nt, 6, 2)

    rows = np.broadcast_to(vd[:, :, :, None, None], A_loc.shape)
    cols = np.broadcast_to(vd[:, None, None, :, :], A_loc.shape)
    A = sp.coo_matrix((A_loc.ravel(), (rows.ravel(), cols.ravel())),
                      shape=(n_vel, n_vel)).tocsr()

    def scatter_scalar(local):
        r = np.broadcast_to(vd[:, :, :, None, None], (nt, 6, 2, 6, 2))
        c = np.broadcast_to(vd[:, None, None, :, :], (nt, 6, 2, 6, 2))
        blocks = np.zeros((nt, 6, 2, 6, 2))
        blocks[:, :, 0, :, 0] = local
        blocks[:, :, 1, :, 1] = local
        return sp.coo_matrix((blocks.ravel(), (r.ravel(), c.ravel())),
                             shape=(n_vel, n_vel)).tocsr()

    M_vel = scatter_scalar(mass_scalar)
    K_grad = scatter_scalar(grad_scalar)

    rB = np.broadcast_to(mesh.triangles[:, :, None, None], B_loc.shape)
    cB = np.broadcast_to(vd[:, None, :, :], B_loc.shape)
    B = sp.coo_matrix((B_loc.ravel(), (rB.ravel(), cB.ravel())),
                      shape=(mesh.num_vertices, n_vel)).tocsr()

    F = np.zeros(n_vel)
    np.add.at(F, vd.ravel(), F_loc.ravel())
    G = np.zeros(mesh.num_vertices)
    np.add.at(G, mesh.triangles.ravel(), G_loc.ravel())

    mean_row = np.zeros(mesh.num_vertices)
    np.add.at(mean_row, mesh.triangles.ravel(),
              np.broadcast_to((areas / 3.0)[:, None], (nt, 3)).ravel())

    # boundary terms on the slip-tagged part
    edge_idx = problem.slip_edge_indices()
    Tb, F_psi, friction_active = _boundary_terms(problem, space, edge_idx)
    F = F + F_psi

    constraints = slip_constraints(space, edge_idx, graph=problem.graph)
    R, keep = _rotation_and_mask(constraints, n_scalar)

    sym_defect = abs(A - A.T).max() if A.nnz else 0.0
    if sym_defect > 1e-12 * max(1.0, abs(A).max()):
        raise DataError(f"viscous block asymmetry {sym_defect:.3e}")

    return SaddleSystem(space=space, A=A, B=B, Tb=Tb, M_vel=M_vel, K_grad=K_grad,
                        F=F, G=G, mean_row=mean_row, R=R, keep=keep,
                        constraints=constraints, friction_active=friction_active)


def _boundary_terms(problem: StokesProblem, space: P2Space, edge_idx):
    mesh = problem.mesh
    n_vel = 2 * space.n_scalar
    tq, wq = gauss_interval(6)
    shapes = _edge_p2_values(tq)  # (nq, 3)

    rows, cols, vals_ = [], [], []
    F_psi = np.zeros(n_vel)
    friction_active = False
    for ei in edge_idx:
        a, b = map(int, mesh.boundary_edges[ei])
        tag = str(mesh.boundary_tags[ei])
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        e = pb - pa
        length = np.linalg.norm(e)
        pts = pa[None, :] + tq[:, None] * e[None, :]
        if tag == "graph-top" and problem.graph is not None:
            nu = np.stack([_graph_normal(problem.graph, x) for x in pts[:, 0]])
        else:
            n0 = np.array([e[1], -e[0]]) / length
            nu = np.tile(n0, (tq.size, 1))

        beta_q = problem.beta(pts)
        if (beta_q < -1e-14).any():
            raise DataError("friction coefficient must be nonnegative on the boundary")
        if (beta_q > 0).any():
            friction_active = True
        psi_q = problem.psi(pts)
        tang_defect = np.abs(np.einsum("qa,qa->q", psi_q, nu))
        scale = max(1.0, float(np.abs(psi_q).max()))
        if tang_defect.max() > 1e-10 * scale:
            raise DataError(
                f"traction data not tangential: |psi.n| = {tang_defect.max():.3e}")

        nodes = np.array([a, b, space.midpoint_node(a, b)])
        vdofs = np.stack([2 * nodes, 2 * nodes + 1], axis=1)  # (3, 2)

        # T = I - n n^T at each quadrature point
        T = np.eye(2)[None, :, :] - np.einsum("qa,qb->qab", nu, nu)
        blk = np.einsum("q,q,qi,qj,qab->iajb", wq * length, beta_q, shapes, shapes, T)
        rows.append(np.broadcast_to(vdofs[:, :, None, None], blk.shape).ravel())
        cols.append(np.broadcast_to(vdofs[None, None, :, :], blk.shape).ravel())
        vals_.append(blk.ravel())

        load = np.einsum("q,qi,qa->ia", wq * length, shapes, psi_q)
        np.add.at(F_psi, vdofs.ravel(), load.ravel())

    if rows:
        Tb = sp.coo_matrix((np.concatenate(vals_),
                            (np.concatenate(rows), np.concatenate(cols))),
                           shape=(n_vel, n_vel)).tocsr()
    else:
        Tb = sp.csr_matrix((n_vel, n_vel))
    return Tb, F_psi, friction_active


def _rotation_and_mask(constraints: SlipConstraints, n_scalar: int):
    R = sp.identity(2 * n_scalar, format="lil")
    keep = np.ones(2 * n_scalar, dtype=bool)
    for node, nu in constraints.rotated.items():
        i, j = 2 * node, 2 * node + 1
        R[i, i], R[i, j] = nu[0], -nu[1]
        R[j, i], R[j, j] = nu[1], nu[0]
        keep[i] = False  # normal component eliminated
    for node in constraints.fixed:
        keep[2 * node] = False
        keep[2 * node + 1] = False
    return R.tocsr(), keep


# ---------------------------------------------------------------------------
# rigid tangential motions


@dataclass
class RigidMotionBasis:
    """Mass-orthonormal affine fields A x + b (A skew) tangent to the boundary."""

    params: np.ndarray        # (dim, 3): spin, shift_x, shift_y
    fields: np.ndarray        # (dim, 2N) nodal values
    singular_values: np.ndarray

    @property
    def dim(self) -> int:
        return self.params.shape[0]


def _rigid_field_nodal(space: P2Space, spin: float, bx: float, by: float) -> np.ndarray:
    x = space.coords
    out = np.empty(2 * space.n_scalar)
    out[0::2] = spin * x[:, 1] + bx
    out[1::2] = -spin * x[:, 0] + by
    return out


def kernel_basis(mesh: TriMesh, slip_tags=("side", "flat", "curved", "graph-top"),
                 graph=None, system: Optional[SaddleSystem] = None,
                 rel_tol: float = 1e-8) -> RigidMotionBasis:
    """Tangential rigid motions detected from boundary constraint samples.

    Builds the (samples x 3) matrix of normal traces of the affine basis
    at every constrained node and reads the kernel off its singular
    values (below ``rel_tol`` times the largest).
    """
    if system is None:
        slip = slip_tags if callable(slip_tags) else tuple(slip_tags)
        system = assemble(StokesProblem(mesh=mesh, slip_tags=slip, graph=graph))
    space = system.space
    cons = system.constraints

    rows = []
    for node, nu in cons.rotated.items():
        x = space.coords[node]
        rows.append([x[1] * nu[0] - x[0] * nu[1], nu[0], nu[1]])
    for node in cons.fixed:
        x = space.coords[node]
        rows.append([x[1], 1.0, 0.0])
        rows.append([-x[0], 0.0, 1.0])
    if not rows:
        params = np.eye(3)
        svals = np.zeros(3)
    else:
        M = np.asarray(rows)
        _, svals, Vt = np.linalg.svd(M, full_matrices=True)
        null = [Vt[i] for i in range(3)
                if (i >= len(svals)) or (svals[i] < rel_tol * svals[0])]
        params = np.array(null) if null else np.empty((0, 3))
        svals = svals

    fields = []
    kept = []
    Mv = system.M_vel
    for prm in params:
        z = _rigid_field_nodal(space, *prm)
        for zf in fields:
            z = z - (zf @ (Mv @ z)) * zf
        nrm = math.sqrt(max(z @ (Mv @ z), 0.0))
        if nrm < 1e-12:
            continue
        fields.append(z / nrm)
        kept.append(prm)
    fields = np.array(fields) if fields else np.empty((0, 2 * space.n_scalar))
    params = np.array(kept) if kept else np.empty((0, 3))
    return RigidMotionBasis(params=params, fields=fields, singular_values=svals)


# ---------------------------------------------------------------------------
# discrete fields and norms


@dataclass
class DiscreteField:
    """Nodal finite-element function (quadratic vector or linear scalar)."""

    space: P2Space
    values: np.ndarray
    kind: str  # "velocity" | "pressure"

    def nodal_vector(self) -> np.ndarray:
        """Velocity values per scalar node, (n_scalar, 2)."""
        if self.kind != "velocity":
            raise DataError("nodal_vector is a velocity accessor")
        return self.values.reshape(-1, 2)


def velocity_error_h1(space: P2Space, values: np.ndarray, grad_exact,
                      quad_degree: int = 6) -> float:
    """H1-seminorm distance between a nodal velocity and an exact gradient."""
    mesh = space.mesh
    rule = triangle_rule(quad_degree)
    lam, w = rule.points, rule.weights
    bary_grads, areas = _p1_gradients(mesh)
    grads = _p2_gradients(lam, bary_grads)
    xq = rule.physical_points(mesh.triangle_coords())
    un = values.reshape(-1, 2)[space.element_dofs]      # (nt, 6, 2)
    gh = np.einsum("tqid,tia->tqad", grads, un)          # (nt, nq, 2, 2)
    ge = grad_exact(xq.reshape(-1, 2)).reshape(gh.shape)
    diff = ((gh - ge) ** 2).sum(axis=(2, 3))
    return math.sqrt(float(np.einsum("tq,q,t->", diff, w, areas)))


def velocity_error_l2(space: P2Space, values: np.ndarray, exact,
                      quad_degree: int = 6) -> float:
    mesh = space.mesh
    rule = triangle_rule(quad_degree)
    lam, w = rule.points, rule.weights
    vals = _p2_values(lam)
    xq = rule.physical_points(mesh.triangle_coords())
    un = values.reshape(-1, 2)[space.element_dofs]
    uh = np.einsum("qi,tia->tqa", vals, un)
    ue = exact(xq.reshape(-1, 2)).reshape(uh.shape)
    diff = ((uh - ue) ** 2).sum(axis=2)
    _, areas = _p1_gradients(mesh)
    return math.sqrt(float(np.einsum("tq,q,t->", diff, w, areas)))


def pressure_error_l2(mesh: TriMesh, values: np.ndarray, exact,
                      quad_degree: int = 6) -> float:
    rule = triangle_rule(quad_degree)
    lam, w = rule.points, rule.weights
    xq = rule.physical_points(mesh.triangle_coords())
    ph = np.einsum("qk,tk->tq", lam, values[mesh.triangles])
    pe = exact(xq.reshape(-1, 2)).reshape(ph.shape)
    _, areas = _p1_gradients(mesh)
    return math.sqrt(float(np.einsum("tq,q,t->", (ph - pe) ** 2, w, areas)))


# ---------------------------------------------------------------------------
# lifting of inhomogeneous normal data


@dataclass
class LiftReport:
    lift: np.ndarray            # nodal vector field equal to phi n at boundary nodes
    rhs_momentum: np.ndarray    # weak substitution of the momentum data
    rhs_mass: np.ndarray        # substitution of the divergence data
    boundary_integral: float    # compatibility integral of phi


def lift_boundary_data(problem: StokesProblem, system: SaddleSystem) -> LiftReport:
    """Extend phi n into the domain and shift it out of the unknown.

    Boundary nodes receive exactly phi(node) n(node); interior nodes are
    filled with the componentwise discrete harmonic extension.  The
    returned right-hand-side corrections are the weak forms of the
    substituted body force, divergence and traction data.
    """
    if problem.phi is None:
        raise DataError("no normal-trace data to lift")
    mesh, space = problem.mesh, system.space

    tqv, wqv = gauss_interval(8)
    total = 0.0
    for ei in problem.slip_edge_indices():
        a, b = map(int, mesh.boundary_edges[ei])
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        length = np.linalg.norm(pb - pa)
        pts = pa[None, :] + tqv[:, None] * (pb - pa)[None, :]
        total += float(np.sum(wqv * problem.phi(pts))) * length
    if abs(total) > 1e-10 * max(1.0, mesh.h):
        raise CompatibilityError("normal-trace data has nonzero boundary mean", total)

    lift = np.zeros(2 * space.n_scalar)
    bnodes = []
    for node, nu in system.constraints.rotated.items():
        val = float(problem.phi(space.coords[node].reshape(1, 2))[0])
        lift[2 * node] = val * nu[0]
        lift[2 * node + 1] = val * nu[1]
        bnodes.append(node)
    for node in system.constraints.fixed:
        bnodes.append(node)  # pinned corners keep zero lift

    # componentwise discrete harmonic fill-in of interior nodes
    K = system.K_grad
    fixed = np.zeros(2 * space.n_scalar, dtype=bool)
    for node in bnodes:
        fixed[2 * node] = fixed[2 * node + 1] = True
    free = ~fixed
    Kff = K[free][:, free].tocsc()
    rhs = -K[free][:, fixed] @ lift[fixed]
    lift[free] = spla.spsolve(Kff, rhs)

    return LiftReport(lift=lift,
                      rhs_momentum=-(system.A @ lift) - (system.Tb @ lift),
                      rhs_mass=-(system.B @ lift),
                      boundary_integral=total)


# ---------------------------------------------------------------------------
# solving


@dataclass
class SolveReport:
    velocity: DiscreteField
    pressure: DiscreteField
    residual: float
    kernel_dim: int
    deflated: bool
    compat_div: float
    compat_kernel: float
    viscous_energy: float
    friction_energy: float
    slip_defect: float
    lift: Optional[LiftReport]
    wall_time: float
    min_pivot: float
    max_pivot: float = 1.0
    infsup: Optional[float] = None       # filled on request (dense eigenproblem)
    korn_eigenvalue: Optional[float] = None

    @property
    def near_singular(self) -> bool:
        """Factorization hit a (relatively) vanishing pivot."""
        return self.min_pivot < 1e-10 * self.max_pivot


def solve(problem: StokesProblem, deflate: Optional[bool] = None,
          compat_tol: float = 1e-8, check_compat: bool = True,
          with_estimates: bool = False) -> SolveReport:
    """Direct solve of the constrained saddle-point system.

    Rigid tangential motions are removed by constraint rows whenever the
    friction term vanishes (``deflate`` overrides the automatic choice);
    with friction active on a set of positive measure the system is solved
    as assembled.  Incompatible data raises before factorization.
    ``with_estimates`` additionally runs the (dense, coarse-mesh-priced)
    inf-sup and strain-equivalence estimators and stores them on the report.
    """
    t0 = time.perf_counter()
    system = assemble(problem)
    basis = kernel_basis(problem.mesh, problem.slip_tags, graph=problem.graph,
                         system=system)

    lift_rep = None
    F, G = system.F.copy(), system.G.copy()
    if problem.phi is not None:
        lift_rep = lift_boundary_data(problem, system)
        F += lift_rep.rhs_momentum
        G += lift_rep.rhs_mass

    # compatibility: mean of the divergence data, kernel-orthogonality
    compat_div = _integral_of_g(problem, system)
    compat_kernel = 0.0
    for z in basis.fields:
        compat_kernel = max(compat_kernel, abs(float(F @ z)))
    if check_compat:
        if abs(compat_div) > compat_tol:
            raise CompatibilityError("divergence data has nonzero mean", compat_div)
        if not system.friction_active and compat_kernel > compat_tol:
            raise CompatibilityError(
                "data not orthogonal to the tangential rigid motions", compat_kernel)

    if deflate is None:
        deflate = (not system.friction_active) and basis.dim > 0
    if system.friction_active and deflate:
        deflate = False  # friction already controls the tangential motions

    A_eff = system.A + system.Tb
    Ar = system.reduced(A_eff)
    Br = system.reduced_rect(system.B)
    Fr = system.reduced_vec(F)
    nur = Ar.shape[0]
    n_p = system.n_pre
    core = sp.bmat([[Ar, -Br.T], [-Br, None]], format="csc")
    b = np.concatenate([Fr, -G])

    # The quotient constraints (pressure mean, tangential-motion
    # orthogonality) pair with exact nullspace directions of the core:
    # div-pairing against a constant pressure vanishes on slip-everywhere
    # boundaries and the deflated motions are strain- and divergence-free.
    # Factoring with appended integral rows is prohibitively dense, so the
    # system is made invertible by pinning one representative degree of
    # freedom per nullspace direction and the solution is shifted onto the
    # exact integral constraints afterwards; the two formulations pick the
    # same representative.
    const_div = np.abs(Br.T @ np.ones(n_p)).max()
    if const_div > 1e-9 * max(1.0, abs(Br).max()):
        raise DataError(
            "constant pressure is not a nullspace direction (partial slip?); "
            f"divergence pairing {const_div:.3e}")
    nullspace = [np.concatenate([np.zeros(nur), np.ones(n_p)])]
    constraints = [np.concatenate([np.zeros(nur), system.mean_row])]
    if deflate:
        for z in basis.fields:
            nullspace.append(np.concatenate([system.reduced_vec(z), np.zeros(n_p)]))
            constraints.append(np.concatenate([system.reduced_vec(system.M_vel @ z),
                                               np.zeros(n_p)]))

    pins = _pick_pins(nullspace)
    keep = np.ones(core.shape[0], dtype=bool)
    keep[pins] = False
    Kp = core[keep][:, keep].tocsc()
    bp = b[keep]

    try:
        lu = spla.splu(Kp)
        xk = lu.solve(bp)
        pivots = np.abs(lu.U.diagonal())
        min_pivot = float(pivots.min())
        max_pivot = float(pivots.max())
    except RuntimeError as exc:
        raise SingularSystemError(f"factorization failed: {exc}") from exc
    if not np.isfinite(xk).all():
        raise SingularSystemError("solver produced non-finite values",
                                  min_pivot=min_pivot)
    resid = float(np.linalg.norm(Kp @ xk - bp) / max(np.linalg.norm(bp), 1e-300))
    if resid > 1e-10:
        raise SingularSystemError(
            f"relative residual {resid:.3e} too large (system near-singular)",
            min_pivot=min_pivot)

    sol = np.zeros(core.shape[0])
    sol[keep] = xk
    Z = np.stack(nullspace, axis=1)
    C = np.stack(constraints, axis=0)
    alpha = np.linalg.solve(C @ Z, C @ sol)
    sol = sol - Z @ alpha

    u = system.expand(sol[:nur])
    if lift_rep is not None:
        u = u + lift_rep.lift
    p = sol[nur:nur + n_p]

    slip_defect = _slip_defect(system, u, problem)
    report = SolveReport(
        velocity=DiscreteField(space=system.space, values=u, kind="velocity"),
        pressure=DiscreteField(space=system.space, values=p, kind="pressure"),
        residual=resid,
        kernel_dim=basis.dim,
        deflated=deflate,
        compat_div=compat_div,
        compat_kernel=compat_kernel,
        viscous_energy=float(u @ (system.A @ u)),
        friction_energy=float(u @ (system.Tb @ u)),
        slip_defect=slip_defect,
        lift=lift_rep,
        wall_time=time.perf_counter() - t0,
        min_pivot=min_pivot,
        max_pivot=max_pivot)
    if with_estimates:
        report.infsup = estimate_infsup(problem.mesh, slip_tags=problem.slip_tags,
                                        graph=problem.graph).beta_h
        report.korn_eigenvalue = estimate_korn(problem.mesh, slip_tags=problem.slip_tags,
                                               graph=problem.graph).eigenvalue
    return report


def _pick_pins(nullspace) -> np.ndarray:
    """One representative dof per nullspace vector, greedily unisolvent."""
    pins = []
    for z in nullspace:
        order = np.argsort(-np.abs(z))
        for idx in order:
            if idx not in pins and abs(z[idx]) > 1e-10 * np.abs(z).max():
                pins.append(int(idx))
                break
        else:
            raise SingularSystemError("could not pin a nullspace direction")
    Z = np.stack(nullspace, axis=1)
    P = Z[pins]
    if np.linalg.cond(P) > 1e8:
        raise SingularSystemError("nullspace pinning ill-conditioned")
    return np.asarray(pins, dtype=np.int64)


def _integral_of_g(problem: StokesProblem, system: SaddleSystem) -> float:
    rule = triangle_rule(6)
    mesh = problem.mesh
    xq = rule.physical_points(mesh.triangle_coords())
    gq = problem.g(xq.reshape(-1, 2)).reshape(mesh.num_triangles, -1)
    _, areas = _p1_gradients(mesh)
    return float(np.einsum("tq,q,t->", gq, rule.weights, areas))


def _slip_defect(system: SaddleSystem, u: np.ndarray, problem: StokesProblem) -> float:
    worst = 0.0
    phi = problem.phi
    for node, nu in system.constraints.rotated.items():
        un = u[2 * node] * nu[0] + u[2 * node + 1] * nu[1]
        target = 0.0 if phi is None else float(phi(system.space.coords[node].reshape(1, 2))[0])
        worst = max(worst, abs(un - target))
    for node in system.constraints.fixed:
        worst = max(worst, abs(u[2 * node]), abs(u[2 * node + 1]))
    return worst


# ---------------------------------------------------------------------------
# stability estimators


@dataclass
class InfSupReport:
    beta_h: float
    stable: bool
    eigenvalues: np.ndarray


def estimate_infsup(mesh: TriMesh, slip_tags=("side", "flat", "curved", "graph-top"),
                    graph=None, zero_tol: float = 1e-10,
                    clamp_all: bool = False) -> InfSupReport:
    """Discrete divergence inf-sup constant on the slip-constrained space.

    Smallest generalized singular value of the divergence coupling against
    the H1 velocity Gramian and the pressure mass: eigenvalues of the
    pressure Schur complement, computed densely.  The constant-pressure
    mode is discarded; any further (near-)zero eigenvalue flags an
    unstable pair.  ``clamp_all`` pins both components at every
    constrained node (degenerate-space probe).
    """
    slip = slip_tags if callable(slip_tags) else tuple(slip_tags)
    system = assemble(StokesProblem(mesh=mesh, slip_tags=slip, graph=graph))
    if clamp_all:
        for node in system.constraints.rotated:
            system.keep[2 * node] = system.keep[2 * node + 1] = False
    n_kept = int(system.keep.sum())
    if n_kept + 1 < mesh.num_vertices:
        evals = np.zeros(mesh.num_vertices)
        return InfSupReport(beta_h=0.0, stable=False, eigenvalues=evals)

    H = system.reduced(system.K_grad + system.M_vel).toarray()
    Br = system.reduced_rect(system.B).toarray()
    Mp = _pressure_mass(mesh).toarray()

    S = Br @ np.linalg.solve(H, Br.T)
    evals = np.sort(np.real(sla.eigh(S, Mp, eigvals_only=True)))
    scale = max(evals.max(), 1e-300)
    null = int(np.sum(evals < zero_tol * scale))
    if null > 1:
        return InfSupReport(beta_h=0.0, stable=False, eigenvalues=evals)
    return InfSupReport(beta_h=float(np.sqrt(evals[null])), stable=True, eigenvalues=evals)


def _pressure_mass(mesh: TriMesh) -> sp.csr_matrix:
    rule = triangle_rule(2)
    lam, w = rule.points, rule.weights
    _, areas = _p1_gradients(mesh)
    loc = np.einsum("qk,ql,q->kl", lam, lam, w)
    local = loc[None, :, :] * areas[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)),
                         shape=(mesh.num_vertices, mesh.num_vertices)).tocsr()


@dataclass
class KornReport:
    eigenvalue: float
    constant: Optional[float]   # None when the strain form is degenerate


def estimate_korn(mesh: TriMesh, slip_tags=(), graph=None,
                  skew_moment: bool = False, zero_tol: float = 1e-10) -> KornReport:
    """Smallest eigenvalue of the strain Gramian against the gradient Gramian.

    The comparison runs on the slip-constrained subspace (possibly empty
    set of tags: unconstrained), intersected with the mean-zero velocity
    subspace, where the gradient seminorm is a genuine norm: constant
    fields are the quotient direction of the norm equivalence and would
    otherwise pollute straight-sided partial constraints.  A zero
    eigenvalue means a rigid motion survives the constraints.  The
    optional spin-moment row removes the rotational direction explicitly.
    """
    slip = slip_tags if callable(slip_tags) else tuple(slip_tags)
    system = assemble(StokesProblem(mesh=mesh, viscosity=1.0, slip_tags=slip, graph=graph))
    E = system.reduced(system.A).toarray()   # strain Gramian at unit viscosity
    H = system.reduced(system.K_grad).toarray()

    rows = list(_mean_velocity_rows(system))
    if skew_moment:
        rows.append(_skew_moment_row(system))
    C = np.stack([system.reduced_vec(r) for r in rows])
    N = sla.null_space(C)
    E = N.T @ E @ N
    H = N.T @ H @ N

    evals = np.sort(np.real(sla.eigh(E, H, eigvals_only=True)))
    lam = float(max(evals[0], 0.0))
    if lam < zero_tol:
        return KornReport(eigenvalue=lam, constant=None)
    return KornReport(eigenvalue=lam, constant=1.0 / math.sqrt(lam))


def _mean_velocity_rows(system: SaddleSystem):
    """Weights of the constraints int u_x = 0 and int u_y = 0."""
    mesh = system.space.mesh
    rule = triangle_rule(4)
    lam, w = rule.points, rule.weights
    _, areas = _p1_gradients(mesh)
    vals = _p2_values(lam)
    wq = w[None, :] * areas[:, None]
    loc = np.einsum("qi,tq->ti", vals, wq)
    for comp in range(2):
        row = np.zeros(2 * system.space.n_scalar)
        np.add.at(row, (2 * system.space.element_dofs + comp).ravel(),
                  np.broadcast_to(loc, loc.shape).ravel())
        yield row


def _skew_moment_row(system: SaddleSystem) -> np.ndarray:
    """Weights of the constraint int (d_x u_y - d_y u_x) = 0."""
    mesh = system.space.mesh
    rule = triangle_rule(4)
    lam, w = rule.points, rule.weights
    bary_grads, areas = _p1_gradients(mesh)
    grads = _p2_gradients(lam, bary_grads)
    wq = w[None, :] * areas[:, None]
    gx = np.einsum("tqi,tq->ti", grads[:, :, :, 0], wq)
    gy = np.einsum("tqi,tq->ti", grads[:, :, :, 1], wq)
    row = np.zeros(2 * system.space.n_scalar)
    d = system.space.element_dofs
    np.add.at(row, (2 * d + 1).ravel(), gx.ravel())
    np.add.at(row, (2 * d).ravel(), -gy.ravel())
    return row


# ---------------------------------------------------------------------------
# manufactured cases and convergence study


@dataclass
class ManufacturedCase:
    name: str
    eta: float
    beta: float
    u: Callable
    grad_u: Callable
    p: Callable
    f: Callable
    g: Callable
    psi: Callable
    make_mesh: Callable[[float], TriMesh]
    slip_tags: tuple


def _scalarize(expr, symbols):
    """Lambdify one scalar expression into a broadcast-safe (m,)-callable."""
    import sympy as sym
    fn = sym.lambdify(symbols, expr, "numpy")

    def call(xx, yy):
        return np.broadcast_to(np.asarray(fn(xx, yy), dtype=float), xx.shape).copy()

    return call


def _vectorize_calls(calls):
    def wrapped(pts):
        p = np.atleast_2d(pts)
        return np.stack([c(p[:, 0], p[:, 1]) for c in calls], axis=1)
    return wrapped


def _square_case(name: str, beta_const: float) -> ManufacturedCase:
    import sympy as sym

    x, y = sym.symbols("x y", real=True)
    eta = 1.0
    u1 = sym.pi * sym.sin(sym.pi * x) * sym.cos(sym.pi * y)
    u2 = -sym.pi * sym.cos(sym.pi * x) * sym.sin(sym.pi * y)
    pex = sym.cos(sym.pi * x) * sym.cos(sym.pi * y)

    grad = sym.Matrix([[sym.diff(u1, x), sym.diff(u1, y)],
                       [sym.diff(u2, x), sym.diff(u2, y)]])
    strain = (grad + grad.T) / 2
    sigma = eta * strain - pex * sym.eye(2)
    fvec = [-sum(sym.diff(sigma[i, j], v) for j, v in enumerate((x, y))) for i in range(2)]
    gdiv = sym.simplify(sym.diff(u1, x) + sym.diff(u2, y))

    u_call = _vectorize_calls([_scalarize(u1, (x, y)), _scalarize(u2, (x, y))])
    f_call = _vectorize_calls([_scalarize(c, (x, y)) for c in fvec])
    gu_comp = [[_scalarize(grad[i, j], (x, y)) for j in range(2)] for i in range(2)]

    def gu_call(pts):
        p = np.atleast_2d(pts)
        out = np.empty((p.shape[0], 2, 2))
        for i in range(2):
            for j in range(2):
                out[:, i, j] = gu_comp[i][j](p[:, 0], p[:, 1])
        return out

    p_sc = _scalarize(pex, (x, y))
    g_sc = _scalarize(gdiv, (x, y))

    def p_call(pts):
        p = np.atleast_2d(pts)
        return p_sc(p[:, 0], p[:, 1])

    def g_call(pts):
        p = np.atleast_2d(pts)
        return g_sc(p[:, 0], p[:, 1])

    normals = {"left": (-1, 0), "right": (1, 0), "bottom": (0, -1), "top": (0, 1)}
    psi_side = {}
    for side, nv in normals.items():
        n = sym.Matrix(nv)
        T = sym.eye(2) - n * n.T
        expr = beta_const * (T * sym.Matrix([u1, u2])) + T * (sigma * n)
        psi_side[side] = _vectorize_calls([_scalarize(expr[0], (x, y)),
                                           _scalarize(expr[1], (x, y))])

    def psi_call(pts):
        p = np.atleast_2d(pts)
        out = np.zeros((p.shape[0], 2))
        tol = 1e-12
        masks = {
            "left": np.abs(p[:, 0]) < tol,
            "right": np.abs(p[:, 0] - 1.0) < tol,
            "bottom": np.abs(p[:, 1]) < tol,
            "top": np.abs(p[:, 1] - 1.0) < tol,
        }
        for side, mask in masks.items():
            if mask.any():
                out[mask] = psi_side[side](p[mask])
        return out

    return ManufacturedCase(
        name=name, eta=eta, beta=beta_const,
        u=u_call, grad_u=gu_call, p=p_call, f=f_call, g=g_call, psi=psi_call,
        make_mesh=lambda h: square_mesh(h), slip_tags=("side",))


def _zero_case() -> ManufacturedCase:
    def zero_vec(p):
        return np.zeros((np.atleast_2d(p).shape[0], 2))

    def zero_mat(p):
        return np.zeros((np.atleast_2d(p).shape[0], 2, 2))

    def zero_scalar(p):
        return np.zeros(np.atleast_2d(p).shape[0])

    return ManufacturedCase(name="zero", eta=1.0, beta=0.0,
                            u=zero_vec, grad_u=zero_mat, p=zero_scalar,
                            f=zero_vec, g=zero_scalar, psi=zero_vec,
                            make_mesh=lambda h: square_mesh(h), slip_tags=("side",))


_CASES = {}


def manufactured_case(name: str, beta: Optional[float] = None) -> ManufacturedCase:
    """Registered case; ``beta`` overrides the friction constant (re-derives psi)."""
    if beta is not None:
        if not name.startswith("square"):
            raise KeyError("friction override only applies to the square cases")
        return _square_case(f"{name}-beta{beta}", beta_const=float(beta))
    if name not in _CASES:
        if name == "square-slip":
            _CASES[name] = _square_case(name, beta_const=0.0)
        elif name == "square-friction":
            _CASES[name] = _square_case(name, beta_const=1.0)
        elif name == "zero":
            _CASES[name] = _zero_case()
        else:
            raise KeyError(f"unknown manufactured case {name!r}")
    return _CASES[name]


@dataclass
class ConvergenceRow:
    level: int
    h: float
    err_u_h1: float
    err_p_l2: float


@dataclass
class ConvergenceTable:
    case: str
    rows: list
    rate_u: float
    rate_p: float
    wall_time: float

    def csv(self) -> str:
        def step_rate(prev, cur):
            if prev <= 0 or cur <= 0:
                return ""
            return f"{math.log2(prev / cur):.3f}"

        lines = ["level,h,err_u_H1,err_p_L2,rate_u,rate_p"]
        for i, r in enumerate(self.rows):
            ru = rp = ""
            if i > 0:
                ru = step_rate(self.rows[i - 1].err_u_h1, r.err_u_h1)
                rp = step_rate(self.rows[i - 1].err_p_l2, r.err_p_l2)
            lines.append(f"{r.level},{r.h:.6g},{r.err_u_h1:.6e},{r.err_p_l2:.6e},{ru},{rp}")
        lines.append(f"# fitted,,,,{self.rate_u:.3f},{self.rate_p:.3f}")
        return "\n".join(lines) + "\n"


def convergence_study(case_id: str, refinements: int = 4, h0: float = 1 / 8) -> ConvergenceTable:
    """Solve a manufactured case on a refinement hierarchy and fit rates."""
    t0 = time.perf_counter()
    case = manufactured_case(case_id)
    mesh = case.make_mesh(h0)
    rows = []
    for level in range(refinements + 1):
        problem = StokesProblem(mesh=mesh, viscosity=case.eta, beta=case.beta,
                                f=case.f, g=case.g, psi=case.psi,
                                slip_tags=case.slip_tags)
        rep = solve(problem)
        space = rep.velocity.space
        eu = velocity_error_h1(space, rep.velocity.values, case.grad_u)
        ep = pressure_error_l2(mesh, rep.pressure.values, case.p)
        rows.append(ConvergenceRow(level=level, h=mesh.h, err_u_h1=eu, err_p_l2=ep))
        if level < refinements:
            mesh = refine(mesh)

    hs = np.array([r.h for r in rows])
    eus = np.array([max(r.err_u_h1, 1e-300) for r in rows])
    eps_ = np.array([max(r.err_p_l2, 1e-300) for r in rows])
    if eus.max() < 1e-12 and eps_.max() < 1e-12:
        rate_u = rate_p = float("nan")
    else:
        rate_u = float(np.polyfit(np.log(hs), np.log(eus), 1)[0])
        rate_p = float(np.polyfit(np.log(hs), np.log(eps_), 1)[0])
    return ConvergenceTable(case=case_id, rows=rows, rate_u=rate_u, rate_p=rate_p,
                            wall_time=time.perf_counter() - t0)
