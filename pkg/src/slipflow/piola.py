"""Divergence-preserving transport of velocity/pressure fields by a map.

For a map Psi with gradient G and determinant J, reference and physical
velocity fields correspond through multiplication by P = J^{-1} G (and its
inverse transported matrix J G^{-1}).  This transport preserves the
divergence pairing, the normal flux, and tangency to the boundary, which
is why it carries slip boundary conditions across the flattening map.

The module provides the transport itself, integral/pointwise verification
of its conservation identities, the gradient and symmetric-gradient
decompositions into a conjugated part plus a compactly supported
remainder, and cutoff-localization operators built on top of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .fracgeom import CutoffFunction, make_cutoff
from .mesh import TriMesh, gauss_interval, triangle_rule


class TransportError(Exception):
    """Raised for incompatible meshes or out-of-domain evaluations."""


# ---------------------------------------------------------------------------
# analytic fields (closures plus their gradients)


@dataclass(frozen=True)
class AnalyticScalar:
    eval: Callable[[np.ndarray], np.ndarray]          # (m,2) -> (m,)
    grad: Callable[[np.ndarray], np.ndarray]          # (m,2) -> (m,2)


@dataclass(frozen=True)
class AnalyticVector:
    eval: Callable[[np.ndarray], np.ndarray]          # (m,2) -> (m,2)
    grad: Callable[[np.ndarray], np.ndarray]          # (m,2) -> (m,2,2), [i,j]=d_j v_i


def random_smooth_pair(rng: np.random.Generator, freq_cap: float = 3.0):
    """Random trigonometric velocity/pressure pair with exact gradients."""
    a = rng.uniform(-1.0, 1.0, size=4)
    k = rng.uniform(0.5, freq_cap, size=4)
    ph = rng.uniform(0.0, 2.0 * math.pi, size=4)

    def v_eval(p):
        p = np.atleast_2d(p)
        x, y = p[:, 0], p[:, 1]
        return np.stack([
            a[0] * np.sin(k[0] * x + ph[0]) * np.cos(k[1] * y + ph[1]),
            a[1] * np.cos(k[2] * x + ph[2]) * np.sin(k[3] * y + ph[3]),
        ], axis=1)

    def v_grad(p):
        p = np.atleast_2d(p)
        x, y = p[:, 0], p[:, 1]
        out = np.empty((p.shape[0], 2, 2))
        out[:, 0, 0] = a[0] * k[0] * np.cos(k[0] * x + ph[0]) * np.cos(k[1] * y + ph[1])
        out[:, 0, 1] = -a[0] * k[1] * np.sin(k[0] * x + ph[0]) * np.sin(k[1] * y + ph[1])
        out[:, 1, 0] = -a[1] * k[2] * np.sin(k[2] * x + ph[2]) * np.sin(k[3] * y + ph[3])
        out[:, 1, 1] = a[1] * k[3] * np.cos(k[2] * x + ph[2]) * np.cos(k[3] * y + ph[3])
        return out

    def q_eval(p):
        p = np.atleast_2d(p)
        x, y = p[:, 0], p[:, 1]
        return a[2] * np.sin(k[0] * x + ph[2]) * np.sin(k[1] * y + ph[3]) + a[3] * x * y

    def q_grad(p):
        p = np.atleast_2d(p)
        x, y = p[:, 0], p[:, 1]
        return np.stack([
            a[2] * k[0] * np.cos(k[0] * x + ph[2]) * np.sin(k[1] * y + ph[3]) + a[3] * y,
            a[2] * k[1] * np.sin(k[0] * x + ph[2]) * np.cos(k[1] * y + ph[3]) + a[3] * x,
        ], axis=1)

    return AnalyticVector(v_eval, v_grad), AnalyticScalar(q_eval, q_grad)


# ---------------------------------------------------------------------------
# matrix helpers


def _inv2(M: np.ndarray) -> np.ndarray:
    det = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
    out = np.empty_like(M)
    out[:, 0, 0] = M[:, 1, 1]
    out[:, 1, 1] = M[:, 0, 0]
    out[:, 0, 1] = -M[:, 0, 1]
    out[:, 1, 0] = -M[:, 1, 0]
    return out / det[:, None, None]


def conjugate_by(P: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Similarity transform P M P^{-1}, batched over points."""
    return np.einsum("mij,mjk,mkl->mil", P, M, _inv2(P))


def gradmat_dot(G: np.ndarray, w: np.ndarray) -> np.ndarray:
    """(grad M applied to w): out_{ij} = sum_k (d_j M_{ik}) w_k.

    ``G`` is indexed [point, i, k, j] and holds d_j M_{ik}.
    """
    return np.einsum("mikj,mk->mij", G, w)


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


# ---------------------------------------------------------------------------
# the transport map


class PiolaMap:
    """Field transport attached to a diffeomorphism-like map.

    The map must provide ``eval``, ``grad``, ``jacobian``, ``inverse``,
    ``pinv_ref`` (the inverse transport matrix in reference coordinates)
    and ``grad_pinv_ref``; the shear and affine maps in :mod:`.flatten`
    all do.
    """

    def __init__(self, mapping):
        self.map = mapping

    # matrices -------------------------------------------------------------

    def P(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return self.map.grad(X) / self.map.jacobian(X)[:, None, None]

    def P_inv_ref(self, X) -> np.ndarray:
        return self.map.pinv_ref(np.atleast_2d(X))

    # field transport --------------------------------------------------------

    def push_forward(self, vref) -> AnalyticVector:
        """Physical field v with v(Psi(X)) = P(X) vref(X)."""
        mp = self.map

        def ev(x):
            X = mp.inverse(np.atleast_2d(x))
            return np.einsum("mij,mj->mi", self.P(X), vref.eval(X))

        return AnalyticVector(eval=ev, grad=_fd_grad_vector(ev))

    def pull_back(self, vphys) -> AnalyticVector:
        """Reference field with vref(X) = [J G^{-1} v](Psi(X))."""
        mp = self.map

        def ev(X):
            X = np.atleast_2d(X)
            return np.einsum("mij,mj->mi", self.P_inv_ref(X), vphys.eval(mp.eval(X)))

        return AnalyticVector(eval=ev, grad=_fd_grad_vector(ev))

    def transfer_pair(self, pair: "FieldPair") -> "FieldPair":
        """Velocity transported, pressure composed; frame tag flips."""
        mp = self.map
        if pair.frame == "reference":
            vel = self.push_forward(pair.velocity)

            def pr(x):
                return pair.pressure.eval(mp.inverse(np.atleast_2d(x)))

            return FieldPair(velocity=vel,
                             pressure=AnalyticScalar(pr, _fd_grad_scalar(pr)),
                             frame="physical")
        vel = self.pull_back(pair.velocity)

        def pr(X):
            return pair.pressure.eval(mp.eval(np.atleast_2d(X)))

        return FieldPair(velocity=vel,
                         pressure=AnalyticScalar(pr, _fd_grad_scalar(pr)),
                         frame="reference")


def _fd_grad_vector(ev, step: float = 1e-6):
    def grad(p):
        p = np.atleast_2d(p)
        out = np.empty((p.shape[0], 2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = step
            out[:, :, j] = (ev(p + e) - ev(p - e)) / (2 * step)
        return out
    return grad


def _fd_grad_scalar(ev, step: float = 1e-6):
    def grad(p):
        p = np.atleast_2d(p)
        out = np.empty((p.shape[0], 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = step
            out[:, j] = (ev(p + e) - ev(p - e)) / (2 * step)
        return out
    return grad


# ---------------------------------------------------------------------------
# integral identities


@dataclass(frozen=True)
class IdentityResiduals:
    """Normalized mismatches of the three conservation identities."""

    gradient_pairing: float   # integral of grad q . v
    divergence_pairing: float  # integral of q div v
    boundary_flux: float       # boundary integral of q v . n
    scale: float               # normalizing magnitude (first pairing)
    edge_flux_max: float       # worst single-edge flux mismatch

    def as_rows(self, tol: float):
        for name in ("gradient_pairing", "divergence_pairing", "boundary_flux"):
            r = getattr(self, name)
            yield name, r, tol, r <= tol

    def max(self) -> float:
        return max(self.gradient_pairing, self.divergence_pairing, self.boundary_flux)


def _reference_quantities(pm: PiolaMap, v: AnalyticVector, q: AnalyticScalar, X):
    """Transported integrand values at reference points X."""
    mp = pm.map
    x = mp.eval(X)
    G = mp.grad(X)
    J = mp.jacobian(X)
    Pinv = pm.P_inv_ref(X)
    vref = np.einsum("mij,mj->mi", Pinv, v.eval(x))
    qref = q.eval(x)
    gq = np.einsum("mji,mj->mi", G, q.grad(x))  # G^T grad q
    grad_vref = (np.einsum("mij,mjk,mkl->mil", Pinv, v.grad(x), G)
                 + gradmat_dot(mp.grad_pinv_ref(X), v.eval(x)))
    div_vref = np.trace(grad_vref, axis1=1, axis2=2)
    return vref, qref, gq, div_vref, J


def verify_piola_identities(pm: PiolaMap, v: AnalyticVector, q: AnalyticScalar,
                            quad_level: int = 4,
                            ref_mesh: Optional[TriMesh] = None) -> IdentityResiduals:
    """Compare physical and reference integrals of the conservation pairings.

    The reference mesh must resolve the map exactly (for a shear map built
    on a nodal extension this is the extension's own carrier, the default),
    so that every element maps affinely and the two sides differ only by
    quadrature of smooth integrands.
    """
    mp = pm.map
    if ref_mesh is None:
        ext = getattr(mp, "ext", None)
        if ext is None or not hasattr(ext, "mesh"):
            raise TransportError("no reference mesh available; pass ref_mesh")
        ref_mesh = ext.mesh

    rule = triangle_rule(2 * quad_level)
    verts_ref = ref_mesh.triangle_coords()                       # (nt,3,2)
    verts_phys = mp.eval(ref_mesh.vertices)[ref_mesh.triangles]  # (nt,3,2)
    if not np.isfinite(verts_phys).all():
        raise TransportError("map produced non-finite vertices")

    def tri_areas(verts):
        d1 = verts[:, 1] - verts[:, 0]
        d2 = verts[:, 2] - verts[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    area_ref = tri_areas(verts_ref)
    area_phys = tri_areas(verts_phys)
    if (area_phys <= 0).any():
        raise TransportError("mapped mesh is tangled (non-positive areas)")

    pts_ref = rule.physical_points(verts_ref).reshape(-1, 2)
    pts_phys = rule.physical_points(verts_phys).reshape(-1, 2)
    nq = rule.weights.size

    # physical side: plain quadrature of the analytic fields
    gq_v_phys = np.einsum("mi,mi->m", q.grad(pts_phys), v.eval(pts_phys))
    qdiv_phys = q.eval(pts_phys) * np.trace(v.grad(pts_phys), axis1=1, axis2=2)

    def integrate(vals, areas):
        return float(np.einsum("tq,q,t->", vals.reshape(-1, nq), rule.weights, areas))

    I_grad_phys = integrate(gq_v_phys, area_phys)
    I_div_phys = integrate(qdiv_phys, area_phys)

    # reference side: transported integrands
    vref, qref, gq, div_vref, _ = _reference_quantities(pm, v, q, pts_ref)
    I_grad_ref = integrate(np.einsum("mi,mi->m", gq, vref), area_ref)
    I_div_ref = integrate(qref * div_vref, area_ref)

    # boundary flux, edge by edge
    npts_e = 2 * quad_level
    gx, gw = gauss_interval(npts_e)  # on (0,1)
    edge_flux_mismatch = 0.0
    F_phys_total = 0.0
    F_ref_total = 0.0
    for (a, b) in ref_mesh.boundary_edges:
        A, B = ref_mesh.vertices[int(a)], ref_mesh.vertices[int(b)]
        Xe = A[None, :] + gx[:, None] * (B - A)[None, :]
        te = B - A
        ne = np.array([te[1], -te[0]])  # outward (CCW orientation), length = |edge|
        vref_e, qref_e, _, _, _ = _reference_quantities(pm, v, q, Xe)
        F_ref = float(np.sum(gw * qref_e * (vref_e @ ne)))

        Ap, Bp = mp.eval(A.reshape(1, 2))[0], mp.eval(B.reshape(1, 2))[0]
        xe = Ap[None, :] + gx[:, None] * (Bp - Ap)[None, :]
        tep = Bp - Ap
        nep = np.array([tep[1], -tep[0]])
        F_phys = float(np.sum(gw * q.eval(xe) * (v.eval(xe) @ nep)))

        F_ref_total += F_ref
        F_phys_total += F_phys
        edge_flux_mismatch = max(edge_flux_mismatch, abs(F_ref - F_phys))

    scale = max(abs(I_grad_phys), 1e-12)
    return IdentityResiduals(
        gradient_pairing=abs(I_grad_phys - I_grad_ref) / scale,
        divergence_pairing=abs(I_div_phys - I_div_ref) / scale,
        boundary_flux=abs(F_phys_total - F_ref_total) / scale,
        scale=scale,
        edge_flux_max=edge_flux_mismatch / scale)


# ---------------------------------------------------------------------------
# gradient decompositions


@dataclass(frozen=True)
class DecompositionReport:
    max_discrepancy: float
    step: float
    points: np.ndarray


def interior_sample_points(mapping, n: int, rng: np.random.Generator,
                           margin: float = 0.05) -> np.ndarray:
    """Sample points inside the support half-ball, away from carrier edges.

    For maps built on a nodal extension the points are drawn in element
    interiors with a barycentric margin (the transport matrices jump across
    element edges, so finite-difference stencils must not straddle them).
    """
    ext = getattr(mapping, "ext", None)
    mesh = getattr(ext, "mesh", None) if ext is not None else None
    c, d = mapping.support_center, mapping.support_radius
    if mesh is None:
        ang = rng.uniform(-math.pi, 0.0, n)
        rad = d * np.sqrt(rng.uniform(0.0, 1.0, n)) * (1.0 - margin)
        pts = c + np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
        pts[:, 1] = np.minimum(pts[:, 1], -1e-6 * d)
        return pts
    inside = np.linalg.norm(mesh.triangle_coords().mean(axis=1) - c, axis=1) < 0.9 * d
    cand = np.nonzero(inside)[0]
    tris = rng.choice(cand, size=n)
    lam = rng.dirichlet(np.ones(3) * 4.0, size=n)
    lam = margin + (1.0 - 3.0 * margin) * lam
    pts = np.einsum("mk,mkd->md", lam, mesh.vertices[mesh.triangles[tris]])
    return pts


def gradient_decomposition(pm: PiolaMap, vref: AnalyticVector, points,
                           steps: Sequence[float] = (1e-5, 3e-5)) -> DecompositionReport:
    """Check grad vref = J . conj(grad v o Psi) + (grad Pinv) . (v o Psi).

    Both ingredients come from evaluations of the pushed-forward field
    only: its gradient is formed by central differences at the mapped
    points, and the result is compared against central differences of the
    reference field.  The best (smallest) discrepancy over the candidate
    steps is reported along with the step that achieved it.
    """
    mp = pm.map
    X = np.atleast_2d(points)
    x = mp.eval(X)
    J = mp.jacobian(X)
    Pinv = pm.P_inv_ref(X)
    Gpinv = mp.grad_pinv_ref(X)
    v = pm.push_forward(vref)
    v_at_x = v.eval(x)

    best = (np.inf, steps[0])
    for step in steps:
        grad_v = _fd_grad_vector(v.eval, step)(x)
        lhs = (J[:, None, None] * conjugate_by(Pinv, grad_v)
               + gradmat_dot(Gpinv, v_at_x))
        oracle = _fd_grad_vector(vref.eval, step)(X)
        disc = float(np.max(np.abs(lhs - oracle)))
        if disc < best[0]:
            best = (disc, step)
    return DecompositionReport(max_discrepancy=best[0], step=best[1], points=X)


@dataclass(frozen=True)
class SymmetricParts:
    eps_values: np.ndarray       # conjugated symmetric gradient, (m,2,2)
    theta_values: np.ndarray     # compactly supported remainder, (m,2,2)
    reconstruction_error: float  # vs finite differences of the pushed field
    step: float


def symmetric_parts(pm: PiolaMap, vref: AnalyticVector, points,
                    steps: Sequence[float] = (1e-5, 3e-5)) -> SymmetricParts:
    """Split the physical strain into conjugated strain minus remainder.

    eps_part = sym(P grad(vref) P^{-1}) and
    theta_part = sym(P [grad Pinv . (P vref)] P^{-1}) satisfy

        strain(v) o Psi = J^{-1} (eps_part - theta_part),

    verified here against central finite differences of the pushed field.
    The remainder inherits the support of grad Pinv, hence of (I - Psi).
    """
    mp = pm.map
    X = np.atleast_2d(points)
    P = pm.P(X)
    J = mp.jacobian(X)
    Gpinv = mp.grad_pinv_ref(X)
    Pv = np.einsum("mij,mj->mi", P, vref.eval(X))

    eps_vals = _sym(conjugate_by(P, vref.grad(X)))
    theta_vals = _sym(conjugate_by(P, gradmat_dot(Gpinv, Pv)))

    v = pm.push_forward(vref)
    x = mp.eval(X)
    best = (np.inf, steps[0])
    for step in steps:
        strain_fd = _sym(_fd_grad_vector(v.eval, step)(x))
        recon = (eps_vals - theta_vals) / J[:, None, None]
        disc = float(np.max(np.abs(recon - strain_fd)))
        if disc < best[0]:
            best = (disc, step)
    return SymmetricParts(eps_values=eps_vals, theta_values=theta_vals,
                          reconstruction_error=best[0], step=best[1])


# ---------------------------------------------------------------------------
# localization


@dataclass(frozen=True)
class FieldPair:
    """Velocity/pressure pair tagged with the frame it lives in."""

    velocity: AnalyticVector
    pressure: AnalyticScalar
    frame: str  # "reference" | "physical"

    def __post_init__(self):
        if self.frame not in ("reference", "physical"):
            raise ValueError(f"unknown frame {self.frame!r}")

    def eval(self, pts):
        return self.velocity.eval(pts), self.pressure.eval(pts)


def _scale_pair(pair: FieldPair, weight: Callable[[np.ndarray], np.ndarray]) -> FieldPair:
    v, q = pair.velocity, pair.pressure

    def ve(p):
        return weight(p)[:, None] * v.eval(p)

    def qe(p):
        return weight(p) * q.eval(p)

    return FieldPair(velocity=AnalyticVector(ve, _fd_grad_vector(ve)),
                     pressure=AnalyticScalar(qe, _fd_grad_scalar(qe)),
                     frame=pair.frame)


def localize(pair: FieldPair, zeta: CutoffFunction, pm: PiolaMap,
             direction: str) -> FieldPair:
    """Cutoff-weighted transport between reference and physical frames.

    ``restrict`` takes a reference pair to a physical one (transport, then
    multiply by the cutoff); ``extend`` takes a physical pair to a
    reference one (multiply first, then transport back).  Outputs are
    supported inside the cutoff ball.
    """
    if direction == "restrict":
        if pair.frame != "reference":
            raise TransportError("restrict expects a reference pair")
        moved = pm.transfer_pair(pair)
        return _scale_pair(moved, zeta.eval)
    if direction == "extend":
        if pair.frame != "physical":
            raise TransportError("extend expects a physical pair")
        weighted = _scale_pair(pair, zeta.eval)
        return pm.transfer_pair(weighted)
    raise ValueError(f"unknown direction {direction!r}")


@dataclass(frozen=True)
class LocalizationPatch:
    """One cover element: ball, transport map, and its two cutoffs."""

    center: np.ndarray
    delta: float
    pm: PiolaMap

    @property
    def weight(self) -> CutoffFunction:
        # support inside the plateau of the wide cutoff, so weight * rho = weight
        return make_cutoff(self.center, 0.5 * self.delta)

    @property
    def rho(self) -> CutoffFunction:
        return make_cutoff(self.center, self.delta)


def partition_reconstruction(pair: FieldPair, patches: Sequence[LocalizationPatch],
                             points) -> tuple:
    """Evaluate sum_i restrict_{phi_i}(extend_{rho_i}(pair)) at points.

    The weights phi_i are the normalized patch bumps, a smooth partition
    of unity wherever the bumps cover; with phi_i rho_i = phi_i this sum
    reproduces the input pair identically.
    """
    pts = np.atleast_2d(points)
    wsum = np.zeros(pts.shape[0])
    for patch in patches:
        wsum += patch.weight.eval(pts)
    if (wsum <= 1e-12).any():
        raise TransportError("sample points not covered by the patch bumps")

    v_tot = np.zeros((pts.shape[0], 2))
    q_tot = np.zeros(pts.shape[0])
    for patch in patches:
        moved = localize(pair, patch.rho, patch.pm, "extend")
        back = patch.pm.transfer_pair(moved)
        w = patch.weight.eval(pts) / wsum
        v_tot += w[:, None] * back.velocity.eval(pts)
        q_tot += w * back.pressure.eval(pts)
    return v_tot, q_tot
