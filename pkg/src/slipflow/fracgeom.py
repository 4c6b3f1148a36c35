"""Boundary graphs, their normalization, fractional seminorms and cutoffs.

A piece of boundary is described by a height function over a disc in the
interface hyperplane, normalized so its gradient vanishes at the center
(rotation) and its mean over the disc vanishes (vertical translation).
The fractional difference-quotient seminorm of such graphs, and of their
gradients, drives all the quantitative estimates downstream.

Only the planar case n = 2 is exercised: the disc is an interval and the
seminorm is a double integral over it.  Formulas keep the dimension n as a
parameter so the exponent bookkeeping stays readable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np


class SmoothnessError(Exception):
    """Raised when a function is too rough for the requested seminorm."""


class NormalizationError(Exception):
    """Raised when a graph cannot be normalized (bad samples, no root)."""


# ---------------------------------------------------------------------------
# boundary graphs


@dataclass(frozen=True)
class BoundaryGraph:
    """Local graph description of a boundary patch.

    ``eval``/``grad_eval`` act on arrays of shape (m, n-1) and return
    (m,) heights and (m, n-1) gradients.  ``center`` is the interface
    point the patch is anchored at and ``delta`` its radius.
    """

    center: np.ndarray      # (n-1,)
    delta: float
    eval: Callable[[np.ndarray], np.ndarray]
    grad_eval: Callable[[np.ndarray], np.ndarray]
    s: float
    normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if self.delta <= 0:
            raise ValueError("patch radius must be positive")
        n = self.dimension
        if self.s <= n:
            raise ValueError(f"regularity exponent s must exceed n = {n}, got {self.s}")

    @property
    def dimension(self) -> int:
        """Ambient dimension n (graph lives over R^{n-1})."""
        return self.center.size + 1

    def sample_line(self, m: int = 1024) -> np.ndarray:
        """Uniform sample of the patch (n = 2 only), shape (m, 1)."""
        if self.dimension != 2:
            raise NotImplementedError("line sampling is the n = 2 path")
        c, d = float(self.center[0]), self.delta
        return np.linspace(c - d, c + d, m).reshape(-1, 1)

    def check_normalized(self, grad_tol: float = 1e-12, mean_tol_rel: float = 1e-10):
        """Verify the two normalization identities by evaluation/quadrature."""
        g0 = np.linalg.norm(self.grad_eval(self.center.reshape(1, -1)).ravel())
        if g0 > grad_tol:
            raise NormalizationError(f"gradient at center is {g0:.3e} > {grad_tol:.0e}")
        mean = disc_mean(self.eval, self.center, self.delta)
        if abs(mean) > mean_tol_rel * self.delta:
            raise NormalizationError(f"mean over the patch is {mean:.3e}")
        return True


def graph_from_profile(f, fp, center: float, delta: float, s: float,
                       normalized: bool = False) -> BoundaryGraph:
    """Wrap scalar profile callables (n = 2) into a BoundaryGraph."""

    def ev(pts):
        return np.asarray(f(np.asarray(pts)[..., 0]), dtype=float)

    def gev(pts):
        return np.asarray(fp(np.asarray(pts)[..., 0]), dtype=float).reshape(-1, 1)

    return BoundaryGraph(center=np.array([center]), delta=delta,
                         eval=ev, grad_eval=gev, s=s, normalized=normalized)


def disc_mean(f, center: np.ndarray, delta: float, n_quad: int = 64) -> float:
    """Mean of f over the disc D(center, delta); Gauss-Legendre, n = 2 path."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if center.size != 1:
        raise NotImplementedError("disc quadrature implemented for n = 2")
    x, w = np.polynomial.legendre.leggauss(n_quad)
    pts = (center[0] + delta * x).reshape(-1, 1)
    vals = np.asarray(f(pts), dtype=float).ravel()
    if not np.isfinite(vals).all():
        raise NormalizationError("graph produced non-finite samples under quadrature")
    return float(np.sum(w * vals) / 2.0)


def normalize_graph(g: BoundaryGraph, newton_tol: float = 1e-14,
                    newton_max: int = 60) -> BoundaryGraph:
    """Rotate about the center point and translate vertically.

    After the rotation the new graph has zero slope at the center; after
    the translation its mean over the patch vanishes.  Already-normalized
    graphs pass through unchanged, so the operation is idempotent.

    The rotated curve is re-expressed as a graph by solving, per queried
    abscissa, the scalar equation picking the preimage parameter; this
    requires the rotated curve to stay a graph over the patch, true for
    slopes bounded on the patch (the only case exercised).
    """
    if g.dimension != 2:
        raise NotImplementedError("rotation implemented for n = 2")
    c = float(g.center[0])
    d = g.delta
    h0 = float(g.eval(g.center.reshape(1, -1)).ravel()[0])
    slope = float(g.grad_eval(g.center.reshape(1, -1)).ravel()[0])

    if abs(slope) < 1e-14:
        # pure vertical translation
        mean = disc_mean(g.eval, g.center, d)
        if abs(mean) <= 1e-16 * max(1.0, d):
            return replace(g, normalized=True) if not g.normalized else g
        base_eval, base_grad = g.eval, g.grad_eval

        def ev(pts):
            return base_eval(pts) - mean

        return replace(g, eval=ev, normalized=True)

    cos_t = 1.0 / math.sqrt(1.0 + slope * slope)
    sin_t = slope * cos_t

    base_eval, base_grad = g.eval, g.grad_eval

    def solve_param(u):
        """Find t with cos*t + sin*(omega(c+t) - omega(c)) = u, per query."""
        u = np.asarray(u, dtype=float)
        t = u / cos_t  # first guess: ignore the height term
        for _ in range(newton_max):
            w = base_eval((c + t).reshape(-1, 1)).ravel() - h0
            F = cos_t * t + sin_t * w - u
            if np.max(np.abs(F)) < newton_tol * max(1.0, d):
                break
            wp = base_grad((c + t).reshape(-1, 1)).ravel()
            dF = cos_t + sin_t * wp
            if np.min(np.abs(dF)) < 1e-13:
                raise NormalizationError("rotated curve is not a graph over the patch")
            t = t - F / dF
        else:
            raise NormalizationError("parameter solve did not converge")
        return t

    def rotated_eval(pts):
        u = np.asarray(pts)[..., 0] - c
        t = solve_param(u)
        w = base_eval((c + t).reshape(-1, 1)).ravel() - h0
        return h0 - sin_t * t + cos_t * w

    def rotated_grad(pts):
        u = np.asarray(pts)[..., 0] - c
        t = solve_param(u)
        wp = base_grad((c + t).reshape(-1, 1)).ravel()
        return ((cos_t * wp - sin_t) / (cos_t + sin_t * wp)).reshape(-1, 1)

    mean = disc_mean(rotated_eval, g.center, d)

    def ev(pts):
        return rotated_eval(pts) - mean

    return BoundaryGraph(center=g.center.copy(), delta=d, eval=ev,
                         grad_eval=rotated_grad, s=g.s, normalized=True)


# ---------------------------------------------------------------------------
# fractional seminorm


def holder_probe(f, a: float, b: float, theta: float,
                 n_fine: int = 4096, n_fit: int = 4) -> float:
    """Estimated increment exponent of f on (a, b).

    Fits max_x |f(x + u) - f(x)| ~ u^beta over the smallest dyadic shifts
    of one fine grid (grid-aligned shifts never step over a feature, so
    jumps are always seen).  The double integral defining the order-theta
    seminorm diverges when beta <= theta, which the caller screens for.
    """
    xs = np.linspace(a, b, n_fine)
    vals = np.asarray(f(xs), dtype=float)
    if vals.ndim == 1:
        vals = vals.reshape(-1, 1)
    dx = xs[1] - xs[0]
    shifts = 2 ** np.arange(n_fit)
    us, sups = [], []
    for m in shifts:
        d = np.linalg.norm(vals[m:] - vals[:-m], axis=1).max()
        us.append(m * dx)
        sups.append(d)
    sups = np.array(sups)
    if sups.max() == 0.0:
        return np.inf
    if (sups <= 1e-300).any():
        return np.inf  # below the resolvable range: treat as smooth
    slope, _ = np.polyfit(np.log(us), np.log(sups), 1)
    return float(slope)


def gagliardo_seminorm(f, center, delta: float, theta: float, p: float,
                       n: int = 2, level: int = 3, screen: bool = True) -> float:
    """Order-theta, exponent-p difference-quotient seminorm on a disc.

    Returns ( iint |f(x)-f(y)|^p / |x-y|^{(n-1) + theta p} dx dy )^{1/p}
    over D(center, delta) x D(center, delta), for the interval case n = 2.

    The kernel singularity is removed exactly: with u = y - x and the
    difference quotient D = (f(x+u) - f(x))/u the integrand becomes
    |D|^p u^{p(1-theta)-1}, and the graded substitution u = L t^gamma with
    gamma p (1 - theta) >= 4 leaves a smooth integrand for tensor
    Gauss-Legendre.  Deterministic for a fixed level; the number of points
    per direction doubles with each level.

    ``f`` may be scalar- or vector-valued (Euclidean norm of increments).
    """
    if n != 2:
        raise NotImplementedError("seminorm quadrature implemented for n = 2")
    if not (0.0 < theta < 1.0):
        raise ValueError(f"fractional order must lie in (0,1), got {theta}")
    if p <= 1:
        raise ValueError(f"integrability exponent must exceed 1, got {p}")
    center = np.atleast_1d(np.asarray(center, dtype=float))
    a, b = float(center[0]) - delta, float(center[0]) + delta

    def values(x):
        out = np.asarray(f(np.asarray(x).reshape(-1, 1)), dtype=float)
        if out.ndim == 1:
            return out.reshape(-1, 1)
        return out

    if screen:
        scale = np.max(np.linalg.norm(values(np.linspace(a, b, 128)), axis=1))
        if scale > 0:
            beta = holder_probe(values, a, b, theta)
            if beta <= theta + 0.02 and not np.isinf(beta):
                raise SmoothnessError(
                    f"increment exponent ~{beta:.3f} <= theta = {theta:.3f}: "
                    "the seminorm integral is (numerically) divergent")

    alpha = p * (1.0 - theta) - 1.0  # power of u left after cancellation
    if alpha <= -1.0:
        raise SmoothnessError("non-integrable kernel: p(1-theta) <= 0")
    gamma = max(1, math.ceil((4.0 + 1.0) / (alpha + 1.0)))

    n_pts = 16 * max(1, level)
    xg, wg = np.polynomial.legendre.leggauss(n_pts)
    # outer variable x on (a, b)
    x = 0.5 * (b - a) * xg + 0.5 * (a + b)
    wx = 0.5 * (b - a) * wg
    # inner variable t on (0, 1), u = L(x) t^gamma
    t = 0.5 * (xg + 1.0)
    wt = 0.5 * wg

    total = 0.0
    for sign in (+1.0, -1.0):
        # u spans (0, b - x) for sign +1, (0, x - a) for sign -1
        L = (b - x) if sign > 0 else (x - a)
        U = L[:, None] * t[None, :] ** gamma            # (nx, nt)
        Xp = x[:, None] + sign * U
        fx = values(x)                                  # (nx, c)
        fxp = values(Xp.ravel()).reshape(n_pts, n_pts, -1)
        diff = np.linalg.norm(fxp - fx[:, None, :], axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            quot = np.where(U > 0, diff / np.where(U > 0, U, 1.0), 0.0)
        integrand = quot ** p * t[None, :] ** (gamma * (alpha + 1.0) - 1.0)
        inner = gamma * L ** (alpha + 1.0) * (integrand @ wt)
        total += float(np.sum(wx * inner))

    if not np.isfinite(total):
        raise SmoothnessError("seminorm quadrature produced non-finite values")
    return total ** (1.0 / p)


# ---------------------------------------------------------------------------
# graph estimate ratios


@dataclass(frozen=True)
class GraphEstimateReport:
    """Measured ratios behind the sup-norm/seminorm comparisons.

    ``None`` marks a ratio whose denominator vanishes (flat graph): the
    comparison is vacuous there, never a division by zero.
    """

    sup_height_ratio: float | None      # ||w||_inf / (delta^{2-n/s} |w|_{2-1/s,s})
    sup_gradient_ratio: float | None    # ||w'||_inf / (delta^{1-n/s} |w|_{2-1/s,s})
    low_seminorm_ratio: float | None    # |w|_{1-1/s,s} / (delta^{n/s} ||w'||_inf)
    seminorm_high: float                # |w|_{2-1/s,s} = |w'|_{1-1/s,s}
    seminorm_low: float                 # |w|_{1-1/s,s}
    sup_height: float
    sup_gradient: float


def verify_graph_estimates(g: BoundaryGraph, level: int = 3,
                           n_sup: int = 2049) -> GraphEstimateReport:
    """Measure the three scale-weighted ratios for a normalized graph."""
    g.check_normalized()
    n, s, d = g.dimension, g.s, g.delta
    theta = 1.0 - 1.0 / s

    line = g.sample_line(n_sup)
    sup_h = float(np.max(np.abs(g.eval(line))))
    sup_g = float(np.max(np.linalg.norm(g.grad_eval(line), axis=1)))

    sem_high = gagliardo_seminorm(g.grad_eval, g.center, d, theta, s, n=n, level=level)
    sem_low = gagliardo_seminorm(g.eval, g.center, d, theta, s, n=n, level=level)

    tiny = 1e-300

    def ratio(num, den):
        return None if den < tiny else num / den

    return GraphEstimateReport(
        sup_height_ratio=ratio(sup_h, d ** (2.0 - n / s) * sem_high),
        sup_gradient_ratio=ratio(sup_g, d ** (1.0 - n / s) * sem_high),
        low_seminorm_ratio=ratio(sem_low, d ** (n / s) * sup_g),
        seminorm_high=sem_high, seminorm_low=sem_low,
        sup_height=sup_h, sup_gradient=sup_g)


# ---------------------------------------------------------------------------
# cutoff functions


def _smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, e^{-1/t}-based between."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    out[t >= 1.0] = 1.0
    mid = (t > 0.0) & (t < 1.0)
    tm = t[mid]
    ea = np.exp(-1.0 / tm)
    eb = np.exp(-1.0 / (1.0 - tm))
    out[mid] = ea / (ea + eb)
    return out


def _smooth_step_deriv(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    mid = (t > 0.0) & (t < 1.0)
    tm = t[mid]
    ea = np.exp(-1.0 / tm)
    eb = np.exp(-1.0 / (1.0 - tm))
    out[mid] = ea * eb * (1.0 / tm ** 2 + 1.0 / (1.0 - tm) ** 2) / (ea + eb) ** 2
    return out


@dataclass(frozen=True)
class CutoffFunction:
    """Radial plateau bump: 1 on the inner ball, 0 outside the outer ball.

    The transition profile on the annulus is the classical smooth step
    sigma(t) = e^{-1/t} / (e^{-1/t} + e^{-1/(1-t)}) in the normalized
    radial coordinate t = (rho - delta/2)/(delta/2); the value is
    1 - sigma(t).
    """

    center: np.ndarray
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.delta <= 0:
            raise ValueError("cutoff radius must be positive")

    @property
    def inner_radius(self) -> float:
        return 0.5 * self.delta

    @property
    def outer_radius(self) -> float:
        return self.delta

    def _radial(self, points: np.ndarray):
        p = np.atleast_2d(np.asarray(points, dtype=float)) - self.center
        rho = np.linalg.norm(p, axis=1)
        t = (rho - self.inner_radius) / self.inner_radius
        return p, rho, t

    def eval(self, points: np.ndarray) -> np.ndarray:
        _, _, t = self._radial(points)
        return 1.0 - _smooth_step(t)

    def grad_eval(self, points: np.ndarray) -> np.ndarray:
        p, rho, t = self._radial(points)
        dval = -_smooth_step_deriv(t) / self.inner_radius
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(rho[:, None] > 0, p / np.where(rho[:, None] > 0, rho[:, None], 1.0), 0.0)
        return dval[:, None] * unit

    def profile(self, t):
        """The documented closed-form transition value at radial coordinate t."""
        return 1.0 - _smooth_step(np.asarray(t, dtype=float))


def make_cutoff(center, delta: float) -> CutoffFunction:
    """Cutoff with plateau B(center, delta/2) and support B(center, delta)."""
    return CutoffFunction(center=np.asarray(center, dtype=float), delta=float(delta))
