"""Optimal stems of fixed length and constant leaf density.

The control is the tangent angle.  Necessary conditions reduce the problem to
an algebraic feedback: the angle at height y solves F(theta) = z with
z = (e^-kappa - 1) I(h) / I(y), where F is strictly decreasing on
[theta0, pi/2[.  The height h is then pinned by the arc-length constraint,
which may have several roots when the light profile rises steeply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceededError, DomainError, NoCandidateError, NoCrossingError
from .lightfield import LightProfile
from .numerics import Bracket, find_root, trapezoid_cumulative
from .params import ModelParams

_THETA_CAP = 1e-9  # feedback angle never reaches pi/2; cap the search there


# ---------------------------------------------------------------------------
# Capture kernel and its angle feedback
# ---------------------------------------------------------------------------

def capture_transverse(theta, params: ModelParams):
    """Saturated capture per unit transverse width, G(theta).

    Equals (1 - exp(-kappa/cos(theta-theta0))) * cos(theta-theta0); the
    absolute value of the cosine is used so the expression stays physical
    (bounded by the projection width) for angles outside the reduced range.
    """
    th = np.asarray(theta, dtype=float)
    c = np.abs(np.cos(th - params.theta0))
    with np.errstate(divide="ignore", over="ignore"):
        val = np.where(c > 0.0, -np.expm1(-params.kappa / np.maximum(c, 1e-300)) * c, 0.0)
    return float(val) if np.isscalar(theta) or val.ndim == 0 else val


def g_profile(theta, params: ModelParams):
    """Capture per unit height, g(theta) = G(theta) / sin(theta)."""
    th = np.asarray(theta, dtype=float)
    val = capture_transverse(th, params) / np.sin(th)
    return float(val) if np.isscalar(theta) or val.ndim == 0 else val


def _G_parts(th, t0, k):
    c = np.cos(th - t0)
    s = np.sin(th - t0)
    e = np.exp(-k / c)
    G = -np.expm1(-k / c) * c
    Gp = s * (k * e / c - (1.0 - e))
    W = k * e / c - 1.0 + e
    Gpp = c * W - k * k * s * s * e / c ** 3
    return G, Gp, Gpp


def F_of(theta, params: ModelParams):
    """Feedback function F(theta) = G'(theta) tan(theta) - G(theta).

    Strictly decreasing from e^-kappa - 1 at theta0 to -infinity at pi/2.
    """
    th = np.asarray(theta, dtype=float)
    G, Gp, _ = _G_parts(th, params.theta0, params.kappa)
    val = Gp * np.tan(th) - G
    return float(val) if np.isscalar(theta) or val.ndim == 0 else val


def _F_and_deriv(th, t0, k):
    G, Gp, Gpp = _G_parts(th, t0, k)
    t = np.tan(th)
    return Gp * t - G, Gpp * t + Gp * t * t


def phi_inverse(z, params: ModelParams):
    """Invert the feedback: the unique theta in [theta0, pi/2[ with F(theta)=z.

    Vectorized safeguarded Newton on a shrinking bracket; exact at the
    endpoint z = e^-kappa - 1 (returns theta0).  Raises DomainError for
    z above that endpoint.
    """
    t0, k = params.theta0, params.kappa
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    z_max = math.exp(-k) - 1.0
    if np.any(z_arr > z_max + 1e-12 * (1.0 + abs(z_max))):
        bad = float(z_arr[z_arr > z_max + 1e-12 * (1.0 + abs(z_max))][0])
        raise DomainError(f"feedback value {bad} exceeds upper limit {z_max}")

    hi_cap = math.pi / 2 - _THETA_CAP
    at_top = z_arr >= z_max
    lo = np.full_like(z_arr, t0)
    hi = np.full_like(z_arr, hi_cap)
    th = np.full_like(z_arr, 0.5 * (t0 + hi_cap))
    th[at_top] = t0
    active = ~at_top
    if np.any(active):
        # F(hi_cap) is astronomically negative; clamp z below it
        f_hi = _F_and_deriv(np.array([hi_cap]), t0, k)[0][0]
        z_eff = np.maximum(z_arr, f_hi)
        for _ in range(120):
            f, fp = _F_and_deriv(th[active], t0, k)
            r = f - z_eff[active]
            # F decreasing: positive residual means the root lies above
            la, ha = lo[active], hi[active]
            la = np.where(r > 0, th[active], la)
            ha = np.where(r < 0, th[active], ha)
            lo[active], hi[active] = la, ha
            step = np.where(fp != 0.0, r / fp, 0.0)
            cand = th[active] - step
            bad = (cand <= la) | (cand >= ha) | ~np.isfinite(cand)
            cand = np.where(bad, 0.5 * (la + ha), cand)
            th[active] = cand
            done = (np.abs(r) <= 1e-13 * (1.0 + np.abs(z_eff[active]))) | \
                   ((ha - la) <= 1e-15)
            if np.all(done):
                break
        th = np.clip(th, t0, hi_cap)
    return float(th[0]) if np.isscalar(z) or np.asarray(z).ndim == 0 else th


# ---------------------------------------------------------------------------
# Payoff functionals
# ---------------------------------------------------------------------------

def payoff_op1(theta_s, profile: LightProfile, params: ModelParams,
               refine: int = 8192):
    """Sunlight captured by an arc-length parameterized control on [0, ell].

    `theta_s` holds node values on a uniform s-grid, interpreted as a
    piecewise-linear control with angles in ]0, pi].  Heights below ground
    (impossible here since sin(theta) >= 0) would clamp to the ground value.
    """
    vals = np.asarray(theta_s, dtype=float)
    n = max(refine, 4 * (len(vals) - 1))
    s = np.linspace(0.0, params.ell, n + 1)
    s_nodes = np.linspace(0.0, params.ell, len(vals))
    th = np.interp(s, s_nodes, vals)
    y = trapezoid_cumulative(s, np.sin(th))
    integrand = profile.eval(np.maximum(y, 0.0)) * capture_transverse(th, params)
    return float(np.trapezoid(integrand, s))


def payoff_piecewise_constant(theta_segments, profile: LightProfile,
                              params: ModelParams, j_grid=None):
    """Exact payoff of piecewise-constant controls on equal s-segments.

    Vectorized over a (n_combos, n_segments) matrix of angle values; each
    segment contributes G(theta)/sin(theta) * (J(y1) - J(y0)) with J the
    antiderivative of the light profile.
    """
    V = np.atleast_2d(np.asarray(theta_segments, dtype=float))
    n_seg = V.shape[1]
    ds = params.ell / n_seg
    if j_grid is None:
        j_grid = profile_antiderivative(profile, params.ell)
    yg, Jg = j_grid
    dy = np.sin(V) * ds
    y_hi = np.cumsum(dy, axis=1)
    y_lo = y_hi - dy
    J_hi = np.interp(y_hi, yg, Jg)
    J_lo = np.interp(y_lo, yg, Jg)
    seg = capture_transverse(V, params) / np.sin(V) * (J_hi - J_lo)
    out = seg.sum(axis=1)
    return float(out[0]) if np.asarray(theta_segments).ndim == 1 else out


def profile_antiderivative(profile: LightProfile, y_max: float, n: int = 1 << 17):
    """Dense cumulative integral of the profile, for segment-exact payoffs."""
    yg = np.linspace(0.0, y_max, n + 1)
    return yg, trapezoid_cumulative(yg, profile.eval(yg))


def payoff_heights(theta_y, h: float, profile: LightProfile, params: ModelParams):
    """Height-parameterized payoff: integral of I(y) g(theta(y)) over [0, h].

    `theta_y` holds values at uniform y-nodes; midpoint rule per cell, which
    makes the discrete rearrangement inequality exact.
    """
    vals = np.asarray(theta_y, dtype=float)
    n = len(vals) - 1
    y_mid = (np.arange(n) + 0.5) * h / n
    th_mid = 0.5 * (vals[:-1] + vals[1:])
    return float(np.sum(profile.eval(y_mid) * g_profile(th_mid, params)) * h / n)


# ---------------------------------------------------------------------------
# Range reduction and rearrangement
# ---------------------------------------------------------------------------

def fold_angles(theta_s, params: ModelParams, max_sweeps: int = 64):
    """Fold a control with values in ]-pi, pi] into [theta0, pi/2].

    One pass of the sign reflection, then the piecewise-affine fold iterated
    until the range settles.  Each elementary move never lowers the captured
    sunlight when the light profile is non-decreasing.
    """
    t0 = params.theta0
    th = np.asarray(theta_s, dtype=float).copy()
    if np.any(th <= -math.pi) or np.any(th > math.pi):
        raise ValueError("angles must lie in ]-pi, pi]")

    for _ in range(max_sweeps):
        neg = th <= t0 - math.pi / 2
        th[neg] = -th[neg]
        high = th > t0 + math.pi / 2
        th[high] = 2.0 * t0 + math.pi - th[high]
        low = (th > t0 - math.pi / 2) & (th <= 0.0)
        th[low] = 2.0 * t0 - th[low]
        if np.all((th > 0.0) & (th <= t0 + math.pi / 2)):
            break

    for _ in range(max_sweeps):
        if np.all((th >= t0) & (th <= math.pi / 2)):
            return th
        mid = (th > math.pi / 2) & (th <= t0 + math.pi / 2)
        th[mid] = math.pi - th[mid]
        low = (th >= 0.0) & (th < t0)
        th[low] = 2.0 * t0 - th[low]
    return np.clip(th, t0, math.pi / 2)


def rearrange_nonincreasing(theta_y):
    """Non-increasing rearrangement of a sampled height profile.

    Equimeasurable with the input on a uniform grid: simply the values sorted
    in descending order.  Preserves the stem length and never lowers the
    payoff under non-decreasing light.
    """
    vals = np.asarray(theta_y, dtype=float)
    return np.sort(vals)[::-1].copy()


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

@dataclass
class StemShape1:
    """A solution candidate: height, angle profile, planar curve, payoff."""

    h: float
    y: np.ndarray
    theta: np.ndarray
    x: np.ndarray
    payoff: float
    lam: float
    length_error: float

    def theta_at(self, yq):
        return np.interp(np.asarray(yq, dtype=float), self.y, self.theta)


def _pieces(profile: LightProfile, h: float):
    cuts = [d for d in profile.discontinuities() if 0.0 < d < h]
    bounds = [0.0] + sorted(cuts) + [h]
    return list(zip(bounds[:-1], bounds[1:]))


def _theta_star(y, h: float, profile: LightProfile, params: ModelParams):
    z = (math.exp(-params.kappa) - 1.0) * profile.eval(h) / profile.eval(y)
    return phi_inverse(z, params)


def _simpson_piece(a: float, b: float, n_min: int, density: float):
    n = max(n_min, int(math.ceil((b - a) * density)))
    n += n % 2
    ys = np.linspace(a, b, n + 1)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return ys, w * (b - a) / (3.0 * n)


def _length_and_payoff(h: float, profile: LightProfile, params: ModelParams,
                       density: float):
    """Arc length and payoff of the feedback shape stopping at height h."""
    L = 0.0
    P = 0.0
    eps_edge = 1e-13 * max(1.0, h)
    for (a, b) in _pieces(profile, h):
        ys, wts = _simpson_piece(a + eps_edge, b - eps_edge, 32, density)
        th = _theta_star(ys, h, profile, params)
        L += float(np.sum(wts / np.sin(th)))
        P += float(np.sum(wts * profile.eval(ys) * g_profile(th, params)))
    return L, P


def solve_op1(profile: LightProfile, params: ModelParams,
              n_grid: int = 2048, scan_samples: int = 1000,
              tol: float = 1e-13) -> list[StemShape1]:
    """All stationary shapes of the fixed-length problem, best payoff first.

    Scans the height equation L(h) = ell for sign changes on each continuity
    piece of the profile (steep or discontinuous profiles admit several
    roots), refines each by Brent, and evaluates payoffs to order the
    candidates.  Ties are returned in ascending height order for the caller
    to break.
    """
    ell = params.ell
    scan_density = max(256.0 / ell, scan_samples / ell * 0.25)
    fine_density = max(float(n_grid) / ell, scan_density)

    def resid(h, density=scan_density):
        return _length_and_payoff(h, profile, params, density)[0] - ell

    roots: list[float] = []
    lo_all = 1e-9 * ell
    cuts = [d for d in profile.discontinuities() if lo_all < d < ell]
    bounds = [lo_all] + sorted(cuts) + [ell]
    for (a, b) in zip(bounds[:-1], bounds[1:]):
        a_in = a + 1e-9 * ell
        b_in = b - 1e-9 * ell if b < ell else b
        if b_in <= a_in:
            continue
        n_samp = max(64, int(scan_samples * (b_in - a_in) / ell))
        hs = np.linspace(a_in, b_in, n_samp)
        fs = np.array([resid(float(h)) for h in hs])
        for i in range(len(hs) - 1):
            if fs[i] == 0.0:
                roots.append(float(hs[i]))
            elif fs[i] * fs[i + 1] < 0.0:
                brk = Bracket(float(hs[i]), float(hs[i + 1]), float(fs[i]), float(fs[i + 1]))
                roots.append(find_root(lambda h: resid(h, fine_density), brk,
                                       tol=tol * max(1.0, ell)))
    if not roots:
        raise NoCandidateError("length equation has no root bracket on ]0, ell]")

    shapes: list[StemShape1] = []
    for h in roots:
        L, P = _length_and_payoff(h, profile, params, fine_density)
        y = np.linspace(0.0, h, n_grid + 1)
        th = _theta_star(y, h, profile, params)
        x = trapezoid_cumulative(y, np.cos(th) / np.sin(th))
        lam = (1.0 - math.exp(-params.kappa)) * profile.eval(h)
        shapes.append(StemShape1(h=float(h), y=y, theta=th, x=x,
                                 payoff=float(P), lam=float(lam),
                                 length_error=float(L - ell)))
    shapes.sort(key=lambda s: (-s.payoff, s.h))
    return shapes


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

@dataclass
class OracleResult:
    payoff: float
    theta: np.ndarray  # one angle per s-segment
    evaluations: int


def oracle_op1(profile: LightProfile, params: ModelParams,
               n_segments: int, n_angles: int,
               budget: int = 2_000_000, seed: int = 0,
               n_starts: int = 2, sweeps: int = 60) -> OracleResult:
    """Maximize the payoff over piecewise-constant angle controls.

    Exhaustive search over the full angle grid when the combination count
    fits the budget (small segment counts); otherwise multi-start coordinate
    descent with local grid refinement.
    """
    grid = np.linspace(params.theta0, math.pi / 2, n_angles)
    j_grid = profile_antiderivative(profile, params.ell)
    combos = n_angles ** n_segments

    if combos <= budget and n_segments <= 6:
        mesh = np.meshgrid(*([grid] * n_segments), indexing="ij")
        V = np.stack([m.ravel() for m in mesh], axis=1)
        pays = payoff_piecewise_constant(V, profile, params, j_grid)
        best = int(np.argmax(pays))
        return OracleResult(float(pays[best]), V[best].copy(), combos)

    if n_segments > 64:
        raise BudgetExceededError(f"{n_segments} segments exceed the oracle limit")

    rng = np.random.default_rng(seed)
    evals = 0
    best_pay = -math.inf
    best_v = None
    for start in range(n_starts):
        if start == 0:
            v = np.full(n_segments, params.theta0)
        elif start == 1:
            v = np.full(n_segments, 0.5 * (params.theta0 + math.pi / 2))
        else:
            v = rng.uniform(params.theta0, math.pi / 2, n_segments)
        local = grid.copy()
        span = (math.pi / 2 - params.theta0) / (n_angles - 1)
        for sweep in range(sweeps):
            improved = False
            for i in range(n_segments):
                trial = np.repeat(v[None, :], len(local), axis=0)
                trial[:, i] = local
                pays = payoff_piecewise_constant(trial, profile, params, j_grid)
                evals += len(local)
                j = int(np.argmax(pays))
                if pays[j] > payoff_piecewise_constant(v, profile, params, j_grid) + 1e-15:
                    v[i] = local[j]
                    improved = True
            if not improved:
                # refine the search grid around the current point
                span *= 0.35
                if span < 1e-7:
                    break
                local = np.clip(np.concatenate(
                    [v + d for d in np.linspace(-span, span, 9)]),
                    params.theta0, math.pi / 2)
                local = np.unique(local)
        pay = payoff_piecewise_constant(v, profile, params, j_grid)
        if pay > best_pay:
            best_pay, best_v = pay, v.copy()
    return OracleResult(float(best_pay), best_v, evals)


# ---------------------------------------------------------------------------
# Non-uniqueness reproduction
# ---------------------------------------------------------------------------

@dataclass
class NonUniqueness:
    eps_hat: float
    eps_one: float
    payoff_low: float       # short-stem branch at eps_hat
    payoff_high: float      # tall-stem branch at eps_hat
    shape_low: StemShape1
    shape_high: StemShape1


def find_nonuniqueness_epsilon(params: ModelParams, y_jump: float = 1.0,
                               tol: float = 1e-13) -> NonUniqueness:
    """Step-profile level at which the two stationary shapes tie exactly.

    The short branch stays below the jump at angle theta0; the tall branch
    crosses it at the steep feedback angle.  Bisection on the payoff gap
    locates the tie; requires ell*sin(theta0) < y_jump < ell so both branches
    exist.
    """
    t0, k, ell = params.theta0, params.kappa, params.ell
    if not ell * math.sin(t0) < y_jump < ell:
        raise NoCrossingError("need ell*sin(theta0) < y_jump < ell for two branches")
    zmax = math.exp(-k) - 1.0
    one_minus = 1.0 - math.exp(-k)

    def alpha_of(eps):
        return phi_inverse(zmax / eps, params)

    def s_low(eps):
        return ell * one_minus * eps

    def s_high(eps):
        a = alpha_of(eps)
        below = y_jump / math.sin(a)
        return eps * capture_transverse(a, params) * below + (ell - below) * one_minus

    # largest eps with a valid tall branch: crossing length equals ell
    def tall_margin(eps):
        return math.sin(alpha_of(eps)) - y_jump / ell

    eps_one = find_root(tall_margin, Bracket(1e-9, 1.0 - 1e-12,
                                             tall_margin(1e-9),
                                             tall_margin(1.0 - 1e-12)), tol=1e-14)

    def gap(eps):
        return s_high(eps) - s_low(eps)

    lo, hi = 1e-9, eps_one * (1.0 - 1e-10)
    g_lo, g_hi = gap(lo), gap(hi)
    if not g_lo > 0.0 > g_hi:
        raise NoCrossingError(f"payoff gap does not change sign: {g_lo}, {g_hi}")
    eps_hat = find_root(gap, Bracket(lo, hi, g_lo, g_hi), tol=tol)

    shapes = solve_op1(LightProfile.step(eps_hat, y_jump), params)
    if len(shapes) < 2:
        raise NoCrossingError("solver did not recover both branches at eps_hat")
    shapes.sort(key=lambda s: s.h)
    return NonUniqueness(
        eps_hat=float(eps_hat),
        eps_one=float(eps_one),
        payoff_low=float(s_low(eps_hat)),
        payoff_high=float(s_high(eps_hat)),
        shape_low=shapes[0],
        shape_high=shapes[-1],
    )
