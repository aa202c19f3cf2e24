"""Shared numerical kernels: bracketed root finding, ODE integration, quadrature.

All routines are pure functions of their inputs and hold no module state, so
they are safe to call concurrently.  Singular layers are never handled here;
callers are expected to start integrations from asymptotic seeds and to declare
singular quadrature endpoints explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    MaxIterationsError,
    NonFiniteError,
    NoSignChangeError,
    StepUnderflowError,
)

_EPS = np.finfo(float).eps

DEFAULT_ABS_TOL = 1e-10
DEFAULT_REL_TOL = 1e-10


# ---------------------------------------------------------------------------
# Root finding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Bracket:
    """A sign-change interval [lo, hi] with cached endpoint values."""

    lo: float
    hi: float
    f_lo: float
    f_hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"bracket requires lo < hi, got [{self.lo}, {self.hi}]")
        if self.f_lo * self.f_hi > 0.0:
            raise NoSignChangeError(
                f"f({self.lo})={self.f_lo} and f({self.hi})={self.f_hi} have the same sign"
            )


def bracket(f: Callable[[float], float], lo: float, hi: float) -> Bracket:
    """Evaluate f at both endpoints and build a validated Bracket."""
    return Bracket(lo, hi, f(lo), f(hi))


def find_root(
    f: Callable[[float], float],
    brk: Bracket,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> float:
    """Brent's method on a validated bracket.

    Returns x inside [brk.lo, brk.hi] with |f(x)| <= tol or enclosing-interval
    width <= tol.  Combines bisection with secant/inverse-quadratic steps, so
    it is robust for the monotone but expensive residuals used by the solvers.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    a, b = brk.lo, brk.hi
    fa, fb = brk.f_lo, brk.f_hi
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b

    c, fc = a, fa
    d = e = b - a
    for _ in range(max_iter):
        if fb * fc > 0.0:
            c, fc = a, fa
            d = e = b - a
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        tol1 = 2.0 * _EPS * abs(b) + 0.5 * tol
        xm = 0.5 * (c - b)
        if abs(xm) <= tol1 or fb == 0.0 or abs(fb) <= tol:
            return b
        if abs(e) >= tol1 and abs(fa) > abs(fb):
            s = fb / fa
            if a == c:
                p = 2.0 * xm * s
                q = 1.0 - s
            else:
                q = fa / fc
                r = fb / fc
                p = s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0))
                q = (q - 1.0) * (r - 1.0) * (s - 1.0)
            if p > 0.0:
                q = -q
            p = abs(p)
            if 2.0 * p < min(3.0 * xm * q - abs(tol1 * q), abs(e * q)):
                e, d = d, p / q
            else:
                d = xm
                e = d
        else:
            d = xm
            e = d
        a, fa = b, fb
        if abs(d) > tol1:
            b += d
        else:
            b += math.copysign(tol1, xm)
        fb = f(b)
    raise MaxIterationsError(f"Brent did not converge in {max_iter} iterations")


def scan_brackets(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    samples: int = 1000,
) -> list[Bracket]:
    """Sample f uniformly on [lo, hi] and return every sign-change bracket.

    Used when the residual may have multiple roots and a single Brent call is
    not enough.
    """
    xs = np.linspace(lo, hi, samples)
    fs = np.array([f(float(x)) for x in xs])
    out: list[Bracket] = []
    for i in range(len(xs) - 1):
        f0, f1 = fs[i], fs[i + 1]
        if not (np.isfinite(f0) and np.isfinite(f1)):
            continue
        if f0 == 0.0:
            out.append(Bracket(float(xs[i]) - 1e-300, float(xs[i]), -0.0, 0.0))
        elif f0 * f1 < 0.0:
            out.append(Bracket(float(xs[i]), float(xs[i + 1]), float(f0), float(f1)))
    return out


# ---------------------------------------------------------------------------
# ODE integration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OdeProblem:
    """First-order ODE system y' = rhs(t, y) with a deterministic right side."""

    dimension: int
    rhs: Callable[[float, np.ndarray], np.ndarray]
    direction: str = "auto"  # 'forward' | 'backward' | 'auto' (from span order)


@dataclass
class Trajectory:
    """Dense sampled solution with node derivatives for Hermite interpolation."""

    t: np.ndarray
    y: np.ndarray   # shape (n, dim)
    dy: np.ndarray  # shape (n, dim), rhs evaluated at nodes

    def sample(self, ts) -> np.ndarray:
        """Cubic-Hermite interpolation at query points (vectorized).

        Accuracy is consistent with a 4th-order integrator between nodes.
        """
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        t, y, dy = self.t, self.y, self.dy
        flip = t[0] > t[-1]
        if flip:
            t, y, dy = t[::-1], y[::-1], dy[::-1]
        idx = np.clip(np.searchsorted(t, ts, side="right") - 1, 0, len(t) - 2)
        t0, t1 = t[idx], t[idx + 1]
        h = t1 - t0
        s = np.where(h > 0, (ts - t0) / np.where(h == 0, 1.0, h), 0.0)
        s = np.clip(s, 0.0, 1.0)[:, None]
        h = h[:, None]
        y0, y1 = y[idx], y[idx + 1]
        d0, d1 = dy[idx], dy[idx + 1]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1

    def sample_scalar(self, ts, component: int = 0) -> np.ndarray:
        return self.sample(ts)[:, component]


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


def _integrate_rk4(problem, a, b, y0, n_steps):
    h = (b - a) / n_steps
    ts = np.empty(n_steps + 1)
    ys = np.empty((n_steps + 1, problem.dimension))
    dys = np.empty_like(ys)
    t, y = a, np.asarray(y0, dtype=float).copy()
    f = problem.rhs
    ts[0], ys[0] = t, y
    dys[0] = f(t, y)
    for i in range(n_steps):
        k1 = dys[i]
        k2 = np.asarray(f(t + h / 2, y + h / 2 * k1))
        k3 = np.asarray(f(t + h / 2, y + h / 2 * k2))
        k4 = np.asarray(f(t + h, y + h * k3))
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = a + (i + 1) * h
        ts[i + 1], ys[i + 1] = t, y
        dys[i + 1] = f(t, y)
    return Trajectory(ts, ys, dys)


def _integrate_dp45(problem, a, b, y0, rtol, atol, max_steps, first_step=None):
    f = problem.rhs
    span = b - a
    direction = 1.0 if span > 0 else -1.0
    t = a
    y = np.asarray(y0, dtype=float).copy()
    k0 = np.asarray(f(t, y))
    if first_step is None:
        scale = atol + rtol * np.abs(y)
        d0 = np.sqrt(np.mean((y / scale) ** 2)) if y.size else 0.0
        d1 = np.sqrt(np.mean((k0 / scale) ** 2))
        h = 0.01 * d0 / d1 if (d0 > 1e-5 and d1 > 1e-5) else 1e-6 * abs(span)
        h = min(h, 0.1 * abs(span)) * direction
    else:
        h = abs(first_step) * direction

    ts, ys, dys = [t], [y.copy()], [k0.copy()]
    floor = 16.0 * _EPS * max(abs(a), abs(b))
    ks = np.empty((7, problem.dimension))
    for _ in range(max_steps):
        if direction * (t + h) > direction * b:
            h = b - t
        if abs(h) < floor:
            raise StepUnderflowError(
                f"step {h:.3e} below floor {floor:.3e} at t={t!r}"
            )
        ks[0] = k0
        failed = False
        for i in range(1, 7):
            yi = y + h * (ks[:i].T @ _DP_A[i])
            ki = np.asarray(f(t + _DP_C[i] * h, yi))
            if not np.all(np.isfinite(ki)):
                failed = True
                break
            ks[i] = ki
        if not failed:
            y5 = y + h * (ks.T @ _DP_B5)
            y4 = y + h * (ks.T @ _DP_B4)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
            err = np.sqrt(np.mean(((y5 - y4) / scale) ** 2))
        if failed or not np.isfinite(err):
            h *= 0.25
            continue
        if err <= 1.0:
            t = t + h
            y = y5
            k0 = ks[6].copy()  # FSAL
            ts.append(t)
            ys.append(y.copy())
            dys.append(k0.copy())
            if t == b or direction * (b - t) <= floor:
                return Trajectory(np.array(ts), np.array(ys), np.array(dys))
            factor = 5.0 if err == 0.0 else min(5.0, 0.9 * err ** -0.2)
            h *= factor
        else:
            h *= max(0.2, 0.9 * err ** -0.2)
    raise MaxIterationsError(f"adaptive integrator exceeded {max_steps} steps")


def integrate(
    problem: OdeProblem,
    span: tuple[float, float],
    initial: Sequence[float],
    *,
    n_steps: int | None = None,
    rtol: float | None = None,
    atol: float | None = None,
    max_steps: int = 200_000,
    first_step: float | None = None,
) -> Trajectory:
    """Integrate an ODE system over span=(a, b), a != b.

    Fixed-step classical RK4 when `n_steps` is given; otherwise an embedded
    Dormand-Prince 5(4) pair with per-step error control at (rtol, atol),
    defaulting to 1e-10 absolute and relative.
    """
    a, b = float(span[0]), float(span[1])
    if a == b:
        raise ValueError("span endpoints must differ")
    y0 = np.asarray(initial, dtype=float)
    if y0.shape != (problem.dimension,):
        raise ValueError(f"initial state must have shape ({problem.dimension},)")
    if not np.all(np.isfinite(y0)):
        raise ValueError("initial state must be finite")
    if n_steps is not None:
        return _integrate_rk4(problem, a, b, y0, n_steps)
    rtol = DEFAULT_REL_TOL if rtol is None else rtol
    atol = DEFAULT_ABS_TOL if atol is None else atol
    return _integrate_dp45(problem, a, b, y0, rtol, atol, max_steps, first_step)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

def _simpson_adaptive(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    if not (math.isfinite(flm) and math.isfinite(frm)):
        raise NonFiniteError(f"integrand non-finite near [{a}, {b}]")
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    if depth <= 0 or abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    return _simpson_adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + \
        _simpson_adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)


def _quad_panel(f, a, b, tol, depth=48):
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    if not (math.isfinite(fa) and math.isfinite(fm) and math.isfinite(fb)):
        raise NonFiniteError(f"integrand non-finite on [{a}, {b}]")
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _simpson_adaptive(f, a, b, fa, fm, fb, whole, tol, depth)


def _graded_wing(f, end, inner, tol, max_levels):
    """Integral over the interval between `inner` and `end` (ascending sense),
    with panel widths halving geometrically toward the singular `end`.

    Consecutive panel integrals of a power/log singularity form a (nearly)
    geometric sequence, so the unresolved tail is closed by geometric
    extrapolation; that keeps power endpoints accurate even when the mesh
    reaches the floating-point resolution floor at `end`.
    """
    total = 0.0
    edge = inner
    prev_panel = None
    ratio = None
    floor = 64.0 * _EPS * max(1.0, abs(end))
    for level in range(max_levels):
        nxt = end + 0.5 * (edge - end)
        if abs(nxt - end) <= floor or nxt == edge:
            break
        panel = _quad_panel(f, min(nxt, edge), max(nxt, edge),
                            tol / (4.0 * (level + 1) ** 2))
        total += panel
        if prev_panel is not None and abs(prev_panel) > 0.0:
            ratio = abs(panel) / abs(prev_panel)
            if ratio < 0.97:
                tail = panel * ratio / (1.0 - ratio)
                if abs(tail) <= 0.25 * tol * (1.0 + abs(total)):
                    return total + tail
        prev_panel = panel
        edge = nxt
    else:
        raise MaxIterationsError("graded mesh did not resolve the singular tail")
    # resolution floor reached: close with the last geometric estimate
    if prev_panel is not None and ratio is not None and ratio < 0.97:
        total += prev_panel * ratio / (1.0 - ratio)
    return total


def quad(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = DEFAULT_ABS_TOL,
    singular_at: Sequence[float] = (),
    max_levels: int = 400,
) -> float:
    """Adaptive-Simpson quadrature with graded meshes at declared endpoints.

    `singular_at` lists endpoint coordinates (a and/or b) where the integrand
    has an integrable power/log singularity.  Panels shrink geometrically
    toward those endpoints so the integrand is only ever evaluated at interior
    points; the innermost tail is closed with a midpoint estimate once it
    drops below the tolerance floor.
    """
    if a == b:
        return 0.0
    if b < a:
        return -quad(f, b, a, tol, singular_at=singular_at, max_levels=max_levels)
    sing_a = any(abs(s - a) <= 1e-14 * max(1.0, abs(a)) for s in singular_at)
    sing_b = any(abs(s - b) <= 1e-14 * max(1.0, abs(b)) for s in singular_at)
    width = b - a

    if not sing_a and not sing_b:
        return _quad_panel(f, a, b, tol)

    # Carve the interval into a smooth core plus graded wings.
    lo = a + (0.25 * width if sing_a else 0.0)
    hi = b - (0.25 * width if sing_b else 0.0)
    if hi <= lo:  # both endpoints singular on a short interval
        lo = hi = a + 0.5 * width
    total = _quad_panel(f, lo, hi, tol / 4.0) if hi > lo else 0.0
    if sing_a:
        total += _graded_wing(f, a, lo, tol, max_levels)
    if sing_b:
        total += _graded_wing(f, b, hi, tol, max_levels)
    return total


def trapezoid_cumulative(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid of samples y(x); result[0] = 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(x)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


def composite_simpson(fvals: np.ndarray, x: np.ndarray) -> float:
    """Composite Simpson on a uniform grid with an odd number of points."""
    n = len(x) - 1
    if n % 2 != 0:
        raise ValueError("composite_simpson needs an even interval count")
    h = (x[-1] - x[0]) / n
    return float(h / 3.0 * (fvals[0] + fvals[-1]
                            + 4.0 * np.sum(fvals[1:-1:2])
                            + 2.0 * np.sum(fvals[2:-1:2])))


def invert_sampled_monotone(x: np.ndarray, fx: np.ndarray, target: float) -> float:
    """Invert a strictly monotone sampled map by local linear interpolation."""
    x = np.asarray(x, dtype=float)
    fx = np.asarray(fx, dtype=float)
    if fx[0] > fx[-1]:
        x, fx = x[::-1], fx[::-1]
    if not (fx[0] <= target <= fx[-1]):
        raise ValueError(f"target {target} outside sampled range [{fx[0]}, {fx[-1]}]")
    i = int(np.clip(np.searchsorted(fx, target) - 1, 0, len(x) - 2))
    f0, f1 = fx[i], fx[i + 1]
    if f1 == f0:
        return float(x[i])
    w = (target - f0) / (f1 - f0)
    return float(x[i] + w * (x[i + 1] - x[i]))
