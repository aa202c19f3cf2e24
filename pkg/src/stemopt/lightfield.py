"""Height-dependent light intensity profiles I(y).

A profile maps height y >= 0 to an intensity in [0, 1], is non-decreasing,
and equals 1 above the surrounding canopy.  Step profiles (admitted only for
the non-uniqueness reproduction) are the single discontinuous kind; every
other kind is absolutely continuous with an almost-everywhere derivative.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NotDifferentiableError
from .numerics import trapezoid_cumulative
from .params import ModelParams

KINDS = ("constant", "step", "mollified-step", "tabulated", "exponential-canopy")


@dataclass(frozen=True)
class LightProfile:
    """Immutable light-intensity profile.

    constant            I(y) = level (default 1)
    step                I = eps below y_jump, 1 above
    mollified-step      cubic smoothstep replacing the jump; `width` is the
                        inverse of the peak steepness: max I' = (1-eps)/width
    tabulated           piecewise-linear through strictly increasing knots,
                        flat extension at the last knot value
    exponential-canopy  I(y) = exp(-R(y)), R(y) = integral of a piecewise-
                        linear shading rate from y up to the canopy height
    """

    kind: str
    eps: float = 1.0
    y_jump: float = 1.0
    width: float = 0.05
    knots_y: np.ndarray | None = None
    knots_i: np.ndarray | None = None
    rate_y: np.ndarray | None = None
    rate_v: np.ndarray | None = None
    height: float = 0.0
    _rate_cum: np.ndarray | None = field(default=None, repr=False)
    _slopes: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind in ("step", "mollified-step"):
            if not 0.0 < self.eps <= 1.0:
                raise ValueError(f"step level must lie in ]0, 1], got {self.eps}")
            if self.y_jump <= 0.0:
                raise ValueError("y_jump must be positive")
        if self.kind == "mollified-step" and self.width <= 0.0:
            raise ValueError("mollifier width must be positive")
        if self.kind == "tabulated":
            ky, ki = np.asarray(self.knots_y, float), np.asarray(self.knots_i, float)
            if np.any(np.diff(ky) <= 0.0):
                raise ValueError("tabulated knots must have strictly increasing y")
            if np.any(np.diff(ki) < 0.0):
                raise ValueError("tabulated intensities must be non-decreasing")
            if ki.min() < 0.0 or ki.max() > 1.0:
                raise ValueError("intensities must lie in [0, 1]")
            object.__setattr__(self, "_slopes", np.diff(ki) / np.diff(ky))
        if self.kind == "exponential-canopy":
            ry, rv = np.asarray(self.rate_y, float), np.asarray(self.rate_v, float)
            if np.any(np.diff(ry) <= 0.0):
                raise ValueError("rate knots must have strictly increasing y")
            if np.any(rv < 0.0):
                raise ValueError("shading rate must be non-negative")
            if self.height <= 0.0:
                raise ValueError("canopy height must be positive")
            # cumulative of the piecewise-linear rate, exact
            object.__setattr__(self, "_rate_cum", trapezoid_cumulative(ry, rv))

    # -- constructors -------------------------------------------------------

    @staticmethod
    def constant(level: float = 1.0) -> "LightProfile":
        if not 0.0 <= level <= 1.0:
            raise ValueError("constant level must lie in [0, 1]")
        return LightProfile("constant", eps=level)

    @staticmethod
    def step(eps: float, y_jump: float = 1.0) -> "LightProfile":
        return LightProfile("step", eps=eps, y_jump=y_jump)

    @staticmethod
    def mollified_step(eps: float, y_jump: float = 1.0, width: float = 0.05) -> "LightProfile":
        return LightProfile("mollified-step", eps=eps, y_jump=y_jump, width=width)

    @staticmethod
    def tabulated(knots_y, knots_i) -> "LightProfile":
        return LightProfile("tabulated",
                            knots_y=np.asarray(knots_y, float),
                            knots_i=np.asarray(knots_i, float))

    @staticmethod
    def exponential_canopy(rate_y, rate_v, height: float) -> "LightProfile":
        return LightProfile("exponential-canopy",
                            rate_y=np.asarray(rate_y, float),
                            rate_v=np.asarray(rate_v, float),
                            height=float(height))

    @staticmethod
    def constant_rate_canopy(rate: float, height: float) -> "LightProfile":
        return LightProfile.exponential_canopy([0.0, height], [rate, rate], height)

    @staticmethod
    def from_theta_samples(y, theta, rho_kappa: float) -> "LightProfile":
        """Canopy shading generated by identical stems with angle profile
        theta(y) on [0, h]: rate = rho*kappa / sin(theta)."""
        y = np.asarray(y, float)
        theta = np.asarray(theta, float)
        return LightProfile.exponential_canopy(y, rho_kappa / np.sin(theta), float(y[-1]))

    # -- evaluation ---------------------------------------------------------

    def eval(self, y):
        """Intensity at height(s) y >= 0; vectorized."""
        y_arr = np.asarray(y, dtype=float)
        scalar = y_arr.ndim == 0
        y_arr = np.atleast_1d(y_arr)
        if self.kind == "constant":
            out = np.full_like(y_arr, self.eps)
        elif self.kind == "step":
            out = np.where(y_arr <= self.y_jump, self.eps, 1.0)
        elif self.kind == "mollified-step":
            half = 0.75 * self.width
            t = np.clip((y_arr - (self.y_jump - half)) / (2.0 * half), 0.0, 1.0)
            out = self.eps + (1.0 - self.eps) * t * t * (3.0 - 2.0 * t)
        elif self.kind == "tabulated":
            out = np.interp(y_arr, self.knots_y, self.knots_i,
                            left=self.knots_i[0], right=self.knots_i[-1])
        else:  # exponential-canopy
            cum = np.interp(y_arr, self.rate_y, self._rate_cum,
                            left=self._rate_cum[0], right=self._rate_cum[-1])
            out = np.exp(-(self._rate_cum[-1] - cum))
            out = np.where(y_arr >= self.height, 1.0, out)
        return float(out[0]) if scalar else out

    def derivative(self, y):
        """Almost-everywhere derivative I'(y) >= 0; vectorized."""
        y_arr = np.asarray(y, dtype=float)
        scalar = y_arr.ndim == 0
        y_arr = np.atleast_1d(y_arr)
        if self.kind == "constant":
            out = np.zeros_like(y_arr)
        elif self.kind == "step":
            if np.any(np.abs(y_arr - self.y_jump) < 1e-12):
                raise NotDifferentiableError(f"step profile has a jump at y={self.y_jump}")
            out = np.zeros_like(y_arr)
        elif self.kind == "mollified-step":
            half = 0.75 * self.width
            t = (y_arr - (self.y_jump - half)) / (2.0 * half)
            inside = (t > 0.0) & (t < 1.0)
            tt = np.clip(t, 0.0, 1.0)
            out = np.where(inside,
                           (1.0 - self.eps) * 6.0 * tt * (1.0 - tt) / (2.0 * half),
                           0.0)
        elif self.kind == "tabulated":
            ky = self.knots_y
            idx = np.clip(np.searchsorted(ky, y_arr, side="right") - 1, 0, len(ky) - 2)
            out = np.where((y_arr >= ky[0]) & (y_arr < ky[-1]), self._slopes[idx], 0.0)
        else:  # exponential-canopy: I' = rate * I below the canopy
            rate = np.interp(y_arr, self.rate_y, self.rate_v,
                             left=self.rate_v[0], right=self.rate_v[-1])
            out = np.where(y_arr < self.height, rate * self.eval(y_arr), 0.0)
        return float(out[0]) if scalar else out

    def discontinuities(self) -> tuple[float, ...]:
        return (self.y_jump,) if self.kind == "step" else ()

    def top(self) -> float:
        """Height above which the profile is constant."""
        if self.kind == "constant":
            return 0.0
        if self.kind == "step":
            return self.y_jump
        if self.kind == "mollified-step":
            return self.y_jump + 0.75 * self.width
        if self.kind == "tabulated":
            return float(self.knots_y[-1])
        return self.height


@dataclass(frozen=True)
class RegularityReport:
    """Outcome of the canopy-regularity membership check."""

    delta: float                 # 1 - I(0)
    holder_ok: bool              # I'(y) <= C * y^(-beta) a.e.
    C: float
    beta: float
    worst_margin: float          # min over grid of C*y^(-beta) - I'(y)
    worst_y: float

    @property
    def in_class(self) -> bool:
        return self.holder_ok


def load_tabulated_csv(path) -> LightProfile:
    """Read a tabulated profile from CSV with header ``y,I``."""
    ys, iv = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["y", "I"]:
            raise ValueError(f"expected header 'y,I', got {header}")
        for row in reader:
            if not row:
                continue
            ys.append(float(row[0]))
            iv.append(float(row[1]))
    return LightProfile.tabulated(ys, iv)


def _check_grid(profile: LightProfile, y_max: float, n: int = 10_000) -> np.ndarray:
    grid = np.linspace(0.0, y_max, n)
    extra = []
    if profile.kind == "tabulated":
        extra = list(profile.knots_y)
    elif profile.kind == "exponential-canopy":
        extra = list(profile.rate_y)
    elif profile.kind in ("step", "mollified-step"):
        extra = [profile.y_jump, profile.y_jump - 0.75 * profile.width,
                 profile.y_jump + 0.75 * profile.width]
    pts = np.unique(np.clip(np.concatenate([grid, np.asarray(extra, float)]), 0.0, y_max))
    return pts


def check_uniqueness_condition(
    profile: LightProfile,
    params: ModelParams,
    h_max: float,
) -> tuple[bool, float]:
    """Slope-vs-shade criterion guaranteeing a unique optimal height.

    Checks, for a.e. h in [0, h_max],

        I'(h) * int_0^h dy / I(y)  <  tan^2(t0) cos(pi/2 - t0)
                                       * (1 - (k+1) e^-k) / (1 - e^-k).

    Returns (holds, worst margin).  A jump inside ]0, h_max] fails outright.
    """
    t0, k = params.theta0, params.kappa
    rhs = math.tan(t0) ** 2 * math.cos(math.pi / 2 - t0) \
        * (1.0 - (k + 1.0) * math.exp(-k)) / (1.0 - math.exp(-k))
    if any(0.0 < d <= h_max for d in profile.discontinuities()):
        return False, -math.inf
    ys = _check_grid(profile, h_max)
    inv_i = 1.0 / np.maximum(profile.eval(ys), 1e-300)
    cum = trapezoid_cumulative(ys, inv_i)
    lhs = profile.derivative(ys) * cum
    margin = float(np.min(rhs - lhs))
    return margin > 0.0, margin


def check_class_F(
    profile: LightProfile,
    C: float = 1.0,
    beta: float = 0.5,
    y_max: float | None = None,
) -> RegularityReport:
    """Membership in the regular canopy family: I(0) >= 1 - delta and
    I'(y) <= C * y^(-beta) a.e., checked on a dense grid plus all knots.

    Defaults C=1, beta=1/2 are the constants the equilibrium theory fixes;
    pass others to run the general-form check.
    """
    if y_max is None:
        y_max = max(profile.top(), 1.0)
    delta = 1.0 - profile.eval(0.0)
    if profile.discontinuities():
        return RegularityReport(delta, False, C, beta, -math.inf,
                                profile.discontinuities()[0])
    ys = _check_grid(profile, y_max)
    ys = ys[ys > 0.0]
    bound = C * ys ** (-beta)
    margins = bound - profile.derivative(ys)
    i_worst = int(np.argmin(margins))
    return RegularityReport(
        delta=float(delta),
        holder_ok=bool(margins[i_worst] >= 0.0),
        C=C,
        beta=beta,
        worst_margin=float(margins[i_worst]),
        worst_y=float(ys[i_worst]),
    )
