"""Single stems in a two-dimensional light field, and fields cast by stem
families rooted on the half line.

The necessary conditions couple a planar costate to the stem curve through
the capture kernel; a forward-backward sweep with under-relaxation solves a
single stem, and alternating stem solves with a ray-marched light rebuild
gives the half-line relaxation experiment.  The half-line equilibrium itself
carries no convergence guarantee; non-convergence is a reported outcome.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model1
from .lightfield import LightProfile
from .numerics import trapezoid_cumulative
from .params import ModelParams


# ---------------------------------------------------------------------------
# Field container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LightField2D:
    """Rectangular intensity samples with bilinear interpolation."""

    x: np.ndarray          # (nx,)
    y: np.ndarray          # (ny,)
    I: np.ndarray          # (ny, nx)

    def __post_init__(self):
        if self.I.shape != (len(self.y), len(self.x)):
            raise ValueError("intensity grid shape must be (ny, nx)")
        if self.I.min() < -1e-12 or self.I.max() > 1.0 + 1e-12:
            raise ValueError("intensity values must lie in [0, 1]")

    @staticmethod
    def from_function(f, window, nx: int = 256, ny: int = 256) -> "LightField2D":
        x0, x1, y0, y1 = window
        xs = np.linspace(x0, x1, nx)
        ys = np.linspace(y0, y1, ny)
        X, Y = np.meshgrid(xs, ys)
        return LightField2D(xs, ys, np.clip(f(X, Y), 0.0, 1.0))

    @staticmethod
    def stratified(profile: LightProfile, window, nx: int = 64,
                   ny: int = 2048) -> "LightField2D":
        """Vertically stratified field I(x, y) = profile(y)."""
        x0, x1, y0, y1 = window
        xs = np.linspace(x0, x1, nx)
        ys = np.linspace(y0, y1, ny)
        col = profile.eval(np.maximum(ys, 0.0))
        return LightField2D(xs, ys, np.tile(col[:, None], (1, nx)))

    def _locate(self, xq, yq):
        xq = np.clip(xq, self.x[0], self.x[-1])
        yq = np.clip(yq, self.y[0], self.y[-1])
        ix = np.clip(np.searchsorted(self.x, xq) - 1, 0, len(self.x) - 2)
        iy = np.clip(np.searchsorted(self.y, yq) - 1, 0, len(self.y) - 2)
        tx = (xq - self.x[ix]) / (self.x[ix + 1] - self.x[ix])
        ty = (yq - self.y[iy]) / (self.y[iy + 1] - self.y[iy])
        return ix, iy, np.clip(tx, 0.0, 1.0), np.clip(ty, 0.0, 1.0)

    def eval(self, xq, yq):
        xq = np.asarray(xq, dtype=float)
        yq = np.asarray(yq, dtype=float)
        ix, iy, tx, ty = self._locate(xq, yq)
        z00 = self.I[iy, ix]
        z01 = self.I[iy, ix + 1]
        z10 = self.I[iy + 1, ix]
        z11 = self.I[iy + 1, ix + 1]
        return (z00 * (1 - tx) * (1 - ty) + z01 * tx * (1 - ty)
                + z10 * (1 - tx) * ty + z11 * tx * ty)

    def grad(self, xq, yq):
        """Central-difference gradient of the interpolated field."""
        hx = 0.5 * (self.x[1] - self.x[0])
        hy = 0.5 * (self.y[1] - self.y[0])
        gx = (self.eval(xq + hx, yq) - self.eval(xq - hx, yq)) / (2 * hx)
        gy = (self.eval(xq, yq + hy) - self.eval(xq, yq - hy)) / (2 * hy)
        return gx, gy


# ---------------------------------------------------------------------------
# Extended capture kernel (full angle range)
# ---------------------------------------------------------------------------

def _capture_deriv(theta, params: ModelParams):
    """Derivative of the transverse capture, valid on both sides of the
    perpendicular (reflection symmetry across theta0 + pi/2)."""
    th = np.asarray(theta, dtype=float)
    t0, k = params.theta0, params.kappa
    c = np.cos(th - t0)
    mirrored = np.where(c >= 0.0, th, 2.0 * t0 + math.pi - th)
    _, gp, _ = model1._G_parts(mirrored, t0, k)
    return np.where(c >= 0.0, gp, -gp)


def _capture_second(theta, params: ModelParams):
    th = np.asarray(theta, dtype=float)
    t0, k = params.theta0, params.kappa
    c = np.cos(th - t0)
    mirrored = np.where(c >= 0.0, th, 2.0 * t0 + math.pi - th)
    _, _, gpp = model1._G_parts(mirrored, t0, k)
    return gpp


# ---------------------------------------------------------------------------
# Single-stem solve (forward-backward sweep)
# ---------------------------------------------------------------------------

@dataclass
class Op3Result:
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    p: np.ndarray               # (n, 2) costate
    payoff: float
    stationarity_residual: float
    converged: bool
    sweeps: int
    theta_left_range: bool      # optimum left [theta0, pi/2] somewhere


def solve_op3_single(fld: LightField2D, root_x: float, params: ModelParams,
                     n_s: int = 400, relax: float = 0.3,
                     max_sweeps: int = 500, tol: float = 1e-9,
                     theta_init: np.ndarray | None = None) -> Op3Result:
    """Optimal fixed-length stem rooted at (root_x, 0) under a planar field.

    Sweeps: integrate the curve forward with the current angles, the costate
    backward from a free tip, re-maximize the pointwise Hamiltonian over the
    full angle range, and relax.  Stationarity of the capture-plus-costate
    expression is the convergence certificate.
    """
    ell, t0 = params.ell, params.theta0
    s = np.linspace(0.0, ell, n_s + 1)
    theta = np.full(n_s + 1, t0) if theta_init is None else theta_init.copy()
    th_grid = np.linspace(1e-3, math.pi, 721)

    converged = False
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        x = root_x + trapezoid_cumulative(s, np.cos(theta))
        y = trapezoid_cumulative(s, np.sin(theta))
        I_s = fld.eval(x, y)
        gx, gy = fld.grad(x, y)
        G_s = model1.capture_transverse(theta, params)
        # p(s) = integral_s^ell grad(I) G ds, backward from p(ell) = 0
        p1 = _reverse_cumtrapz(s, gx * G_s)
        p2 = _reverse_cumtrapz(s, gy * G_s)

        H = (p1[:, None] * np.cos(th_grid)[None, :]
             + p2[:, None] * np.sin(th_grid)[None, :]
             + I_s[:, None] * model1.capture_transverse(th_grid, params)[None, :])
        th_new = th_grid[np.argmax(H, axis=1)]
        th_new = _polish(th_new, p1, p2, I_s, params)

        delta = float(np.max(np.abs(th_new - theta)))
        theta = (1.0 - relax) * theta + relax * th_new
        if delta <= tol:
            converged = True
            break

    x = root_x + trapezoid_cumulative(s, np.cos(theta))
    y = trapezoid_cumulative(s, np.sin(theta))
    I_s = fld.eval(x, y)
    gx, gy = fld.grad(x, y)
    G_s = model1.capture_transverse(theta, params)
    p1 = _reverse_cumtrapz(s, gx * G_s)
    p2 = _reverse_cumtrapz(s, gy * G_s)
    station = I_s * _capture_deriv(theta, params) \
        - p1 * np.sin(theta) + p2 * np.cos(theta)
    payoff = float(np.trapezoid(I_s * G_s, s))
    left = bool(np.any(theta < t0 - 1e-6) or np.any(theta > math.pi / 2 + 1e-6))
    return Op3Result(
        s=s, x=x, y=y, theta=theta, p=np.stack([p1, p2], axis=1),
        payoff=payoff, stationarity_residual=float(np.max(np.abs(station))),
        converged=converged, sweeps=sweeps, theta_left_range=left,
    )


def _reverse_cumtrapz(s, f):
    total = trapezoid_cumulative(s, f)
    return total[-1] - total


def _polish(th, p1, p2, I_s, params: ModelParams, iters: int = 4):
    """Newton steps on the stationarity equation, where the kernel is smooth."""
    th = th.copy()
    for _ in range(iters):
        c = np.cos(th - params.theta0)
        ok = np.abs(c) > 0.05
        f = I_s * _capture_deriv(th, params) - p1 * np.sin(th) + p2 * np.cos(th)
        fp = I_s * _capture_second(th, params) - p1 * np.cos(th) - p2 * np.sin(th)
        step = np.where(ok & (np.abs(fp) > 1e-14), f / np.where(fp == 0, 1, fp), 0.0)
        th = np.clip(th - np.clip(step, -0.05, 0.05), 1e-3, math.pi)
    return th


# ---------------------------------------------------------------------------
# Stem families and the light they cast
# ---------------------------------------------------------------------------

@dataclass
class StemFamily:
    """Stems gamma(s, xi) rooted along the x axis with density rho_bar(xi)."""

    xi: np.ndarray              # (m,) root positions
    rho_bar: np.ndarray         # (m,) stems per unit root length
    s: np.ndarray               # (n_s+1,) common arc-length grid
    x: np.ndarray               # (m, n_s+1)
    y: np.ndarray               # (m, n_s+1)
    theta: np.ndarray           # (m, n_s+1)
    kappa: float
    ell: float

    @staticmethod
    def uniform_angles(xi, rho_bar, params: ModelParams, n_s: int = 200,
                       theta=None) -> "StemFamily":
        xi = np.asarray(xi, dtype=float)
        m = len(xi)
        s = np.linspace(0.0, params.ell, n_s + 1)
        th = np.full((m, n_s + 1), params.theta0 if theta is None else theta)
        x = xi[:, None] + np.cumsum(
            np.concatenate([np.zeros((m, 1)), np.cos(th[:, :-1])], axis=1), axis=1) \
            * (s[1] - s[0])
        x[:, 0] = xi
        y = np.cumsum(
            np.concatenate([np.zeros((m, 1)), np.sin(th[:, :-1])], axis=1), axis=1) \
            * (s[1] - s[0])
        y[:, 0] = 0.0
        fam = StemFamily(xi=xi, rho_bar=np.asarray(rho_bar, dtype=float),
                         s=s, x=x, y=y, theta=th,
                         kappa=params.kappa, ell=params.ell)
        fam.recompute_curves()
        return fam

    def recompute_curves(self):
        """Rebuild the planar curves from the angle field (arc-length exact
        to trapezoid order)."""
        ds = self.s[1] - self.s[0]
        cx = np.cos(self.theta)
        cy = np.sin(self.theta)
        self.x = self.xi[:, None] + np.concatenate(
            [np.zeros((len(self.xi), 1)),
             np.cumsum(0.5 * (cx[:, 1:] + cx[:, :-1]) * ds, axis=1)], axis=1)
        self.y = np.concatenate(
            [np.zeros((len(self.xi), 1)),
             np.cumsum(0.5 * (cy[:, 1:] + cy[:, :-1]) * ds, axis=1)], axis=1)

    def total_leaf_mass(self) -> float:
        """kappa * integral rho_bar(xi) * ell dxi over the root interval."""
        return float(self.kappa * self.ell * np.trapezoid(self.rho_bar, self.xi))


def rho_bar_ramp(xi, b: float, scale: float = 1.0):
    """Root density rising linearly to a plateau: 0 below 0, xi/b on [0, b],
    1 beyond, times `scale`."""
    xi = np.asarray(xi, dtype=float)
    return scale * np.clip(xi / b, 0.0, 1.0) * (xi >= 0.0)


@dataclass
class FieldBuildReport:
    field: LightField2D
    vegetation: np.ndarray      # (ny, nx) deposited density
    deposited_mass: float
    capped_cells: int


def light_from_family(family: StemFamily, window, nx: int = 256, ny: int = 256,
                      params: ModelParams | None = None,
                      density_cap: float = 1e4,
                      smooth_passes: int = 2) -> FieldBuildReport:
    """Ray-marched light field cast by a family of stems.

    Leaf mass kappa * rho_bar(xi) dxi ds is splatted bilinearly onto the
    grid (conservative by construction); cells where the stem map focuses
    (near-zero Jacobian) are capped at `density_cap` and counted.  A short
    binomial blur mollifies the splat so the downstream gradients do not
    jitter with cell alignment.  The intensity then follows from marching
    each grid node toward the sun and exponentiating the accumulated
    vegetation.
    """
    if params is None:
        raise ValueError("params required for the sun direction")
    theta0 = params.theta0
    x0, x1, y0, y1 = window
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    dx = xs[1] - xs[0]
    dy = ys[1] - ys[0]
    cell = dx * dy

    # midpoint masses per (xi, s) patch; trapezoid widths keep the total
    # deposited mass equal to kappa * ell * trapz(rho_bar)
    ds = family.s[1] - family.s[0]
    d_xi = np.gradient(family.xi)
    d_xi[0] *= 0.5
    d_xi[-1] *= 0.5
    mass = family.kappa * family.rho_bar * d_xi   # per stem row, per unit s
    px = 0.5 * (family.x[:, 1:] + family.x[:, :-1]).ravel()
    py = 0.5 * (family.y[:, 1:] + family.y[:, :-1]).ravel()
    pm = np.repeat(mass, family.x.shape[1] - 1) * ds

    rho = np.zeros((ny, nx))
    fx = np.clip((px - x0) / dx, 0.0, nx - 1.001)
    fy = np.clip((py - y0) / dy, 0.0, ny - 1.001)
    ix = fx.astype(int)
    iy = fy.astype(int)
    tx = fx - ix
    ty = fy - iy
    np.add.at(rho, (iy, ix), pm * (1 - tx) * (1 - ty))
    np.add.at(rho, (iy, ix + 1), pm * tx * (1 - ty))
    np.add.at(rho, (iy + 1, ix), pm * (1 - tx) * ty)
    np.add.at(rho, (iy + 1, ix + 1), pm * tx * ty)
    deposited = float(rho.sum())
    rho /= cell
    capped = int(np.sum(rho > density_cap))
    rho = np.minimum(rho, density_cap)
    for _ in range(smooth_passes):
        rho = _binomial_blur(rho)

    # march from every node toward the sun (vegetation is up-sun of a point)
    to_sun = (-math.sin(theta0), math.cos(theta0))
    step = 0.5 * min(dx, dy)
    span = math.hypot(x1 - x0, y1 - y0)
    n_steps = int(math.ceil(span / step)) + 2
    X, Y = np.meshgrid(xs, ys)
    expo = np.zeros_like(X)
    for k in range(n_steps):
        t = (k + 0.5) * step
        qx = X + t * to_sun[0]
        qy = Y + t * to_sun[1]
        inside = (qx >= x0) & (qx <= x1) & (qy >= y0) & (qy <= y1)
        if not inside.any():
            break
        vals = np.zeros_like(qx)
        vals[inside] = _bilinear_raw(rho, xs, ys, qx[inside], qy[inside])
        expo += vals * step
    I = np.clip(np.exp(-expo), 0.0, 1.0)
    return FieldBuildReport(field=LightField2D(xs, ys, I), vegetation=rho,
                            deposited_mass=deposited, capped_cells=capped)


def _binomial_blur(grid: np.ndarray) -> np.ndarray:
    """Mass-preserving separable [1,2,1]/4 blur with reflecting edges."""
    pad = np.pad(grid, 1, mode="edge")
    horiz = 0.25 * (pad[1:-1, :-2] + 2.0 * pad[1:-1, 1:-1] + pad[1:-1, 2:])
    pad = np.pad(horiz, 1, mode="edge")
    return 0.25 * (pad[:-2, 1:-1] + 2.0 * pad[1:-1, 1:-1] + pad[2:, 1:-1])


def _bilinear_raw(grid, xs, ys, xq, yq):
    dx = xs[1] - xs[0]
    dy = ys[1] - ys[0]
    fx = np.clip((xq - xs[0]) / dx, 0.0, len(xs) - 1.001)
    fy = np.clip((yq - ys[0]) / dy, 0.0, len(ys) - 1.001)
    ix = fx.astype(int)
    iy = fy.astype(int)
    tx = fx - ix
    ty = fy - iy
    return (grid[iy, ix] * (1 - tx) * (1 - ty) + grid[iy, ix + 1] * tx * (1 - ty)
            + grid[iy + 1, ix] * (1 - tx) * ty + grid[iy + 1, ix + 1] * tx * ty)


# ---------------------------------------------------------------------------
# Half-line relaxation experiment
# ---------------------------------------------------------------------------

@dataclass
class HalflineResult:
    family: StemFamily
    report: FieldBuildReport
    changes: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def halfline_relaxation(params: ModelParams, rho_scale: float = 0.01,
                        b: float = 1.0, xi_max: float | None = None,
                        n_stems: int = 9, iterations: int = 10,
                        relax: float = 0.3, grid: int = 160,
                        n_s: int = 200, tol: float = 1e-4,
                        window=None) -> HalflineResult:
    """Alternate light rebuilds and per-root stem solves on the half line.

    This reproduces the conjectured boundary-layer picture: roots near the
    origin receive nearly full light and stay perpendicular to the rays,
    while far-field roots approach the one-dimensional equilibrium shape.
    No convergence guarantee exists; the change log is the result.
    """
    ell = params.ell
    xi_hi = 3.0 * b if xi_max is None else xi_max
    xi = np.linspace(0.0, xi_hi, n_stems)
    rho_bar = rho_bar_ramp(xi, b, rho_scale)
    family = StemFamily.uniform_angles(xi, rho_bar, params, n_s=n_s)
    if window is None:
        window = (-0.5 * ell, xi_hi + 1.2 * ell, 0.0, 1.2 * ell)

    changes: list[float] = []
    converged = False
    report = light_from_family(family, window, grid, grid, params=params)
    for it in range(iterations):
        new_theta = family.theta.copy()
        for i in range(len(xi)):
            res = solve_op3_single(report.field, float(xi[i]), params,
                                   n_s=n_s, max_sweeps=120, tol=1e-8,
                                   theta_init=family.theta[i])
            new_theta[i] = res.theta
        delta = float(np.max(np.abs(new_theta - family.theta)))
        changes.append(delta)
        family.theta = (1.0 - relax) * family.theta + relax * new_theta
        family.recompute_curves()
        report = light_from_family(family, window, grid, grid, params=params)
        if delta <= tol:
            converged = True
            break
    return HalflineResult(family=family, report=report, changes=changes,
                          converged=converged, iterations=len(changes))
