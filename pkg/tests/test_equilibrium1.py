import math

import numpy as np
import pytest

from stemopt import ModelParams
from stemopt import equilibrium1 as e1
from stemopt import model1 as m1
from stemopt.numerics import trapezoid_cumulative


def _params(rho_kappa):
    return ModelParams(theta0=math.pi / 4, kappa=1.0, ell=1.0, rho=rho_kappa)


@pytest.fixture(scope="module")
def eq_01():
    return e1.solve_equilibrium1(_params(0.1))


def test_bcp_zero_density_is_flat():
    traj = e1.solve_bcp(_params(0.0))
    assert np.all(traj.y == 0.0)
    th = e1.theta_hat_at(traj, np.linspace(-1.0, 0.0, 11), _params(0.0))
    assert np.max(np.abs(th - math.pi / 4)) == 0.0


def test_bcp_first_order_taylor():
    params = _params(0.1)
    traj = e1.solve_bcp(params)
    z = traj.sample(np.array([-0.01]))[0, 0]
    # zeta(-t) = (rho kappa / sin theta0) t + O(t^2)
    assert abs(z - 0.1 / math.sin(math.pi / 4) * 0.01) < 5e-6


def test_bcp_resubstitution():
    params = _params(0.1)
    traj = e1.solve_bcp(params)
    ts = np.linspace(-0.9, -1e-4, 400)
    th = e1.theta_hat_at(traj, ts, params)
    dz = traj.sample(ts + 5e-7)[:, 0] - traj.sample(ts - 5e-7)[:, 0]
    resid = dz / 1e-6 + 0.1 / np.sin(th)
    assert np.max(np.abs(resid)) < 1e-6


def test_equilibrium_zero_density():
    res = e1.solve_equilibrium1(_params(0.0))
    assert abs(res.h_star - math.sin(math.pi / 4)) < 1e-12
    assert np.max(np.abs(res.theta_star - math.pi / 4)) == 0.0
    assert np.max(np.abs(res.I_star.eval(res.y) - 1.0)) == 0.0
    assert res.residual_map == 0.0
    assert res.residual_refit < 1e-12


def test_equilibrium_qualitative(eq_01):
    res = eq_01
    # shading makes the lower stem more vertical, hence a taller stem than
    # the no-shade height ell*sin(theta0); the angle profile stays monotone
    assert res.h_star >= math.sin(math.pi / 4) - 1e-12
    assert res.h_star <= 1.0
    assert res.theta_star[0] > math.pi / 4
    assert abs(res.theta_star[-1] - math.pi / 4) < 1e-9
    assert np.all(np.diff(res.theta_star) <= 1e-12)


def test_equilibrium_shade_endpoints(eq_01):
    res = eq_01
    assert abs(res.I_star.eval(res.h_star) - 1.0) < 1e-12
    # ground intensity equals exp(-rho kappa ell) by the length constraint
    assert abs(res.I_star.eval(0.0) - math.exp(-0.1)) < 1e-8


def test_necessary_condition_pointwise(eq_01):
    res = eq_01
    params = _params(0.1)
    rk = 0.1
    shade = trapezoid_cumulative(res.y, rk / np.sin(res.theta_star))
    z = (math.exp(-1.0) - 1.0) * np.exp(shade[-1] - shade)
    th = m1.phi_inverse(z, params)
    assert np.max(np.abs(th - res.theta_star)) <= 1e-7


def test_length_constraint(eq_01):
    res = eq_01
    length = np.trapezoid(1.0 / np.sin(res.theta_star), res.y)
    assert abs(length - 1.0) <= 1e-8


@pytest.mark.parametrize("rk", [0.01, 0.05, 0.1])
def test_fixed_point_residuals(rk):
    res = e1.solve_equilibrium1(_params(rk))
    rep = e1.verify_fixed_point(res, _params(rk))
    assert rep.residual_refit <= 1e-6
    assert rep.residual_map <= 1e-6
    assert res.uniqueness_ok


def test_perturbation_detector(eq_01):
    res = eq_01
    params = _params(0.1)
    fake = e1.Equilibrium1Result(
        h_star=res.h_star, y=res.y, theta_star=res.theta_star + 0.01,
        x=res.x, I_star=res.I_star, t_hat=res.t_hat,
        theta_hat=res.theta_hat, residual_refit=0.0, residual_map=0.0,
        rho_kappa=res.rho_kappa, uniqueness_ok=True, uniqueness_margin=0.0)
    rep = e1.verify_fixed_point(fake, params)
    assert rep.residual_refit >= 0.005


def test_ground_angle_monotone_in_density():
    # more shading pushes the stem base toward vertical
    values = [e1.solve_equilibrium1(_params(rk), run_refit=False).theta_star[0]
              for rk in (0.02, 0.04, 0.06, 0.08, 0.1)]
    assert np.all(np.diff(values) > 0.0)
