"""Numerical check of almost-global convergence of the exploration error dynamics.

The closed loop is integrated with classical RK4 for a batch of initial
conditions. Alongside the state the kernel tracks the per-step monotonicity
of ``|e_theta|`` and ``||e_c||`` and integrates the scalar comparison system

    W' = -(k_c / 2) tanh(k_t W) + k_theta r_c delta / (2 sqrt 2)

from the first time ``|e_theta| <= delta``, starting at ``W = ||e_c|| / sqrt 2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ExcludedInitialCondition
from .explore import ControlGains

# columns of the per-trial diagnostics array
COLS = ("ex", "ey", "etheta", "max_rise_ec", "max_rise_etheta", "max_abs_etheta",
        "t_delta", "max_v_minus_w", "w_final", "w_limit")


@njit(cache=True)
def _rhs(ex, ey, et, ctd, std, kc, ks, kt, kth, rc):
    g = 1.4142135623730951 * kth * math.sin(0.5 * et)
    n = math.sqrt(ex * ex + ey * ey)
    m = 0.0
    if n > 0.0:
        th = math.tanh(ks * et)
        m = kc * (1.0 - th * th) * math.tanh(kt * n) / n
    # heading = theta_d - e_theta
    s = math.sin(et)
    c = math.cos(et)
    sh = std * c - ctd * s
    ch = ctd * c + std * s
    return -m * ex + rc * g * sh, -m * ey - rc * g * ch, -g


@njit(cache=True)
def _w_rhs(w, kc, kt, bias):
    return -0.5 * kc * math.tanh(kt * w) + bias


@njit(cache=True)
def _w_step(w, dt, kc, kt, bias):
    a = _w_rhs(w, kc, kt, bias)
    b = _w_rhs(w + 0.5 * dt * a, kc, kt, bias)
    c = _w_rhs(w + 0.5 * dt * b, kc, kt, bias)
    d = _w_rhs(w + dt * c, kc, kt, bias)
    return w + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d)


@njit(cache=True)
def _integrate(e0, theta_d, kc, ks, kt, kth, rc, dt, steps, delta, w_extra_steps):
    n_trials = e0.shape[0]
    out = np.empty((n_trials, 10))
    bias = kth * rc * delta / (2.0 * 1.4142135623730951)
    h = 0.5 * dt
    for i in range(n_trials):
        x = e0[i, 0]
        y = e0[i, 1]
        e = e0[i, 2]
        ctd = math.cos(theta_d[i])
        std = math.sin(theta_d[i])
        rise_ec = -np.inf
        rise_et = -np.inf
        max_et = abs(e)
        t_delta = -1.0
        w = 0.0
        max_vw = -np.inf
        tracking = False
        if abs(e) <= delta:
            tracking = True
            t_delta = 0.0
            w = math.sqrt(x * x + y * y) / 1.4142135623730951
            max_vw = 0.0
        for k in range(steps):
            a0, a1, a2 = _rhs(x, y, e, ctd, std, kc, ks, kt, kth, rc)
            b0, b1, b2 = _rhs(x + h * a0, y + h * a1, e + h * a2, ctd, std, kc, ks, kt, kth, rc)
            c0, c1, c2 = _rhs(x + h * b0, y + h * b1, e + h * b2, ctd, std, kc, ks, kt, kth, rc)
            d0, d1, d2 = _rhs(x + dt * c0, y + dt * c1, e + dt * c2, ctd, std, kc, ks, kt, kth, rc)
            nx = x + dt / 6.0 * (a0 + 2.0 * b0 + 2.0 * c0 + d0)
            ny = y + dt / 6.0 * (a1 + 2.0 * b1 + 2.0 * c1 + d1)
            ne = e + dt / 6.0 * (a2 + 2.0 * b2 + 2.0 * c2 + d2)
            r = math.sqrt(nx * nx + ny * ny) - math.sqrt(x * x + y * y)
            if r > rise_ec:
                rise_ec = r
            r = abs(ne) - abs(e)
            if r > rise_et:
                rise_et = r
            x, y, e = nx, ny, ne
            if abs(e) > max_et:
                max_et = abs(e)
            if tracking:
                w = _w_step(w, dt, kc, kt, bias)
                vw = math.sqrt(x * x + y * y) / 1.4142135623730951 - w
                if vw > max_vw:
                    max_vw = vw
            elif abs(e) <= delta:
                tracking = True
                t_delta = (k + 1) * dt
                w = math.sqrt(x * x + y * y) / 1.4142135623730951
                max_vw = 0.0
        w_final = w
        w_lim = np.nan
        if tracking:
            w_lim = w
            for k in range(w_extra_steps):
                w_lim = _w_step(w_lim, dt, kc, kt, bias)
        else:
            w_final = np.nan
        out[i, 0] = x
        out[i, 1] = y
        out[i, 2] = e
        out[i, 3] = rise_ec
        out[i, 4] = rise_et
        out[i, 5] = max_et
        out[i, 6] = t_delta
        out[i, 7] = max_vw
        out[i, 8] = w_final
        out[i, 9] = w_lim
    return out


def integrate_error_dynamics(e0, theta_d, gains: ControlGains, r_c: float, dt: float = 1e-3,
                             t_final: float = 120.0, delta: float = 0.05,
                             w_extra_time: float = 0.0) -> np.ndarray:
    """RK4-integrate a batch of initial conditions; returns diagnostics, one row per trial.

    ``e0`` has rows ``(e_cx, e_cy, e_theta)``; ``theta_d`` holds the fixed
    desired heading of each maneuver. See :data:`COLS` for the columns.
    """
    e0 = np.ascontiguousarray(np.atleast_2d(e0), dtype=float)
    theta_d = np.ascontiguousarray(np.broadcast_to(np.asarray(theta_d, float), (len(e0),)))
    if np.any(np.abs(e0[:, 2]) == math.pi):
        raise ExcludedInitialCondition("e_theta(0) = pi lies in the excluded measure-zero set")
    steps = int(round(t_final / dt))
    extra = int(round(w_extra_time / dt))
    return _integrate(e0, theta_d, gains.k_c, gains.k_s, gains.k_t, gains.k_theta, float(r_c),
                      float(dt), steps, float(delta), extra)


def w_limit(gains: ControlGains, r_c: float, delta: float) -> float:
    """Closed-form equilibrium of the comparison system."""
    return math.atanh(gains.k_theta * r_c * delta / (math.sqrt(2.0) * gains.k_c)) / gains.k_t


def sample_initial_conditions(n: int, rng: np.random.Generator, max_norm: float = 5.0,
                              pi_margin: float = 0.05):
    """Uniform in the disk ``||e_c|| <= max_norm``; ``e_theta`` uniform on (-pi, pi - margin]."""
    r = max_norm * np.sqrt(rng.uniform(0.0, 1.0, n))
    phi = rng.uniform(-math.pi, math.pi, n)
    e_theta = rng.uniform(-math.pi, math.pi - pi_margin, n)
    e_theta[e_theta == -math.pi] = 0.0
    e0 = np.column_stack([r * np.cos(phi), r * np.sin(phi), e_theta])
    # the heading reference of each maneuver points along the initial camera error
    theta_d = np.arctan2(e0[:, 1], e0[:, 0])
    return e0, theta_d


@dataclass
class StabilityReport:
    trials: int
    converged: int
    max_final_ec: float
    max_final_etheta: float
    max_bound_excess: float
    max_limit_error: float
    w_limit: float
    ec_tol: float
    etheta_tol: float

    @property
    def ok(self) -> bool:
        return self.converged == self.trials

    def lines(self):
        yield f"trials                 {self.trials}"
        yield f"converged              {self.converged}/{self.trials}"
        yield f"max final |e_c|        {self.max_final_ec:.3e} (tol {self.ec_tol:g})"
        yield f"max final |e_theta|    {self.max_final_etheta:.3e} (tol {self.etheta_tol:g})"
        yield f"max V - W after T      {self.max_bound_excess:.3e}"
        yield f"W limit (closed form)  {self.w_limit:.9f}"
        yield f"max |W_inf - formula|  {self.max_limit_error:.3e}"


def verify_stability(gains: ControlGains = ControlGains(), r_c: float = 0.2, trials: int = 100,
                     seed: int = 0, ec_tol: float = 1e-2, etheta_tol: float = 1e-3,
                     dt: float = 1e-3, t_final: float = 120.0, delta: float = 0.05) -> StabilityReport:
    rng = np.random.default_rng(seed)
    e0, theta_d = sample_initial_conditions(trials, rng)
    d = integrate_error_dynamics(e0, theta_d, gains, r_c, dt, t_final, delta, w_extra_time=100.0)
    final_ec = np.hypot(d[:, 0], d[:, 1])
    final_et = np.abs(d[:, 2])
    ok = (final_ec < ec_tol) & (final_et < etheta_tol)
    lim = w_limit(gains, r_c, delta)
    return StabilityReport(trials, int(ok.sum()), float(final_ec.max()), float(final_et.max()),
                           _nanmax(d[:, 7]), _nanmax(np.abs(d[:, 9] - lim)), lim, ec_tol, etheta_tol)


def _nanmax(a) -> float:
    # trials that never reach |e_theta| <= delta carry NaN bound diagnostics
    a = a[~np.isnan(a)]
    return float(a.max()) if len(a) else math.nan
