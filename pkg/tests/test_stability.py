import math

import numpy as np
import pytest

from swarmsim.errors import ExcludedInitialCondition
from swarmsim.explore import ControlGains
from swarmsim.stability import (COLS, integrate_error_dynamics, sample_initial_conditions,
                                verify_stability, w_limit)

GAINS = ControlGains(0.5, 2.0, 1.0, 1.0)
col = {c: i for i, c in enumerate(COLS)}


def test_sampled_initial_conditions_respect_bounds():
    e0, theta_d = sample_initial_conditions(5000, np.random.default_rng(0))
    assert np.all(np.hypot(e0[:, 0], e0[:, 1]) <= 5.0)
    assert np.all(e0[:, 2] > -math.pi) and np.all(e0[:, 2] <= math.pi - 0.05)
    np.testing.assert_allclose(theta_d, np.arctan2(e0[:, 1], e0[:, 0]))


def test_pi_rejected_minus_pi_too():
    for e in (math.pi, -math.pi):
        with pytest.raises(ExcludedInitialCondition):
            integrate_error_dynamics([[1.0, 0.0, e]], 0.0, GAINS, 0.2, t_final=0.1)


def test_equilibrium_stays_put():
    d = integrate_error_dynamics([[0.0, 0.0, 0.0]], 0.4, GAINS, 0.2, t_final=1.0)
    assert np.all(d[0, :3] == 0.0)


def test_w_limit_closed_form():
    lim = w_limit(GAINS, 0.2, 0.05)
    assert math.tanh(GAINS.k_t * lim) == pytest.approx(1.0 * 0.2 * 0.05 / (math.sqrt(2) * 0.5))
    # fixed point of the comparison system
    assert -(0.5 / 2) * math.tanh(lim) + 0.2 * 0.05 / (2 * math.sqrt(2)) == pytest.approx(0, abs=1e-15)


def test_heading_within_delta_tracks_from_start():
    d = integrate_error_dynamics([[1.0, 1.0, 0.01]], 0.8, GAINS, 0.2, t_final=1.0)
    assert d[0, col["t_delta"]] == 0.0


def test_heading_subsystem_never_overshoots():
    d = integrate_error_dynamics([[2.0, 0.0, 3.0]], 0.0, GAINS, 0.2, t_final=30.0)
    assert d[0, col["max_abs_etheta"]] == pytest.approx(3.0)
    assert d[0, col["max_rise_etheta"]] < 0


def test_small_verification_run():
    rep = verify_stability(trials=5, seed=1, t_final=60.0)
    assert rep.ok
    lines = list(rep.lines())
    assert lines[1].startswith("converged") and "5/5" in lines[1]


def test_verification_reports_nonconvergence():
    rep = verify_stability(trials=3, seed=0, t_final=0.5)
    assert not rep.ok and rep.converged < 3
