"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL ...`` line (visible with
``pytest -v`` since printing bypasses capture). Run directly with
``python3 tests/test_acceptance.py`` for just these lines.
"""
import math
import sys
import time
from dataclasses import replace
from importlib import resources

import numpy as np
import pytest

from swarmsim.config import dump_config, load_config
from swarmsim.errors import BandwidthViolation, ConfigError
from swarmsim.explore import ControlGains, CoverageMap, ExploreParams, TargetState, select_target
from swarmsim.export import export_mission
from swarmsim.icp import icp_benchmark
from swarmsim.slam import ScanMatchParams, SlamMap, SlamParams, cell_update, occupied_cells, scan_match, update_map
from swarmsim.stability import COLS, integrate_error_dynamics, verify_stability
from swarmsim.swarm import MAP_BYTES, PoseBus, run_mission
from swarmsim.world import EnvironmentMap, Pose2D, load_scenario, raycast, wrap_angle

SCEN = resources.files("swarmsim") / "scenarios"
GAINS = ControlGains(k_c=0.5, k_s=2.0, k_t=1.0, k_theta=1.0)
R_C = 0.2
col = {c: i for i, c in enumerate(COLS)}


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return emit


# ---------------------------------------------------------------- 1-3: error dynamics

def test_c01_convergence(report):
    verify_stability(trials=1, t_final=0.01)   # compile outside the timed region
    t0 = time.perf_counter()
    rep = verify_stability(GAINS, R_C, trials=100, seed=0, ec_tol=1e-2, etheta_tol=1e-3,
                           dt=1e-3, t_final=120.0)
    elapsed = time.perf_counter() - t0
    ok = rep.converged == 100 and elapsed < 10.0
    report(1, ok, f"{rep.converged}/100 converged, max |e_c| {rep.max_final_ec:.2e}, "
                  f"max |e_theta| {rep.max_final_etheta:.2e}, {elapsed:.2f} s")
    assert ok


def test_c02_decoupled_subsystems(report):
    rng = np.random.default_rng(2)
    # e_theta(0) = 0: heading stays at zero, ||e_c|| strictly decreases
    r = 5.0 * np.sqrt(rng.uniform(0, 1, 50))
    phi = rng.uniform(-math.pi, math.pi, 50)
    e0 = np.column_stack([r * np.cos(phi), r * np.sin(phi), np.zeros(50)])
    d = integrate_error_dynamics(e0, phi, GAINS, R_C, dt=1e-3, t_final=30.0)
    stays = float(d[:, col["max_abs_etheta"]].max())
    rise_ec = float(d[:, col["max_rise_ec"]].max())
    # heading subsystem alone: |e_theta| strictly decreasing from any e_theta(0) in (0, pi)
    et0 = np.concatenate([np.linspace(1e-3, math.pi - 1e-3, 60), [math.pi - 1e-9]])
    e1 = np.column_stack([np.zeros_like(et0), np.zeros_like(et0), et0])
    h = integrate_error_dynamics(e1, 0.0, GAINS, R_C, dt=1e-3, t_final=30.0)
    rise_et = float(h[:, col["max_rise_etheta"]].max())
    decayed = bool(np.all(np.abs(h[:, 2]) < et0))
    ok = stays == 0.0 and rise_ec < 1e-9 and rise_et < 1e-9 and decayed
    report(2, ok, f"e_theta(0)=0 max |e_theta| {stays:g}, max per-step rise of ||e_c|| {rise_ec:.2e}, "
                  f"of |e_theta| {rise_et:.2e} (allowed 1e-9)")
    assert ok


def test_c03_comparison_bound(report):
    rep = verify_stability(GAINS, R_C, trials=100, seed=0, delta=0.05)
    ok = rep.max_bound_excess <= 1e-6 and rep.max_limit_error <= 1e-6
    report(3, ok, f"max V - W {rep.max_bound_excess:.2e}, |W_inf - atanh formula| {rep.max_limit_error:.2e} "
                  f"(W_inf {rep.w_limit:.9f})")
    assert ok


# ---------------------------------------------------------------- 4: cell update

def test_c04_cell_update_fixed_point(report):
    v, seq = 127, []
    for _ in range(6):
        v = cell_update(v, 0, 100)
        seq.append(v)
    # exact integer oracle, the update written out directly
    ref, want = 127, []
    for _ in range(6):
        ref = (155 * ref) // 255
        want.append(ref)
    ok = seq == want and min(seq) >= 0 and max(seq) <= 255 and any(s <= 10 for s in seq)
    report(4, ok, f"sequence {seq}")
    assert ok


# ---------------------------------------------------------------- 5: ICP

def test_c05_icp_recovery(report):
    icp_benchmark(trials=2, exact_trials=1)
    t0 = time.perf_counter()
    rep = icp_benchmark(trials=200, seed=0, points=(30, 50), noise=0.02, max_angle=math.radians(30),
                        max_translation=0.5, angle_tol=math.radians(2), translation_tol=0.05,
                        exact_trials=50, exact_tol=1e-6)
    elapsed = time.perf_counter() - t0
    ok = rep.ok and elapsed < 5.0
    noisy = [t for t in rep.trials if t.noise > 0]
    missed = [t for t in noisy if not rep.recovered(t)]
    report(5, ok, f"recovered {100 * rep.noisy_rate:.1f}% (need 98%), zero-noise max error "
                  f"{rep.exact_max_error:.2e} (need 1e-6), misses flagged "
                  f"{sum(t.flagged for t in missed)}/{len(missed)}, {elapsed:.2f} s")
    assert ok


# ---------------------------------------------------------------- 6: scan matcher

def _room_trials(offset, beams=36, seeds=100):
    occ = np.zeros((32, 42), bool)
    occ[0] = occ[-1] = True
    occ[:, 0] = occ[:, -1] = True
    env = EnvironmentMap(occ, 0.1)
    W, H = env.extent
    angles = np.arange(beams) * 2 * math.pi / beams
    slam = SlamMap(origin=(W / 2 + offset, H / 2 + offset))
    rng = np.random.default_rng(1)
    for _ in range(400):
        p = Pose2D(rng.uniform(0.6, W - 0.6), rng.uniform(0.6, H - 0.6), rng.uniform(-3, 3))
        update_map(slam, p, raycast(env, p, angles, 4.0), SlamParams())
    ok = 0
    for seed in range(seeds):
        r = np.random.default_rng(1000 + seed)
        true = Pose2D(r.uniform(1, W - 1), r.uniform(1, H - 1), r.uniform(-3, 3))
        scan = raycast(env, true, angles, 4.0)
        # up to 0.08 m on each axis, so the (0.08, 0.08) corner is covered too
        dx, dy = r.uniform(-0.08, 0.08, 2)
        init = Pose2D(true.x + dx, true.y + dy, true.theta + math.radians(r.uniform(-3, 3)))
        est = scan_match(slam, scan, init, ScanMatchParams(iterations=1000), r)
        ok += (math.hypot(est.x - true.x, est.y - true.y) < 0.05
               and abs(wrap_angle(est.theta - true.theta)) < math.radians(1))
    return ok


def test_c06_scan_matcher_recovery(report):
    # wall faces through SLAM cell centres; see the README for the grid-alignment dependence
    ok_count = _room_trials(offset=0.05)
    edge_aligned = _room_trials(offset=0.0)
    ok = ok_count >= 95
    report(6, ok, f"{ok_count}/100 recovered within 0.05 m / 1 deg (36 beams, walls at cell centres); "
                  f"informational: {edge_aligned}/100 with walls on cell edges")
    assert ok


# ---------------------------------------------------------------- 7: consensus

def test_c07_lambda_one_consensus(report):
    rng = np.random.default_rng(7)
    params = ExploreParams(lam=1.0, sigma_1=0.5, sigma_2=0.5)
    agree = 0
    for _ in range(50):
        cells = rng.integers(0, 120, (100, 100), dtype=np.uint8)
        t = 120.0 + rng.uniform(0, 100)
        picks = []
        for _ in range(3):
            cov = CoverageMap(cells.copy())      # each agent holds its own identical copy
            prev = rng.uniform(-5, 5, 2)
            picks.append(select_target(cov, t, rng.uniform(-5, 5, 2), TargetState(prev, prev), params))
        agree += all(p.tobytes() == picks[0].tobytes() for p in picks)
    ok = agree == 50
    report(7, ok, f"{agree}/50 map states with bit-identical targets")
    assert ok


# ---------------------------------------------------------------- 8-9: two-room mission

def mission_config():
    return load_config(SCEN / "default.cfg")


@pytest.fixture(scope="module")
def mission():
    cfg = mission_config()
    env = load_scenario(SCEN / "two_rooms.txt")
    run_mission(replace(cfg, duration=6.0), env)   # compile kernels outside the timed region
    t0 = time.perf_counter()
    log = run_mission(cfg, env)
    return cfg, env, log, time.perf_counter() - t0


def wall_fraction(env, log, i):
    """Share of occupied SLAM cells whose centre lies within 2 cells of a true wall cell centre."""
    pts = occupied_cells(log.final_slam[i])
    F = log.frames[i]
    c, s = math.cos(F.theta), math.sin(F.theta)
    w = np.column_stack([F.x + c * pts[:, 0] - s * pts[:, 1], F.y + s * pts[:, 0] + c * pts[:, 1]])
    iy, ix = np.nonzero(env.occupied)
    walls = np.column_stack([(ix + 0.5) * env.resolution, (iy + 0.5) * env.resolution])
    d = np.sqrt(((w[:, None, :] - walls[None, :, :]) ** 2).sum(axis=2).min(axis=1))
    return float(np.mean(d <= 2 * env.resolution + 1e-9)), len(pts)


def test_c08_two_room_mission(mission, report):
    cfg, env, log, elapsed = mission
    door_x = 5.2   # far face of the dividing wall
    parts, ok = [], elapsed < 60.0
    entered = []
    for i in log.agent_ids:
        frac, n = wall_fraction(env, log, i)
        s = log.coverage_series(i)
        mono = bool(np.all(np.diff(s[:, 1]) >= 0))
        r2 = float(np.corrcoef(s[:, 0], s[:, 1])[0, 1] ** 2)
        xs = np.array(log.trajectories[i])[:, 1]
        entered.append(bool(np.any(xs > door_x)))
        ok &= frac >= 0.9 and mono and r2 >= 0.9
        parts.append(f"agent {i}: walls {frac:.3f} of {n}, R2 {r2:.3f}, monotone {mono}")
    ok &= any(entered)
    report(8, ok, "; ".join(parts) + f"; second room entered by {[i for i, e in zip(log.agent_ids, entered) if e]}"
                  f"; {elapsed:.1f} s")
    assert ok


def test_c09_determinism(mission, tmp_path, report):
    cfg, env, log, _ = mission
    a = export_mission(log, tmp_path / "a", dump_config(cfg))
    b = export_mission(run_mission(cfg, env), tmp_path / "b", dump_config(cfg))
    names = sorted(p.name for p in a.iterdir())
    same = names == sorted(p.name for p in b.iterdir()) and all(
        (a / n).read_bytes() == (b / n).read_bytes() for n in names)
    report(9, same, f"{len(names)} exported files compared byte for byte")
    assert same


# ---------------------------------------------------------------- 10: bandwidth

def test_c10_bandwidth(report):
    map_bytes = np.full((100, 100), 127, np.uint8).tobytes()
    caught = []
    bus = PoseBus([1, 2, 3])
    try:
        bus.send(1, map_bytes)
    except BandwidthViolation:
        caught.append("direct send")
    # one row of the map per step still runs into the budget within a step
    bus.new_step()
    try:
        for row in range(100):
            bus.send(2, map_bytes[100 * row:100 * (row + 1)])
    except BandwidthViolation:
        caught.append("chunked send")

    def inject(m, step, t):
        if step == m.sync_steps + 3:
            m.bus.send(1, m.agents[0].slam.cells.tobytes())

    env = load_scenario(SCEN / "two_rooms.txt")
    try:
        run_mission(replace(mission_config(), duration=10.0), env, step_hook=inject)
    except BandwidthViolation:
        caught.append("mid-mission injection")
    try:
        replace(mission_config(), byte_budget=MAP_BYTES).validate()
    except ConfigError:
        caught.append("budget >= map size rejected")
    ok = len(caught) == 4 and bus.byte_budget < MAP_BYTES
    report(10, ok, f"budget {bus.byte_budget} B/step/agent < {MAP_BYTES} B; violations raised: {', '.join(caught)}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
