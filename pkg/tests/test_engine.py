import dataclasses
import json

import numpy as np
import pytest

from cloudsync.engine import (
    MonitorViolation, SimConfig, SimulationError, Simulator, monitor_error_envelope, monitor_input_error,
    monitor_zeno, settle_time, simulate, write_outputs,
)
from helpers import OSC_X0, random_scenario


@pytest.fixture(scope="module")
def short_cfg(osc_design):
    dyn, g, cert = osc_design
    return SimConfig(dyn, g, cert, OSC_X0, horizon=1.0)


def held_inputs(traj, n_agents, m):
    """Held input of every agent at every sample, rebuilt from the access log."""
    u = np.zeros((len(traj.t), n_agents, m))
    for e in traj.events:
        u[traj.t >= e.time, e.agent_id - 1] = e.record.held_input
    return u


def test_synchronized_start(osc_design):
    dyn, g, cert = osc_design
    x0 = np.tile([1.0, -2.0], (4, 1))
    traj, summary = simulate(SimConfig(dyn, g, cert, x0, horizon=0.5))
    assert summary.final_error == pytest.approx(0.0, abs=1e-12)
    assert summary.settle_time == 0.0
    # accesses still happen (the unknown-input bound keeps growing) but every
    # refreshed input is exactly zero
    assert max(np.abs(e.record.held_input).max() for e in traj.events) <= 1e-12


def test_initial_error_must_be_below_eta0(osc_design):
    dyn, g, cert = osc_design
    with pytest.raises(SimulationError):
        Simulator(SimConfig(dyn, g, cert, 10 * OSC_X0, horizon=1.0)).initialize()


def test_config_validation(osc_design):
    dyn, g, cert = osc_design
    with pytest.raises(SimulationError):
        SimConfig(dyn, g, cert, OSC_X0, horizon=0.0)
    with pytest.raises(ValueError):
        SimConfig(dyn, g, cert, OSC_X0[:3], horizon=1.0)


def test_short_horizon_outputs(osc_design, tmp_path):
    dyn, g, cert = osc_design
    traj, summary = simulate(SimConfig(dyn, g, cert, OSC_X0, horizon=0.1))
    assert traj.t[0] == 0.0 and traj.t[-1] == pytest.approx(0.1)
    assert np.all(np.diff(traj.t) > 0)
    paths = write_outputs(traj, summary, tmp_path)
    header = paths["trajectory"].read_text().splitlines()[0].split(",")
    assert header[:3] == ["t_s", "x_1_1", "x_1_2"] and header[-1] == "u_err_4"
    assert json.loads(paths["summary"].read_text())["access_count"] == summary.access_count


def test_determinism(short_cfg):
    a, sa = simulate(short_cfg)
    b, sb = simulate(short_cfg)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.t, b.t)
    assert sa.to_dict() == sb.to_dict()


def test_collective_dynamics_finite_difference(short_cfg):
    traj, _ = simulate(short_cfg)
    a, b = short_cfg.dynamics.a, short_cfg.dynamics.b
    u = held_inputs(traj, 4, 2)
    event_t = np.array([e.time for e in traj.events])
    h = short_cfg.output_step
    checked = 0
    for k in range(1, len(traj.t) - 1):
        t = traj.t[k]
        if abs(traj.t[k + 1] - t - h) > 1e-12 or abs(t - traj.t[k - 1] - h) > 1e-12:
            continue
        if np.any((event_t > t - h - 1e-12) & (event_t < t + h + 1e-12)):
            continue
        xdot = (traj.x[k + 1] - traj.x[k - 1]) / (2 * h)
        rhs = traj.x[k] @ a.T + u[k] @ b.T
        assert np.max(np.abs(xdot - rhs)) <= 1e-5
        checked += 1
    assert checked > 100


def test_first_access_inputs_use_initial_states(short_cfg):
    traj, _ = simulate(short_cfg)
    f = short_cfg.certificate.gain.f
    x0 = short_cfg.x0
    for e in traj.events[:4]:
        i = e.agent_id
        diff = sum(x0[j - 1] - x0[i - 1] for j in short_cfg.graph.neighbors(i))
        np.testing.assert_allclose(e.record.held_input, f @ diff, atol=1e-12)
        assert e.time == 0.0


def test_repository_mid_run(short_cfg):
    sim = Simulator(short_cfg)
    sim.initialize()
    t_next = sim.queue[0][0]
    snap = sim.repo.snapshot()
    assert len(snap) == 4
    assert all(r.last_access_time <= t_next <= r.next_access_time for r in snap.values())


def test_monitor_functions(short_cfg):
    traj, summary = simulate(short_cfg)
    assert monitor_error_envelope(traj) == summary.envelope_margin < 0
    assert monitor_input_error(traj) == summary.input_margin <= 1e-6
    assert monitor_zeno(traj.intervals, short_cfg.certificate.tau_star)


def test_zeno_monitor_catches_corrupted_log(short_cfg):
    traj, _ = simulate(short_cfg)
    bad = {i: list(v) for i, v in traj.intervals.items()}
    bad[2].append(short_cfg.certificate.tau_star[1] / 10)
    assert not monitor_zeno(bad, short_cfg.certificate.tau_star)


def test_strict_monitors_abort(short_cfg):
    cert = dataclasses.replace(short_cfg.certificate, tau_star=(10.0,) * 4)
    cfg = dataclasses.replace(short_cfg, certificate=cert)
    with pytest.raises(MonitorViolation):
        simulate(cfg)
    sim = Simulator(dataclasses.replace(cfg, strict_monitors=False))
    sim.initialize()
    _, summary = sim.run()
    assert summary.zeno_flag and sim.violations


def test_settle_time():
    t = np.array([0.0, 1.0, 2.0, 3.0])
    assert settle_time(t, np.array([5.0, 0.5, 2.0, 0.1]), 1.0) == 3.0
    assert settle_time(t, np.array([0.5, 0.5, 0.5, 0.1]), 1.0) == 0.0
    assert settle_time(t, np.array([0.5, 0.5, 0.5, 2.0]), 1.0) == np.inf


@pytest.mark.parametrize("seed", [1, 4])
def test_random_scenario_monitors(seed):
    traj, summary = simulate(random_scenario(seed))
    assert summary.envelope_margin <= 1e-6 and summary.input_margin <= 1e-6
    assert summary.repository_ok and not summary.zeno_flag
    assert summary.prediction_error <= 1e-9
