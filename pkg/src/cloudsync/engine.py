"""Deterministic event-driven closed loop with online checks.

All agents access the repository at t = 0 in index order; afterwards the
earliest scheduled access is executed next, ties broken by agent index.
Between accesses every agent's true state is propagated exactly.
"""

from __future__ import annotations

import csv
import heapq
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .cloud import CloudRecord, Repository, write_access_log_csv
from .controller import plan_access, predict_neighbor
from .graph import AccessibilityGraph, spectral
from .numerics import FlowPropagator
from .synthesis import AgentDynamics, DesignCertificate

log = logging.getLogger(__name__)

INF = math.inf
MONITOR_TOL = 1e-6
CONSISTENCY_TOL = 1e-9


class SimulationError(RuntimeError):
    pass


class MonitorViolation(SimulationError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dynamics: AgentDynamics
    graph: AccessibilityGraph
    certificate: DesignCertificate
    x0: np.ndarray
    horizon: float
    output_step: float = 1e-3
    tol_t: float = 1e-7
    tol_sigma: float = 1e-9
    max_scan_step: float = 1e-3
    strict_monitors: bool = True

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float).reshape(self.graph.n_agents, self.dynamics.n)
        object.__setattr__(self, "x0", x0)
        if not self.horizon > 0:
            raise SimulationError(f"horizon must be positive, got {self.horizon}")
        if not self.output_step > 0:
            raise SimulationError(f"output_step must be positive, got {self.output_step}")
        if self.certificate.n_agents != self.graph.n_agents:
            raise SimulationError("certificate was designed for a different number of agents")


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray          # (K, N, n)
    delta_norm: np.ndarray
    eta: np.ndarray
    s: np.ndarray
    u_err: np.ndarray      # (K, N)
    events: list           # repository access log
    pre_access: list = field(default_factory=list)   # (t, agent, ||u_err|| just before access, s)
    intervals: dict = field(default_factory=dict)


@dataclass
class RunSummary:
    access_count: list[int]
    min_interval: list[float]
    avg_interval: list[float]
    final_error: float
    epsilon: float
    settle_time: float
    zeno_flag: bool
    tau_star: list[float]
    envelope_margin: float = 0.0
    input_margin: float = 0.0
    repository_ok: bool = True
    prediction_error: float = 0.0
    tail_max_error: float = 0.0
    bootstrap: str = "serialized t=0 access in index order"

    def to_dict(self) -> dict:
        enc = lambda v: "inf" if isinstance(v, float) and math.isinf(v) else v
        return {k: ([enc(x) for x in v] if isinstance(v, list) else enc(v))
                for k, v in self.__dict__.items()}


class Simulator:
    def __init__(self, config: SimConfig):
        self.cfg = config
        self.dyn = config.dynamics
        self.graph = config.graph
        self.cert = config.certificate
        self.spec = spectral(config.graph)
        self.prop = FlowPropagator(self.dyn.a, self.dyn.b)
        self.repo = Repository(config.graph, self.dyn.n, self.dyn.m)
        n_ag = config.graph.n_agents
        self.x = config.x0.copy()
        self.u = np.zeros((n_ag, self.dyn.m))
        self.time = 0.0
        self.queue: list[tuple[float, int]] = []
        self.eta_fn = self.cert.eta()
        self.f = np.asarray(self.cert.gain.f)
        self._chunks: list[tuple] = []
        self.pre_access: list[tuple] = []
        self.prediction_error = 0.0
        self.repository_ok = True
        self.violations: list[str] = []
        self.initialized = False

    # -- helpers ------------------------------------------------------------

    def delta(self, x: np.ndarray) -> np.ndarray:
        alpha = self.spec.phi @ x
        return x - alpha

    def _uerr(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        # u_i - z_i with z_i = -[L (x) F]_i x
        z = -(self.spec.laplacian @ x) @ self.f.T
        return np.linalg.norm(u - z, axis=-1)

    def _violation(self, msg: str) -> None:
        self.violations.append(msg)
        if self.cfg.strict_monitors:
            raise MonitorViolation(msg)
        log.warning("monitor violation: %s", msg)

    def _record(self, ts: np.ndarray, xs: np.ndarray) -> None:
        if ts.size == 0:
            return
        delta = xs - np.einsum("i,kin->kn", self.spec.phi, xs)[:, None, :]
        dn = np.linalg.norm(delta.reshape(len(ts), -1), axis=1)
        z = -np.einsum("ij,kjn->kin", self.spec.laplacian, xs) @ self.f.T
        ue = np.linalg.norm(self.u[None] - z, axis=-1)
        self._chunks.append((ts, xs, dn, self.eta_fn(ts), self.cert.threshold(ts), ue))

    def _propagate_to(self, t: float, grid: np.ndarray) -> None:
        """Advance true states to ``t``, recording grid samples in ``]time, t[``."""
        dt_grid = grid[(grid > self.time) & (grid < t)] - self.time
        z0 = np.concatenate([self.x, self.u], axis=1)
        if dt_grid.size:
            phi = self.prop.transition(dt_grid)
            xs = np.einsum("kab,ib->kia", phi, z0)[:, :, : self.dyn.n]
            self._record(dt_grid + self.time, xs)
        if t > self.time:
            phi = self.prop.transition(t - self.time)
            self.x = (z0 @ phi.T)[:, : self.dyn.n]
            self.time = t

    def _access(self, i: int, t: float) -> None:
        views = {j: self.repo.fetch(i, j) for j in sorted(self.graph.neighbors(i))}
        for j, rec in views.items():
            err = float(np.max(np.abs(predict_neighbor(rec, self.prop, t) - self.x[j - 1])))
            scale = 1.0 + float(np.max(np.abs(self.x[j - 1])))
            self.prediction_error = max(self.prediction_error, err / scale)
            if err > CONSISTENCY_TOL * scale:
                self._violation(f"agent {i} at t={t}: prediction of agent {j} off by {err:.3e}")
        if self.initialized:
            # held input before the bootstrap is a placeholder, not a control
            uerr = self._uerr(self.x, self.u)[i - 1]
            self.pre_access.append((t, i, float(uerr), float(self.cert.threshold(t))))
        plan = plan_access(i, views, self.x[i - 1], t, self.dyn, self.cert,
                           horizon=self.cfg.horizon, tol_t=self.cfg.tol_t,
                           max_step=self.cfg.max_scan_step, prop=self.prop)
        prev = self.repo.snapshot()[i]
        count = prev.access_count + 1 if prev is not None else 1
        rec = CloudRecord(i, t, self.x[i - 1].copy(), plan.input, plan.next_access, count)
        self.repo.post(rec, t)
        self.u[i - 1] = plan.input
        if plan.next_access <= self.cfg.horizon:
            heapq.heappush(self.queue, (plan.next_access, i))

    def _check_repository(self, t: float) -> None:
        bad = self.repo.check_time_consistency(t)
        if bad:
            self.repository_ok = False
            self._violation(f"repository time inconsistency at t={t} for agents {bad}")

    # -- public -------------------------------------------------------------

    def initialize(self) -> None:
        d0 = float(np.linalg.norm(self.delta(self.x)))
        if not d0 < self.cert.eta0:
            raise SimulationError(f"||delta(0)|| = {d0:.6g} is not below eta0 = {self.cert.eta0}")
        for i in range(1, self.graph.n_agents + 1):
            # placeholder until agent i posts: exact state, unknown input from t=0
            self.repo.seed(CloudRecord(i, 0.0, self.x[i - 1].copy(), np.zeros(self.dyn.m), 0.0, 0))
        for i in range(1, self.graph.n_agents + 1):
            self._access(i, 0.0)
        self._check_repository(0.0)
        self._record(np.array([0.0]), self.x[None].copy())
        self.initialized = True

    def run(self) -> tuple[Trajectory, RunSummary]:
        if not self.initialized:
            self.initialize()
        horizon = self.cfg.horizon
        step = self.cfg.output_step
        n_steps = int(math.floor(horizon / step + 1e-9))
        grid = np.append(np.arange(n_steps + 1) * step, horizon)
        grid = np.unique(grid[grid <= horizon])
        while self.queue and self.queue[0][0] <= horizon:
            t = self.queue[0][0]
            self._propagate_to(t, grid)
            while self.queue and self.queue[0][0] == t:
                _, i = heapq.heappop(self.queue)
                self._access(i, t)
            self._check_repository(t)
            self._record(np.array([t]), self.x[None].copy())
        self._propagate_to(horizon, grid)
        if not self._chunks or self._chunks[-1][0][-1] < horizon:
            self._record(np.array([horizon]), self.x[None].copy())
        traj = self._trajectory()
        summary = summarize(traj, self.cert)
        summary.prediction_error = self.prediction_error
        summary.repository_ok = self.repository_ok
        self._final_checks(traj, summary)
        return traj, summary

    def _trajectory(self) -> Trajectory:
        cols = list(zip(*self._chunks))
        t, x, dn, eta, s, ue = (np.concatenate(c) for c in cols)
        events = list(self.repo.access_log)
        intervals: dict[int, list[float]] = {i: [] for i in range(1, self.graph.n_agents + 1)}
        last: dict[int, float] = {}
        for e in events:
            if e.agent_id in last:
                intervals[e.agent_id].append(e.time - last[e.agent_id])
            last[e.agent_id] = e.time
        return Trajectory(t, x, dn, eta, s, ue, events, list(self.pre_access), intervals)

    def _final_checks(self, traj: Trajectory, summary: RunSummary) -> None:
        if summary.envelope_margin > MONITOR_TOL:
            self._violation(f"||delta|| exceeded eta by {summary.envelope_margin:.3e}")
        if summary.input_margin > MONITOR_TOL:
            self._violation(f"input error exceeded s(t) by {summary.input_margin:.3e}")
        if summary.zeno_flag:
            self._violation("an inter-access interval fell below its lower bound tau*")


def simulate(config: SimConfig) -> tuple[Trajectory, RunSummary]:
    sim = Simulator(config)
    sim.initialize()
    return sim.run()


# --------------------------------------------------------------------------
# monitors and metrics


def monitor_error_envelope(traj: Trajectory) -> float:
    """Worst ``||delta(t)|| - eta(t)`` over the samples."""
    return float(np.max(traj.delta_norm - traj.eta))


def monitor_input_error(traj: Trajectory) -> float:
    """Worst ``||u_err_i(t)|| - s(t)`` over samples, agents and pre-access instants."""
    worst = float(np.max(traj.u_err - traj.s[:, None]))
    for _, _, ue, s in traj.pre_access:
        worst = max(worst, ue - s)
    return worst


def monitor_zeno(intervals: dict, tau_star, tol_t: float = 1e-7) -> bool:
    """True when every observed inter-access interval respects its bound."""
    for i, ivs in intervals.items():
        if not ivs:
            continue
        if min(ivs) < tau_star[i - 1] - tol_t:
            return False
    return True


def settle_time(t: np.ndarray, delta_norm: np.ndarray, epsilon: float) -> float:
    above = np.flatnonzero(delta_norm > epsilon)
    if above.size == 0:
        return float(t[0])
    if above[-1] == len(t) - 1:
        return INF
    return float(t[above[-1] + 1])


def summarize(traj: Trajectory, cert: DesignCertificate, tol_t: float = 1e-7) -> RunSummary:
    n_ag = cert.n_agents
    counts = [0] * n_ag
    for e in traj.events:
        counts[e.agent_id - 1] += 1
    mins, avgs = [], []
    for i in range(1, n_ag + 1):
        ivs = traj.intervals.get(i, [])
        mins.append(float(min(ivs)) if ivs else INF)
        avgs.append(float(np.mean(ivs)) if ivs else INF)
    tail = traj.t >= traj.t[-1] - 0.1 * (traj.t[-1] - traj.t[0])
    zeno_ok = monitor_zeno(traj.intervals, cert.tau_star, tol_t)
    return RunSummary(
        access_count=counts,
        min_interval=mins,
        avg_interval=avgs,
        final_error=float(traj.delta_norm[-1]),
        epsilon=cert.epsilon,
        settle_time=settle_time(traj.t, traj.delta_norm, cert.epsilon),
        zeno_flag=not zeno_ok,
        tau_star=list(cert.tau_star),
        envelope_margin=monitor_error_envelope(traj),
        input_margin=monitor_input_error(traj),
        tail_max_error=float(np.max(traj.delta_norm[tail])),
    )


# --------------------------------------------------------------------------
# files


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


def write_trajectory_csv(traj: Trajectory, path) -> None:
    k, n_ag, n = traj.x.shape
    header = ["t_s"] + [f"x_{i}_{c}" for i in range(1, n_ag + 1) for c in range(1, n + 1)]
    header += ["delta_norm", "eta", "s"] + [f"u_err_{i}" for i in range(1, n_ag + 1)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in range(k):
            row = [_fmt(traj.t[r])] + [_fmt(v) for v in traj.x[r].ravel()]
            row += [_fmt(traj.delta_norm[r]), _fmt(traj.eta[r]), _fmt(traj.s[r])]
            row += [_fmt(v) for v in traj.u_err[r]]
            w.writerow(row)


def write_outputs(traj: Trajectory, summary: RunSummary, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "trajectory": out / "trajectory.csv",
        "events": out / "events.csv",
        "summary": out / "summary.json",
    }
    write_trajectory_csv(traj, paths["trajectory"])
    write_access_log_csv(traj.events, paths["events"])
    paths["summary"].write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
    return paths
