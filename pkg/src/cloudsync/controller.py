"""Per-agent self-triggered controller.

At an access instant agent ``i`` holds its own exact state and the records
of its in-neighbours.  From these it computes the held input and the next
instant at which its triggering function ``sigma = f + g`` can reach the
threshold ``s(t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .cloud import CloudRecord
from .numerics import FlowPropagator, exp_envelope_integral
from .synthesis import AgentDynamics, DesignCertificate

INF = math.inf

# samples per vectorized chunk while scanning for the crossing; chunks start
# small (most crossings are a few steps away) and double up to the cap
SCAN_CHUNK = 2048
SCAN_CHUNK_FIRST = 32


class PredictionError(ValueError):
    pass


def predict_neighbor(record: CloudRecord, prop: FlowPropagator, t: float) -> np.ndarray:
    """Neighbour state predicted from its record: exact held-input flow until
    its announced next access, free response afterwards."""
    t0 = record.last_access_time
    if t < t0:
        raise PredictionError(f"cannot predict agent {record.agent_id} before its record ({t} < {t0})")
    t1 = min(t, record.next_access_time)
    x = prop.flow(record.last_state, record.held_input, t1 - t0)
    if t > t1:
        x = prop.flow(x, np.zeros(prop.m), t - t1)
    return x


def compute_input(i: int, neighbor_states: Mapping[int, np.ndarray], own_state, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    own = np.asarray(own_state, dtype=float)
    diff = np.zeros_like(own)
    for j, xj in neighbor_states.items():
        if xj is None:
            raise PredictionError(f"agent {i}: missing record of neighbour {j}")
        diff = diff + (np.asarray(xj, dtype=float) - own)
    return f @ diff


def input_error(i: int, u_i, x_true: np.ndarray, f, neighbors) -> float:
    """``||u_i - F sum_j (x_j - x_i)||`` on true states (monitor only)."""
    z = compute_input(i, {j: x_true[j - 1] for j in neighbors}, x_true[i - 1], f)
    return float(np.linalg.norm(np.asarray(u_i) - z))


@dataclass
class ControlPlan:
    input: np.ndarray
    next_access: float
    sigma_trace: list[tuple[float, float, float]] = field(default_factory=list)


class TriggerFunction:
    """``sigma_i`` for one inter-access interval, evaluable on arrays of times.

    The ZOH part uses ``w(t) = sum_j (xhat_j(t) - x_i(t))``, which obeys
    ``w' = A w + B ubar(t)`` with ``ubar`` piecewise constant: a neighbour's
    input drops out of the sum at its announced next access.
    """

    def __init__(self, i: int, views: Mapping[int, CloudRecord], x_i, u_i, t_now: float,
                 dyn: AgentDynamics, cert: DesignCertificate,
                 prop: Optional[FlowPropagator] = None):
        self.i = i
        self.t_now = float(t_now)
        self.prop = prop or FlowPropagator(dyn.a, dyn.b)
        self.f_gain = np.asarray(cert.gain.f, dtype=float)
        self.u_i = np.asarray(u_i, dtype=float)
        self.x_i = np.asarray(x_i, dtype=float)
        self.threshold = cert.threshold
        self.theta = cert.plant_bound.rate
        self.g_coef = (np.linalg.norm(dyn.b, 2) * np.linalg.norm(self.f_gain, 2)
                       * cert.plant_bound.kappa)
        self.neighbors = sorted(j for j in views if j != i)
        self.views = {j: views[j] for j in self.neighbors}
        k = len(self.neighbors)
        w0 = -k * self.x_i
        for j in self.neighbors:
            w0 = w0 + predict_neighbor(self.views[j], self.prop, self.t_now)
        self.next_j = {j: self.views[j].next_access_time for j in self.neighbors}
        self.mu = {j: cert.mu(j) for j in self.neighbors}
        self.breaks = sorted({t for t in self.next_j.values() if self.t_now < t < INF})

        # piece k covers [starts[k], starts[k+1]] with a constant ubar
        self.starts = np.array([self.t_now] + self.breaks)
        self.ubars = []
        self.w_starts = []
        w = w0
        for idx, a in enumerate(self.starts):
            ubar = -k * self.u_i
            for j in self.neighbors:
                if self.next_j[j] > a:
                    ubar = ubar + self.views[j].held_input
            if idx > 0:
                w = self.prop.flow(w, self.ubars[-1], a - self.starts[idx - 1])
            self.w_starts.append(w)
            self.ubars.append(ubar)
        self.w_starts = np.array(self.w_starts)
        self.ubars = np.array(self.ubars)

    # -- pieces -------------------------------------------------------------

    def w(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if np.any(ts < self.t_now):
            raise PredictionError("trigger evaluated before the access instant")
        idx = np.searchsorted(self.starts, ts, side="right") - 1
        z0 = np.concatenate([self.w_starts[idx], self.ubars[idx]], axis=1)
        phi = self.prop.transition(ts - self.starts[idx])
        return np.einsum("kab,kb->ka", phi, z0)[:, : self.prop.n]

    def _f_from_w(self, w: np.ndarray) -> np.ndarray:
        return np.linalg.norm(w @ self.f_gain.T - self.u_i, axis=-1)

    def f(self, ts) -> np.ndarray:
        return self._f_from_w(self.w(ts))

    def g(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.zeros_like(ts)
        for j in self.neighbors:
            tj = self.next_j[j]
            if not math.isfinite(tj):
                continue
            active = ts > tj
            if np.any(active):
                out[active] += exp_envelope_integral(self.theta, self.mu[j], tj, ts[active])
        return self.g_coef * out

    def sigma(self, ts) -> np.ndarray:
        return self.f(ts) + self.g(ts)

    def excess(self, ts) -> np.ndarray:
        """``sigma(t) - s(t)``; the access is due where this reaches zero."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        return self.sigma(ts) - self.threshold(ts)

    # -- scanning -----------------------------------------------------------

    def _scan_piece(self, k: int, end: float, step: float, trace: Optional[list], trace_every: int):
        """First sample in ``]starts[k], end]`` with nonnegative excess, with
        the preceding sample; ``None`` if the piece stays below threshold."""
        a = self.starts[k]
        z = np.concatenate([self.w_starts[k], self.ubars[k]])
        table = self.prop.power_table(step, SCAN_CHUNK)
        n = self.prop.n
        prev_t = a
        base = 0
        size = SCAN_CHUNK_FIRST
        while True:
            offsets = (base + np.arange(1, size + 1)) * step
            times = a + offsets
            zs = table[:size] @ z
            keep = times < end
            times, zs_kept = times[keep], zs[keep]
            if not keep.all():
                # close the piece with an exact sample at its end
                times = np.append(times, end)
                w_end = self.prop.flow(self.w_starts[k], self.ubars[k], end - a)
                ws = np.vstack([zs_kept[:, :n], w_end[None, :]])
            else:
                ws = zs_kept[:, :n]
            sig = self._f_from_w(ws) + self.g(times)
            exc = sig - self.threshold(times)
            if trace is not None:
                for q in range(0, len(times), trace_every):
                    trace.append((float(times[q]), float(sig[q]), float(sig[q] - exc[q])))
            hit = np.flatnonzero(exc >= 0)
            if hit.size:
                q = hit[0]
                lo = times[q - 1] if q > 0 else prev_t
                return float(lo), float(times[q])
            if not keep.all():
                return None
            prev_t = float(times[-1])
            z = zs[-1]
            base += size
            size = min(2 * size, SCAN_CHUNK)

    def next_access(self, horizon: float, tol_t: float = 1e-7, step: float = 1e-3,
                    trace: Optional[list] = None, trace_every: int = 1) -> float:
        """Smallest crossing of ``sigma = s`` after ``t_now`` (left-biased),
        or ``inf`` when none occurs up to ``horizon``."""
        if not self.neighbors:
            return INF
        step = max(step, tol_t)
        bounds = list(self.starts) + [horizon]
        for k in range(len(self.starts)):
            a, end = bounds[k], min(bounds[k + 1], horizon)
            if a >= horizon:
                break
            found = self._scan_piece(k, end, step, trace, trace_every)
            if found is None:
                continue
            lo, hi = found
            if self.excess(hi)[0] < 0:
                # chunked and exact evaluations disagree at rounding level; rescan exactly
                lo2 = self._refine_exact(hi, end, step)
                if lo2 is None:
                    continue
                lo, hi = lo2
            while hi - lo > tol_t:
                mid = 0.5 * (lo + hi)
                if self.excess(mid)[0] >= 0:
                    hi = mid
                else:
                    lo = mid
            return lo if lo > self.t_now else hi
        return INF

    def _refine_exact(self, start: float, end: float, step: float):
        t = start
        while t < end:
            t_next = min(t + step, end)
            if self.excess(t_next)[0] >= 0:
                return t, t_next
            t = t_next
        return None


def sampling_step(tau_star_i: float, tol_t: float, max_step: float) -> float:
    """Scan step ``max(tau*/4, tol_t)``, capped at ``max_step``."""
    quarter = tau_star_i / 4 if math.isfinite(tau_star_i) else max_step
    return max(min(quarter, max_step), tol_t)


def trigger_f(i, views, x_i, u_i, t_now, dyn, cert, t) -> np.ndarray:
    return TriggerFunction(i, views, x_i, u_i, t_now, dyn, cert).f(t)


def trigger_g(i, views, x_i, u_i, t_now, dyn, cert, t) -> np.ndarray:
    return TriggerFunction(i, views, x_i, u_i, t_now, dyn, cert).g(t)


def plan_access(i: int, views: Mapping[int, CloudRecord], x_i, t_now: float, dyn: AgentDynamics,
                cert: DesignCertificate, horizon: float, tol_t: float = 1e-7,
                max_step: float = 1e-3, prop: Optional[FlowPropagator] = None,
                trace_every: int = 0) -> ControlPlan:
    """Input and next access time for agent ``i`` accessing at ``t_now``."""
    prop = prop or FlowPropagator(dyn.a, dyn.b)
    nbr_states = {
        j: predict_neighbor(views[j], prop, t_now) for j in sorted(views) if j != i
    }
    u_i = compute_input(i, nbr_states, x_i, cert.gain.f)
    trig = TriggerFunction(i, views, x_i, u_i, t_now, dyn, cert, prop)
    trace = [] if trace_every else None
    step = sampling_step(cert.tau_star[i - 1], tol_t, max_step)
    nxt = trig.next_access(horizon, tol_t=tol_t, step=step, trace=trace,
                           trace_every=max(trace_every, 1))
    return ControlPlan(input=u_i, next_access=nxt, sigma_trace=trace or [])
