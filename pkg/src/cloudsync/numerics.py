"""Small dense-matrix kernels: exponentials, exact zero-order-hold flows and
closed-form integrals of exponential envelopes.

Everything here is exact up to floating point; nothing is time-stepped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

# |theta + rate| below this is treated as a coincident rate
COINCIDENT_RATE_TOL = 1e-12


def matexp(m, t: float = 1.0) -> np.ndarray:
    """Return ``exp(m * t)`` (scaling-and-squaring with a Pade approximant)."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"matexp needs a square matrix, got shape {m.shape}")
    return sla.expm(m * t)


def augmented_generator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Generator of the joint (state, held input) flow ``[[a, b], [0, 0]]``."""
    n, m = b.shape
    g = np.zeros((n + m, n + m))
    g[:n, :n] = a
    g[:n, n:] = b
    return g


def zoh_flow(a, b, x0, u, dt: float) -> np.ndarray:
    """State after holding input ``u`` for ``dt`` seconds starting from ``x0``.

    Computed as one exponential of the (n+1)-augmented matrix
    ``[[a, b @ u], [0, 0]]``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n or x0.shape != (n,) or u.shape != (b.shape[1],):
        raise ValueError(
            f"dimension mismatch: a{a.shape} b{b.shape} x0{x0.shape} u{u.shape}"
        )
    if dt < 0:
        raise ValueError(f"dt must be nonnegative, got {dt}")
    g = np.zeros((n + 1, n + 1))
    g[:n, :n] = a
    g[:n, n] = b @ u
    e = sla.expm(g * dt)
    return e[:n, :n] @ x0 + e[:n, n]


class FlowPropagator:
    """Exact propagation of ``x' = A x + B u`` with ``u`` held constant.

    The joint state ``z = [x; u]`` evolves under a fixed generator, so a
    table of ``exp(G k h)`` can be reused for every uniform sampling grid
    with step ``h``.
    """

    def __init__(self, a, b):
        self.a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.asarray(b, dtype=float)
        self.b = b[:, None] if b.ndim == 1 else b
        self.n, self.m = self.b.shape
        self.generator = augmented_generator(self.a, self.b)
        self._tables: dict[tuple[float, int], np.ndarray] = {}

    def transition(self, dt) -> np.ndarray:
        """``exp(G dt)``; ``dt`` may be an array, giving a stack of matrices."""
        dt = np.asarray(dt, dtype=float)
        return sla.expm(dt[..., None, None] * self.generator)

    def flow(self, x0, u, dt) -> np.ndarray:
        """States at offsets ``dt`` (scalar or 1-D array) from ``x0``."""
        z0 = np.concatenate([np.asarray(x0, dtype=float), np.asarray(u, dtype=float)])
        phi = self.transition(dt)
        return (phi @ z0)[..., : self.n]

    def power_table(self, h: float, k: int) -> np.ndarray:
        """Stack ``exp(G j h)`` for ``j = 1..k`` built by repeated doubling."""
        key = (float(h), int(k))
        table = self._tables.get(key)
        if table is None:
            d = self.n + self.m
            table = np.empty((k, d, d))
            table[0] = sla.expm(self.generator * h)
            filled = 1
            while filled < k:
                step = min(filled, k - filled)
                table[filled : filled + step] = table[:step] @ table[filled - 1]
                filled += step
            self._tables[key] = table
        return table


@dataclass(frozen=True)
class ExpSum:
    """``t -> sum_k c_k exp(-r_k (t - offset_time))``."""

    terms: tuple[tuple[float, float], ...]
    offset_time: float = 0.0

    @classmethod
    def of(cls, terms: Sequence[tuple[float, float]], offset_time: float = 0.0) -> "ExpSum":
        return cls(tuple((float(c), float(r)) for c, r in terms), float(offset_time))

    def scaled(self, factor: float) -> "ExpSum":
        return ExpSum(tuple((factor * c, r) for c, r in self.terms), self.offset_time)

    def __add__(self, other: "ExpSum") -> "ExpSum":
        if self.offset_time != other.offset_time:
            raise ValueError("cannot add ExpSums with different offsets")
        return ExpSum(self.terms + other.terms, self.offset_time)

    def __call__(self, t):
        return eval_expsum(self, t)


def eval_expsum(env: ExpSum, t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for c, r in env.terms:
        out = out + c * np.exp(-r * (t - env.offset_time))
    return out if out.ndim else float(out)


def exp_envelope_integral(theta: float, env: ExpSum, a, b):
    """``int_a^b exp(theta (b - tau)) env(tau) dtau`` in closed form.

    ``a`` and ``b`` broadcast against each other, so a vector of upper
    limits is evaluated in one call.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a > b):
        raise ValueError("integration bounds must satisfy a <= b")
    length = b - a
    out = np.zeros(np.broadcast(a, b).shape)
    for c, r in env.terms:
        q = theta + r
        if abs(q) < COINCIDENT_RATE_TOL:
            weight = length
        else:
            # expm1 keeps the primitive accurate for short intervals
            weight = np.expm1(q * length) / q
        out = out + c * np.exp(-r * (b - env.offset_time)) * weight
    return out if out.ndim else float(out)
