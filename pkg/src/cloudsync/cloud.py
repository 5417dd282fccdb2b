"""The shared repository: one record per agent, instantaneous atomic access,
reads restricted by the accessibility graph."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .graph import AccessibilityGraph


class RepositoryError(RuntimeError):
    pass


class UnauthorizedRead(RepositoryError):
    """An agent tried to read a record it has no edge to (privacy violation)."""


@dataclass(frozen=True)
class CloudRecord:
    agent_id: int
    last_access_time: float
    last_state: np.ndarray
    held_input: np.ndarray
    next_access_time: float
    access_count: int

    def __post_init__(self):
        for name in ("last_state", "held_input"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class LogEntry:
    time: float
    agent_id: int
    record: CloudRecord


class Repository:
    """Owned by the engine; controllers only see copies through :meth:`fetch`."""

    def __init__(self, graph: AccessibilityGraph, n: int, m: int):
        self.graph = graph
        self.n, self.m = n, m
        self._records: dict[int, CloudRecord | None] = {i: None for i in range(1, graph.n_agents + 1)}
        self.access_log: list[LogEntry] = []

    def seed(self, record: CloudRecord) -> None:
        """Install a pre-access placeholder (count 0, not logged)."""
        if record.access_count != 0:
            raise RepositoryError("seed records must have access_count 0")
        self._records[record.agent_id] = record

    def post(self, record: CloudRecord, now: float) -> None:
        i = record.agent_id
        if i not in self._records:
            raise RepositoryError(f"unknown agent {i}")
        if record.last_access_time != now:
            raise RepositoryError(f"record time {record.last_access_time} != access time {now}")
        if not (record.next_access_time > record.last_access_time):
            raise RepositoryError(
                f"agent {i}: next access {record.next_access_time} must be strictly after {now}"
            )
        prev = self._records[i]
        prev_count = prev.access_count if prev is not None else 0
        if prev is not None and now < prev.last_access_time:
            raise RepositoryError(f"agent {i}: stale post at {now} < {prev.last_access_time}")
        if record.access_count != prev_count + 1:
            raise RepositoryError(
                f"agent {i}: access count {record.access_count} does not follow {prev_count}"
            )
        self._records[i] = record
        self.access_log.append(LogEntry(now, i, record))

    def fetch(self, reader: int, target: int) -> CloudRecord:
        if target != reader and target not in self.graph.neighbors(reader):
            raise UnauthorizedRead(f"agent {reader} may not read agent {target}")
        rec = self._records[target]
        if rec is None:
            raise RepositoryError(f"agent {target} has no record yet")
        return replace(rec)

    def snapshot(self) -> dict[int, CloudRecord | None]:
        """Diagnostic view of every record, bypassing read permissions."""
        return {i: (replace(r) if r is not None else None) for i, r in self._records.items()}

    def check_time_consistency(self, now: float, tol: float = 0.0) -> list[int]:
        """Agents whose record violates ``last <= now <= next``."""
        bad = []
        for i, r in self._records.items():
            if r is None:
                continue
            if r.last_access_time > now + tol or r.next_access_time < now - tol:
                bad.append(i)
        return bad

    def write_log_csv(self, path) -> None:
        write_access_log_csv(self.access_log, path)


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else repr(float(x))


def write_access_log_csv(entries, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "agent", "access_count", "next_access_time_s"])
        for e in entries:
            w.writerow([_fmt(e.time), e.agent_id, e.record.access_count, _fmt(e.record.next_access_time)])
