"""Scenario files: strict TOML with plant, graph, threshold, design and
simulation sections."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .graph import AccessibilityGraph, GraphError, build_graph
from .synthesis import AgentDynamics, DesignError, ThresholdParams


class ScenarioError(ValueError):
    pass


_SCHEMA = {
    "plant": ({"a", "b"}, set()),
    "graph": ({"n_agents", "edges"}, set()),
    "threshold": ({"s0", "s_inf", "lambda_s"}, set()),
    "design": ({"varrho", "eta0"}, {"contraction_kappa", "contraction_lambda", "epsilon_target"}),
    "simulation": ({"x0", "horizon"}, {"output_step", "tol_t", "tol_sigma", "max_scan_step"}),
    "output": (set(), {"directory"}),
}
# sections that determine the certificate
_DESIGN_SECTIONS = ("plant", "graph", "threshold", "design")


@dataclass(frozen=True)
class Scenario:
    dynamics: AgentDynamics
    graph: AccessibilityGraph
    threshold: ThresholdParams
    varrho: float
    eta0: float
    x0: np.ndarray
    horizon: float
    output_step: float = 1e-3
    tol_t: float = 1e-7
    tol_sigma: float = 1e-9
    max_scan_step: float = 1e-3
    contraction_override: Optional[tuple[float, float]] = None
    epsilon_target: Optional[float] = None
    output_dir: str = "out"
    raw: dict = field(default_factory=dict, compare=False)

    def design_hash(self) -> str:
        return scenario_hash(self.raw)


def scenario_hash(raw: dict) -> str:
    body = {k: raw[k] for k in _DESIGN_SECTIONS if k in raw}
    text = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _check_keys(raw: dict) -> None:
    unknown = set(raw) - set(_SCHEMA)
    if unknown:
        raise ScenarioError(f"unknown section(s): {sorted(unknown)}")
    for name, (required, optional) in _SCHEMA.items():
        sec = raw.get(name)
        if sec is None:
            if required:
                raise ScenarioError(f"missing section [{name}]")
            continue
        if not isinstance(sec, dict):
            raise ScenarioError(f"[{name}] must be a table")
        missing = required - set(sec)
        if missing:
            raise ScenarioError(f"[{name}] missing key(s): {sorted(missing)}")
        extra = set(sec) - required - optional
        if extra:
            raise ScenarioError(f"[{name}] unknown key(s): {sorted(extra)}")


def _matrix(value, name: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{name} is not a numeric matrix") from exc
    if arr.ndim != 2:
        raise ScenarioError(f"{name} must be a 2-D array (list of rows)")
    return arr


def parse_scenario(raw: dict) -> Scenario:
    _check_keys(raw)
    plant, gsec, thr = raw["plant"], raw["graph"], raw["threshold"]
    des, sim = raw["design"], raw["simulation"]
    a, b = _matrix(plant["a"], "plant.a"), _matrix(plant["b"], "plant.b")
    if a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
        raise ScenarioError(f"plant dimensions inconsistent: A{a.shape} B{b.shape}")
    try:
        graph = build_graph(int(gsec["n_agents"]), [tuple(e) for e in gsec["edges"]])
    except (GraphError, TypeError, ValueError) as exc:
        raise ScenarioError(f"graph: {exc}") from exc
    x0 = np.array(sim["x0"], dtype=float)
    if x0.size != graph.n_agents * a.shape[0]:
        raise ScenarioError(
            f"x0 has {x0.size} entries, expected N*n = {graph.n_agents * a.shape[0]}"
        )
    try:
        threshold = ThresholdParams(float(thr["s0"]), float(thr["s_inf"]), float(thr["lambda_s"]))
    except DesignError as exc:
        raise ScenarioError(str(exc)) from exc
    override = None
    has_k, has_l = "contraction_kappa" in des, "contraction_lambda" in des
    if has_k != has_l:
        raise ScenarioError("contraction_kappa and contraction_lambda must be given together")
    if has_k:
        override = (float(des["contraction_kappa"]), float(des["contraction_lambda"]))
    return Scenario(
        dynamics=AgentDynamics(a, b),
        graph=graph,
        threshold=threshold,
        varrho=float(des["varrho"]),
        eta0=float(des["eta0"]),
        x0=x0.reshape(graph.n_agents, a.shape[0]),
        horizon=float(sim["horizon"]),
        output_step=float(sim.get("output_step", 1e-3)),
        tol_t=float(sim.get("tol_t", 1e-7)),
        tol_sigma=float(sim.get("tol_sigma", 1e-9)),
        max_scan_step=float(sim.get("max_scan_step", 1e-3)),
        contraction_override=override,
        epsilon_target=(float(des["epsilon_target"]) if "epsilon_target" in des else None),
        output_dir=str(raw.get("output", {}).get("directory", "out")),
        raw=raw,
    )


def load_scenario(path) -> Scenario:
    try:
        with Path(path).open("rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return parse_scenario(raw)


def bundled_scenario_path(name: str = "oscillator4.toml") -> Path:
    return Path(str(resources.files("cloudsync") / "scenarios" / name))
