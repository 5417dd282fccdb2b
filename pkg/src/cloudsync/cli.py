"""Command-line front end: ``design``, ``simulate`` and ``report``.

Exit codes: 0 ok, 2 synthesis failure, 3 monitor violation, 4 I/O or parse error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .engine import MonitorViolation, SimConfig, SimulationError, Simulator, write_outputs
from .scenario import Scenario, ScenarioError, load_scenario
from .synthesis import DesignCertificate, DesignError, certificate_from_dict, certificate_to_dict, design_pipeline

log = logging.getLogger("cloudsync")

EXIT_OK, EXIT_DESIGN, EXIT_MONITOR, EXIT_IO = 0, 2, 3, 4
RASTER_WINDOW = (5.0, 8.0)


class CertificateError(ValueError):
    pass


# --------------------------------------------------------------------------
# certificate file


def _checksum(body: dict, scenario_hash: str) -> str:
    text = json.dumps({"body": body, "scenario_hash": scenario_hash}, sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def write_certificate(cert: DesignCertificate, scenario: Scenario, path) -> None:
    body = certificate_to_dict(cert)
    h = scenario.design_hash()
    doc = {"format": "cloudsync-certificate/1", "scenario_hash": h,
           "checksum": _checksum(body, h), "body": body}
    # json writes floats with repr, i.e. round-trip precision
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_certificate(path, scenario: Scenario | None = None) -> DesignCertificate:
    try:
        doc = json.loads(Path(path).read_text())
        body, h = doc["body"], doc["scenario_hash"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CertificateError(f"cannot read certificate {path}: {exc}") from exc
    if doc.get("checksum") != _checksum(body, h):
        raise CertificateError(f"certificate {path} is corrupted (checksum mismatch)")
    if scenario is not None and h != scenario.design_hash():
        raise CertificateError(
            f"certificate {path} was designed for a different scenario (hash mismatch)"
        )
    try:
        return certificate_from_dict(body)
    except (KeyError, TypeError, ValueError, DesignError) as exc:
        raise CertificateError(f"certificate {path} is malformed: {exc}") from exc


def _fmt_matrix(m) -> str:
    return "[" + "; ".join(" ".join(f"{v:.6g}" for v in row) for row in np.atleast_2d(m)) + "]"


def design_report(cert: DesignCertificate, scenario: Scenario) -> str:
    lines = [
        "Parameter design",
        "================",
        f"agents N        : {cert.n_agents}",
        f"edges (j -> i)  : {scenario.graph.sorted_edges()}",
        f"varrho          : {cert.gain.rho:.6g}",
        f"P               : {_fmt_matrix(cert.gain.p)}",
        f"F               : {_fmt_matrix(cert.gain.f)}",
        f"kappa_theta     : {cert.plant_bound.kappa:.6g}",
        f"theta           : {cert.plant_bound.rate:.6g}",
        f"kappa           : {cert.kappa:.6g}",
        f"lambda          : {cert.lam:.6g}",
    ]
    if cert.synthesized_contraction is not None:
        sc = cert.synthesized_contraction
        lines.append(f"synthesized     : kappa={sc.kappa:.6g} lambda={-sc.rate:.6g}")
    lines += [
        f"||B'||          : {cert.b_prime_norm:.6g}",
        f"eta0            : {cert.eta0:.6g}",
        f"eta_bar         : {cert.eta_bar:.6g}",
        f"epsilon         : {cert.epsilon:.6g}",
        "",
        "agent  beta        gamma       tau*",
    ]
    for i in range(cert.n_agents):
        lines.append(f"{i + 1:<6} {cert.beta[i]:<11.6g} {cert.gamma[i]:<11.6g} {cert.tau_star[i]:.6g}")
    for note in cert.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


def summary_table(summary) -> str:
    rows = ["agent  accesses  min_interval  avg_interval  tau*"]
    for i, c in enumerate(summary.access_count):
        rows.append(f"{i + 1:<6} {c:<9d} {summary.min_interval[i]:<13.6g} "
                    f"{summary.avg_interval[i]:<13.6g} {summary.tau_star[i]:.6g}")
    rows.append(f"final ||delta|| = {summary.final_error:.6g}  epsilon = {summary.epsilon:.6g}  "
                f"settle = {summary.settle_time:.6g} s")
    return "\n".join(rows) + "\n"


# --------------------------------------------------------------------------
# commands


def _design(scenario: Scenario, grid_step: float | None) -> DesignCertificate:
    kw = {"grid": grid_step} if grid_step else {}
    return design_pipeline(
        scenario.dynamics, scenario.graph, scenario.threshold, scenario.eta0, scenario.varrho,
        contraction_override=scenario.contraction_override,
        epsilon_target=scenario.epsilon_target, **kw,
    )


def cmd_design(args) -> int:
    scenario = load_scenario(args.scenario)
    out = Path(args.out_dir or scenario.output_dir)
    cert = _design(scenario, args.grid_step)
    out.mkdir(parents=True, exist_ok=True)
    cert_path = Path(args.certificate) if args.certificate else out / "certificate.json"
    write_certificate(cert, scenario, cert_path)
    report = design_report(cert, scenario)
    (out / "design_report.txt").write_text(report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    out = Path(args.out_dir or scenario.output_dir)
    if args.certificate:
        cert = read_certificate(args.certificate, scenario)
    else:
        cert = _design(scenario, args.grid_step)
    horizon = args.horizon_override if args.horizon_override is not None else scenario.horizon
    cfg = SimConfig(
        dynamics=scenario.dynamics, graph=scenario.graph, certificate=cert, x0=scenario.x0,
        horizon=horizon, output_step=scenario.output_step, tol_t=scenario.tol_t,
        tol_sigma=scenario.tol_sigma, max_scan_step=scenario.max_scan_step,
        strict_monitors=args.strict_monitors,
    )
    sim = Simulator(cfg)
    try:
        sim.initialize()
        traj, summary = sim.run()
    except MonitorViolation as exc:
        log.error("monitor violation (strict mode): %s", exc)
        return EXIT_MONITOR
    write_outputs(traj, summary, out)
    sys.stdout.write(summary_table(summary))
    sys.stdout.write(f"bootstrap: {summary.bootstrap}\n")
    if sim.violations:
        for v in sim.violations:
            log.error("monitor violation: %s", v)
        return EXIT_MONITOR
    return EXIT_OK


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], rows[1:]


def access_raster(events_path, window=RASTER_WINDOW) -> list[tuple[float, int]]:
    header, rows = _read_csv(events_path)
    try:
        ti, ai = header.index("time_s"), header.index("agent")
    except ValueError as exc:
        raise ValueError(f"{events_path}: missing column ({exc})") from exc
    lo, hi = window
    out = []
    for r in rows:
        t = float(r[ti])
        if lo <= t <= hi:
            out.append((t, int(r[ai])))
    return out


def crossing_time(t: np.ndarray, delta_norm: np.ndarray, epsilon: float) -> float:
    """First grid time after which ``||delta||`` stays within ``epsilon``."""
    above = np.flatnonzero(delta_norm > epsilon)
    if above.size == 0:
        return float(t[0])
    if above[-1] == len(t) - 1:
        return math.inf
    return float(t[above[-1] + 1])


def cmd_report(args) -> int:
    src = Path(args.out_dir)
    dst = Path(args.report_dir) if args.report_dir else src
    summary = json.loads((src / "summary.json").read_text())
    header, rows = _read_csv(src / "trajectory.csv")
    try:
        cols = {name: header.index(name) for name in ("t_s", "delta_norm")}
    except ValueError as exc:
        raise ValueError(f"trajectory.csv: missing column ({exc})") from exc
    t = np.array([float(r[cols["t_s"]]) for r in rows])
    dn = np.array([float(r[cols["delta_norm"]]) for r in rows])
    eps = float(summary["epsilon"])
    raster = access_raster(src / "events.csv")

    dst.mkdir(parents=True, exist_ok=True)
    with (dst / "access_raster.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "agent"])
        for tt, a in raster:
            w.writerow([repr(tt), a])
    with (dst / "delta_vs_epsilon.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "delta_norm", "epsilon"])
        for tt, d in zip(t, dn):
            w.writerow([repr(float(tt)), repr(float(d)), repr(eps)])
    state_cols = [k for k, name in enumerate(header) if name.startswith("x_")]
    with (dst / "states.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s"] + [header[k] for k in state_cols])
        for r in rows:
            w.writerow([r[cols["t_s"]]] + [r[k] for k in state_cols])
    cross = crossing_time(t, dn, eps) if t.size else math.inf
    agg = {
        "epsilon": eps,
        "crossing_time": "inf" if math.isinf(cross) else cross,
        "settle_time": summary.get("settle_time"),
        "raster_window": list(RASTER_WINDOW),
        "raster_accesses": len(raster),
    }
    (dst / "report.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(json.dumps(agg, sort_keys=True) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cloudsync", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="synthesize a certificate from a scenario")
    d.add_argument("--scenario", required=True)
    d.add_argument("--certificate", help="output certificate path (default OUT/certificate.json)")
    d.add_argument("--out-dir")
    d.add_argument("--grid-step", type=float, help="validation grid step for exponential bounds")
    d.set_defaults(func=cmd_design)

    s = sub.add_parser("simulate", help="run the closed loop")
    s.add_argument("--scenario", required=True)
    s.add_argument("--certificate", help="certificate from 'design' (designed on the fly if omitted)")
    s.add_argument("--out-dir")
    s.add_argument("--horizon-override", type=float)
    s.add_argument("--grid-step", type=float, help="validation grid step when designing on the fly")
    s.add_argument("--strict-monitors", action="store_true",
                   help="abort at the first monitor violation instead of recording it")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="aggregate simulation outputs for plotting")
    r.add_argument("--out-dir", required=True, help="directory holding simulate outputs")
    r.add_argument("--report-dir", help="where to write aggregates (default: --out-dir)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DesignError as exc:
        log.error("design failed at step '%s': %s", exc.step, exc)
        return EXIT_DESIGN
    except MonitorViolation as exc:
        log.error("monitor violation: %s", exc)
        return EXIT_MONITOR
    except (OSError, ValueError, ScenarioError, CertificateError, SimulationError) as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
