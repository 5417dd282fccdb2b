"""Offline parameter design: gain, exponential-bound certificates and every
constant the self-triggered controllers need at run time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .graph import AccessibilityGraph, GraphError, Spectrum, has_spanning_tree, spectral
from .numerics import ExpSum, eval_expsum

log = logging.getLogger(__name__)

INF = math.inf


class DesignError(RuntimeError):
    """A synthesis step failed; ``step`` names it for the CLI report."""

    def __init__(self, step: str, message: str):
        super().__init__(f"[{step}] {message}")
        self.step = step


@dataclass(frozen=True)
class AgentDynamics:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.asarray(self.b, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        if a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
            raise ValueError(f"incompatible plant shapes A{a.shape} B{b.shape}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    def is_stabilizable(self, tol: float = 1e-9) -> bool:
        # PBH test on the closed right half plane
        for lam in np.linalg.eigvals(self.a):
            if lam.real < -tol:
                continue
            pencil = np.hstack([lam * np.eye(self.n) - self.a, self.b.astype(complex)])
            if np.linalg.matrix_rank(pencil, tol=1e-8 * max(1.0, np.linalg.norm(pencil))) < self.n:
                return False
        return True


@dataclass(frozen=True)
class GainDesign:
    f: np.ndarray
    p: np.ndarray
    rho: float


@dataclass(frozen=True)
class ExpBoundCert:
    """``||exp(M t)|| <= kappa * exp(rate * t)`` for ``t >= 0``."""

    kappa: float
    rate: float
    target: str
    grid_margin: float = 0.0


@dataclass(frozen=True)
class ThresholdParams:
    s0: float
    s_inf: float
    lambda_s: float

    def __post_init__(self):
        if not (self.s0 >= self.s_inf > 0 and self.lambda_s > 0):
            raise DesignError(
                "threshold", f"need s0 >= s_inf > 0 and lambda_s > 0, got {self}"
            )

    def envelope(self) -> ExpSum:
        return ExpSum.of([(self.s_inf, 0.0), (self.s0 - self.s_inf, self.lambda_s)])

    def __call__(self, t):
        return eval_expsum(self.envelope(), t)


@dataclass(frozen=True)
class DesignCertificate:
    gain: GainDesign
    plant_bound: ExpBoundCert
    contraction: ExpBoundCert
    b_prime_norm: float
    beta: tuple[float, ...]
    gamma: tuple[float, ...]
    tau_star: tuple[float, ...]
    epsilon: float
    threshold: ThresholdParams
    eta0: float
    eta_bar: float
    n_agents: int
    synthesized_contraction: Optional[ExpBoundCert] = None
    notes: tuple[str, ...] = field(default=())

    @property
    def kappa(self) -> float:
        return self.contraction.kappa

    @property
    def lam(self) -> float:
        return -self.contraction.rate

    def eta(self) -> ExpSum:
        return eta_envelope(
            self.kappa, self.lam, self.eta0, self.n_agents, self.b_prime_norm, self.threshold
        )

    def mu(self, j: int) -> ExpSum:
        """Input-norm envelope ``beta_j * eta + s`` of agent ``j`` (1-based)."""
        return self.eta().scaled(self.beta[j - 1]) + self.threshold.envelope()


# --------------------------------------------------------------------------
# gain


def solve_riccati(dyn: AgentDynamics, varrho: float):
    """Stabilizing solution of ``A'P + PA - P B B' P / varrho + I = 0``."""
    if varrho <= 0:
        raise DesignError("riccati", f"varrho must be positive, got {varrho}")
    if not dyn.is_stabilizable():
        raise DesignError("riccati", "(A, B) is not stabilizable")
    a, b, n = dyn.a, dyn.b, dyn.n
    try:
        p = sla.solve_continuous_are(a, b, np.eye(n), varrho * np.eye(dyn.m))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise DesignError("riccati", f"no stabilizing solution: {exc}") from exc
    p = 0.5 * (p + p.T)
    ric = a.T @ p + p @ a - p @ b @ b.T @ p / varrho
    residual = float(np.linalg.norm(ric + np.eye(n), "fro"))
    if residual > 1e-8 * max(1.0, np.linalg.norm(p, "fro")):
        raise DesignError("riccati", f"equation residual too large: {residual:.3e}")
    if np.linalg.eigvalsh(p).min() <= 0:
        raise DesignError("riccati", "solution is not positive definite")
    if np.linalg.eigvalsh(0.5 * (ric + ric.T)).max() >= -1e-10:
        raise DesignError("riccati", "strict Riccati inequality not satisfied")
    return p, residual


def verify_hurwitz(dyn: AgentDynamics, f, spectrum: Spectrum) -> list[float]:
    """Spectral abscissa of ``A - lambda_i B F`` for each nonzero Laplacian mode."""
    bf = dyn.b @ np.asarray(f, dtype=float)
    return [
        float(np.max(np.linalg.eigvals(dyn.a - lam * bf).real))
        for lam in spectrum.eigenvalues[1:]
    ]


def design_gain(dyn: AgentDynamics, p, spectrum: Spectrum, varrho: float) -> GainDesign:
    nonzero = spectrum.eigenvalues[1:]
    if len(nonzero):
        bound = 1.0 / (2.0 * np.min(nonzero.real))
        if varrho < bound * (1 - 1e-12):
            raise DesignError(
                "gain", f"varrho={varrho} violates varrho >= 1/(2 Re lambda_2) = {bound:.6g}"
            )
    f = dyn.b.T @ p
    worst = verify_hurwitz(dyn, f, spectrum)
    if worst and max(worst) >= 0:
        raise DesignError("gain", f"A - lambda_i B F not Hurwitz (max real part {max(worst):.3e})")
    return GainDesign(f=f, p=np.asarray(p), rho=float(varrho))


def build_acheck(dyn: AgentDynamics, f, spectrum: Spectrum) -> np.ndarray:
    k = spectrum.n_agents - 1
    return np.kron(np.eye(k), dyn.a) - np.kron(spectrum.l_check, dyn.b @ np.asarray(f, dtype=float))


# --------------------------------------------------------------------------
# matrix-exponential bounds


def _lyapunov_feasible(m: np.ndarray, rate: float) -> bool:
    """Is there P > 0 with M'P + PM - 2 rate P < 0?  (Lyapunov witness)"""
    shifted = m - rate * np.eye(m.shape[0])
    if np.max(np.linalg.eigvals(shifted).real) >= 0:
        return False
    try:
        p = sla.solve_continuous_lyapunov(shifted.conj().T, -np.eye(m.shape[0]))
    except (np.linalg.LinAlgError, ValueError):
        return False
    p = 0.5 * (p + p.conj().T)
    return bool(np.all(np.isfinite(p)) and np.linalg.eigvalsh(p).min() > 0)


def _abscissa_is_semisimple(m: np.ndarray, tol: float = 1e-7) -> bool:
    eig = np.linalg.eigvals(m)
    alpha = eig.real.max()
    n = m.shape[0]
    checked: list[complex] = []
    for lam in eig[eig.real > alpha - tol]:
        if any(abs(lam - c) < tol for c in checked):
            continue
        checked.append(lam)
        alg = int(np.sum(np.abs(eig - lam) < tol))
        geo = n - np.linalg.matrix_rank(m - lam * np.eye(n), tol=1e-6 * max(1.0, np.linalg.norm(m)))
        if geo < alg:
            return False
    return True


def optimal_rate(m, margin: float = 1e-6, tol: float = 1e-11) -> float:
    """Infimum of feasible rates, found by bisection on the Lyapunov test.

    A margin is added when the dominant eigenvalues are defective, where the
    infimum is not attained.
    """
    m = np.asarray(m)
    alpha = float(np.max(np.linalg.eigvals(m).real))
    lo, hi = alpha - 1.0, alpha + 1.0
    if _lyapunov_feasible(m, lo) or not _lyapunov_feasible(m, hi):
        raise DesignError("exp_bound", "rate bisection could not be bracketed")
    while hi - lo > tol * max(1.0, abs(alpha)):
        mid = 0.5 * (lo + hi)
        if _lyapunov_feasible(m, mid):
            hi = mid
        else:
            lo = mid
    rate = alpha if abs(hi - alpha) < 1e-8 else hi
    if not _abscissa_is_semisimple(m):
        rate += margin
    return rate


def min_conditioning(m, rate: float) -> float:
    """``rho(rate)``: least ``rho`` with ``I <= P <= rho I`` and
    ``M^H P + P M <= 2 rate P`` (a small semidefinite program)."""
    import cvxpy as cp

    m = np.asarray(m)
    n = m.shape[0]
    cplx = np.iscomplexobj(m) and np.any(np.abs(m.imag) > 0)
    p = cp.Variable((n, n), hermitian=True) if cplx else cp.Variable((n, n), symmetric=True)
    rho = cp.Variable()
    lmi = m.conj().T @ p + p @ m - 2 * rate * p
    lmi = 0.5 * (lmi + lmi.H) if cplx else 0.5 * (lmi + lmi.T)
    problem = cp.Problem(cp.Minimize(rho), [p >> np.eye(n), p << rho * np.eye(n), lmi << 0])
    try:
        problem.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        problem.solve(solver=cp.SCS, eps=1e-7, max_iters=20000)
    if problem.status not in ("optimal", "optimal_inaccurate") or rho.value is None:
        raise DesignError("exp_bound", f"conditioning program failed: {problem.status}")
    return max(1.0, float(rho.value))


def _lyapunov_conditioning(m, rate: float) -> float:
    """Fallback witness: P solving (M - rate I)^H P + P (M - rate I) = -I."""
    shifted = np.asarray(m) - rate * np.eye(m.shape[0])
    p = sla.solve_continuous_lyapunov(shifted.conj().T, -np.eye(m.shape[0]))
    w = np.linalg.eigvalsh(0.5 * (p + p.conj().T))
    return float(w[-1] / w[0])


def sampled_growth(m, rate: float, t_val: float, grid: float) -> tuple[np.ndarray, np.ndarray]:
    """``||exp(M t)|| exp(-rate t)`` on ``t = 0, grid, ..., t_val``."""
    m = np.asarray(m)
    ts = np.arange(0.0, t_val + 0.5 * grid, grid)
    mats = sla.expm(ts[:, None, None] * m)
    norms = np.linalg.norm(mats, ord=2, axis=(1, 2))
    return ts, norms * np.exp(-rate * ts)


def validate_exp_bound(m, cert: ExpBoundCert, t_val: float = 20.0, grid: float = 5e-3) -> float:
    """Smallest relative slack of the certificate on the grid; raises when
    the bound is violated by more than 1e-9."""
    if np.asarray(m).size == 0:
        return 1.0
    _, growth = sampled_growth(m, cert.rate, t_val, grid)
    margin = float(np.min(cert.kappa - growth) / cert.kappa)
    if margin < -1e-9:
        raise DesignError(
            "exp_bound", f"certificate for {cert.target} violated on grid (margin {margin:.3e})"
        )
    return margin


def exp_bound(m, target: str = "M", t_val: float = 20.0, grid: float = 5e-3,
              margin: float = 1e-6) -> ExpBoundCert:
    m = np.asarray(m)
    if m.size == 0:
        return ExpBoundCert(kappa=1.0, rate=-1.0, target=target, grid_margin=1.0)
    if not np.all(np.isfinite(m)):
        raise DesignError("exp_bound", "matrix has non-finite entries")
    rate = optimal_rate(m, margin=margin)
    try:
        rho = min_conditioning(m, rate)
    except DesignError:
        log.warning("conditioning program failed for %s; using Lyapunov witness", target)
        if np.max(np.linalg.eigvals(m).real) > rate - 0.5 * margin:
            # the witness needs a strictly shifted matrix
            rate += margin
        rho = _lyapunov_conditioning(m, rate)
    kappa = math.sqrt(rho)
    # absorb the solver's optimality tolerance into the sampled supremum
    _, growth = sampled_growth(m, rate, t_val, grid)
    kappa = max(kappa, float(growth.max()))
    cert = ExpBoundCert(kappa=kappa, rate=rate, target=target)
    slack = validate_exp_bound(m, cert, t_val, grid)
    return ExpBoundCert(kappa=kappa, rate=rate, target=target, grid_margin=slack)


def contraction_bound(acheck, t_val: float = 20.0, grid: float = 5e-3) -> ExpBoundCert:
    acheck = np.asarray(acheck)
    if acheck.size and np.max(np.linalg.eigvals(acheck).real) >= 0:
        raise DesignError("contraction", "reduced closed-loop matrix is not Hurwitz")
    cert = exp_bound(acheck, target="Acheck", t_val=t_val, grid=grid)
    if cert.rate >= 0:
        raise DesignError("contraction", f"certified rate {cert.rate} is not negative")
    return cert


def accept_designer_bound(m, kappa: float, rate: float, reference: ExpBoundCert,
                          target: str, t_val: float = 20.0, grid: float = 5e-3) -> ExpBoundCert:
    """Adopt a user-chosen ``(kappa, rate)`` pair after certifying it.

    The pair must dominate the synthesized certificate for every ``t >= 0``
    (``kappa >= kappa_ref`` and ``rate >= rate_ref``) and hold on the grid.
    """
    if kappa < reference.kappa * (1 - 1e-12) or rate < reference.rate - 1e-12:
        raise DesignError(
            "exp_bound",
            f"designer pair (kappa={kappa}, rate={rate}) for {target} is not implied by the "
            f"certified pair (kappa={reference.kappa:.6g}, rate={reference.rate:.6g})",
        )
    cert = ExpBoundCert(kappa=float(kappa), rate=float(rate), target=target)
    slack = validate_exp_bound(m, cert, t_val, grid)
    return ExpBoundCert(kappa=float(kappa), rate=float(rate), target=target, grid_margin=slack)


# --------------------------------------------------------------------------
# constants


def compute_bprime_norm(spectrum: Spectrum, dyn: AgentDynamics) -> float:
    n = spectrum.n_agents
    proj = np.eye(n) - np.outer(np.ones(n), spectrum.phi)
    return float(np.linalg.norm(proj, 2) * np.linalg.norm(dyn.b, 2))


def beta_norms(spectrum: Spectrum, f) -> list[float]:
    f = np.asarray(f, dtype=float)
    m = f.shape[0]
    lf = np.kron(spectrum.laplacian, f)
    return [float(np.linalg.norm(lf[i * m:(i + 1) * m], 2)) for i in range(spectrum.n_agents)]


def eta_envelope(kappa: float, lam: float, eta0: float, n_agents: int,
                 b_prime_norm: float, threshold: ThresholdParams) -> ExpSum:
    """Closed form of the synchronization-error envelope anchored at t = 0."""
    gain = kappa * math.sqrt(n_agents) * b_prime_norm
    s0, s_inf, ls = threshold.s0, threshold.s_inf, threshold.lambda_s
    terms = [(kappa * eta0, lam)]
    if gain != 0.0:
        terms += [(gain * s_inf / lam, 0.0), (-gain * s_inf / lam, lam)]
        if s0 != s_inf:
            if abs(lam - ls) < 1e-9:
                raise DesignError(
                    "eta",
                    f"lambda={lam} coincides with lambda_s={ls}; the closed-form error "
                    "envelope divides by (lambda - lambda_s), perturb lambda_s",
                )
            c = gain * (s0 - s_inf) / (lam - ls)
            terms += [(c, ls), (-c, lam)]
    return ExpSum.of(terms)


def eta_upper_bound(eta: ExpSum, lam: float, lambda_s: float, safety: float = 1.001) -> float:
    slow = min(lam, lambda_s)
    step = 1e-3 / slow
    ts = np.arange(0.0, 60.0 / slow, step)
    limit = sum(c for c, r in eta.terms if r == 0.0)
    peak = max(float(np.max(eval_expsum(eta, ts))), float(eval_expsum(eta, 0.0)), limit)
    return safety * peak


def gamma_constants(dyn: AgentDynamics, gain: GainDesign, plant_bound: ExpBoundCert,
                    beta, graph: AccessibilityGraph, eta_bar: float, s0: float) -> list[float]:
    nb = np.linalg.norm(dyn.b, 2)
    nf = np.linalg.norm(gain.f, 2)
    na = np.linalg.norm(dyn.a, 2)
    kt = plant_bound.kappa
    out = []
    for i in range(1, graph.n_agents + 1):
        bi = beta[i - 1]
        total = sum((bi + 2 * beta[j - 1]) * eta_bar + 3 * s0 for j in graph.neighbors(i))
        out.append(float(nb * nf * kt * total + kt * bi * eta_bar * na))
    return out


def tau_star(gamma_i: float, theta: float, s_inf: float) -> float:
    """Lower bound on the inter-access time; ``inf`` when none is needed."""
    if gamma_i < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma_i}")
    if gamma_i == 0:
        return INF
    if abs(theta) < 1e-12:
        return s_inf / gamma_i
    x = theta * s_inf / gamma_i
    if 1 + x <= 0:
        return INF
    return math.log1p(x) / theta


def tolerance_epsilon(kappa: float, n_agents: int, b_prime_norm: float, s_inf: float,
                      lam: float) -> float:
    if lam <= 0:
        raise DesignError("epsilon", f"contraction rate must be positive, got {lam}")
    return kappa * math.sqrt(n_agents) * b_prime_norm * s_inf / lam


def design_pipeline(dyn: AgentDynamics, graph: AccessibilityGraph, threshold: ThresholdParams,
                    eta0: float, varrho: float, *, contraction_override=None,
                    epsilon_target: Optional[float] = None, t_val: float = 20.0,
                    grid: float = 5e-3) -> DesignCertificate:
    """Run the whole offline design and return a checked certificate.

    ``contraction_override`` is an optional designer-chosen ``(kappa, lambda)``
    pair; it is adopted only if the synthesized certificate implies it.
    """
    if eta0 <= 0:
        raise DesignError("eta0", f"eta0 must be positive, got {eta0}")
    if not has_spanning_tree(graph):
        raise DesignError("graph", "accessibility graph has no directed spanning tree (connectivity assumption)")
    try:
        spec = spectral(graph)
    except GraphError as exc:
        raise DesignError("graph", str(exc)) from exc
    if not dyn.is_stabilizable():
        raise DesignError("riccati", "(A, B) is not stabilizable")

    bprime = compute_bprime_norm(spec, dyn)
    p, _ = solve_riccati(dyn, varrho)
    gain = design_gain(dyn, p, spec, varrho)
    beta = beta_norms(spec, gain.f)
    plant = exp_bound(dyn.a, target="A", t_val=t_val, grid=grid)

    acheck = build_acheck(dyn, gain.f, spec)
    synthesized = contraction_bound(acheck, t_val=t_val, grid=grid)
    contraction = synthesized
    notes = []
    if contraction_override is not None:
        kappa, lam = contraction_override
        contraction = accept_designer_bound(
            acheck, kappa, -lam, synthesized, "Acheck", t_val=t_val, grid=grid
        )
        notes.append(
            f"designer contraction pair (kappa={kappa}, lambda={lam}) adopted; synthesized "
            f"pair is (kappa={synthesized.kappa:.6g}, lambda={-synthesized.rate:.6g})"
        )
    lam = -contraction.rate

    epsilon = tolerance_epsilon(contraction.kappa, graph.n_agents, bprime, threshold.s_inf, lam)
    if epsilon_target is not None and epsilon > epsilon_target * (1 + 1e-12):
        cap = lam * epsilon_target / (contraction.kappa * math.sqrt(graph.n_agents) * bprime)
        raise DesignError(
            "threshold", f"s_inf={threshold.s_inf} too large for epsilon={epsilon_target}; need s_inf <= {cap:.6g}"
        )
    eta = eta_envelope(contraction.kappa, lam, eta0, graph.n_agents, bprime, threshold)
    eta_bar = eta_upper_bound(eta, lam, threshold.lambda_s)
    gamma = gamma_constants(dyn, gain, plant, beta, graph, eta_bar, threshold.s0)
    taus = [tau_star(g, plant.rate, threshold.s_inf) for g in gamma]
    if any(not (t > 0) for t in taus):
        raise DesignError("tau_star", f"non-positive access-interval bound {taus}")

    return DesignCertificate(
        gain=gain,
        plant_bound=plant,
        contraction=contraction,
        b_prime_norm=bprime,
        beta=tuple(beta),
        gamma=tuple(gamma),
        tau_star=tuple(taus),
        epsilon=epsilon,
        threshold=threshold,
        eta0=float(eta0),
        eta_bar=eta_bar,
        n_agents=graph.n_agents,
        synthesized_contraction=synthesized,
        notes=tuple(notes),
    )


# --------------------------------------------------------------------------
# serialization


def _encode(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return x


def _decode(x):
    return INF if x == "inf" else x


def _cert_dict(c: ExpBoundCert) -> dict:
    return {"kappa": c.kappa, "rate": c.rate, "target": c.target, "grid_margin": c.grid_margin}


def certificate_to_dict(cert: DesignCertificate) -> dict:
    return {
        "n_agents": cert.n_agents,
        "gain": {"f": cert.gain.f.tolist(), "p": cert.gain.p.tolist(), "rho": cert.gain.rho},
        "plant_bound": _cert_dict(cert.plant_bound),
        "contraction": _cert_dict(cert.contraction),
        "synthesized_contraction": (
            _cert_dict(cert.synthesized_contraction) if cert.synthesized_contraction else None
        ),
        "b_prime_norm": cert.b_prime_norm,
        "beta": list(cert.beta),
        "gamma": list(cert.gamma),
        "tau_star": [_encode(t) for t in cert.tau_star],
        "epsilon": cert.epsilon,
        "threshold": {
            "s0": cert.threshold.s0,
            "s_inf": cert.threshold.s_inf,
            "lambda_s": cert.threshold.lambda_s,
        },
        "eta0": cert.eta0,
        "eta_bar": cert.eta_bar,
        "notes": list(cert.notes),
    }


def certificate_from_dict(d: dict) -> DesignCertificate:
    sc = d.get("synthesized_contraction")
    return DesignCertificate(
        gain=GainDesign(f=np.array(d["gain"]["f"], dtype=float),
                        p=np.array(d["gain"]["p"], dtype=float), rho=d["gain"]["rho"]),
        plant_bound=ExpBoundCert(**d["plant_bound"]),
        contraction=ExpBoundCert(**d["contraction"]),
        synthesized_contraction=ExpBoundCert(**sc) if sc else None,
        b_prime_norm=d["b_prime_norm"],
        beta=tuple(d["beta"]),
        gamma=tuple(d["gamma"]),
        tau_star=tuple(_decode(t) for t in d["tau_star"]),
        epsilon=d["epsilon"],
        threshold=ThresholdParams(**d["threshold"]),
        eta0=d["eta0"],
        eta_bar=d["eta_bar"],
        n_agents=d["n_agents"],
        notes=tuple(d.get("notes", ())),
    )
