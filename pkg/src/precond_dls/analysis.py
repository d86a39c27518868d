"""Spectral quantities, closed-form rates and error-bound sequences.

Notation: ``lam`` and ``gam`` are the largest and smallest eigenvalues of
``A^T A``; ``K* = (A^T A + beta I)^{-1}`` is the pre-conditioner the
iteration converges to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .federated import AgentReply, agent_residuals, server_update_K
from .ingest import AgentShard
from .linalg import (
    Array,
    cholesky,
    identity,
    norm,
    solve_lower,
    solve_spd,
    sym_eig,
)

RANK_RTOL = 1e-12


class AssumptionViolation(ValueError):
    """``A^T A`` is (numerically) rank deficient."""


@dataclass(frozen=True)
class SpectralInfo:
    lam: float
    gam: float

    @property
    def kappa(self) -> float:
        return self.lam / self.gam


def spectral_extremes(AtA: Array) -> SpectralInfo:
    values = sym_eig(AtA).values
    lam, gam = float(values[-1]), float(values[0])
    if not lam > 0 or gam <= RANK_RTOL * lam:
        raise AssumptionViolation(
            f"A^TA rank deficient: smallest eigenvalue {gam:.3e}, largest {lam:.3e}"
        )
    return SpectralInfo(lam=lam, gam=gam)


# --------------------------------------------------------------------------
# closed-form rates
# --------------------------------------------------------------------------


def rho_gd(lam: float, gam: float) -> float:
    kappa = lam / gam
    return (kappa - 1.0) / (kappa + 1.0)


def rho_star_k(lam: float, gam: float, beta: float) -> float:
    return (lam - gam) / (lam + gam + 2.0 * beta)


def rho_star_beta(lam: float, gam: float, beta: float) -> float:
    return (lam - gam) * beta / ((lam + gam) * beta + 2.0 * lam * gam)


def optimal_alpha(s: SpectralInfo, beta: float) -> float:
    """Best constant step for the K-iteration, whose Hessian is A^T A + beta I."""
    return 2.0 / (s.lam + s.gam + 2.0 * beta)


def optimal_delta(s: SpectralInfo, beta: float) -> float:
    """Best constant step for x when pre-conditioned by K*: spectrum of K* A^T A."""
    return 2.0 / (s.lam / (s.lam + beta) + s.gam / (s.gam + beta))


def dgd_optimal_delta(s: SpectralInfo) -> float:
    return 2.0 / (s.lam + s.gam)


@dataclass(frozen=True)
class RateReport:
    lam: float
    gam: float
    kappa: float
    rho_gd: float
    rho_star_k: float
    rho_star_beta: float
    sigma0: float
    beta: float
    delta: float

    def to_json(self, t_sw: Optional[int] = None) -> dict:
        return {
            "lambda": self.lam,
            "gamma": self.gam,
            "kappa": self.kappa,
            "rho_gd": self.rho_gd,
            "rho_star_k": self.rho_star_k,
            "rho_star_beta": self.rho_star_beta,
            "sigma0": self.sigma0,
            "beta": self.beta,
            "delta": self.delta,
            "t_sw": t_sw,
        }


def compute_rates(
    s: SpectralInfo, beta: float, delta: float, K_init: Array, K_star: Array
) -> RateReport:
    if not beta > 0 or not delta > 0:
        raise ValueError("beta and delta must be positive")
    return RateReport(
        lam=s.lam,
        gam=s.gam,
        kappa=s.kappa,
        rho_gd=rho_gd(s.lam, s.gam),
        rho_star_k=rho_star_k(s.lam, s.gam, beta),
        rho_star_beta=rho_star_beta(s.lam, s.gam, beta),
        sigma0=delta * s.lam * norm(K_init - K_star),
        beta=beta,
        delta=delta,
    )


def shifted(AtA: Array, beta: float) -> Array:
    return np.asfortranarray(AtA + beta * identity(AtA.shape[0]))


def kstar_oracle(AtA: Array, beta: float) -> Array:
    """``(A^T A + beta I)^{-1}`` by a direct Cholesky solve."""
    return np.asfortranarray(solve_spd(shifted(AtA, beta), identity(AtA.shape[0])))


# --------------------------------------------------------------------------
# spectrum of K* A^T A
# --------------------------------------------------------------------------


def preconditioned_spectrum(AtA: Array, beta: float) -> Array:
    """Eigenvalues of ``K* A^T A`` (ascending).

    The product is not symmetric, but with ``A^T A + beta I = L L^T`` it is
    similar to the symmetric ``L^{-1} A^T A L^{-T}``.
    """
    L = cholesky(shifted(AtA, beta))
    half = solve_lower(L, AtA)  # L^{-1} A^T A
    M = solve_lower(L, np.asfortranarray(half.T))  # L^{-1} A^T A L^{-T}
    return sym_eig(0.5 * (M + M.T)).values


@dataclass
class SpectrumReport:
    eigenvalues: Array
    expected_max: float
    expected_min: float
    max_rel_err: float
    min_rel_err: float
    positive_definite: bool
    passed: bool

    def describe(self) -> str:
        return (
            f"max {self.eigenvalues[-1]:.12g} vs {self.expected_max:.12g} (rel {self.max_rel_err:.2e}), "
            f"min {self.eigenvalues[0]:.12g} vs {self.expected_min:.12g} (rel {self.min_rel_err:.2e}), "
            f"positive definite: {self.positive_definite}"
        )


def verify_preconditioned_spectrum(AtA: Array, beta: float, rtol: float = 1e-8) -> SpectrumReport:
    """Compare the extremes of spec(K* A^T A) with lam/(lam+beta) and gam/(gam+beta)."""
    s = spectral_extremes(AtA)
    ev = preconditioned_spectrum(AtA, beta)
    exp_max = s.lam / (s.lam + beta)
    exp_min = s.gam / (s.gam + beta)
    max_err = abs(ev[-1] - exp_max) / exp_max
    min_err = abs(ev[0] - exp_min) / exp_min
    pd = bool(ev[0] > 0)
    return SpectrumReport(
        eigenvalues=ev,
        expected_max=exp_max,
        expected_min=exp_min,
        max_rel_err=max_err,
        min_rel_err=min_err,
        positive_definite=pd,
        passed=pd and max_err <= rtol and min_err <= rtol,
    )


# --------------------------------------------------------------------------
# bound sequences and crossover
# --------------------------------------------------------------------------

HORIZON_CAP = 1_000_000


@dataclass
class BoundSequences:
    log_E1: Array  # natural logs of the bounds, kept to avoid over/underflow
    log_E2: Array
    t_sw: Optional[int]  # None: no persistent crossover within the horizon

    @property
    def E1(self) -> Array:
        with np.errstate(over="ignore"):
            return np.exp(self.log_E1)

    @property
    def E2(self) -> Array:
        with np.errstate(over="ignore"):
            return np.exp(self.log_E2)

    @property
    def horizon(self) -> int:
        return len(self.log_E1) - 1


def default_horizon(r: RateReport) -> int:
    """Ten times the iterations the DGD bound needs to shrink by 1e-12, capped."""
    if not 0.0 < r.rho_gd < 1.0:
        return 10
    steps = math.ceil(math.log(1e-12) / math.log(r.rho_gd))
    return int(min(10 * steps, HORIZON_CAP))


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def persistent_crossover(below: Array) -> Optional[int]:
    """First index from which ``below`` stays True to the end."""
    if below.size == 0 or not below[-1]:
        return None
    misses = np.flatnonzero(~below)
    return int(misses[-1] + 1) if misses.size else 0


def bound_sequences(r: RateReport, z0_norm: float, horizon: Optional[int] = None) -> BoundSequences:
    """Error bounds for both methods from a shared start.

    ``E2(t) = rho_gd^t * z0`` and ``E1(t+1) = s_t * E1(t)`` with
    ``s_t = rho*_beta + sigma0 * rho*_K^(t+1)``.
    """
    if horizon is None:
        horizon = default_horizon(r)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    t = np.arange(horizon, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        s = r.rho_star_beta + r.sigma0 * np.power(r.rho_star_k, t + 1.0)
        log_s = np.log(s)
    log_z0 = _safe_log(z0_norm)
    log_E1 = np.empty(horizon + 1)
    log_E1[0] = 0.0
    np.cumsum(log_s, out=log_E1[1:])
    log_E2 = np.arange(horizon + 1, dtype=float) * _safe_log(r.rho_gd)
    if r.rho_gd == 0.0:
        log_E2[0] = 0.0
    # shared additive offset does not move the crossover; skip it when z0 == 0
    if math.isfinite(log_z0):
        log_E1 = log_E1 + log_z0
        log_E2 = log_E2 + log_z0
    below = log_E1 < log_E2
    return BoundSequences(log_E1=log_E1, log_E2=log_E2, t_sw=persistent_crossover(below))


def empirical_crossover(err_a: Sequence[float], err_b: Sequence[float]) -> Optional[int]:
    """First t after which ``err_a`` stays strictly below ``err_b``; ties never count."""
    n = min(len(err_a), len(err_b))
    a = np.asarray(err_a[:n], dtype=float)
    b = np.asarray(err_b[:n], dtype=float)
    return persistent_crossover(a < b)


# --------------------------------------------------------------------------
# iteration checks
# --------------------------------------------------------------------------

_EPS = np.finfo(float).eps


def judging_floor(scale: float, cond: float, slack: float = 1e-8) -> float:
    """Error level below which a measured contraction ratio is dominated by rounding.

    Errors are differences against an O(scale) reference, so each carries
    roughly ``eps * cond * scale`` of noise; ratios of such errors are only
    trustworthy to ``slack`` while the errors stay ``10 / slack`` times above it.
    """
    return (10.0 / slack) * _EPS * cond * scale


@dataclass
class KContractionReport:
    status: str  # "ok", "violated", "diverging", "already converged"
    rho_bound: float  # max |1 - alpha mu| over the spectrum of A^T A + beta I
    worst_factor: float
    frob_errors: Array  # ||K(t) - K*||_F for t = -1, 0, 1, ...
    violations: list[tuple[int, int]] = field(default_factory=list)  # (t, column)

    @property
    def passed(self) -> bool:
        return self.status in ("ok", "already converged")


def verify_k_contraction(
    shards: Sequence[AgentShard],
    beta: float,
    alpha: float,
    iters: int,
    K_init: Optional[Array] = None,
    rho_k: Optional[float] = None,
    AtA: Optional[Array] = None,
) -> KContractionReport:
    """Run only the pre-conditioner protocol and check its contraction.

    Every column must satisfy ``||k_j(t) - k_j*|| <= rho ||k_j(t-1) - k_j*||``
    and the whole matrix ``||K(t) - K*||_F <= rho^(t+1) ||K(-1) - K*||_F``,
    where ``rho`` defaults to ``max |1 - alpha mu|`` (equal to rho*_K at the
    optimal alpha). Columns whose error is already at rounding level are not
    judged.
    """
    n = shards[0].n
    m = len(shards)
    if AtA is None:
        AtA = sum(s.A.T @ s.A for s in shards)
        AtA = 0.5 * (AtA + AtA.T)
    spec = spectral_extremes(AtA)
    K_star = kstar_oracle(AtA, beta)
    if rho_k is None:
        rho_k = max(abs(1 - alpha * (spec.lam + beta)), abs(1 - alpha * (spec.gam + beta)))
    K = np.zeros((n, n), order="F") if K_init is None else np.asfortranarray(K_init, dtype=float)

    E = K - K_star
    e0 = norm(E)
    frob = [e0]
    cond = (spec.lam + beta) / (spec.gam + beta)
    floor = judging_floor(max(norm(K_star), e0), cond)
    if e0 <= floor:
        return KContractionReport("already converged", rho_k, 0.0, np.array(frob))

    violations: list[tuple[int, int]] = []
    worst = 0.0
    prev_cols = np.sqrt(np.sum(E * E, axis=0))
    tol = 1.0 + 1e-8
    for t in range(iters):
        replies = [
            AgentReply(s.agent_id, gradient=np.zeros(n), residuals=agent_residuals(s, K, beta, m))
            for s in shards
        ]
        K = server_update_K(K, replies, alpha, m)
        E = K - K_star
        cols = np.sqrt(np.sum(E * E, axis=0))
        judged = prev_cols > floor
        if judged.any():
            factors = cols[judged] / prev_cols[judged]
            worst = max(worst, float(factors.max()))
            for j in np.flatnonzero(judged)[factors > rho_k * tol]:
                violations.append((t, int(j)))
        fro = norm(E)
        frob.append(fro)
        if fro > floor and fro > rho_k ** (t + 1) * e0 * tol:
            violations.append((t, -1))
        prev_cols = cols
        if fro <= floor or not np.isfinite(fro):
            break

    if rho_k >= 1.0 or not np.isfinite(frob[-1]):
        status = "diverging"
    elif violations:
        status = "violated"
    else:
        status = "ok"
    return KContractionReport(status, rho_k, worst, np.array(frob), violations)


@dataclass
class TransientBoundReport:
    factors: Array  # ||z(t+1)|| / ||z(t)||
    bounds: Array  # rho*_beta + sigma0 rho*_K^(t+1)
    violations: list[int]

    @property
    def passed(self) -> bool:
        return not self.violations


def verify_transient_bound(err_norms: Array, r: RateReport, floor: float = 0.0) -> TransientBoundReport:
    """Check each per-step error factor of an IPG trace against the transient bound.

    Steps that start from an error at or below ``floor`` are skipped.
    """
    err = np.asarray(err_norms, dtype=float)
    steps = len(err) - 1
    t = np.arange(steps, dtype=float)
    bounds = r.rho_star_beta + r.sigma0 * np.power(r.rho_star_k, t + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        factors = err[1:] / err[:-1]
    judged = err[:-1] > floor
    bad = judged & (factors > bounds * (1.0 + 1e-8))
    return TransientBoundReport(factors=factors, bounds=bounds, violations=[int(i) for i in np.flatnonzero(bad)])


def rates_summary(r: RateReport, b: Optional[BoundSequences] = None) -> dict:
    return r.to_json(t_sw=None if b is None else b.t_sw)

