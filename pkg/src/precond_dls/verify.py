"""Seeded property suite run by ``precond-dls verify``.

Each property is checked on the 2x2 oracle problem plus a batch of random
well-posed least-squares instances, and reported as one pass/fail line.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import analysis as an
from .federated import agent_gradient, agent_residual
from .ingest import Problem, fixture, partition, synthesize_rhs
from .linalg import basis, gram, matrix, norm
from .solvers import Method, SolverConfig, StopKind, StoppingRule, run_dgd, run_ipg

RhoFormula = Callable[[float, float, float], float]


@dataclass(frozen=True)
class Instance:
    name: str
    problem: Problem
    beta: float
    agents: int

    @property
    def AtA(self) -> np.ndarray:
        return gram(self.problem.A)


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}" + (f": {self.detail}" if self.detail else "")


def make_instances(seed: int = 0, count: int = 50) -> list[Instance]:
    """The 2x2 oracle (beta = 1) followed by ``count`` random Gaussian problems, n <= 20."""
    rng = np.random.default_rng(seed)
    out = [Instance("oracle2x2", fixture("oracle2x2"), 1.0, 1)]
    for k in range(count):
        n = int(rng.integers(2, 21))
        N = 2 * n + int(rng.integers(0, 6))
        A = matrix(rng.standard_normal((N, n)))
        x_star = rng.uniform(-2.0, 2.0, n)
        beta = float(10.0 ** rng.uniform(-1.0, 1.0))
        agents = int(rng.integers(1, min(N, 6) + 1))
        out.append(Instance(f"random-{k}", synthesize_rhs(A, x_star), beta, agents))
    return out


def _optimal_config(inst: Instance, s: an.SpectralInfo, max_iters: int, tol: float) -> SolverConfig:
    return SolverConfig(
        method=Method.IPG,
        alpha=an.optimal_alpha(s, inst.beta),
        delta=an.optimal_delta(s, inst.beta),
        beta=inst.beta,
        max_iters=max_iters,
        stop=StoppingRule(StopKind.RELATIVE_ERROR, tol),
    )


def _x_floor(problem: Problem, s: an.SpectralInfo) -> float:
    return an.judging_floor(norm(problem.x_star), np.sqrt(s.kappa))


# --------------------------------------------------------------------------
# individual properties; each returns (passed, detail)
# --------------------------------------------------------------------------


def check_preconditioned_spectrum(instances) -> PropertyResult:
    worst, failures = 0.0, []
    for inst in instances:
        rep = an.verify_preconditioned_spectrum(inst.AtA, inst.beta, rtol=1e-8)
        worst = max(worst, rep.max_rel_err, rep.min_rel_err)
        if not rep.passed:
            failures.append(f"{inst.name}: {rep.describe()}")
    return PropertyResult(
        "preconditioned_spectrum", not failures,
        "; ".join(failures[:3]) or f"worst relative error {worst:.2e}",
    )


def check_k_contraction(instances, rho_star_k: RhoFormula = an.rho_star_k, max_iters: int = 3000) -> PropertyResult:
    failures, worst = [], 0.0
    for inst in instances:
        s = an.spectral_extremes(inst.AtA)
        shards = partition(inst.problem, inst.agents)
        rho = rho_star_k(s.lam, s.gam, inst.beta)
        rep = an.verify_k_contraction(
            shards, inst.beta, an.optimal_alpha(s, inst.beta), max_iters, rho_k=rho, AtA=inst.AtA
        )
        worst = max(worst, rep.worst_factor / rho if rho > 0 else 0.0)
        if not rep.passed:
            failures.append(f"{inst.name}: {rep.status} at (t, column) {rep.violations[:3]}")
    return PropertyResult(
        "k_column_contraction", not failures,
        "; ".join(failures[:3]) or f"worst factor / rho*_K = {worst:.10f}",
    )


def check_transient_bound(instances, max_iters: int = 3000) -> PropertyResult:
    failures, checked = [], 0
    for inst in instances:
        s = an.spectral_extremes(inst.AtA)
        shards = partition(inst.problem, inst.agents)
        cfg = _optimal_config(inst, s, max_iters, 1e-12)
        trace = run_ipg(inst.problem, shards, cfg)
        K_star = an.kstar_oracle(inst.AtA, inst.beta)
        rates = an.compute_rates(s, inst.beta, cfg.delta, np.zeros_like(K_star), K_star)
        rep = an.verify_transient_bound(trace.err_norms, rates, floor=_x_floor(inst.problem, s))
        checked += int(np.sum(trace.err_norms[:-1] > _x_floor(inst.problem, s)))
        if not rep.passed:
            t = rep.violations[0]
            failures.append(f"{inst.name}: t={t} factor {rep.factors[t]:.6g} > bound {rep.bounds[t]:.6g}")
    return PropertyResult(
        "transient_error_bound", not failures, "; ".join(failures[:3]) or f"{checked} steps judged"
    )


def check_bound_crossover(instances) -> PropertyResult:
    failures = []
    for inst in instances:
        s = an.spectral_extremes(inst.AtA)
        K_star = an.kstar_oracle(inst.AtA, inst.beta)
        delta = an.optimal_delta(s, inst.beta)
        r = an.compute_rates(s, inst.beta, delta, np.zeros_like(K_star), K_star)
        z0 = norm(inst.problem.x_star)
        b = an.bound_sequences(r, z0)
        if s.lam > s.gam and not r.rho_star_beta < r.rho_gd:
            failures.append(f"{inst.name}: rho*_beta {r.rho_star_beta} >= rho_gd {r.rho_gd}")
        elif b.t_sw is None:
            failures.append(f"{inst.name}: no crossover within {b.horizon}")
        elif not np.all(b.log_E1[b.t_sw + 1 :] < b.log_E2[b.t_sw + 1 :]):
            failures.append(f"{inst.name}: E1 >= E2 after t_sw={b.t_sw}")
    return PropertyResult("bound_crossover", not failures, "; ".join(failures[:3]))


def check_rate_consistency(instances, rho_star_k: RhoFormula = an.rho_star_k) -> list[PropertyResult]:
    k_fail, b_fail = [], []
    for inst in instances:
        s = an.spectral_extremes(inst.AtA)
        beta = inst.beta
        kappa_shift = (s.lam + beta) / (s.gam + beta)
        via_k = (kappa_shift - 1.0) / (kappa_shift + 1.0)
        got_k = rho_star_k(s.lam, s.gam, beta)
        if abs(got_k - via_k) > 1e-12 * max(abs(via_k), 1e-300):
            k_fail.append(f"{inst.name}: {got_k:.15g} vs {via_k:.15g}")
        kappa_pre = (s.lam / (s.lam + beta)) / (s.gam / (s.gam + beta))
        via_b = (kappa_pre - 1.0) / (kappa_pre + 1.0)
        got_b = an.rho_star_beta(s.lam, s.gam, beta)
        if abs(got_b - via_b) > 1e-12 * max(abs(via_b), 1e-300):
            b_fail.append(f"{inst.name}: {got_b:.15g} vs {via_b:.15g}")
    return [
        PropertyResult("rho_star_k_consistency", not k_fail, "; ".join(k_fail[:3])),
        PropertyResult("rho_star_beta_consistency", not b_fail, "; ".join(b_fail[:3])),
    ]


def check_rho_k_monotone_in_beta(instances, rho_star_k: RhoFormula = an.rho_star_k) -> PropertyResult:
    failures = []
    for inst in instances:
        s = an.spectral_extremes(inst.AtA)
        if s.lam == s.gam:
            continue
        for beta in (0.1, 1.0, 10.0, inst.beta):
            h = 1e-6 * beta
            d = (rho_star_k(s.lam, s.gam, beta + h) - rho_star_k(s.lam, s.gam, beta - h)) / (2 * h)
            if not d < 0:
                failures.append(f"{inst.name}: d rho*_K / d beta = {d:.3e} at beta={beta}")
    return PropertyResult("rho_star_k_decreasing_in_beta", not failures, "; ".join(failures[:3]))


def check_aggregation(instances) -> PropertyResult:
    failures = []
    for inst in instances:
        p = inst.problem
        shards = partition(p, inst.agents)
        AtA = inst.AtA
        n = p.n
        rng = np.random.default_rng(n)
        x = rng.standard_normal(n)
        g = sum(agent_gradient(s, x) for s in shards)
        g_ref = AtA @ x - p.A.T @ p.b
        if norm(g - g_ref) > 1e-10 * max(1.0, norm(g_ref)):
            failures.append(f"{inst.name}: gradient sum off by {norm(g - g_ref):.2e}")
        for j in range(n):
            k = rng.standard_normal(n)
            R = sum(agent_residual(s, k, j, inst.beta, len(shards)) for s in shards)
            R_ref = AtA @ k + inst.beta * k - basis(n, j)
            if norm(R - R_ref) > 1e-10 * max(1.0, norm(R_ref)):
                failures.append(f"{inst.name}: residual sum column {j} off by {norm(R - R_ref):.2e}")
                break
    return PropertyResult("aggregation_identities", not failures, "; ".join(failures[:3]))


def trajectory_deviation(a, b) -> float:
    """Largest per-iteration relative distance between two iterate sequences."""
    worst = 0.0
    for u, v in zip(a, b):
        worst = max(worst, norm(u - v) / max(norm(v), np.finfo(float).tiny))
    return worst


def check_partition_invariance(seed: int = 0, iters: int = 200, agents=(2, 5, 10)) -> PropertyResult:
    p = fixture("random40x8", seed=seed)
    s = an.spectral_extremes(gram(p.A))
    beta = 1.0
    cfg = SolverConfig(
        Method.IPG, alpha=an.optimal_alpha(s, beta), delta=an.optimal_delta(s, beta),
        beta=beta, max_iters=iters, keep_iterates=True,
    )
    ref = run_ipg(p, partition(p, 1), cfg)
    worst = 0.0
    for m in agents:
        tr = run_ipg(p, partition(p, m), cfg)
        # K(-1) = 0 has no relative scale; compare from K(0) on
        worst = max(worst, trajectory_deviation(tr.xs, ref.xs), trajectory_deviation(tr.Ks[1:], ref.Ks[1:]))
    return PropertyResult("partition_invariance", worst <= 1e-12, f"worst relative deviation {worst:.2e}")


def check_dgd_equivalence(seed: int = 0, iters: int = 100) -> PropertyResult:
    p = fixture("random40x8", seed=seed)
    shards = partition(p, 4)
    s = an.spectral_extremes(gram(p.A))
    delta = an.dgd_optimal_delta(s)
    dgd = run_dgd(p, shards, SolverConfig(Method.DGD, delta=delta, max_iters=iters))
    ipg = run_ipg(
        p, shards,
        SolverConfig(Method.IPG, delta=delta, alpha=0.0, beta=1.0, max_iters=iters, K_init=np.eye(p.n)),
    )
    same = np.array_equal(dgd.err_norms, ipg.err_norms) and np.array_equal(dgd.x, ipg.x)
    return PropertyResult("dgd_equivalence_bitwise", bool(same))


def run_suite(seed: int = 0, count: int = 50, rho_star_k: Optional[RhoFormula] = None) -> list[PropertyResult]:
    """Run every property. ``rho_star_k`` replaces the closed form (used to test the suite itself)."""
    formula = rho_star_k or an.rho_star_k
    instances = make_instances(seed, count)
    results = [
        check_preconditioned_spectrum(instances),
        check_k_contraction(instances, rho_star_k=formula),
        check_transient_bound(instances),
        check_bound_crossover(instances),
        *check_rate_consistency(instances, rho_star_k=formula),
        check_rho_k_monotone_in_beta(instances, rho_star_k=formula),
        check_aggregation(instances),
        check_partition_invariance(seed),
        check_dgd_equivalence(seed),
    ]
    return results


FAULTS: dict[str, RhoFormula] = {
    # drops the 2*beta shift: the unpre-conditioned rate
    "rho_star_k": lambda lam, gam, beta: (lam - gam) / (lam + gam),
}
