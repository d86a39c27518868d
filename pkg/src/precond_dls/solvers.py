"""Iteration drivers for the pre-conditioned method (IPG) and plain DGD."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .federated import (
    AgentReply,
    FlopCounter,
    RoundParams,
    ServerState,
    aggregate_gradients,
    apply_replies,
    collect_replies,
    dgd_update_x,
    round_flops,
)
from .ingest import AgentShard, Problem
from .linalg import Array, LinAlgError, gram, norm

DIVERGENCE_FACTOR = 1e12


class Method(str, enum.Enum):
    IPG = "ipg"
    DGD = "dgd"


class StopKind(str, enum.Enum):
    RELATIVE_ERROR = "relative_error"
    GRADIENT_NORM = "gradient_norm"
    ITERATION_CAP = "iteration_cap"


@dataclass(frozen=True)
class StoppingRule:
    kind: StopKind = StopKind.ITERATION_CAP
    tolerance: float = 0.0

    def __post_init__(self):
        if self.kind != StopKind.ITERATION_CAP and not self.tolerance > 0:
            raise ValueError("stopping tolerance must be positive")


@dataclass
class SolverConfig:
    method: Method
    delta: float
    alpha: float = 0.0
    beta: float = 1.0
    max_iters: int = 1000
    stop: StoppingRule = field(default_factory=StoppingRule)
    x0: Optional[Array] = None
    K_init: Optional[Array] = None
    seed: Optional[int] = None
    stride: int = 1
    fast: bool = False
    threads: int = 0
    keep_iterates: bool = False
    divergence_factor: Optional[float] = DIVERGENCE_FACTOR  # None: stop only on overflow

    def __post_init__(self):
        self.method = Method(self.method)
        if self.delta < 0 or self.alpha < 0:
            raise ValueError("step sizes must be non-negative")
        if self.method == Method.IPG and not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass(frozen=True)
class TraceRecord:
    t: int
    err_norm: float  # nan when x* is unknown
    rel_err: float
    grad_norm: float
    flops: int


@dataclass
class Trace:
    method: Method
    records: list[TraceRecord]
    err_norms: Array  # every iteration, regardless of stride
    grad_norms: Array
    x: Array
    K: Optional[Array]
    iterations_run: int
    stop_reason: str
    x_star_norm: Optional[float] = None
    K_errors: Optional[Array] = None  # ||K(t-1) - K*||_F at the start of round t
    xs: Optional[list[Array]] = None  # x(t) per iteration when keep_iterates is set
    Ks: Optional[list[Array]] = None  # K(t-1) per iteration when keep_iterates is set

    @property
    def rel_errs(self) -> Array:
        if self.x_star_norm is None:
            raise ValueError("relative error needs a known solution x*")
        return self.err_norms / self.x_star_norm


def reach_iteration(trace: Trace, tolerance: float) -> Optional[int]:
    """First t with ``||x(t) - x*|| / ||x*|| <= tolerance``; None if never reached."""
    hits = np.flatnonzero(trace.rel_errs <= tolerance)
    return int(hits[0]) if hits.size else None


def _x_star_norm(problem: Problem) -> Optional[float]:
    if problem.x_star is None:
        return None
    return max(norm(problem.x_star), np.finfo(float).tiny)


def _iterate(problem, shards, config, step, K_star=None) -> Trace:
    """Shared driver loop; ``step(x, K, replies) -> (x, K)`` applies one server update."""
    n = problem.n
    m = len(shards)
    x0 = np.zeros(n) if config.x0 is None else np.array(config.x0, dtype=float)
    if config.method == Method.IPG:
        K0 = np.zeros((n, n), order="F") if config.K_init is None else np.asfortranarray(config.K_init, dtype=float)
    else:
        K0 = None
    stop = config.stop
    xs_norm = _x_star_norm(problem)
    if stop.kind == StopKind.RELATIVE_ERROR and problem.x_star is None:
        raise ValueError("relative_error stopping needs a problem with known x*")
    limit = np.inf if config.divergence_factor is None else config.divergence_factor * (1.0 + norm(x0))
    per_round = round_flops([s.rows for s in shards], n, precondition=K0 is not None)

    x, K = x0, K0
    flops = FlopCounter.zeros(m)
    errs, grads, kerrs, records = [], [], [], []
    xs, Ks = [], []
    reason = "iteration_cap"
    t = 0
    while True:
        try:
            replies = collect_replies(x, K, shards, config.beta, fast=config.fast, threads=config.threads)
            gsum = aggregate_gradients(replies, m)
        except LinAlgError:
            reason = "diverged"
            errs.append(np.inf)
            grads.append(np.inf)
            break
        err = norm(x - problem.x_star) if problem.x_star is not None else np.nan
        gnorm = norm(gsum)
        errs.append(err)
        grads.append(gnorm)
        if K_star is not None and K is not None:
            kerrs.append(norm(K - K_star))
        if config.keep_iterates:
            xs.append(x)
            Ks.append(K)
        if t % config.stride == 0:
            records.append(_record(t, err, xs_norm, gnorm, flops.total))

        x_norm = norm(x)
        if not np.isfinite(x_norm) or x_norm > limit:
            reason = "diverged"
            break
        if stop.kind == StopKind.RELATIVE_ERROR and err / xs_norm <= stop.tolerance:
            reason = "converged"
            break
        if stop.kind == StopKind.GRADIENT_NORM and gnorm <= stop.tolerance:
            reason = "converged"
            break
        if t >= config.max_iters:
            reason = "iteration_cap"
            break
        try:
            x, K = step(x, K, replies)
        except LinAlgError:
            reason = "diverged"
            break
        flops += per_round
        t += 1

    if not records or records[-1].t != t:
        records.append(_record(t, errs[-1], xs_norm, grads[-1], flops.total))
    return Trace(
        method=config.method,
        records=records,
        err_norms=np.array(errs),
        grad_norms=np.array(grads),
        x=x,
        K=K,
        iterations_run=t,
        stop_reason=reason,
        x_star_norm=xs_norm,
        K_errors=np.array(kerrs) if K_star is not None and K is not None else None,
        xs=xs if config.keep_iterates else None,
        Ks=Ks if config.keep_iterates and K0 is not None else None,
    )


def _record(t, err, xs_norm, gnorm, flops) -> TraceRecord:
    rel = err / xs_norm if xs_norm is not None else float("nan")
    return TraceRecord(t=t, err_norm=float(err), rel_err=float(rel), grad_norm=float(gnorm), flops=int(flops))


def run_dgd(problem: Problem, shards: Sequence[AgentShard], config: SolverConfig) -> Trace:
    """Iterate ``x(t+1) = x(t) - delta * sum_i g_i(t)`` until the stopping rule fires."""
    if config.method != Method.DGD:
        raise ValueError("run_dgd needs a DGD config")
    m = len(shards)

    def step(x, K, replies: list[AgentReply]):
        return dgd_update_x(x, replies, config.delta, m), None

    return _iterate(problem, shards, config, step)


def run_ipg(
    problem: Problem,
    shards: Sequence[AgentShard],
    config: SolverConfig,
    K_star: Optional[Array] = None,
) -> Trace:
    """Run the iteratively pre-conditioned protocol round after round.

    Passing ``K_star`` records ``||K(t-1) - K*||_F`` for every round.
    """
    if config.method != Method.IPG:
        raise ValueError("run_ipg needs an IPG config")
    params = RoundParams(alpha=config.alpha, delta=config.delta, beta=config.beta, fast=config.fast)
    if config.fast:
        for shard in shards:
            if shard.gram_cached is None:
                shard.gram_cached = gram(shard.A)

    def step(x, K, replies: list[AgentReply]):
        state = apply_replies(ServerState(x=x, K=K), replies, params)
        return state.x, state.K

    return _iterate(problem, shards, config, step, K_star=K_star)


def run(problem: Problem, shards: Sequence[AgentShard], config: SolverConfig, **kwargs) -> Trace:
    if config.method == Method.IPG:
        return run_ipg(problem, shards, config, **kwargs)
    return run_dgd(problem, shards, config)
