"""Synchronous server/agent simulation of one protocol round.

Each round the server broadcasts ``x(t)`` and ``K(t-1)``. Every agent answers
with its local gradient ``g_i = A_i^T (A_i x - b_i)`` and the residual columns
``R_ij = (A_i^T A_i + beta/m I) k_j - e_j / m``. The server first updates the
pre-conditioner, ``K(t) = K(t-1) - alpha * sum_i R_i``, then the estimate,
``x(t+1) = x(t) - delta * K(t) sum_i g_i``. Replies are always folded in
ascending agent order so a run is reproducible bit for bit.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ingest import AgentShard
from .linalg import (
    Array,
    DimensionError,
    matmul,
    matvec,
    transpose_matvec,
)

THREADS_ENV = "PRECOND_DLS_THREADS"


class ProtocolError(RuntimeError):
    """A synchronous round is missing replies or has inconsistent ones."""


@dataclass
class ServerState:
    x: Array
    K: Array  # K(t-1) at the start of round t
    iteration: int = 0

    def __post_init__(self):
        n = self.x.shape[0]
        if self.K.shape != (n, n):
            raise DimensionError(f"K has shape {self.K.shape}, expected ({n}, {n})")


@dataclass
class AgentReply:
    agent_id: int
    gradient: Array
    residuals: Optional[Array] = None  # column j is R_ij(t-1); None for plain DGD


@dataclass
class FlopCounter:
    """Multiplications counted the way the complexity analysis counts them."""

    per_agent: list[int] = field(default_factory=list)
    server: int = 0

    @classmethod
    def zeros(cls, m: int) -> "FlopCounter":
        return cls(per_agent=[0] * m)

    @property
    def total(self) -> int:
        return sum(self.per_agent) + self.server

    def __iadd__(self, other: "FlopCounter") -> "FlopCounter":
        if not self.per_agent:
            self.per_agent = [0] * len(other.per_agent)
        if len(other.per_agent) != len(self.per_agent):
            raise ValueError("flop counters cover different agent sets")
        self.per_agent = [a + b for a, b in zip(self.per_agent, other.per_agent)]
        self.server += other.server
        return self


def gradient_flops(n_i: int, n: int) -> int:
    return 2 * n_i * n


def residual_flops(n_i: int, n: int) -> int:
    """Cost of one residual column: two matvecs plus the beta/m scaling."""
    return 2 * n_i * n + n


def round_flops(shard_rows: Sequence[int], n: int, precondition: bool = True) -> FlopCounter:
    per_agent = [
        gradient_flops(n_i, n) + (n * residual_flops(n_i, n) if precondition else 0)
        for n_i in shard_rows
    ]
    return FlopCounter(per_agent=per_agent, server=n * n if precondition else 0)


# --------------------------------------------------------------------------
# agent side
# --------------------------------------------------------------------------


def agent_gradient(shard: AgentShard, x: Array) -> Array:
    if x.shape != (shard.n,):
        raise DimensionError(f"agent {shard.agent_id}: x has shape {x.shape}, need ({shard.n},)")
    return transpose_matvec(shard.A, matvec(shard.A, x) - shard.b)


def _check_residual_args(shard: AgentShard, beta: float, m: int) -> None:
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")


def agent_residual(
    shard: AgentShard, k_j: Array, j: int, beta: float, m: int, fast: bool = False
) -> Array:
    """Residual column ``(A_i^T A_i + beta/m I) k_j - e_j / m`` for 0-based column ``j``."""
    _check_residual_args(shard, beta, m)
    n = shard.n
    if k_j.shape != (n,):
        raise DimensionError(f"k_j has shape {k_j.shape}, need ({n},)")
    if not 0 <= j < n:
        raise IndexError(f"column index {j} outside [0, {n})")
    if fast and shard.gram_cached is not None:
        r = matvec(shard.gram_cached, k_j)
    else:
        r = transpose_matvec(shard.A, matvec(shard.A, k_j))
    r = r + (beta / m) * k_j
    r[j] -= 1.0 / m
    return r


def agent_residuals(
    shard: AgentShard, K: Array, beta: float, m: int, fast: bool = False
) -> Array:
    """All residual columns at once; column j equals ``agent_residual(shard, K[:, j], j, ...)``."""
    _check_residual_args(shard, beta, m)
    n = shard.n
    if K.shape != (n, n):
        raise DimensionError(f"K has shape {K.shape}, need ({n}, {n})")
    if fast and shard.gram_cached is not None:
        R = matmul(shard.gram_cached, K)
    else:
        # column j of A_i^T (A_i K) is A_i^T (A_i k_j): the same two matvecs, batched
        R = matmul(shard.A.T, matmul(shard.A, K))
    R += (beta / m) * K
    R[np.diag_indices(n)] -= 1.0 / m
    return R


def agent_reply(
    shard: AgentShard,
    x: Array,
    K_prev: Optional[Array],
    beta: float,
    m: int,
    fast: bool = False,
) -> AgentReply:
    g = agent_gradient(shard, x)
    R = None if K_prev is None else agent_residuals(shard, K_prev, beta, m, fast=fast)
    return AgentReply(agent_id=shard.agent_id, gradient=g, residuals=R)


# --------------------------------------------------------------------------
# server side
# --------------------------------------------------------------------------


def _ordered(replies: Sequence[AgentReply], m: Optional[int]) -> list[AgentReply]:
    ordered = sorted(replies, key=lambda r: r.agent_id)
    ids = [r.agent_id for r in ordered]
    expected = list(range(m if m is not None else len(ordered)))
    if ids != expected:
        missing = sorted(set(expected) - set(ids))
        raise ProtocolError(f"round needs replies from agents {expected}, missing {missing}, got {ids}")
    return ordered


def aggregate_gradients(replies: Sequence[AgentReply], m: Optional[int] = None) -> Array:
    ordered = _ordered(replies, m)
    total = ordered[0].gradient.copy()
    for r in ordered[1:]:
        total += r.gradient
    return total


def aggregate_residuals(replies: Sequence[AgentReply], m: Optional[int] = None) -> Array:
    ordered = _ordered(replies, m)
    if any(r.residuals is None for r in ordered):
        raise ProtocolError("a reply carries no residual columns")
    total = ordered[0].residuals.copy(order="F")
    for r in ordered[1:]:
        total += r.residuals
    return total


def server_update_K(
    K_prev: Array, replies: Sequence[AgentReply], alpha: float, m: Optional[int] = None
) -> Array:
    """``k_j(t) = k_j(t-1) - alpha * sum_i R_ij(t-1)`` for every column j."""
    R = aggregate_residuals(replies, m)
    if R.shape != K_prev.shape:
        raise DimensionError(f"residuals {R.shape} do not match K {K_prev.shape}")
    return np.asfortranarray(K_prev - alpha * R)


def server_update_x(
    x: Array, K: Array, replies: Sequence[AgentReply], delta: float, m: Optional[int] = None
) -> Array:
    """``x(t+1) = x(t) - delta * K(t) sum_i g_i(t)``."""
    return x - delta * matvec(K, aggregate_gradients(replies, m))


def dgd_update_x(
    x: Array, replies: Sequence[AgentReply], delta: float, m: Optional[int] = None
) -> Array:
    """Plain distributed gradient step ``x(t+1) = x(t) - delta * sum_i g_i(t)``."""
    return x - delta * aggregate_gradients(replies, m)


# --------------------------------------------------------------------------
# rounds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RoundParams:
    alpha: float
    delta: float
    beta: float
    fast: bool = False
    threads: int = 0  # 0 -> agents evaluated sequentially


def threads_from_env(default: int = 0) -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(0, int(raw)) if raw.strip() else default
    except ValueError:
        return default


def collect_replies(
    x: Array,
    K_prev: Optional[Array],
    shards: Sequence[AgentShard],
    beta: float,
    fast: bool = False,
    threads: int = 0,
) -> list[AgentReply]:
    """Broadcast and gather one reply per agent, in agent order."""
    m = len(shards)

    def work(shard: AgentShard) -> AgentReply:
        return agent_reply(shard, x, K_prev, beta, m, fast=fast)

    if threads > 0 and m > 1:
        with ThreadPoolExecutor(max_workers=min(threads, m)) as pool:
            return list(pool.map(work, shards))
    return [work(s) for s in shards]


def apply_replies(
    state: ServerState, replies: Sequence[AgentReply], params: RoundParams
) -> ServerState:
    m = len(replies)
    K = server_update_K(state.K, replies, params.alpha, m)
    x = server_update_x(state.x, K, replies, params.delta, m)
    return ServerState(x=x, K=K, iteration=state.iteration + 1)


def run_round(
    state: ServerState, shards: Sequence[AgentShard], params: RoundParams
) -> tuple[ServerState, list[AgentReply], FlopCounter]:
    """One full round of the pre-conditioned protocol."""
    replies = collect_replies(
        state.x, state.K, shards, params.beta, fast=params.fast, threads=params.threads
    )
    new_state = apply_replies(state, replies, params)
    flops = round_flops([s.rows for s in shards], state.x.shape[0])
    return new_state, replies, flops
