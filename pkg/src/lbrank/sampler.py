"""Metropolis-Hastings sampling of rankings from a weighted-divergence Gibbs law.

The target distribution over the N! rankings of one query puts probability
proportional to exp(-sum_i w_i d(x_i || pi)) on each ranking pi. Only energy
differences are evaluated anywhere; the partition function is intractable
and never materialized. Proposals are uniform random transpositions of two
distinct positions (symmetric, full support), so the plain Metropolis
ratio is the correct acceptance ratio.

An exact enumeration backend over all N! rankings backs the sampler for
small N; trainers accept either backend.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ConcaveGain, Ranking, ScoreList, SimplexWeights, QueryInstance

__all__ = [
    "ACCEPTANCE_RULES",
    "ChainConfig",
    "EnergyContext",
    "energy",
    "per_list_divergences",
    "acceptance_ratio",
    "sample_orders",
    "sample_expectation",
    "exact_distribution",
    "exact_expectation",
    "expected_divergences",
    "fnv1a64",
    "chain_seed",
]

ACCEPTANCE_RULES = ("standard_metropolis", "paper_literal")

# Enumeration is N! work; past 8 candidates it stops being a test oracle.
MAX_ENUMERATION_N = 8

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of a UTF-8 string."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def chain_seed(seed: int, query_id: str) -> int:
    """Per-query chain seed: global seed XOR FNV-1a(query_id)."""
    return (int(seed) ^ fnv1a64(query_id)) & _MASK64


@dataclass(frozen=True)
class ChainConfig:
    """Sampling budget and acceptance behaviour of one chain."""

    num_samples: int = 50
    burn_in: int = 100
    thinning: int = 1
    acceptance_rule: str = "standard_metropolis"
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.acceptance_rule not in ACCEPTANCE_RULES:
            raise ValueError(f"acceptance_rule must be one of {ACCEPTANCE_RULES}")
        if not 0 <= int(self.rng_seed) <= _MASK64:
            raise ValueError("rng_seed must fit in 64 unsigned bits")


@dataclass(frozen=True, eq=False)
class EnergyContext:
    """One query's score lists, effective weights and gain, preprocessed.

    Precomputes per-list descending sorts and the weighted mean score
    vector so that chain steps touch O(1) values and full energies are a
    single dot product.
    """

    lists: tuple[ScoreList, ...]
    weights: SimplexWeights
    gain: ConcaveGain

    def __post_init__(self) -> None:
        lists = tuple(self.lists)
        if not lists:
            raise ValueError("energy context requires at least one score list")
        n = lists[0].n
        if any(x.n != n for x in lists):
            raise ValueError("score lists disagree on length")
        if self.weights.k != len(lists):
            raise ValueError(f"{self.weights.k} weights for {len(lists)} lists")
        if self.gain.capacity < n:
            raise ValueError(f"gain covers {self.gain.capacity} positions, need {n}")
        object.__setattr__(self, "lists", lists)
        matrix = np.stack([x.scores for x in lists])
        matrix.setflags(write=False)
        sorted_desc = np.sort(matrix, axis=1)[:, ::-1].copy()
        sorted_desc.setflags(write=False)
        delta = self.gain.increments[:n].copy()
        delta.setflags(write=False)
        ybar = self.weights.w @ matrix
        ybar.setflags(write=False)
        object.__setattr__(self, "_matrix", matrix)
        object.__setattr__(self, "_sorted", sorted_desc)
        object.__setattr__(self, "_delta", delta)
        object.__setattr__(self, "_ybar", ybar)

    @classmethod
    def from_query(cls, q: QueryInstance,
                   weights: SimplexWeights | np.ndarray | Sequence[float],
                   gain: ConcaveGain) -> "EnergyContext":
        if not isinstance(weights, SimplexWeights):
            weights = SimplexWeights(np.asarray(weights, dtype=np.float64))
        return cls(q.lists, weights, gain)

    @property
    def k(self) -> int:
        return len(self.lists)

    @property
    def n(self) -> int:
        return self.lists[0].n


def per_list_divergences(ctx: EnergyContext, pi: Ranking) -> np.ndarray:
    """d(x_i || pi) for every list of the context (exact zero at each sort)."""
    if pi.n != ctx.n:
        raise ValueError(f"ranking has {pi.n} positions, context has {ctx.n}")
    return (ctx._sorted - ctx._matrix[:, pi.order]) @ ctx._delta


def energy(ctx: EnergyContext, pi: Ranking) -> float:
    """Weighted divergence sum sum_i w_i d(x_i || pi); non-negative."""
    return float(ctx.weights.w @ per_list_divergences(ctx, pi))


def acceptance_ratio(ctx: EnergyContext, current: Ranking, proposed: Ranking) -> float:
    """Metropolis ratio exp(E(current) - E(proposed)).

    Computed from the energy difference only; the normalizer cancels.
    Returns +inf when the difference would overflow a double.
    """
    diff = energy(ctx, current) - energy(ctx, proposed)
    return math.exp(diff) if diff < 709.0 else math.inf


def _chain_orders(ctx: EnergyContext, cfg: ChainConfig) -> np.ndarray:
    """Run one chain; return the retained states as an (M, N) index array.

    The walk starts at the sort of the weighted mean score vector (a cheap
    near-mode state). Each step proposes swapping two distinct positions;
    the energy change of a swap is (delta_a - delta_b) * (y_b - y_a), so
    steps cost O(1). Rejected proposals leave the state in place and the
    repeated state is retained as usual.
    """
    n = ctx.n
    m = cfg.num_samples
    if n == 1:
        return np.zeros((m, 1), dtype=np.int64)

    rng = np.random.default_rng(cfg.rng_seed)
    state: list[int] = np.argsort(-ctx._ybar, kind="stable").tolist()
    y = ctx._ybar.tolist()
    delta = ctx._delta.tolist()
    literal = cfg.acceptance_rule == "paper_literal"
    literal_cut = math.log(0.9)
    exp = math.exp

    total = cfg.burn_in + m * cfg.thinning
    out = np.empty((m, n), dtype=np.int64)
    taken = 0
    done = 0
    block = 8192
    while done < total:
        size = min(block, total - done)
        pos_a = rng.integers(0, n, size=size).tolist()
        pos_b = rng.integers(0, n - 1, size=size).tolist()
        uniforms = rng.random(size).tolist()
        for a, b, u in zip(pos_a, pos_b, uniforms):
            if b >= a:
                b += 1
            ca = state[a]
            cb = state[b]
            log_alpha = (delta[a] - delta[b]) * (y[cb] - y[ca])
            if literal:
                accept = log_alpha > literal_cut and u < 0.9
            else:
                accept = log_alpha >= 0.0 or u < exp(log_alpha)
            if accept:
                state[a] = cb
                state[b] = ca
            done += 1
            if done > cfg.burn_in and (done - cfg.burn_in) % cfg.thinning == 0:
                out[taken] = state
                taken += 1
    assert taken == m
    return out


def sample_orders(ctx: EnergyContext, cfg: ChainConfig) -> np.ndarray:
    """Retained chain states as an (M, N) array; each row is a permutation."""
    return _chain_orders(ctx, cfg)


def sample_expectation(ctx: EnergyContext, cfg: ChainConfig) -> np.ndarray:
    """Chain estimate of E[d(x_i || pi)] for every list i.

    Averages the per-list divergences over the M retained states.
    Deterministic given the config seed.
    """
    orders = _chain_orders(ctx, cfg)
    v = np.empty(ctx.k, dtype=np.float64)
    for i in range(ctx.k):
        diffs = ctx._sorted[i][np.newaxis, :] - ctx._matrix[i][orders]
        v[i] = float(np.mean(diffs @ ctx._delta))
    return v


def _all_orders(n: int) -> np.ndarray:
    if n > MAX_ENUMERATION_N:
        raise ValueError(f"exact enumeration limited to N <= {MAX_ENUMERATION_N}, got {n}")
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64)


def _divergence_table(ctx: EnergyContext, orders: np.ndarray) -> np.ndarray:
    """(num_orders, K) table of d(x_i || pi) for every enumerated pi."""
    table = np.empty((orders.shape[0], ctx.k), dtype=np.float64)
    for i in range(ctx.k):
        diffs = ctx._sorted[i][np.newaxis, :] - ctx._matrix[i][orders]
        table[:, i] = diffs @ ctx._delta
    return table


def exact_distribution(ctx: EnergyContext) -> tuple[np.ndarray, np.ndarray]:
    """All N! orders with their exact target probabilities.

    Probabilities are exp(-E) normalized over the full enumeration, with
    the minimum energy subtracted before exponentiation for stability.
    """
    orders = _all_orders(ctx.n)
    energies = _divergence_table(ctx, orders) @ ctx.weights.w
    probs = np.exp(-(energies - energies.min()))
    probs /= probs.sum()
    return orders, probs


def exact_expectation(ctx: EnergyContext) -> np.ndarray:
    """E[d(x_i || pi)] for every list i by full enumeration (N <= 8)."""
    orders = _all_orders(ctx.n)
    table = _divergence_table(ctx, orders)
    energies = table @ ctx.weights.w
    probs = np.exp(-(energies - energies.min()))
    probs /= probs.sum()
    return probs @ table


def expected_divergences(ctx: EnergyContext, cfg: ChainConfig,
                         backend: str = "mh") -> np.ndarray:
    """Expectation backend dispatcher: ``mh`` chain estimate or ``exact``."""
    if backend == "mh":
        return sample_expectation(ctx, cfg)
    if backend == "exact":
        return exact_expectation(ctx)
    raise ValueError(f"unknown expectation backend {backend!r}")
