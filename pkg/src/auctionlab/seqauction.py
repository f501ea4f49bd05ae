"""Abstract sequential-auction decision core.

n items are sold one at a time in index order. Each item's closing price is
an independent draw from a known finite distribution; a bid wins iff it is
at least the closing price, and a winner pays the closing price (not the
bid). Utility is an arbitrary function of the final holdings bit-vector.

This module computes the exact game value by brute-force recursion, the two
standard approximations (price sampling and expected prices), and the
marginal-utility bid. It deliberately stays tiny and independent of the
travel-market machinery so it can serve as the oracle for the bidding
logic's unit tests.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

UNAVAILABLE = math.inf


class InstanceTooLarge(ValueError):
    """Raised when exact computation would exceed the configured cap."""


@dataclass(frozen=True)
class AbstractAuctionProblem:
    n: int
    price_distributions: tuple  # per item: tuple of (price, probability)
    utility: Callable[[tuple], float]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one item")
        if len(self.price_distributions) != self.n:
            raise ValueError("one price distribution per item")
        for dist in self.price_distributions:
            probs = [p for _, p in dist]
            if any(p <= 0 for p in probs):
                raise ValueError("probabilities must be positive")
            if abs(sum(probs) - 1.0) > 1e-9:
                raise ValueError("probabilities must sum to 1")
            if any(v < 0 for v, _ in dist):
                raise ValueError("prices must be nonnegative")

    def support(self, item: int):
        return [v for v, _ in self.price_distributions[item]]


def _check_size(problem: AbstractAuctionProblem, i: int, cap: int) -> None:
    states = 2 ** (problem.n - i)
    work = states * max((len(d) for d in problem.price_distributions[i:]), default=1)
    if work > cap:
        raise InstanceTooLarge(
            f"exact recursion needs ~{work} evaluations, cap is {cap}")


def exact_value(problem: AbstractAuctionProblem, i: int, holdings: Sequence[int],
                size_cap: int = 2_000_000) -> float:
    """Exact expected profit from state (next item i, current holdings),
    assuming optimal bidding from here on."""
    _check_size(problem, i, size_cap)
    h = tuple(int(b) for b in holdings)
    memo: dict = {}

    def value(j: int, hh: tuple) -> float:
        if j == problem.n:
            return problem.utility(hh)
        key = (j, hh)
        if key in memo:
            return memo[key]
        won = list(hh)
        won[j] = 1
        v_win = value(j + 1, tuple(won))
        v_lose = value(j + 1, hh)
        dist = problem.price_distributions[j]
        # profit is piecewise constant in the bid between support points,
        # so comparing the supports plus one never-winning bid is exact
        best = -math.inf
        for r in problem.support(j) + [-1.0]:
            total = 0.0
            for y, p in dist:
                total += p * ((v_win - y) if r >= y else v_lose)
            best = max(best, total)
        memo[key] = best
        return best

    return value(i, h)


def opt_purchases(problem: AbstractAuctionProblem, holdings: Sequence[int],
                  i: int, prices: Sequence[float]):
    """Best set of additional purchases among items i.. at fixed prices.

    Returns (plan, objective) maximizing utility(G + H) - G . Y. Items with
    an unavailable (infinite) price cannot be bought. Ties go to the
    lexicographically smallest plan.
    """
    h = tuple(int(b) for b in holdings)
    n = problem.n
    buyable = [j for j in range(i, n)
               if h[j] == 0 and prices[j] != UNAVAILABLE and not math.isnan(prices[j])]
    best_plan = tuple([0] * n)
    best_obj = problem.utility(h)
    for bits in itertools.product((0, 1), repeat=len(buyable)):
        if not any(bits):
            continue
        g = [0] * n
        cost = 0.0
        for j, b in zip(buyable, bits):
            if b:
                g[j] = 1
                cost += prices[j]
        combined = tuple(hj | gj for hj, gj in zip(h, g))
        obj = problem.utility(combined) - cost
        if obj > best_obj:
            best_plan, best_obj = tuple(g), obj
    return best_plan, best_obj


def _draw_scenarios(problem, i, sample_count, rng, exhaustive):
    """Price vectors over items i.. with weights. Entries before i are
    unavailable placeholders."""
    n = problem.n
    if exhaustive:
        supports = [problem.price_distributions[j] for j in range(i, n)]
        scenarios = []
        for combo in itertools.product(*supports):
            y = [UNAVAILABLE] * i + [v for v, _ in combo]
            w = math.prod(p for _, p in combo)
            scenarios.append((tuple(y), w))
        return scenarios
    if sample_count is None or sample_count < 1:
        raise ValueError("sampleCount must be at least 1")
    if rng is None:
        raise ValueError("sampled mode needs an rng")
    scenarios = []
    w = 1.0 / sample_count
    for _ in range(sample_count):
        y = [UNAVAILABLE] * i
        for j in range(i, n):
            dist = problem.price_distributions[j]
            k = rng.choice(len(dist), p=[p for _, p in dist])
            y.append(dist[int(k)][0])
        scenarios.append((tuple(y), w))
    return scenarios


def value_est_sampled(problem: AbstractAuctionProblem, i: int, holdings,
                      sample_count: int | None = None, rng=None,
                      exhaustive: bool = False) -> float:
    """Scenario approximation of the game value: optimize one bid for item i
    against sampled (or exhaustively enumerated) future price vectors, doing
    omniscient-per-scenario purchasing afterwards. Upper bound on
    exact_value for the exhaustive case."""
    h = tuple(int(b) for b in holdings)
    if i == problem.n:
        return problem.utility(h)
    scenarios = _draw_scenarios(problem, i, sample_count, rng, exhaustive)
    h_win = list(h)
    h_win[i] = 1
    h_win = tuple(h_win)
    win_vals, lose_vals = [], []
    for y, _ in scenarios:
        _, wv = opt_purchases(problem, h_win, i + 1, y)
        _, lv = opt_purchases(problem, h, i + 1, y)
        win_vals.append(wv)
        lose_vals.append(lv)
    candidates = sorted({y[i] for y, _ in scenarios}) + [-1.0]
    best = -math.inf
    for r in candidates:
        total = 0.0
        for (y, w), wv, lv in zip(scenarios, win_vals, lose_vals):
            total += w * ((wv - y[i]) if r >= y[i] else lv)
        best = max(best, total)
    return best


def value_est_ev(problem: AbstractAuctionProblem, i: int, holdings) -> float:
    """Approximation that first collapses every remaining price distribution
    to its mean, then solves the resulting deterministic problem exactly."""
    dists = list(problem.price_distributions)
    for j in range(i, problem.n):
        mean = sum(v * p for v, p in dists[j])
        dists[j] = ((mean, 1.0),)
    determinized = AbstractAuctionProblem(problem.n, tuple(dists), problem.utility)
    return exact_value(determinized, i, holdings)


def marginal_bid_samples(problem: AbstractAuctionProblem, i: int, holdings,
                         sample_count: int | None = None, rng=None,
                         exhaustive: bool = False):
    """Per-scenario marginal value of winning item i, with weights.

    For each sampled price vector, compares the best obtainable
    profit-after-purchases with item i in hand against without it.
    Returns (values, weights, price_vectors) as parallel lists.
    """
    h = tuple(int(b) for b in holdings)
    scenarios = _draw_scenarios(problem, i, sample_count, rng, exhaustive)
    h_win = list(h)
    h_win[i] = 1
    h_win = tuple(h_win)
    vals, weights, vectors = [], [], []
    for y, w in scenarios:
        g_w, _ = opt_purchases(problem, h_win, i + 1, y)
        g_l, _ = opt_purchases(problem, h, i + 1, y)
        win_val = problem.utility(tuple(a | b for a, b in zip(h_win, g_w)))
        win_val -= sum(gj * yj for gj, yj in zip(g_w, y) if gj)
        lose_val = problem.utility(tuple(a | b for a, b in zip(h, g_l)))
        lose_val -= sum(gj * yj for gj, yj in zip(g_l, y) if gj)
        vals.append(win_val - lose_val)
        weights.append(w)
        vectors.append(y)
    return vals, weights, vectors


def marginal_bid(problem: AbstractAuctionProblem, i: int, holdings,
                 sample_count: int | None = None, rng=None,
                 exhaustive: bool = False) -> float:
    """Expected marginal utility of winning item i: the agent's bid."""
    vals, weights, _ = marginal_bid_samples(
        problem, i, holdings, sample_count, rng, exhaustive)
    return float(sum(v * w for v, w in zip(vals, weights)))
