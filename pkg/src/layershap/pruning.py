"""Pruning plans and the motivation diagnostics.

make_plan turns a contribution report into an ordered removal list.
rank_volatility measures how single-removal importance ranks shift once
other layers are already gone, and best_pair_search contrasts greedy
two-step deletion with the exhaustive best pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Mask, PruningPlan, ShapleyReport, UtilityOracle

__all__ = [
    "make_plan",
    "rank_volatility",
    "best_pair_search",
    "ContextVolatility",
    "PairSearchResult",
]


def make_plan(report: ShapleyReport, remove_count: int) -> PruningPlan:
    """Plan removing the n lowest-contribution layers.

    Plans from one report are prefix-stable because the ranking is fixed:
    the n-layer plan is a prefix of every deeper plan.
    """
    layer_count = report.layer_count
    if not 0 <= remove_count <= layer_count:
        raise ValueError(
            f"cannot remove {remove_count} of {layer_count} layers"
        )
    ranking = report.ranking()
    return PruningPlan(
        removed_layers=tuple(ranking[:remove_count]),
        target_remove_count=remove_count,
        report_ref=report.report_id(),
        phi=report.phi,
    )


def _removal_damage(oracle: UtilityOracle, base: Mask, layers: list[int]) -> np.ndarray:
    """Utility degradation caused by removing each layer from `base`.

    Higher damage means more important, regardless of the oracle's raw
    utility direction.
    """
    rows = np.tile(np.array(base.bits, dtype=np.uint8), (len(layers), 1))
    for row, layer in zip(rows, layers):
        row[layer] = 0
    pruned = oracle.evaluate_rows(rows)
    whole = oracle.evaluate(base)
    if oracle.direction == "lower":
        return pruned - whole
    return whole - pruned


def _ranks(damage: np.ndarray, layers: list[int]) -> dict[int, int]:
    # Least important first, ties by ascending layer index.
    order = sorted(range(len(layers)), key=lambda i: (damage[i], layers[i]))
    return {layers[i]: rank for rank, i in enumerate(order)}


@dataclass(frozen=True)
class ContextVolatility:
    """Rank shifts of the layers still present in one pruned context."""

    context: Mask
    layers: tuple[int, ...]
    rank_in_full: tuple[int, ...]
    rank_in_context: tuple[int, ...]
    delta_rank: tuple[int, ...]


def rank_volatility(oracle: UtilityOracle, contexts: list[Mask]) -> list[ContextVolatility]:
    """Single-removal importance rank shifts between the full model and
    each partially pruned context.

    For each context, only the layers it retains are ranked, both inside
    the context and inside the full model restricted to those same
    candidates, so an interaction-free game shifts nothing.
    """
    full = Mask.ones(oracle.layer_count)
    results = []
    for context in contexts:
        if len(context) != oracle.layer_count:
            raise ValueError("context mask length does not match the oracle")
        layers = context.retained_layers()
        ranks_ctx = _ranks(_removal_damage(oracle, context, layers), layers)
        ranks_full = _ranks(_removal_damage(oracle, full, layers), layers)
        results.append(
            ContextVolatility(
                context=context,
                layers=tuple(layers),
                rank_in_full=tuple(ranks_full[i] for i in layers),
                rank_in_context=tuple(ranks_ctx[i] for i in layers),
                delta_rank=tuple(ranks_ctx[i] - ranks_full[i] for i in layers),
            )
        )
    return results


@dataclass(frozen=True)
class PairSearchResult:
    """Exhaustive best deletion pair versus the two-step greedy pair.

    Utilities are raw oracle values of the model with both layers gone.
    greedy_pair lists layers in deletion order.
    """

    best_pair: tuple[int, int]
    best_utility: float
    greedy_pair: tuple[int, int]
    greedy_utility: float

    def greedy_is_optimal(self) -> bool:
        return set(self.best_pair) == set(self.greedy_pair)


def best_pair_search(oracle: UtilityOracle) -> PairSearchResult:
    """Compare exhaustive pair deletion against re-tested greedy deletion.

    Greedy removes the single least damaging layer, re-evaluates, then
    removes the next least damaging one. Exhaustive search scans all
    O(L^2) pairs. Ties break toward ascending indices in both paths.
    """
    layer_count = oracle.layer_count
    if layer_count < 2:
        raise ValueError("pair search needs at least two layers")
    lower_better = oracle.direction == "lower"

    pairs = [(i, j) for i in range(layer_count) for j in range(i + 1, layer_count)]
    rows = np.ones((len(pairs), layer_count), dtype=np.uint8)
    for row, (i, j) in zip(rows, pairs):
        row[i] = 0
        row[j] = 0
    pair_utils = oracle.evaluate_rows(rows)
    best_idx = int(np.argmin(pair_utils) if lower_better else np.argmax(pair_utils))
    best_pair, best_utility = pairs[best_idx], float(pair_utils[best_idx])

    singles = np.ones((layer_count, layer_count), dtype=np.uint8)
    np.fill_diagonal(singles, 0)
    single_utils = oracle.evaluate_rows(singles)
    first = int(np.argmin(single_utils) if lower_better else np.argmax(single_utils))

    pair_util = {frozenset(p): float(u) for p, u in zip(pairs, pair_utils)}
    candidates = [j for j in range(layer_count) if j != first]
    second_utils = [pair_util[frozenset((first, j))] for j in candidates]
    pick = int(np.argmin(second_utils) if lower_better else np.argmax(second_utils))
    greedy_pair = (first, candidates[pick])
    greedy_utility = second_utils[pick]

    return PairSearchResult(
        best_pair=best_pair,
        best_utility=best_utility,
        greedy_pair=greedy_pair,
        greedy_utility=greedy_utility,
    )
