"""Shared test utilities, including independent oracles that never touch
the code paths they validate."""

from __future__ import annotations

import itertools
from math import factorial

import numpy as np

from layershap.core import HammingWeightPlan, Mask, MaskScoreRecord, UtilityOracle, rows_to_masks
from layershap.oracles import SCORE_FLOOR, SyntheticGameSpec
from layershap.sampling import SamplerConfig, sample_stratified_rows


def permutation_shapley(oracle: UtilityOracle) -> np.ndarray:
    """Shapley values via the permutation definition: average each layer's
    marginal over all L! arrival orders. Independent of the subset-
    enumeration route in the library; only feasible for tiny L."""
    n = oracle.layer_count
    cache: dict[int, float] = {}

    def u(subset_id: int) -> float:
        if subset_id not in cache:
            bits = tuple(bool((subset_id >> i) & 1) for i in range(n))
            cache[subset_id] = oracle.evaluate(Mask(bits))
        return cache[subset_id]

    phi = np.zeros(n)
    for perm in itertools.permutations(range(n)):
        subset = 0
        for layer in perm:
            with_layer = subset | (1 << layer)
            phi[layer] += u(with_layer) - u(subset)
            subset = with_layer
    return phi / factorial(n)


class FnOracle(UtilityOracle):
    """Utility oracle defined by a function of the retained-layer count
    or of the full row, for hand-constructed games."""

    def __init__(self, layer_count: int, fn, direction: str = "higher"):
        self.layer_count = layer_count
        self.fn = fn
        self.direction = direction
        self.baseline_utility = float(fn(np.ones(layer_count)))

    def evaluate(self, mask: Mask) -> float:
        self._check_mask(mask)
        return float(self.fn(mask.to_row()))

    def evaluate_rows(self, rows: np.ndarray) -> np.ndarray:
        self._check_rows(rows)
        return np.array([self.fn(r.astype(float)) for r in rows])


class SumOracle(UtilityOracle):
    """Pointwise sum of two games over the same layer set."""

    def __init__(self, first: UtilityOracle, second: UtilityOracle):
        assert first.layer_count == second.layer_count
        self.first = first
        self.second = second
        self.layer_count = first.layer_count
        self.direction = first.direction
        self.baseline_utility = first.baseline_utility + second.baseline_utility

    def evaluate(self, mask: Mask) -> float:
        return self.first.evaluate(mask) + self.second.evaluate(mask)

    def evaluate_rows(self, rows: np.ndarray) -> np.ndarray:
        return self.first.evaluate_rows(rows) + self.second.evaluate_rows(rows)


class AffineOracle(UtilityOracle):
    """a * u + b rescaling of another game's raw utilities."""

    def __init__(self, base: UtilityOracle, a: float, b: float):
        self.base = base
        self.a = a
        self.b = b
        self.layer_count = base.layer_count
        self.direction = base.direction
        self.baseline_utility = a * base.baseline_utility + b

    def evaluate(self, mask: Mask) -> float:
        return self.a * self.base.evaluate(mask) + self.b

    def evaluate_rows(self, rows: np.ndarray) -> np.ndarray:
        return self.a * self.base.evaluate_rows(rows) + self.b


def with_symmetric_pair(spec: SyntheticGameSpec, i: int, j: int) -> SyntheticGameSpec:
    """Copy of a game spec in which layers i and j are exchangeable."""
    weights = spec.weights.copy()
    weights[j] = weights[i]
    interaction = None
    if spec.interaction is not None:
        interaction = spec.interaction.copy()
        for k in range(spec.layer_count):
            if k in (i, j):
                continue
            interaction[j, k] = interaction[i, k]
            interaction[k, j] = interaction[k, i]
    return SyntheticGameSpec(
        spec.kind, spec.layer_count, weights, interaction,
        base_ppl=spec.base_ppl, sharpness=spec.sharpness, seed=spec.seed,
    )


def with_dummy(spec: SyntheticGameSpec, d: int) -> SyntheticGameSpec:
    """Copy of a game spec in which layer d never affects utility."""
    weights = spec.weights.copy()
    weights[d] = 0.0
    interaction = None
    if spec.interaction is not None:
        interaction = spec.interaction.copy()
        interaction[d, :] = 0.0
        interaction[:, d] = 0.0
    return SyntheticGameSpec(
        spec.kind, spec.layer_count, weights, interaction,
        base_ppl=spec.base_ppl, sharpness=spec.sharpness, seed=spec.seed,
    )


def make_records(
    oracle: UtilityOracle, weights, count: int, seed: int
) -> list[MaskScoreRecord]:
    """Stage-1-style supervision records straight from an oracle."""
    plan = HammingWeightPlan.split_evenly(weights, count)
    rows, strata = sample_stratified_rows(
        SamplerConfig(oracle.layer_count, plan, seed=seed)
    )
    raw = oracle.evaluate_rows(rows)
    if oracle.direction == "lower":
        ratio = oracle.baseline_utility / raw
    else:
        ratio = raw / oracle.baseline_utility
    scores = np.clip(ratio, SCORE_FLOOR, 1.0)
    return [
        MaskScoreRecord(mask, float(u), float(s), meta={"stratum": str(int(k))})
        for mask, u, s, k in zip(rows_to_masks(rows), raw, scores, strata)
    ]
