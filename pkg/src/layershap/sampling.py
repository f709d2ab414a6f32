"""Stratified Monte Carlo generation of retain-masks with controlled Hamming weight.

Each stratum k receives a fixed quota of masks drawn uniformly from all
k-subsets of the layer set, via a partial Fisher-Yates selection of k
distinct indices. Sampling is sequential per seed so a config maps to
exactly one mask sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import HammingWeightPlan, Mask, rows_to_masks

RNG_NAME = "pcg64"

__all__ = [
    "RNG_NAME",
    "SamplerConfig",
    "allocate_per_stratum",
    "sample_k_subset",
    "sample_stratified",
    "sample_stratified_rows",
]


@dataclass(frozen=True)
class SamplerConfig:
    """Everything needed to reproduce one stratified mask draw."""

    layer_count: int
    plan: HammingWeightPlan
    seed: int
    dedupe: bool = False

    def __post_init__(self) -> None:
        if self.layer_count < 1:
            raise ValueError("layer_count must be positive")
        for k in self.plan.weights:
            if not 0 <= k <= self.layer_count:
                raise ValueError(
                    f"Hamming weight {k} outside [0, {self.layer_count}]"
                )
        if self.dedupe:
            for k, count in zip(self.plan.weights, self.plan.per_stratum):
                limit = math.comb(self.layer_count, k)
                if count > limit:
                    raise ValueError(
                        f"cannot draw {count} distinct masks of weight {k} "
                        f"from C({self.layer_count},{k})={limit}"
                    )


def allocate_per_stratum(total: int, strata_count: int) -> list[int]:
    """Split a sample budget across strata; the first (total mod n) strata
    receive one extra sample."""
    if strata_count < 1:
        raise ValueError("need at least one stratum")
    if total < 0:
        raise ValueError("sample budget must be non-negative")
    q, r = divmod(total, strata_count)
    return [q + 1 if i < r else q for i in range(strata_count)]


def _draw_k_subset_rows(
    layer_count: int, k: int, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw `count` uniform k-subsets as an (count, L) uint8 matrix.

    Partial Fisher-Yates: each mask consumes exactly k uniform doubles,
    so batched and one-at-a-time draws share the same stream.
    """
    if not 0 <= k <= layer_count:
        raise ValueError(f"subset size {k} exceeds layer count {layer_count}")
    rows = np.zeros((count, layer_count), dtype=np.uint8)
    if count == 0 or k == 0:
        return rows
    pool = np.tile(np.arange(layer_count), (count, 1))
    u = rng.random((count, k))
    arange = np.arange(count)
    for i in range(k):
        j = i + np.minimum((u[:, i] * (layer_count - i)).astype(np.int64),
                           layer_count - i - 1)
        swapped = pool[arange, j].copy()
        pool[arange, j] = pool[arange, i]
        pool[arange, i] = swapped
    np.put_along_axis(rows, pool[:, :k], 1, axis=1)
    return rows


def sample_k_subset(layer_count: int, k: int, rng: np.random.Generator) -> Mask:
    """One mask with exactly k retained layers, uniform over all k-subsets."""
    row = _draw_k_subset_rows(layer_count, k, 1, rng)[0]
    return Mask(bits=tuple(bool(v) for v in row))


def sample_stratified_rows(config: SamplerConfig) -> tuple[np.ndarray, np.ndarray]:
    """All masks of a stratified draw as an (N, L) matrix plus the stratum
    weight of each row. Rows appear in stratum order, then draw order."""
    rng = np.random.default_rng(config.seed)
    chunks = []
    strata = []
    for k, count in zip(config.plan.weights, config.plan.per_stratum):
        if config.dedupe:
            chunk = _draw_distinct(config.layer_count, k, count, rng)
        else:
            chunk = _draw_k_subset_rows(config.layer_count, k, count, rng)
        chunks.append(chunk)
        strata.append(np.full(count, k, dtype=np.int64))
    rows = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, config.layer_count), np.uint8)
    return rows, np.concatenate(strata) if strata else np.zeros(0, np.int64)


def _draw_distinct(layer_count: int, k: int, count: int, rng: np.random.Generator) -> np.ndarray:
    seen: set[bytes] = set()
    kept = []
    while len(kept) < count:
        row = _draw_k_subset_rows(layer_count, k, 1, rng)[0]
        key = row.tobytes()
        if key not in seen:
            seen.add(key)
            kept.append(row)
    return np.array(kept, dtype=np.uint8)


def sample_stratified(config: SamplerConfig) -> list[Mask]:
    """Stratified mask draw as Mask objects; see sample_stratified_rows."""
    rows, _ = sample_stratified_rows(config)
    return rows_to_masks(rows)
