"""Layer-contribution estimation.

Three routes: the surrogate-backed Monte Carlo perturbation estimator
(stratified base masks, per-layer on/off forcing), the same estimator
driven directly by a utility oracle, and an exact brute-force Shapley
oracle for small layer counts used to validate both.

The Monte Carlo estimator averages marginal contributions under the
stratified base-mask distribution without coalition-size weights, so it
is a semivalue rather than the classical Shapley value; agreement with
the exact oracle is checked at the ranking level.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
from scipy.stats import spearmanr

from .core import HammingWeightPlan, ShapleyReport, UtilityOracle
from .oracles import NormalizedOracle
from .sampling import RNG_NAME, SamplerConfig, sample_stratified_rows
from .surrogate import SurrogateModel

__all__ = [
    "EstimatorConfig",
    "SurrogateScorer",
    "OracleScorer",
    "estimate_contributions",
    "marginal_deltas",
    "exact_shapley",
    "efficiency_check",
    "convergence_sweep",
    "spearman",
]

EXACT_LAYER_CAP = 16


class SurrogateScorer:
    """Scores mask rows through a trained surrogate, counting forwards."""

    def __init__(self, model: SurrogateModel):
        self.model = model
        self.layer_count = model.input_dim
        self.name = "surrogate"
        self.forward_count = 0

    def score_rows(self, rows: np.ndarray) -> np.ndarray:
        self.forward_count += len(rows)
        return self.model.forward_rows(rows)


class OracleScorer:
    """Scores mask rows straight from a utility oracle.

    With normalize=True utilities pass through the baseline-relative
    score mapping; with normalize=False raw utilities are used as-is
    (only meaningful for higher-is-better games).
    """

    def __init__(self, oracle: UtilityOracle, normalize: bool = True):
        self.oracle = NormalizedOracle(oracle) if normalize else oracle
        self.layer_count = oracle.layer_count
        self.name = "oracle-score" if normalize else "oracle-raw"
        self.call_count = 0

    def score_rows(self, rows: np.ndarray) -> np.ndarray:
        self.call_count += len(rows)
        return self.oracle.evaluate_rows(rows)


@dataclass(frozen=True)
class EstimatorConfig:
    """Monte Carlo settings: base-mask count Q (shared across layers),
    the Hamming-weight plan they are drawn from, and the perturbation
    variant."""

    mc_samples: int
    strata: HammingWeightPlan
    seed: int = 42
    variant: str = "force"

    def __post_init__(self) -> None:
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be at least 1")
        if self.variant not in ("force", "add"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.strata.total != self.mc_samples:
            raise ValueError(
                f"strata allocate {self.strata.total} masks but mc_samples={self.mc_samples}"
            )

    @classmethod
    def with_weights(cls, mc_samples: int, weights, seed: int = 42,
                     variant: str = "force") -> "EstimatorConfig":
        plan = HammingWeightPlan.split_evenly(weights, mc_samples)
        return cls(mc_samples=mc_samples, strata=plan, seed=seed, variant=variant)


def marginal_deltas(scorer, rows: np.ndarray, layer: int, variant: str = "force") -> np.ndarray:
    """Per-base-mask score change attributed to one layer.

    force: score(mask with layer on) - score(mask with layer off).
    add:   score(mask with layer on) - score(mask as drawn); zero whenever
           the base mask already retains the layer.
    """
    on = rows.copy()
    on[:, layer] = 1
    s_on = scorer.score_rows(on)
    if variant == "force":
        off = rows.copy()
        off[:, layer] = 0
        s_base = scorer.score_rows(off)
    elif variant == "add":
        s_base = scorer.score_rows(rows)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return s_on - s_base


def estimate_contributions(scorer, config: EstimatorConfig) -> ShapleyReport:
    """Monte Carlo layer contributions from stratified base masks.

    Draws Q base masks once and reuses them for every layer; each layer
    costs two scorer batches. Deterministic for a fixed (scorer, config).
    """
    layer_count = scorer.layer_count
    sampler = SamplerConfig(layer_count=layer_count, plan=config.strata, seed=config.seed)
    rows, _ = sample_stratified_rows(sampler)
    phi = np.empty(layer_count)
    for layer in range(layer_count):
        phi[layer] = marginal_deltas(scorer, rows, layer, config.variant).mean()
    return ShapleyReport(
        phi=tuple(float(v) for v in phi),
        num_mc_samples=config.mc_samples,
        strata=config.strata,
        seed=config.seed,
        variant=config.variant,
        scorer=scorer.name,
        rng=RNG_NAME,
    )


def _subset_rows(layer_count: int) -> tuple[np.ndarray, np.ndarray]:
    ids = np.arange(1 << layer_count, dtype=np.int64)
    bits = ((ids[:, None] >> np.arange(layer_count)) & 1).astype(np.uint8)
    return ids, bits


def exact_shapley(oracle: UtilityOracle, max_layers: int = EXACT_LAYER_CAP) -> np.ndarray:
    """Exact Shapley values by full coalition enumeration.

    Evaluates the oracle on all 2^L coalitions and applies the classical
    size-dependent weights, so it is only feasible for small L.
    """
    layer_count = oracle.layer_count
    if layer_count > max_layers:
        raise ValueError(
            f"exact enumeration over 2^{layer_count} coalitions exceeds the "
            f"cap of {max_layers} layers"
        )
    ids, bits = _subset_rows(layer_count)
    utilities = np.asarray(oracle.evaluate_rows(bits), dtype=np.float64)
    sizes = bits.sum(axis=1).astype(np.int64)
    size_weight = np.array(
        [factorial(s) * factorial(layer_count - s - 1) / factorial(layer_count)
         for s in range(layer_count)]
    )
    phi = np.empty(layer_count)
    for i in range(layer_count):
        without = ids[bits[:, i] == 0]
        gains = utilities[without | (1 << i)] - utilities[without]
        phi[i] = float(np.sum(size_weight[sizes[without]] * gains))
    return phi


def efficiency_check(phi: np.ndarray, oracle: UtilityOracle) -> float:
    """Residual of the efficiency axiom: |sum(phi) - (u(N) - u(empty))|."""
    from .core import Mask

    full = oracle.evaluate(Mask.ones(oracle.layer_count))
    empty = oracle.evaluate(Mask.zeros(oracle.layer_count))
    return abs(float(np.sum(phi)) - (full - empty))


def spearman(a, b) -> float:
    """Spearman rank correlation between two contribution vectors."""
    return float(spearmanr(a, b).statistic)


def convergence_sweep(
    oracle: UtilityOracle,
    q_values,
    seeds,
    weights=None,
    variant: str = "force",
    use_scores: bool | None = None,
) -> list[dict]:
    """Rank agreement between Monte Carlo estimates and exact Shapley.

    One row per (Q, seed) with the Spearman correlation of the estimated
    contribution vector against exact values computed on the same game.
    Lower-is-better oracles are compared in normalized score units.
    """
    if use_scores is None:
        use_scores = oracle.direction == "lower"
    target = NormalizedOracle(oracle) if use_scores else oracle
    exact = exact_shapley(target)
    if weights is None:
        weights = range(0, oracle.layer_count + 1)
    weights = tuple(weights)

    rows = []
    for q in q_values:
        for seed in seeds:
            scorer = OracleScorer(target, normalize=False)
            config = EstimatorConfig.with_weights(q, weights, seed=seed, variant=variant)
            report = estimate_contributions(scorer, config)
            rows.append({
                "q": int(q),
                "seed": int(seed),
                "spearman": spearman(report.phi, exact),
            })
    return rows
