"""Coalition-utility evaluators.

Two families: synthetic games (additive, pairwise-interaction, and a
perplexity-like degradation game) used for verification, and a
table-backed oracle that replays externally measured mask utilities
from a JSON Lines file. Real-model measurement happens outside this
package; the table is the ingestion boundary.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass

import numpy as np

from .core import Mask, MaskError, MaskScoreRecord, UtilityOracle, mask_from_string

logger = logging.getLogger(__name__)

SCORE_FLOOR = 1e-6
GAME_KINDS = ("additive", "pairwise", "degradation")

__all__ = [
    "SCORE_FLOOR",
    "GAME_KINDS",
    "SyntheticGameSpec",
    "SyntheticOracle",
    "ScoreTableOracle",
    "ScoreTableError",
    "MaskNotInTable",
    "NormalizedOracle",
    "CountingOracle",
    "random_game_spec",
    "load_game_spec",
    "save_game_spec",
    "score_ratio",
    "normalize_score",
    "marginal_contribution",
    "load_score_table",
    "load_score_records",
    "write_score_table",
]


class ScoreTableError(ValueError):
    """Malformed score-table file (parse error, duplicate, length mismatch)."""


class MaskNotInTable(KeyError):
    """A table-backed oracle was asked about a mask it never measured."""


def score_ratio(raw: float, baseline: float, direction: str = "lower") -> float:
    """Unclamped baseline-relative performance ratio."""
    if raw <= 0 or baseline <= 0:
        raise ValueError(f"utilities must be positive, got raw={raw} baseline={baseline}")
    if direction == "lower":
        return baseline / raw
    if direction == "higher":
        return raw / baseline
    raise ValueError(f"unknown direction {direction!r}")


def normalize_score(raw: float, baseline: float, direction: str = "lower") -> float:
    """Performance score in (0, 1]: the baseline-relative ratio, clamped.

    A ratio above 1 (the pruned model beat the baseline) is clamped to 1
    so scores stay inside the surrogate's sigmoid range.
    """
    ratio = score_ratio(raw, baseline, direction)
    if ratio > 1.0:
        logger.warning("score ratio %.6g exceeds 1, clamping", ratio)
        return 1.0
    return max(ratio, SCORE_FLOOR)


@dataclass
class SyntheticGameSpec:
    """Parameters of a synthetic verification game.

    additive:     u(S) = sum of retained weights (higher is better).
    pairwise:     additive plus sum of J[i, j] over retained pairs.
    degradation:  perplexity-like, lower is better:
                  raw(S) = base_ppl * exp(sharpness * sum of removed
                  weights + sum of J over removed pairs).
    """

    kind: str
    layer_count: int
    weights: np.ndarray
    interaction: np.ndarray | None = None
    base_ppl: float = 15.0
    sharpness: float = 1.0
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in GAME_KINDS:
            raise ValueError(f"unknown game kind {self.kind!r}")
        self.weights = np.array(self.weights, dtype=np.float64)
        if self.weights.shape != (self.layer_count,):
            raise ValueError("weights must be a length-L vector")
        if self.interaction is not None:
            self.interaction = np.array(self.interaction, dtype=np.float64)
            if self.interaction.shape != (self.layer_count, self.layer_count):
                raise ValueError("interaction must be an LxL matrix")
            if not np.allclose(self.interaction, self.interaction.T):
                raise ValueError("interaction matrix must be symmetric")
            if np.any(np.diag(self.interaction) != 0.0):
                raise ValueError("interaction diagonal must be zero")
        if self.kind == "degradation":
            if self.base_ppl <= 0 or self.sharpness <= 0:
                raise ValueError("degradation game needs positive base_ppl and sharpness")
        self.weights.flags.writeable = False
        if self.interaction is not None:
            self.interaction.flags.writeable = False

    def to_json_obj(self) -> dict:
        obj = {
            "kind": self.kind,
            "layer_count": self.layer_count,
            "weights": self.weights.tolist(),
            "interaction": None if self.interaction is None else self.interaction.tolist(),
            "seed": self.seed,
        }
        if self.kind == "degradation":
            obj["base_ppl"] = self.base_ppl
            obj["sharpness"] = self.sharpness
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "SyntheticGameSpec":
        return cls(
            kind=obj["kind"],
            layer_count=int(obj["layer_count"]),
            weights=obj["weights"],
            interaction=obj.get("interaction"),
            base_ppl=float(obj.get("base_ppl", 15.0)),
            sharpness=float(obj.get("sharpness", 1.0)),
            seed=obj.get("seed"),
        )


def random_game_spec(
    kind: str,
    layer_count: int,
    seed: int,
    interaction_scale: float | None = None,
    base_ppl: float = 15.0,
    sharpness: float = 1.0,
) -> SyntheticGameSpec:
    """Seeded random game. Weights and interactions are materialized so a
    saved spec file is self-contained."""
    rng = np.random.default_rng(seed)
    if kind == "additive":
        weights = rng.uniform(0.1, 1.0, size=layer_count)
        return SyntheticGameSpec("additive", layer_count, weights, None, seed=seed)
    if kind == "pairwise":
        weights = rng.uniform(0.1, 1.0, size=layer_count)
        scale = 0.1 if interaction_scale is None else interaction_scale
        interaction = _symmetric_noise(layer_count, scale, rng)
        return SyntheticGameSpec("pairwise", layer_count, weights, interaction, seed=seed)
    if kind == "degradation":
        weights = rng.uniform(0.02, 0.12, size=layer_count)
        scale = 0.003 if interaction_scale is None else interaction_scale
        interaction = _symmetric_noise(layer_count, scale, rng)
        return SyntheticGameSpec(
            "degradation", layer_count, weights, interaction,
            base_ppl=base_ppl, sharpness=sharpness, seed=seed,
        )
    raise ValueError(f"unknown game kind {kind!r}")


def _symmetric_noise(n: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    m = rng.normal(0.0, scale, size=(n, n))
    m = np.triu(m, k=1)
    return m + m.T


class SyntheticOracle(UtilityOracle):
    """Deterministic utility evaluator for a SyntheticGameSpec."""

    def __init__(self, spec: SyntheticGameSpec):
        self.spec = spec
        self.layer_count = spec.layer_count
        self.direction = "lower" if spec.kind == "degradation" else "higher"
        ones = np.ones((1, spec.layer_count), dtype=np.float64)
        self.baseline_utility = float(self._raw(ones)[0])

    def _raw(self, rows: np.ndarray) -> np.ndarray:
        spec = self.spec
        x = rows.astype(np.float64, copy=False)
        if spec.kind == "additive":
            return x @ spec.weights
        if spec.kind == "pairwise":
            u = x @ spec.weights
            u += 0.5 * np.einsum("ni,ni->n", x @ spec.interaction, x)
            return u
        removed = 1.0 - x
        expo = spec.sharpness * (removed @ spec.weights)
        if spec.interaction is not None:
            expo += 0.5 * np.einsum("ni,ni->n", removed @ spec.interaction, removed)
        return spec.base_ppl * np.exp(expo)

    def evaluate(self, mask: Mask) -> float:
        self._check_mask(mask)
        return float(self._raw(mask.to_row()[None, :])[0])

    def evaluate_rows(self, rows: np.ndarray) -> np.ndarray:
        self._check_rows(rows)
        return self._raw(rows)


class ScoreTableOracle(UtilityOracle):
    """Replays stored mask utilities; lookup of an unmeasured mask is an
    error, never an interpolation."""

    def __init__(
        self,
        records: dict[str, float],
        baseline_utility: float,
        layer_count: int,
        direction: str = "lower",
    ):
        for key in records:
            if len(key) != layer_count:
                raise ScoreTableError(
                    f"mask {key!r} has length {len(key)}, expected {layer_count}"
                )
        self.records = dict(records)
        self.layer_count = layer_count
        self.baseline_utility = float(baseline_utility)
        self.direction = direction

    def __len__(self) -> int:
        return len(self.records)

    def evaluate(self, mask: Mask) -> float:
        self._check_mask(mask)
        key = mask.to_string()
        try:
            return self.records[key]
        except KeyError:
            raise MaskNotInTable(key) from None


class NormalizedOracle(UtilityOracle):
    """View of another oracle in normalized score units.

    Utilities become scores in (0, 1] with 1 for the full model, so the
    game is always higher-is-better. Exact Shapley values computed on
    this view are comparable with surrogate-based estimates.
    """

    def __init__(self, base: UtilityOracle):
        self.base = base
        self.layer_count = base.layer_count
        self.baseline_utility = 1.0
        self.direction = "higher"

    def evaluate(self, mask: Mask) -> float:
        return normalize_score(self.base.evaluate(mask), self.base.baseline_utility,
                               self.base.direction)

    def evaluate_rows(self, rows: np.ndarray) -> np.ndarray:
        raw = self.base.evaluate_rows(rows)
        if np.any(raw <= 0):
            raise ValueError("raw utilities must be positive to normalize")
        if self.base.direction == "lower":
            ratio = self.base.baseline_utility / raw
        else:
            ratio = raw / self.base.baseline_utility
        return np.clip(ratio, SCORE_FLOOR, 1.0)


class CountingOracle(UtilityOracle):
    """Pass-through wrapper that counts utility evaluations.

    The counter is lock-guarded so worker pools can share one instance.
    """

    def __init__(self, base: UtilityOracle):
        self.base = base
        self.layer_count = base.layer_count
        self.baseline_utility = base.baseline_utility
        self.direction = base.direction
        self.calls = 0
        self._lock = threading.Lock()

    def evaluate(self, mask: Mask) -> float:
        with self._lock:
            self.calls += 1
        return self.base.evaluate(mask)

    def evaluate_rows(self, rows: np.ndarray) -> np.ndarray:
        with self._lock:
            self.calls += len(rows)
        return self.base.evaluate_rows(rows)


def marginal_contribution(oracle: UtilityOracle, subset_mask: Mask, layer: int) -> float:
    """Utility change from adding `layer` to the coalition in subset_mask."""
    if not 0 <= layer < oracle.layer_count:
        raise IndexError(f"layer {layer} out of range")
    if subset_mask.bits[layer]:
        raise ValueError(f"layer {layer} is already present in the coalition")
    with_layer = subset_mask.with_layer(layer, True)
    return oracle.evaluate(with_layer) - oracle.evaluate(subset_mask)


def save_game_spec(spec: SyntheticGameSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec.to_json_obj(), fh, indent=2)
        fh.write("\n")


def load_game_spec(path) -> SyntheticGameSpec:
    with open(path, encoding="utf-8") as fh:
        return SyntheticGameSpec.from_json_obj(json.load(fh))


def write_score_table(
    path,
    records: list[MaskScoreRecord],
    baseline_utility: float,
    layer_count: int,
    direction: str = "lower",
) -> None:
    """Write the JSON Lines score-table format: a header line followed by
    one record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "baseline_utility": baseline_utility,
            "layer_count": layer_count,
            "direction": direction,
        }
        fh.write(json.dumps(header) + "\n")
        for rec in records:
            obj = {"mask": rec.mask.to_string(), "raw_utility": rec.raw_utility,
                   "score": rec.score}
            if rec.meta:
                obj["meta"] = rec.meta
            fh.write(json.dumps(obj) + "\n")


def _parse_score_file(path, allow_duplicates: bool):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ScoreTableError(f"{path}: empty score table")
    try:
        header = json.loads(lines[0])
        baseline = float(header["baseline_utility"])
        layer_count = int(header["layer_count"])
        direction = header.get("direction", "lower")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ScoreTableError(f"{path}:1: bad header: {exc}") from exc

    entries = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            mask_text = obj["mask"]
            raw = float(obj["raw_utility"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ScoreTableError(f"{path}:{lineno}: bad record: {exc}") from exc
        if len(mask_text) != layer_count:
            raise ScoreTableError(
                f"{path}:{lineno}: mask length {len(mask_text)} != layer_count {layer_count}"
            )
        try:
            mask = mask_from_string(mask_text)
        except MaskError as exc:
            raise ScoreTableError(f"{path}:{lineno}: {exc}") from exc
        if not allow_duplicates:
            if mask_text in seen:
                raise ScoreTableError(f"{path}:{lineno}: duplicate mask {mask_text!r}")
            seen.add(mask_text)
        entries.append((mask, raw, obj.get("meta", {})))
    return entries, baseline, layer_count, direction


def load_score_table(path) -> ScoreTableOracle:
    """Load a mask -> raw-utility table; duplicates and length mismatches
    are rejected with the offending line number."""
    entries, baseline, layer_count, direction = _parse_score_file(path, allow_duplicates=False)
    records = {mask.to_string(): raw for mask, raw, _ in entries}
    return ScoreTableOracle(records, baseline, layer_count, direction)


def load_score_records(path) -> tuple[list[MaskScoreRecord], dict]:
    """Load a score file as training records, scores recomputed from the
    stored raw utilities.

    Unlike load_score_table this keeps duplicate masks: stratified
    sampling draws with replacement, so repeats are legitimate
    supervision records.
    """
    entries, baseline, layer_count, direction = _parse_score_file(path, allow_duplicates=True)
    records = [
        MaskScoreRecord(
            mask=mask,
            raw_utility=raw,
            score=normalize_score(raw, baseline, direction),
            meta={str(k): str(v) for k, v in meta.items()},
        )
        for mask, raw, meta in entries
    ]
    header = {"baseline_utility": baseline, "layer_count": layer_count,
              "direction": direction}
    return records, header
