"""Core value objects shared by every stage.

Masks encode coalitions of retained layers as fixed-length bit vectors.
All types here are immutable after construction and safe to share across
threads. Layer indices are 0-based everywhere, including file formats.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mask",
    "MaskError",
    "MaskScoreRecord",
    "HammingWeightPlan",
    "ShapleyReport",
    "PruningPlan",
    "UtilityOracle",
    "mask_from_string",
    "apply_layer",
    "masks_to_rows",
    "rows_to_masks",
]


class MaskError(ValueError):
    """Raised for malformed mask text or inconsistent mask dimensions."""


@dataclass(frozen=True)
class Mask:
    """Binary retain-vector over the layers of a model.

    Bit i is True when layer i is kept. The canonical text form is a
    '0'/'1' string with index 0 leftmost.
    """

    bits: tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.bits) == 0:
            raise MaskError("mask must cover at least one layer")

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def layer_count(self) -> int:
        return len(self.bits)

    def hamming_weight(self) -> int:
        """Number of retained layers."""
        return sum(self.bits)

    def to_string(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    def to_row(self) -> np.ndarray:
        """Mask as a float row vector, for numeric code paths."""
        return np.asarray(self.bits, dtype=np.float64)

    def retained_layers(self) -> list[int]:
        return [i for i, b in enumerate(self.bits) if b]

    def removed_layers(self) -> list[int]:
        return [i for i, b in enumerate(self.bits) if not b]

    def with_layer(self, layer: int, on: bool) -> "Mask":
        """Copy of this mask with one bit forced to the requested state."""
        return apply_layer(self, layer, on)

    @classmethod
    def from_string(cls, text: str) -> "Mask":
        return mask_from_string(text)

    @classmethod
    def ones(cls, layer_count: int) -> "Mask":
        return cls(bits=(True,) * layer_count)

    @classmethod
    def zeros(cls, layer_count: int) -> "Mask":
        return cls(bits=(False,) * layer_count)

    def __str__(self) -> str:
        return self.to_string()


def mask_from_string(text: str) -> Mask:
    """Parse the canonical '0'/'1' text form into a Mask.

    Raises MaskError on empty input or any character other than 0/1.
    """
    if not text:
        raise MaskError("empty mask string")
    bad = set(text) - {"0", "1"}
    if bad:
        raise MaskError(f"invalid mask character(s) {sorted(bad)!r} in {text!r}")
    return Mask(bits=tuple(c == "1" for c in text))


def apply_layer(mask: Mask, layer: int, on: bool) -> Mask:
    """Force one bit of a mask, leaving every other bit untouched.

    Idempotent: forcing a bit to its current state returns an equal mask.
    """
    if not 0 <= layer < len(mask):
        raise IndexError(f"layer {layer} out of range for {len(mask)}-layer mask")
    bits = list(mask.bits)
    bits[layer] = bool(on)
    return Mask(bits=tuple(bits))


def masks_to_rows(masks: "list[Mask]") -> np.ndarray:
    """Stack masks into an (n, L) uint8 matrix. All masks must share L."""
    if not masks:
        raise MaskError("no masks to stack")
    layer_count = len(masks[0])
    if any(len(m) != layer_count for m in masks):
        raise MaskError("masks of mixed lengths cannot be stacked")
    return np.array([m.bits for m in masks], dtype=np.uint8)


def rows_to_masks(rows: np.ndarray) -> list[Mask]:
    return [Mask(bits=tuple(bool(v) for v in row)) for row in rows]


@dataclass(frozen=True)
class MaskScoreRecord:
    """One supervision pair: a mask, its raw utility, and its normalized score.

    score is the baseline-relative performance ratio, clamped into
    (0, 1]; the all-ones mask scores exactly 1.
    """

    mask: Mask
    raw_utility: float
    score: float
    meta: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class HammingWeightPlan:
    """Target Hamming weights and the per-stratum sample quota.

    weights are distinct integers in [0, L]; per_stratum entries are
    non-negative and aligned with weights.
    """

    weights: tuple[int, ...]
    per_stratum: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.weights) == 0:
            raise ValueError("a sampling plan needs at least one stratum")
        if len(set(self.weights)) != len(self.weights):
            raise ValueError(f"duplicate Hamming weights in {self.weights}")
        if len(self.per_stratum) != len(self.weights):
            raise ValueError("per-stratum counts must align with weights")
        if any(k < 0 for k in self.weights):
            raise ValueError("Hamming weights must be non-negative")
        if any(c < 0 for c in self.per_stratum):
            raise ValueError("per-stratum counts must be non-negative")

    @property
    def total(self) -> int:
        return sum(self.per_stratum)

    @classmethod
    def split_evenly(cls, weights, total: int) -> "HammingWeightPlan":
        """Plan that divides `total` across strata, remainder to the first few."""
        from .sampling import allocate_per_stratum

        weights = tuple(int(k) for k in weights)
        counts = allocate_per_stratum(total, len(weights))
        return cls(weights=weights, per_stratum=tuple(counts))

    def to_json_obj(self) -> dict:
        return {"weights": list(self.weights), "per_stratum": list(self.per_stratum)}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "HammingWeightPlan":
        return cls(
            weights=tuple(int(k) for k in obj["weights"]),
            per_stratum=tuple(int(c) for c in obj["per_stratum"]),
        )


def ranking_from_phi(phi) -> list[int]:
    """Layers ordered by ascending contribution, ties by ascending index.

    The front of the ranking is the first layer a pruning plan removes.
    """
    values = np.asarray(phi, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("contribution vector contains non-finite entries")
    return sorted(range(len(values)), key=lambda i: (values[i], i))


@dataclass(frozen=True)
class ShapleyReport:
    """Per-layer contribution estimates plus the sampling metadata behind them."""

    phi: tuple[float, ...]
    num_mc_samples: int
    strata: HammingWeightPlan
    seed: int
    variant: str  # "force" or "add"
    scorer: str = "surrogate"
    rng: str = "pcg64"

    def __post_init__(self) -> None:
        if self.num_mc_samples < 1:
            raise ValueError("num_mc_samples must be positive")
        if self.variant not in ("force", "add"):
            raise ValueError(f"unknown estimator variant {self.variant!r}")
        if not all(np.isfinite(v) for v in self.phi):
            raise ValueError("report contains non-finite contributions")

    @property
    def layer_count(self) -> int:
        return len(self.phi)

    def ranking(self) -> list[int]:
        return ranking_from_phi(self.phi)

    def report_id(self) -> str:
        """Content hash identifying this report; stable across reruns."""
        payload = json.dumps(self.to_json_obj(include_id=False), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_json_obj(self, include_id: bool = True) -> dict:
        obj = {
            "layer_count": self.layer_count,
            "phi": list(self.phi),
            "ranking": self.ranking(),
            "num_mc_samples": self.num_mc_samples,
            "strata": self.strata.to_json_obj(),
            "seed": self.seed,
            "variant": self.variant,
            "scorer": self.scorer,
            "rng": self.rng,
        }
        if include_id:
            obj["report_id"] = self.report_id()
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ShapleyReport":
        return cls(
            phi=tuple(float(v) for v in obj["phi"]),
            num_mc_samples=int(obj["num_mc_samples"]),
            strata=HammingWeightPlan.from_json_obj(obj["strata"]),
            seed=int(obj["seed"]),
            variant=obj["variant"],
            scorer=obj.get("scorer", "surrogate"),
            rng=obj.get("rng", "pcg64"),
        )


@dataclass(frozen=True)
class PruningPlan:
    """Ordered list of layer indices to remove, lowest contribution first.

    Plans from the same report are prefix-stable: the n-layer plan is the
    first n entries of the (n+1)-layer plan.
    """

    removed_layers: tuple[int, ...]
    target_remove_count: int
    report_ref: str
    phi: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if len(self.removed_layers) != self.target_remove_count:
            raise ValueError("plan length disagrees with target_remove_count")
        if len(set(self.removed_layers)) != len(self.removed_layers):
            raise ValueError("plan removes a layer twice")

    def to_json_obj(self) -> dict:
        return {
            "removed_layers": list(self.removed_layers),
            "remove_count": self.target_remove_count,
            "report_ref": self.report_ref,
            "phi": list(self.phi),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "PruningPlan":
        return cls(
            removed_layers=tuple(int(i) for i in obj["removed_layers"]),
            target_remove_count=int(obj["remove_count"]),
            report_ref=obj["report_ref"],
            phi=tuple(float(v) for v in obj.get("phi", [])),
        )


class UtilityOracle:
    """Contract for coalition-utility evaluators.

    Subclasses expose layer_count, baseline_utility (utility of the
    all-ones mask), direction ("lower" when smaller raw utility is
    better, "higher" otherwise), and a deterministic evaluate().
    """

    layer_count: int
    baseline_utility: float
    direction: str = "lower"

    def evaluate(self, mask: Mask) -> float:
        raise NotImplementedError

    def evaluate_rows(self, rows: np.ndarray) -> np.ndarray:
        """Vectorized evaluation of an (n, L) bit matrix; default loops."""
        self._check_rows(rows)
        return np.array([self.evaluate(m) for m in rows_to_masks(rows)], dtype=np.float64)

    def _check_mask(self, mask: Mask) -> None:
        if len(mask) != self.layer_count:
            raise MaskError(
                f"mask length {len(mask)} does not match oracle layer count {self.layer_count}"
            )

    def _check_rows(self, rows: np.ndarray) -> None:
        if rows.ndim != 2 or rows.shape[1] != self.layer_count:
            raise MaskError(
                f"expected (n, {self.layer_count}) mask rows, got shape {rows.shape}"
            )
