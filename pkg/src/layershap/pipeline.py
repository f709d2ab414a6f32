"""Three-stage pipeline: sample and score masks, train the surrogate,
then estimate contributions and emit pruning plans.

Stage 1 is the only stage that touches the utility oracle; stage 3 runs
entirely through the surrogate. The run manifest records per-stage call
counters and a content hash of every output file, so the cost asymmetry
and determinism of a run can be audited after the fact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .core import HammingWeightPlan, MaskScoreRecord, UtilityOracle, rows_to_masks
from .oracles import (
    CountingOracle,
    SCORE_FLOOR,
    load_game_spec,
    load_score_records,
    load_score_table,
    SyntheticOracle,
    write_score_table,
)
from .pruning import make_plan
from .sampling import RNG_NAME, SamplerConfig, sample_stratified_rows
from .shapley import EstimatorConfig, estimate_contributions
from .surrogate import TrainConfig, load_checkpoint, lr_for_epoch, save_checkpoint, train

OUT_DIR_ENV = "LAYERSHAP_OUT_DIR"

# Stage-3 scoring is split into fixed-size chunks before any worker pool
# sees it, so the pool size cannot change the outputs.
_STAGE3_CHUNK = 8192

__all__ = [
    "PipelineConfig",
    "load_pipeline_config",
    "resolve_oracle",
    "run_stage1",
    "run_stage2",
    "run_stage3",
    "run_all",
    "OUT_DIR_ENV",
]


@dataclass(frozen=True)
class PipelineConfig:
    """Flat pipeline settings. Defaults mirror the standard 32-layer
    recipe: weights {30,27,24,21,18}, 8000 stage-1 samples, 200 epochs,
    80000 stage-3 samples, seed 42."""

    layers: int = 32
    hamming_weights: tuple[int, ...] = (30, 27, 24, 21, 18)
    stage1_samples: int = 8000
    stage2_epochs: int = 200
    stage3_samples: int = 80000
    seed: int = 42
    oracle: str | None = None
    score_table: str | None = None
    out_dir: str = "layershap-run"
    remove_counts: tuple[int, ...] = (3, 6, 9, 12)
    variant: str = "force"
    train_batch: int = 300
    learning_rate: float = 0.008
    momentum: float = 0.9
    mask_eval_batch: int = 45
    workers: int = 1
    dedupe: bool = False
    figures: bool = True

    def __post_init__(self) -> None:
        if self.oracle and self.score_table:
            raise ValueError("configure either an oracle spec or a score table, not both")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        for n in self.remove_counts:
            if not 0 <= n <= self.layers:
                raise ValueError(f"remove count {n} outside [0, {self.layers}]")

    def stage1_plan(self) -> HammingWeightPlan:
        return HammingWeightPlan.split_evenly(self.hamming_weights, self.stage1_samples)

    def to_json_obj(self) -> dict:
        obj = {}
        for f in fields(self):
            value = getattr(self, f.name)
            obj[f.name] = list(value) if isinstance(value, tuple) else value
        return obj


_TUPLE_KEYS = {"hamming_weights", "remove_counts"}
_BOOL_KEYS = {"dedupe", "figures"}
_FLOAT_KEYS = {"learning_rate", "momentum"}
_STR_KEYS = {"oracle", "score_table", "out_dir", "variant"}


def _coerce(key: str, value: str):
    value = value.strip()
    if key in _TUPLE_KEYS:
        return tuple(int(v) for v in value.replace(" ", "").split(",") if v)
    if key in _BOOL_KEYS:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot read boolean {key}={value!r}")
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _STR_KEYS:
        return value or None
    return int(value)


def load_pipeline_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Build a config from a flat key=value file plus overrides.

    Lines starting with '#' are comments. Override values may be strings
    (coerced like file values) or already typed.
    """
    known = {f.name for f in fields(PipelineConfig)}
    values: dict = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _coerce(key, value) if isinstance(value, str) else value
    return PipelineConfig(**values)


def resolve_oracle(config: PipelineConfig) -> UtilityOracle:
    if config.oracle:
        return SyntheticOracle(load_game_spec(config.oracle))
    if config.score_table:
        return load_score_table(config.score_table)
    raise ValueError("config names neither an oracle spec nor a score table")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _evaluate_chunked(oracle: UtilityOracle, rows: np.ndarray, batch: int, workers: int) -> np.ndarray:
    chunks = [rows[i:i + batch] for i in range(0, len(rows), batch)]
    if not chunks:
        return np.zeros(0)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(oracle.evaluate_rows, chunks))
    else:
        parts = [oracle.evaluate_rows(c) for c in chunks]
    return np.concatenate(parts)


class _PooledSurrogateScorer:
    """Surrogate scorer that fans fixed-size chunks out to a thread pool.

    Chunk boundaries are independent of the pool size, keeping scores
    bit-identical across worker counts.
    """

    name = "surrogate"

    def __init__(self, model, workers: int = 1, chunk: int = _STAGE3_CHUNK):
        self.model = model
        self.layer_count = model.input_dim
        self.workers = workers
        self.chunk = chunk
        self.forward_count = 0

    def score_rows(self, rows: np.ndarray) -> np.ndarray:
        self.forward_count += len(rows)
        chunks = [rows[i:i + self.chunk] for i in range(0, len(rows), self.chunk)]
        if self.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                parts = list(pool.map(self.model.forward_rows, chunks))
        else:
            parts = [self.model.forward_rows(c) for c in chunks]
        return np.concatenate(parts)


def run_stage1(config: PipelineConfig, out_dir: Path | None = None) -> tuple[Path, dict]:
    """Sample stratified masks, score them with the oracle, and write the
    score table. All records are evaluated before anything is written, so
    a failing oracle leaves no partial output behind."""
    out_dir = Path(out_dir or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    oracle = CountingOracle(resolve_oracle(config))
    if oracle.layer_count != config.layers:
        raise ValueError(
            f"oracle covers {oracle.layer_count} layers, config says {config.layers}"
        )
    plan = config.stage1_plan()
    sampler = SamplerConfig(config.layers, plan, seed=config.seed, dedupe=config.dedupe)
    rows, strata = sample_stratified_rows(sampler)

    raw = _evaluate_chunked(oracle, rows, config.mask_eval_batch, config.workers)
    if oracle.direction == "lower":
        ratio = oracle.baseline_utility / raw
    else:
        ratio = raw / oracle.baseline_utility
    clamped_high = int(np.sum(ratio > 1.0))
    scores = np.clip(ratio, SCORE_FLOOR, 1.0)

    records = [
        MaskScoreRecord(mask=m, raw_utility=float(u), score=float(s),
                        meta={"stratum": str(int(k))})
        for m, u, s, k in zip(rows_to_masks(rows), raw, scores, strata)
    ]
    scores_path = out_dir / "scores.jsonl"
    write_score_table(scores_path, records, oracle.baseline_utility,
                      config.layers, oracle.direction)

    manifest = {
        "seed": config.seed,
        "strata": plan.to_json_obj(),
        "records": len(records),
        "oracle_calls": oracle.calls,
        "clamped_scores": clamped_high,
        "wall_time_s": round(time.perf_counter() - started, 4),
        "outputs": [scores_path.name],
    }
    return scores_path, manifest


def run_stage2(config: PipelineConfig, scores_path, out_dir: Path | None = None) -> tuple[Path, dict]:
    """Train the surrogate on the stage-1 score table; writes the
    checkpoint, the per-epoch loss curve CSV, and its figure."""
    out_dir = Path(out_dir or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    records, _ = load_score_records(scores_path)
    train_config = TrainConfig(
        epochs=config.stage2_epochs,
        batch_size=config.train_batch,
        learning_rate=config.learning_rate,
        momentum=config.momentum,
        seed=config.seed,
    )
    model, curve = train(records, train_config)

    ckpt_path = out_dir / "surrogate.json"
    save_checkpoint(model, ckpt_path)
    curve_path = out_dir / "loss_curve.csv"
    with open(curve_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "mse"])
        for epoch, mse in enumerate(curve):
            writer.writerow([epoch, lr_for_epoch(train_config, epoch), repr(mse)])
    outputs = [ckpt_path.name, curve_path.name]
    if config.figures:
        from .plots import plot_loss_curve

        fig_path = out_dir / "loss_curve.png"
        plot_loss_curve(curve, fig_path, decay_every=train_config.lr_decay_every)
        outputs.append(fig_path.name)

    manifest = {
        "epochs": config.stage2_epochs,
        "training_records": len(records),
        "final_loss": curve[-1],
        "wall_time_s": round(time.perf_counter() - started, 4),
        "outputs": outputs,
    }
    return ckpt_path, manifest


def run_stage3(config: PipelineConfig, ckpt_path, out_dir: Path | None = None) -> tuple[Path, dict]:
    """Estimate contributions through the surrogate (no oracle calls) and
    emit the report plus one pruning plan per requested depth."""
    out_dir = Path(out_dir or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    model = load_checkpoint(ckpt_path)
    if model.input_dim != config.layers:
        raise ValueError(
            f"checkpoint expects {model.input_dim} layers, config says {config.layers}"
        )
    scorer = _PooledSurrogateScorer(model, workers=config.workers)
    est_config = EstimatorConfig.with_weights(
        config.stage3_samples, config.hamming_weights,
        seed=config.seed + 1, variant=config.variant,
    )
    report = estimate_contributions(scorer, est_config)

    report_path = out_dir / "report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_obj(), fh, indent=2)
        fh.write("\n")
    csv_path = out_dir / "report.csv"
    ranking = report.ranking()
    prune_rank = {layer: pos for pos, layer in enumerate(ranking)}
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "phi", "prune_rank"])
        for layer, value in enumerate(report.phi):
            writer.writerow([layer, repr(value), prune_rank[layer]])

    outputs = [report_path.name, csv_path.name]
    plan_paths = []
    for n in config.remove_counts:
        plan = make_plan(report, n)
        plan_path = out_dir / f"plan_remove_{n}.json"
        with open(plan_path, "w", encoding="utf-8") as fh:
            json.dump(plan.to_json_obj(), fh, indent=2)
            fh.write("\n")
        plan_paths.append(plan_path)
        outputs.append(plan_path.name)
    if config.figures:
        from .plots import plot_contributions

        fig_path = out_dir / "contributions.png"
        plot_contributions(report.phi, fig_path, remove_counts=config.remove_counts)
        outputs.append(fig_path.name)

    manifest = {
        "seed": est_config.seed,
        "base_masks": config.stage3_samples,
        "variant": config.variant,
        "oracle_calls": 0,
        "surrogate_forwards": scorer.forward_count,
        "report_id": report.report_id(),
        "wall_time_s": round(time.perf_counter() - started, 4),
        "outputs": outputs,
    }
    return report_path, manifest


def run_all(config: PipelineConfig) -> dict:
    """Run stages 1 to 3 and write the manifest. The output directory can
    be overridden with the LAYERSHAP_OUT_DIR environment variable."""
    out_dir = Path(os.environ.get(OUT_DIR_ENV) or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    scores_path, stage1 = run_stage1(config, out_dir)
    ckpt_path, stage2 = run_stage2(config, scores_path, out_dir)
    _, stage3 = run_stage3(config, ckpt_path, out_dir)

    manifest = {
        "config": config.to_json_obj(),
        "rng": RNG_NAME,
        "stages": {"stage1": stage1, "stage2": stage2, "stage3": stage3},
        "files": {},
    }
    names = sorted({n for stage in (stage1, stage2, stage3) for n in stage["outputs"]})
    manifest["files"] = {name: _sha256(out_dir / name) for name in names}
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
