"""Command-line interface.

Verbs: sample, make-game, evaluate, train, estimate, exact, plan,
diagnose (pairs | volatility), run-all. Report-producing commands render
a matplotlib figure next to their delimited output unless --no-figures
is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import plots
from .core import HammingWeightPlan, Mask, ShapleyReport, mask_from_string
from .oracles import (
    MaskNotInTable,
    SyntheticOracle,
    load_game_spec,
    load_score_records,
    load_score_table,
    random_game_spec,
    save_game_spec,
)
from .pipeline import (
    PipelineConfig,
    load_pipeline_config,
    run_all,
    run_stage1,
)
from .pruning import best_pair_search, make_plan, rank_volatility
from .sampling import SamplerConfig, sample_stratified_rows
from .shapley import (
    EstimatorConfig,
    OracleScorer,
    SurrogateScorer,
    estimate_contributions,
    exact_shapley,
)
from .surrogate import TrainConfig, load_checkpoint, lr_for_epoch, save_checkpoint, train


def _parse_weights(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _load_oracle_arg(path: str):
    return SyntheticOracle(load_game_spec(path))


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _cmd_sample(args) -> int:
    plan = HammingWeightPlan.split_evenly(_parse_weights(args.weights), args.count)
    config = SamplerConfig(args.layers, plan, seed=args.seed, dedupe=args.dedupe)
    rows, strata = sample_stratified_rows(config)
    with open(args.out, "w", encoding="utf-8") as fh:
        for row, k in zip(rows, strata):
            mask = "".join("1" if v else "0" for v in row)
            fh.write(json.dumps({"mask": mask, "stratum": int(k)}) + "\n")
    print(f"wrote {len(rows)} masks to {args.out}")
    return 0


def _cmd_make_game(args) -> int:
    spec = random_game_spec(
        args.kind, args.layers, args.seed,
        interaction_scale=args.interaction_scale,
        base_ppl=args.base_ppl, sharpness=args.sharpness,
    )
    save_game_spec(spec, args.out)
    oracle = SyntheticOracle(spec)
    print(f"wrote {args.kind} game over {args.layers} layers to {args.out} "
          f"(baseline utility {oracle.baseline_utility:.6g})")
    return 0


def _cmd_evaluate(args) -> int:
    overrides = {
        "layers": args.layers, "hamming_weights": args.weights,
        "stage1_samples": args.count, "seed": args.seed,
        "out_dir": str(Path(args.out).parent or "."),
        "workers": args.workers, "mask_eval_batch": args.batch,
        "dedupe": args.dedupe,
    }
    if args.oracle:
        overrides["oracle"] = args.oracle
    else:
        overrides["score_table"] = args.table
    config = load_pipeline_config(None, overrides)
    scores_path, manifest = run_stage1(config, Path(args.out).parent or Path("."))
    target = Path(args.out)
    if scores_path != target:
        scores_path.replace(target)
    print(f"wrote {manifest['records']} scored masks to {target} "
          f"({manifest['oracle_calls']} oracle calls, "
          f"{manifest['clamped_scores']} clamped scores)")
    return 0


def _cmd_train(args) -> int:
    records, _ = load_score_records(args.data)
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch,
        learning_rate=args.lr, momentum=args.momentum,
        seed=args.seed, shuffle=not args.no_shuffle,
    )
    model, curve = train(records, config)
    save_checkpoint(model, args.out)
    with open(args.loss_curve, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "mse"])
        for epoch, mse in enumerate(curve):
            writer.writerow([epoch, lr_for_epoch(config, epoch), repr(mse)])
    if not args.no_figures:
        fig = Path(args.loss_curve).with_suffix(".png")
        plots.plot_loss_curve(curve, fig, decay_every=config.lr_decay_every)
        print(f"loss-curve figure: {fig}")
    print(f"trained on {len(records)} records for {args.epochs} epochs, "
          f"final MSE {curve[-1]:.3e}; checkpoint: {args.out}")
    return 0


def _cmd_estimate(args) -> int:
    if args.scorer:
        scorer = SurrogateScorer(load_checkpoint(args.scorer))
    else:
        scorer = OracleScorer(_load_oracle_arg(args.oracle), normalize=not args.raw)
    weights = _parse_weights(args.weights) if args.weights else tuple(
        range(0, scorer.layer_count + 1)
    )
    config = EstimatorConfig.with_weights(args.mc, weights, seed=args.seed,
                                          variant=args.variant)
    report = estimate_contributions(scorer, config)
    _write_json(args.out, report.to_json_obj())
    if not args.no_figures:
        fig = Path(args.out).with_suffix(".png")
        plots.plot_contributions(report.phi, fig)
        print(f"contribution figure: {fig}")
    print(f"estimated {scorer.layer_count} layer contributions "
          f"(Q={args.mc}, variant={args.variant}); report: {args.out}")
    print(f"prune order: {report.ranking()}")
    return 0


def _cmd_exact(args) -> int:
    oracle = _load_oracle_arg(args.oracle)
    from .oracles import NormalizedOracle

    use_scores = (oracle.direction == "lower") if not args.raw else False
    target = NormalizedOracle(oracle) if use_scores else oracle
    phi = exact_shapley(target, max_layers=args.cap)
    from .core import ranking_from_phi

    obj = {
        "layer_count": oracle.layer_count,
        "phi": phi.tolist(),
        "ranking": ranking_from_phi(phi),
        "utility_units": "score" if use_scores else "raw",
        "method": "exact-enumeration",
    }
    _write_json(args.out, obj)
    print(f"exact values for {oracle.layer_count} layers written to {args.out}")
    return 0


def _cmd_plan(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        report = ShapleyReport.from_json_obj(json.load(fh))
    plan = make_plan(report, args.remove)
    _write_json(args.out, plan.to_json_obj())
    print(f"remove {args.remove} layers: {list(plan.removed_layers)}; plan: {args.out}")
    return 0


def _cmd_diagnose_pairs(args) -> int:
    oracle = _load_oracle_arg(args.oracle)
    result = best_pair_search(oracle)
    print(f"greedy pair  : {result.greedy_pair}  utility {result.greedy_utility:.6f}")
    print(f"optimal pair : {result.best_pair}  utility {result.best_utility:.6f}")
    if result.greedy_is_optimal():
        print("greedy matches the exhaustive optimum")
    else:
        print("greedy misses the optimum: inter-layer interaction detected")
    if args.out:
        _write_json(args.out, {
            "best_pair": list(result.best_pair),
            "best_utility": result.best_utility,
            "greedy_pair": list(result.greedy_pair),
            "greedy_utility": result.greedy_utility,
        })
    return 0


def _cmd_diagnose_volatility(args) -> int:
    oracle = _load_oracle_arg(args.oracle)
    contexts = []
    with open(args.contexts, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                contexts.append(mask_from_string(json.loads(line)["mask"]))
    entries = rank_volatility(oracle, contexts)
    out = Path(args.out) if args.out else Path("volatility.csv")
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["context", "layer", "rank_full", "rank_context", "delta_rank"])
        for entry in entries:
            for layer, rf, rc, dr in zip(entry.layers, entry.rank_in_full,
                                         entry.rank_in_context, entry.delta_rank):
                writer.writerow([entry.context.to_string(), layer, rf, rc, dr])
    nonzero = sum(1 for e in entries for d in e.delta_rank if d != 0)
    print(f"{len(entries)} contexts, {nonzero} shifted ranks; table: {out}")
    if not args.no_figures:
        fig = out.with_suffix(".png")
        plots.plot_rank_volatility(entries, fig)
        print(f"volatility figure: {fig}")
    return 0


def _cmd_run_all(args) -> int:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    config = load_pipeline_config(args.config, overrides)
    manifest = run_all(config)
    stage1, stage3 = manifest["stages"]["stage1"], manifest["stages"]["stage3"]
    print(f"stage 1: {stage1['oracle_calls']} oracle calls "
          f"({stage1['clamped_scores']} clamped scores)")
    print(f"stage 2: final loss {manifest['stages']['stage2']['final_loss']:.3e}")
    print(f"stage 3: {stage3['surrogate_forwards']} surrogate forwards, "
          f"{stage3['oracle_calls']} oracle calls")
    out_dir = Path(list(manifest["files"])[0]).parent
    print(f"outputs: {sorted(manifest['files'])}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="layershap",
        description="Layer-contribution estimation and pruning plans via "
                    "stratified mask sampling, a surrogate scorer, and "
                    "Shapley-style attribution.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw stratified masks to a JSONL file")
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--weights", required=True, help="comma-separated Hamming weights")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.add_argument("--dedupe", action="store_true")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("make-game", help="write a seeded synthetic game spec")
    p.add_argument("--kind", choices=["additive", "pairwise", "degradation"],
                   required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--interaction-scale", type=float, default=None)
    p.add_argument("--base-ppl", type=float, default=15.0)
    p.add_argument("--sharpness", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_make_game)

    p = sub.add_parser("evaluate", help="stage 1: sample masks and score them")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--oracle", help="synthetic game spec JSON")
    src.add_argument("--table", help="externally measured score table JSONL")
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--count", type=int, default=8000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--batch", type=int, default=45, help="oracle batch size (throughput only)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--dedupe", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("train", help="stage 2: fit the surrogate scorer")
    p.add_argument("--data", required=True, help="scores JSONL from evaluate")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.008)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch", type=int, default=300)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--out", required=True, help="checkpoint JSON path")
    p.add_argument("--loss-curve", required=True, help="per-epoch CSV path")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("estimate", help="stage 3: Monte Carlo layer contributions")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scorer", help="surrogate checkpoint JSON")
    src.add_argument("--oracle", help="score directly from a game spec")
    p.add_argument("--raw", action="store_true",
                   help="with --oracle, use raw utilities instead of scores")
    p.add_argument("--weights", help="comma-separated Hamming weights for base masks")
    p.add_argument("--mc", type=int, default=80000, help="base-mask count Q")
    p.add_argument("--seed", type=int, default=43)
    p.add_argument("--variant", choices=["force", "add"], default="force")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("exact", help="exact Shapley values by enumeration (small L)")
    p.add_argument("--oracle", required=True)
    p.add_argument("--raw", action="store_true", help="skip score normalization")
    p.add_argument("--cap", type=int, default=16, help="max layer count to enumerate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_exact)

    p = sub.add_parser("plan", help="derive a pruning plan from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--remove", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("diagnose", help="interaction diagnostics")
    dsub = p.add_subparsers(dest="diagnostic", required=True)
    d = dsub.add_parser("pairs", help="greedy vs exhaustive pair deletion")
    d.add_argument("--oracle", required=True)
    d.add_argument("--out")
    d.set_defaults(func=_cmd_diagnose_pairs)
    d = dsub.add_parser("volatility", help="rank shifts under pruned contexts")
    d.add_argument("--oracle", required=True)
    d.add_argument("--contexts", required=True, help="JSONL of context masks")
    d.add_argument("--out")
    d.add_argument("--no-figures", action="store_true")
    d.set_defaults(func=_cmd_diagnose_volatility)

    p = sub.add_parser("run-all", help="run stages 1-3 and write the manifest")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--out-dir")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.set_defaults(func=_cmd_run_all)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MaskNotInTable as exc:
        print(f"error: mask {exc.args[0]} is not in the score table; "
              f"the run was aborted before writing output", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
