"""Command-line entry point.

Every subcommand reads an optional ``--config`` TOML file, applies the flags
given on the command line on top of it, and writes its outputs under
``--out``. Failures exit with status 2 and a ``[stage]`` tagged message.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig, dump_config, load_config, with_overrides
from .corpus import CorpusError, save_snapshot, write_interactions
from .experiment import (
    ReportError,
    StageError,
    evaluate_model,
    fit_model,
    load_corpus,
    make_split,
    metrics_payload,
    recency_weights,
    report,
    run_experiments,
    stage,
    write_front,
    write_json,
)
from .models import load_model, save_model
from .moo import front_verdict
from .protocols import read_manifest, write_manifest
from .synthetic import generate_drift_corpus
from .trainer import read_pareto_csv, write_pareto_csv

log = logging.getLogger("temporec")


def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", type=Path, help="TOML experiment config")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_corpus(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", type=Path, help="preprocessed corpus snapshot directory")


def _add_split(p: argparse.ArgumentParser) -> None:
    p.add_argument("--protocol", choices=["traditional", "proportional", "cutoff", "strict_cutoff"])
    p.add_argument("--phase", choices=["development", "deployment_ready"])
    p.add_argument("--holdout-frac", type=float, dest="holdout_fraction")
    p.add_argument("--val-user-frac", type=float, dest="val_user_fraction")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--cutoff-quantile", type=float)
    g.add_argument("--cutoff-time", type=int)
    p.add_argument("--test-design", choices=["temporal", "user_split"])


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=["popularity", "svd", "vae"], dest="model_name")
    p.add_argument("--objectives", nargs="+", choices=["relevance", "recency"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--rank", type=int)
    p.add_argument("--ks", type=int, nargs="+")
    p.add_argument("--pareto-k", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="temporec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic drift corpus as CSV")
    _add_common(p)
    p.add_argument("--users", type=int, dest="n_users")
    p.add_argument("--items", type=int, dest="n_items")
    p.add_argument("--affinity", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--horizon-days", type=float)
    p.add_argument("--launch-fraction", type=float)

    p = sub.add_parser("preprocess", help="binarize, window and k-core filter a corpus")
    _add_common(p)
    p.add_argument("--input", type=Path, help="interaction CSV (user_id,item_id,rating,timestamp)")
    p.add_argument("--min-user-deg", type=int)
    p.add_argument("--min-item-deg", type=int)
    p.add_argument("--binarize-threshold", type=float)
    p.add_argument("--window", type=int, nargs=2, metavar=("START", "END"))

    p = sub.add_parser("split", help="build train/validation/test sets for one protocol")
    _add_common(p)
    _add_corpus(p)
    _add_split(p)

    p = sub.add_parser("train", help="fit a model on a split")
    _add_common(p)
    _add_corpus(p)
    p.add_argument("--split", type=Path, required=True, help="split.json from the split command")
    _add_model(p)

    p = sub.add_parser("evaluate", help="score a trained model on a split")
    _add_common(p)
    _add_corpus(p)
    p.add_argument("--split", type=Path, required=True)
    p.add_argument("--model-file", type=Path, required=True)
    p.add_argument("--ks", type=int, nargs="+")

    p = sub.add_parser("pareto", help="export Pareto fronts and compare two of them")
    _add_common(p)
    p.add_argument("fronts", nargs="+", type=Path, help="pareto.csv files or directories holding one")

    p = sub.add_parser("report", help="tables, front point files and dominance verdicts for bundles")
    _add_common(p)
    p.add_argument("bundles", nargs="+", type=Path)

    p = sub.add_parser("run", help="run the whole pipeline and write a result bundle")
    _add_common(p, out_required=False)
    p.add_argument("--input", type=Path, help="interaction CSV instead of the configured corpus")
    _add_split(p)
    _add_model(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel runs when several configs are given")
    p.add_argument("--extra-config", type=Path, nargs="*", default=[], help="more configs to run")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(getattr(args, "config", None))
    a = vars(args)
    overrides = {
        "seed": a.get("seed"),
        "split.protocol": a.get("protocol"),
        "split.phase": a.get("phase"),
        "split.holdout_fraction": a.get("holdout_fraction"),
        "split.val_user_fraction": a.get("val_user_fraction"),
        "split.cutoff_quantile": a.get("cutoff_quantile"),
        "split.cutoff_time": a.get("cutoff_time"),
        "split.test_design": a.get("test_design"),
        "model.name": a.get("model_name"),
        "objectives": a.get("objectives"),
        "model.epochs": a.get("epochs"),
        "model.batch_size": a.get("batch_size"),
        "model.lr": a.get("lr"),
        "model.rank": a.get("rank"),
        "metrics.ks": a.get("ks"),
        "metrics.pareto_k": a.get("pareto_k"),
        "preprocess.min_user_deg": a.get("min_user_deg"),
        "preprocess.min_item_deg": a.get("min_item_deg"),
        "preprocess.binarize_threshold": a.get("binarize_threshold"),
        "preprocess.window": a.get("window"),
    }
    for name in ("n_users", "n_items", "affinity", "decay", "horizon_days", "launch_fraction"):
        overrides[f"corpus.synthetic.{name}"] = a.get(name)
    if a.get("ks") and a.get("pareto_k") is None and config.metrics.pareto_k not in a["ks"]:
        overrides["metrics.pareto_k"] = a["ks"][0]
    if a.get("input") is not None:
        overrides["corpus.source"] = "csv"
        overrides["corpus.path"] = str(a["input"])
    if a.get("corpus") is not None:
        overrides["corpus.source"] = "snapshot"
        overrides["corpus.path"] = str(a["corpus"])
    return with_overrides(config, overrides)


def _prepare_out(out: Path) -> Path:
    with stage("output", str(out)):
        out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_synthetic(args, config: ExperimentConfig) -> None:
    out = _prepare_out(args.out)
    spec = config.corpus.synthetic.spec(config.seed)
    with stage("gen-synthetic"):
        log_ = generate_drift_corpus(spec)
        write_interactions(log_, out / "interactions.csv")
        write_json({k: getattr(spec, k) for k in spec.__dataclass_fields__}, out / "spec.json")
    print(f"{len(log_)} interactions -> {out / 'interactions.csv'}")


def cmd_preprocess(args, config: ExperimentConfig) -> None:
    out = _prepare_out(args.out)
    corpus = load_corpus(config)
    with stage("preprocess", "snapshot"):
        save_snapshot(corpus, out)
        (out / "config.json").write_text(dump_config(config), encoding="utf-8")
    print(f"{corpus.n_users} users, {corpus.n_items} items, {corpus.matrix.nnz} interactions -> {out}")


def cmd_split(args, config: ExperimentConfig) -> None:
    out = _prepare_out(args.out)
    corpus = load_corpus(config)
    sets = make_split(config, corpus)
    with stage("split", "manifest"):
        write_manifest(sets, corpus, out / "split.json")
    test = "-" if sets.test is None else len(sets.test)
    print(f"{sets.protocol}/{sets.phase}: {len(sets.train_users)} train users, "
          f"{len(sets.validation)} validation users, {test} test users -> {out / 'split.json'}")


def _load_split(path: Path, corpus):
    with stage("split", str(path)):
        return read_manifest(path, corpus)


def cmd_train(args, config: ExperimentConfig) -> None:
    out = _prepare_out(args.out)
    corpus = load_corpus(config)
    weights = recency_weights(config, corpus)
    sets = _load_split(args.split, corpus)
    fit = fit_model(config, sets, weights, out)
    with stage("train", "artifacts"):
        ckpt = "checkpoints" if config.model.name == "vae" else None
        write_pareto_csv(fit.pareto, out / "pareto.csv", checkpoint_dir=ckpt)
        save_model(fit.model, out / "model.npz")
        (out / "config.json").write_text(dump_config(config), encoding="utf-8")
    best = fit.pareto.best(0)
    print(f"{config.model.name}: best validation Recall@{config.metrics.pareto_k} = {best.metrics[0]:.4f} "
          f"(epoch {best.epoch}, {len(fit.pareto)} Pareto points) -> {out}")


def cmd_evaluate(args, config: ExperimentConfig) -> None:
    out = _prepare_out(args.out)
    corpus = load_corpus(config)
    weights = recency_weights(config, corpus)
    sets = _load_split(args.split, corpus)
    with stage("evaluate", str(args.model_file)):
        model = load_model(args.model_file)
    metrics = evaluate_model(model, sets, config.metrics.ks, weights)
    payload = metrics_payload(config, sets, metrics)
    payload["model"] = getattr(model, "name", config.model.name)
    with stage("evaluate", "write"):
        write_json(payload, out / "metrics.json")
    for name in ("validation", "test"):
        for r in metrics[name] or []:
            print(f"{name:>10} K={r['K']:<3} recall={r['recall']:.4f} precision={r['precision']:.4f} "
                  f"recency={r['recency']:.4f}")


def cmd_pareto(args, config: ExperimentConfig) -> None:
    out = _prepare_out(args.out)
    fronts = []
    for f in args.fronts:
        path = f / "pareto.csv" if f.is_dir() else f
        with stage("pareto", str(path)):
            fronts.append((path, read_pareto_csv(path)))
    with stage("pareto", "export"):
        for i, (path, front) in enumerate(fronts):
            write_front(front, out / f"front_{i}.csv")
        verdicts = []
        for i in range(len(fronts)):
            for j in range(i + 1, len(fronts)):
                a = [p[1:3] for p in fronts[i][1]]
                b = [p[1:3] for p in fronts[j][1]]
                verdicts.append({"A": str(fronts[i][0]), "B": str(fronts[j][0]), "verdict": front_verdict(a, b)})
        write_json(verdicts, out / "dominance.json")
    for v in verdicts:
        print(f"A = {v['A']}, B = {v['B']}: {v['verdict']}")


def cmd_report(args, config: ExperimentConfig) -> None:
    out = _prepare_out(args.out)
    with stage("report"):
        result = report(args.bundles, out)
    sys.stdout.write(result.table)


def cmd_run(args, config: ExperimentConfig) -> None:
    configs = [config]
    for extra in args.extra_config:
        configs.append(load_config(extra))
    outs = []
    for c in configs:
        base = args.out or (Path(c.out) if c.out else Path("runs"))
        outs.append(base if len(configs) == 1 and args.out else base / c.name)
    paths = run_experiments(configs, outs, jobs=args.jobs)
    for p in paths:
        print(f"bundle -> {p}")


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "preprocess": cmd_preprocess,
    "split": cmd_split,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "pareto": cmd_pareto,
    "report": cmd_report,
    "run": cmd_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        config = resolve_config(args)
        COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"temporec: [config] {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"temporec: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, ReportError, OSError, ValueError) as exc:
        print(f"temporec: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
