"""End-to-end runs: corpus -> split -> model -> metrics, written as a result bundle.

A bundle directory holds::

    manifest.json      config hash, corpus hash, stage seeds, file digests
    config.json        the resolved configuration
    split.json         the evaluation split (see protocols.write_manifest)
    metrics.json       validation and test MetricReports for every K
    pareto.csv         epoch, recall, recency, checkpoint
    train_log.ndjson   per-step training log (VAE only)
    checkpoints/       one file per Pareto entry (VAE only)
    model.npz          the selected model

Nothing in a bundle depends on wall-clock time, so equal configs give
byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

from .config import ExperimentConfig, dump_config
from .corpus import Corpus, build_corpus, load_snapshot, parse_interactions, preprocess
from .metrics import MetricReport, RecencyWeights, build_recency_weights, evaluate
from .models import PopularityModel, fit_truncated_svd, save_model
from .moo import ParetoSet, front_verdict
from .protocols import PhaseSets, assemble_phase_sets, corpus_hash, write_manifest
from .seeding import derive_seed
from .synthetic import generate_drift_corpus
from .trainer import read_pareto_csv, train, write_pareto_csv

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "temporec-bundle/1"
METRICS_FORMAT = "temporec-metrics/1"


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message


class ReportError(ValueError):
    pass


@contextmanager
def stage(name: str, context: str = "") -> Iterator[None]:
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        where = f" ({context})" if context else ""
        raise StageError(name, f"{type(exc).__name__}: {exc}{where}") from exc


def stage_seeds(config: ExperimentConfig) -> dict[str, int]:
    return {
        "root": config.seed,
        "split": derive_seed(config.seed, "split"),
        "model": derive_seed(config.seed, "model"),
    }


def load_corpus(config: ExperimentConfig) -> Corpus:
    """Read or generate the interaction log and apply preprocessing.

    Snapshots are already preprocessed and are loaded as-is.
    """
    c = config.corpus
    with stage("corpus", c.path or "synthetic"):
        if c.source == "snapshot":
            return load_snapshot(c.path)
        if c.source == "csv":
            raw = parse_interactions(c.path, c.columns.spec(), strict=c.strict, scale=c.rating_scale)
        else:
            raw = generate_drift_corpus(c.synthetic.spec(config.seed))
    with stage("preprocess"):
        return build_corpus(preprocess(raw, config.preprocess.options()))


def recency_weights(config: ExperimentConfig, corpus: Corpus) -> RecencyWeights:
    r = config.recency
    with stage("recency"):
        return build_recency_weights(corpus.catalog, r.threshold, r.base, r.steepness)


def make_split(config: ExperimentConfig, corpus: Corpus) -> PhaseSets:
    s = config.split
    with stage("split", f"{s.protocol}/{s.phase}"):
        return assemble_phase_sets(corpus, s.protocol, s.phase, s.params(stage_seeds(config)["split"]))


@dataclass
class FitResult:
    model: object
    pareto: ParetoSet
    train_result: object = None


def fit_model(
    config: ExperimentConfig, sets: PhaseSets, weights: RecencyWeights, out: Path | None = None
) -> FitResult:
    """Fit the configured model on the train matrix.

    The VAE keeps a Pareto set over its epochs and returns the entry with the
    best validation recall. The one-shot models contribute a single point.
    """
    m = config.model
    seed = stage_seeds(config)["model"]
    with stage("train", m.name):
        if m.name == "vae":
            result = train(
                config.train_config(seed), sets.train, sets.validation, weights,
                log_path=None if out is None else out / "train_log.ndjson",
                checkpoint_dir=None if out is None else out / "checkpoints",
            )
            return FitResult(result.best_model(), result.pareto, result)
        if m.name == "svd":
            model = fit_truncated_svd(sets.train, m.rank, iters=m.power_iters, seed=seed, oversample=m.oversample)
        else:
            model = PopularityModel.fit(sets.train)
    with stage("evaluate", "validation"):
        point = _report_at(evaluate(model.score, sets.validation, config.metrics.ks, weights), config.metrics.pareto_k)
    pareto = ParetoSet()
    pareto.update(point.as_tuple(), 0)
    return FitResult(model, pareto)


def _report_at(reports: Sequence[MetricReport], k: int) -> MetricReport:
    return next(r for r in reports if r.k == k)


def evaluate_model(model, sets: PhaseSets, ks: Sequence[int], weights: RecencyWeights) -> dict:
    out = {}
    for name, split in (("validation", sets.validation), ("test", sets.test)):
        if split is None:
            out[name] = None
            continue
        with stage("evaluate", name):
            out[name] = [r.to_dict() for r in evaluate(model.score, split, ks, weights)]
    return out


def metrics_payload(config: ExperimentConfig, sets: PhaseSets, metrics: dict) -> dict:
    return {
        "format": METRICS_FORMAT,
        "name": config.name,
        "model": config.model.name,
        "objectives": list(config.objectives),
        "protocol": sets.protocol,
        "phase": sets.phase,
        "ks": list(config.metrics.ks),
        "validation": metrics["validation"],
        "test": metrics["test"],
    }


def write_json(payload, path: Path) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(config: ExperimentConfig, out: str | Path | None = None) -> Path:
    """Run every stage and write a bundle under ``out`` (or ``config.out``)."""
    out = Path(out or config.out or Path("runs") / config.name)
    with stage("output", str(out)):
        out.mkdir(parents=True, exist_ok=True)
        # a rerun into the same directory must not inherit old checkpoints
        shutil.rmtree(out / "checkpoints", ignore_errors=True)
        (out / "config.json").write_text(dump_config(config), encoding="utf-8")

    corpus = load_corpus(config)
    weights = recency_weights(config, corpus)
    sets = make_split(config, corpus)
    with stage("split", "manifest"):
        write_manifest(sets, corpus, out / "split.json")

    fit = fit_model(config, sets, weights, out)
    with stage("train", "artifacts"):
        # checkpoint paths are stored relative to the bundle
        ckpt = "checkpoints" if config.model.name == "vae" else None
        write_pareto_csv(fit.pareto, out / "pareto.csv", checkpoint_dir=ckpt)
        save_model(fit.model, out / "model.npz")

    metrics = evaluate_model(fit.model, sets, config.metrics.ks, weights)
    with stage("report", "bundle"):
        write_json(metrics_payload(config, sets, metrics), out / "metrics.json")
        files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
        manifest = {
            "format": BUNDLE_FORMAT,
            "name": config.name,
            "config_hash": config.digest(),
            "corpus_hash": corpus_hash(corpus),
            "seeds": stage_seeds(config),
            "corpus": {
                "n_users": corpus.n_users,
                "n_items": corpus.n_items,
                "n_interactions": int(corpus.matrix.nnz),
            },
            "files": {p.relative_to(out).as_posix(): _digest(p) for p in files},
        }
        write_json(manifest, out / "manifest.json")
    log.info("bundle written to %s", out)
    return out


def _run_one(args) -> str:
    config, out = args
    return str(run_experiment(config, out))


def run_experiments(
    configs: Sequence[ExperimentConfig], outs: Sequence[str | Path], jobs: int = 1
) -> list[Path]:
    """Independent runs, optionally in parallel worker processes."""
    if len(configs) != len(outs):
        raise ValueError("need one output directory per config")
    if jobs <= 1 or len(configs) <= 1:
        return [run_experiment(c, o) for c, o in zip(configs, outs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return [Path(p) for p in pool.map(_run_one, zip(configs, outs))]


# --- reporting -------------------------------------------------------------


@dataclass(frozen=True)
class Bundle:
    path: Path
    name: str
    metrics: dict
    front: list[tuple[int, float, float, str]]


def load_bundle(path: str | Path) -> Bundle:
    path = Path(path)
    metrics_path = path / "metrics.json"
    if not metrics_path.is_file():
        raise ReportError(f"{path}: no metrics.json; not a result bundle")
    metrics = json.loads(metrics_path.read_text(encoding="utf-8"))
    if metrics.get("format") != METRICS_FORMAT:
        raise ReportError(f"{metrics_path}: unsupported format {metrics.get('format')!r}")
    try:
        front = read_pareto_csv(path / "pareto.csv")
    except FileNotFoundError:
        raise ReportError(f"{path}: no pareto.csv") from None
    except ValueError as exc:
        raise ReportError(str(exc)) from None
    return Bundle(path, metrics["name"], metrics, front)


TABLE_COLUMNS = [
    "bundle", "model", "objectives", "protocol", "K",
    "val_recall", "val_precision", "val_recency", "val_recency_norm",
    "test_recall", "test_precision", "test_recency", "test_recency_norm", "recall_change_pct",
]


def _rows(label: str, b: Bundle) -> list[dict]:
    m = b.metrics
    test = {r["K"]: r for r in m["test"] or []}
    rows = []
    for v in m["validation"]:
        t = test.get(v["K"])
        row = {
            "bundle": label, "model": m["model"], "objectives": "+".join(m["objectives"]),
            "protocol": m["protocol"], "K": v["K"],
            "val_recall": v["recall"], "val_precision": v["precision"],
            "val_recency": v["recency"], "val_recency_norm": v["recency_normalized"],
        }
        if t is not None:
            row.update(
                test_recall=t["recall"], test_precision=t["precision"],
                test_recency=t["recency"], test_recency_norm=t["recency_normalized"],
            )
            if v["recall"] > 0:
                row["recall_change_pct"] = 100.0 * (t["recall"] - v["recall"]) / v["recall"]
        rows.append(row)
    return rows


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _text_table(rows: list[dict]) -> str:
    cells = [TABLE_COLUMNS] + [[_fmt(r.get(c)) for c in TABLE_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


@dataclass
class ReportResult:
    table: str
    rows: list[dict]
    verdicts: list[dict]
    files: list[Path]


def _labels(bundles: Sequence[Bundle]) -> list[str]:
    names = [b.name for b in bundles]
    if len(set(names)) == len(names):
        return names
    return [f"{i}_{n}" for i, n in enumerate(names)]


def report(paths: Sequence[str | Path], out: str | Path | None = None) -> ReportResult:
    """Side-by-side metric tables, Pareto point files and pairwise dominance verdicts.

    Bundles are only read. With ``out`` set the outputs are written there:
    ``report.txt``, ``report.csv``, ``front_<bundle>.csv`` and ``dominance.json``.
    """
    if not paths:
        raise ReportError("report needs at least one bundle")
    bundles = [load_bundle(p) for p in paths]
    ks = {tuple(b.metrics["ks"]) for b in bundles}
    if len(ks) > 1:
        detail = ", ".join(f"{b.name}: {list(b.metrics['ks'])}" for b in bundles)
        raise ReportError(f"incompatible Ks across bundles ({detail})")

    labels = _labels(bundles)
    rows = [row for label, b in zip(labels, bundles) for row in _rows(label, b)]
    table = _text_table(rows)
    verdicts = []
    for (la, a), (lb, b) in itertools.combinations(zip(labels, bundles), 2):
        verdict = front_verdict([f[1:3] for f in a.front], [f[1:3] for f in b.front])
        verdicts.append({"A": la, "B": lb, "verdict": verdict})
        table += f"\nPareto fronts: A = {la}, B = {lb}: {verdict}"
    if verdicts:
        table += "\n"

    files: list[Path] = []
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(table, encoding="utf-8")
        buf = io.StringIO()
        writer = csv.DictWriter(buf, TABLE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows({c: ("" if r.get(c) is None else r.get(c)) for c in TABLE_COLUMNS} for r in rows)
        (out / "report.csv").write_text(buf.getvalue(), encoding="utf-8")
        files += [out / "report.txt", out / "report.csv"]
        for label, b in zip(labels, bundles):
            files.append(write_front(b.front, out / f"front_{label}.csv"))
        files.append(write_json(verdicts, out / "dominance.json"))
    return ReportResult(table, rows, verdicts, files)


def write_front(front, path: Path) -> Path:
    """Plain ``recall,recency,epoch`` points sorted by recall."""
    lines = ["recall,recency,epoch"]
    for epoch, recall, recency, *_ in sorted(front, key=lambda f: (f[1], f[2], f[0])):
        lines.append(f"{recall!r},{recency!r},{epoch}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def front_points(bundle_or_csv: str | Path) -> list[tuple[float, float]]:
    p = Path(bundle_or_csv)
    if p.is_dir():
        p = p / "pareto.csv"
    return [(r, c) for _, r, c, _ in read_pareto_csv(p)]
