"""Multi-objective VAE training: normalized per-objective gradients combined by
their min-norm convex combination, evaluated once per epoch into a Pareto set."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .metrics import MetricReport, RecencyWeights, evaluate
from .models.vae import (
    OBJECTIVES,
    VaeArch,
    VaeModel,
    VaeParams,
    objective_gradients,
    sample_noise,
    save_checkpoint,
    vae_forward,
    vae_losses,
)
from .moo import ParetoSet, combine, normalize_gradient, qcop_min_norm
from .protocols import EvalSplit
from .seeding import stage_rng

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 100
    lr: float = 1e-3
    objectives: tuple[str, ...] = ("relevance",)
    seed: int = 0
    ks: tuple[int, ...] = (20,)
    pareto_k: int = 20
    optimizer: str = "adam"
    hidden: int = 200
    latent: int = 64
    dropout: float = 0.5
    beta_max: float = 0.2
    anneal_fraction: float = 0.4
    kl_in_recency: bool = False
    empirical_batches: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.objectives:
            raise ValueError("at least one objective is required")
        for obj in self.objectives:
            if obj not in OBJECTIVES:
                raise ValueError(f"unknown objective {obj!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.pareto_k not in self.ks:
            raise ValueError("pareto_k must be one of ks")


class Adam:
    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, size: int, lr: float):
        self.lr = lr

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        params -= self.lr * grad


def make_optimizer(name: str, size: int, lr: float):
    return Adam(size, lr) if name == "adam" else SGD(size, lr)


def beta_at(step: int, total_steps: int, beta_max: float, anneal_fraction: float) -> float:
    """KL weight: linear ramp from 0 to ``beta_max`` over the first ``anneal_fraction`` of steps."""
    ramp = anneal_fraction * total_steps
    if ramp <= 0:
        return beta_max
    return beta_max * min(1.0, step / ramp)


def capture_empirical_losses(
    params: VaeParams,
    rows: sp.csr_matrix,
    weights: np.ndarray,
    objectives: Sequence[str],
    *,
    beta: float = 0.0,
    batch_size: int = 100,
    n_batches: int = 10,
    seed: int = 0,
    kl_in_recency: bool = False,
) -> np.ndarray:
    """Per-objective loss of the initial model on a fixed sample of training batches.

    The sample is the first ``n_batches`` batches of a seeded permutation,
    evaluated without dropout or latent noise.
    """
    order = stage_rng(seed, "empirical").permutation(rows.shape[0])[: batch_size * n_batches]
    sample = rows[np.sort(order)]
    totals = np.zeros(len(objectives))
    count = 0
    for start in range(0, sample.shape[0], batch_size):
        batch = sample[start:start + batch_size]
        losses = vae_losses(vae_forward(params, batch), batch, weights, beta, kl_in_recency)
        totals += batch.shape[0] * np.array([losses[o] for o in objectives])
        count += batch.shape[0]
    if count == 0:
        raise TrainingError("no training rows to estimate empirical losses")
    emp = totals / count
    if not (np.isfinite(emp).all() and (emp > 0).all()):
        raise TrainingError(f"empirical losses must be finite and positive, got {emp.tolist()}")
    return emp


@dataclass
class StepLog:
    epoch: int
    batch: int
    beta: float
    losses: dict[str, float]
    alpha: list[float]
    grad_norms: list[float]
    combined_norm: float


def smsgda_step(
    params: VaeParams,
    batch,
    weights: np.ndarray,
    beta: float,
    empirical: np.ndarray,
    optimizer,
    objectives: Sequence[str],
    rng: np.random.Generator,
    *,
    kl_in_recency: bool = False,
    epoch: int = 0,
    batch_index: int = 0,
) -> StepLog:
    """One shared forward pass, one normalized gradient per objective, one update
    along their min-norm combination."""
    keep, eps = sample_noise(params.arch, batch.shape[0], rng)
    fp = vae_forward(params, batch, keep, eps)
    losses, grads = objective_gradients(params, fp, batch, weights, beta, objectives, kl_in_recency)
    named = {o: losses[o] for o in objectives}
    if not all(math.isfinite(v) for v in named.values()):
        raise TrainingError(f"non-finite loss at epoch {epoch} batch {batch_index}: {named}")
    normed = [normalize_gradient(g, e) for g, e in zip(grads, empirical)]
    alpha = qcop_min_norm(normed)
    direction = combine(normed, alpha)
    optimizer.step(params.flat, direction)
    return StepLog(
        epoch=epoch,
        batch=batch_index,
        beta=beta,
        losses=named,
        alpha=alpha.tolist(),
        grad_norms=[float(np.linalg.norm(g)) for g in normed],
        combined_norm=float(np.linalg.norm(direction)),
    )


@dataclass
class TrainResult:
    params: VaeParams
    pareto: ParetoSet
    empirical: np.ndarray
    steps: list[StepLog] = field(repr=False)
    epochs: list[dict] = field(repr=False)

    def best_model(self) -> VaeModel:
        """Front entry with the highest recall (first metric)."""
        entry = self.pareto.best(0)
        return VaeModel(VaeParams(self.params.arch, entry.checkpoint))


def train(
    config: TrainConfig,
    train_matrix: sp.csr_matrix,
    validation: EvalSplit,
    weights: RecencyWeights,
    *,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
) -> TrainResult:
    """Train a VAE on the nonempty rows of ``train_matrix``.

    After each epoch the model is evaluated on ``validation``; the
    (Recall@K, Recency@K) pair at ``config.pareto_k`` feeds the Pareto set,
    whose entries keep a copy of the parameters.
    """
    rows = train_matrix[np.flatnonzero(train_matrix.getnnz(axis=1))]
    if rows.shape[0] == 0:
        raise TrainingError("training matrix has no nonempty rows")
    w = weights.weights
    arch = VaeArch(rows.shape[1], config.hidden, config.latent, config.dropout)
    params = VaeParams.init(arch, stage_rng(config.seed, "init"))
    rng = stage_rng(config.seed, "train")
    optimizer = make_optimizer(config.optimizer, arch.size, config.lr)

    n_batches = math.ceil(rows.shape[0] / config.batch_size)
    total_steps = config.epochs * n_batches
    empirical = capture_empirical_losses(
        params, rows, w, config.objectives,
        beta=beta_at(0, total_steps, config.beta_max, config.anneal_fraction),
        batch_size=config.batch_size, n_batches=config.empirical_batches,
        seed=config.seed, kl_in_recency=config.kl_in_recency,
    )
    log.info("empirical losses %s", dict(zip(config.objectives, empirical.tolist())))

    pareto = ParetoSet()
    steps: list[StepLog] = []
    epochs: list[dict] = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(rows.shape[0])
        for b in range(n_batches):
            idx = np.sort(order[b * config.batch_size:(b + 1) * config.batch_size])
            beta = beta_at(step, total_steps, config.beta_max, config.anneal_fraction)
            steps.append(
                smsgda_step(
                    params, rows[idx], w, beta, empirical, optimizer, config.objectives, rng,
                    kl_in_recency=config.kl_in_recency, epoch=epoch, batch_index=b,
                )
            )
            step += 1
        reports = evaluate(VaeModel(params).score, validation, config.ks, weights)
        by_k = {r.k: r for r in reports}
        point = by_k[config.pareto_k].as_tuple()
        kept = pareto.update(point, epoch, params.flat.copy())
        epochs.append({"epoch": epoch, "kept": kept, "metrics": {k: r.to_dict() for k, r in by_k.items()}})
        log.info("epoch %d recall=%.4f recency=%.4f%s", epoch, *point, " *" if kept else "")

    if log_path is not None:
        write_step_log(steps, log_path, empirical=empirical, objectives=config.objectives)
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        for entry in pareto:
            path = checkpoint_dir / f"epoch_{entry.epoch:04d}.npz"
            save_checkpoint(VaeParams(arch, entry.checkpoint), path, epoch=entry.epoch)
    return TrainResult(params, pareto, empirical, steps, epochs)


def write_step_log(steps: Sequence[StepLog], path: str | Path, **header) -> Path:
    """Newline-delimited JSON: a header record, then one record per step."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        head = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in header.items()}
        fh.write(json.dumps({"record": "header", **head}, sort_keys=True) + "\n")
        for s in steps:
            fh.write(json.dumps({"record": "step", **asdict(s)}, sort_keys=True) + "\n")
    return path


def write_pareto_csv(pareto: ParetoSet, path: str | Path, checkpoint_dir: str | Path | None = None) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("epoch,recall,recency,checkpoint\n")
        for e in sorted(pareto, key=lambda e: e.epoch):
            ckpt = "" if checkpoint_dir is None else str(Path(checkpoint_dir) / f"epoch_{e.epoch:04d}.npz")
            fh.write(f"{e.epoch},{e.metrics[0]!r},{e.metrics[1]!r},{ckpt}\n")
    return path


def read_pareto_csv(path: str | Path) -> list[tuple[int, float, float, str]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "epoch,recall,recency,checkpoint":
        raise ValueError(f"{path}: not a Pareto CSV")
    out = []
    for line in lines[1:]:
        epoch, recall, recency, ckpt = line.split(",", 3)
        out.append((int(epoch), float(recall), float(recency), ckpt))
    if not out:
        raise ValueError(f"{path}: empty Pareto front")
    return out


def evaluate_params(params: VaeParams, split: EvalSplit, ks, weights) -> list[MetricReport]:
    return evaluate(VaeModel(params).score, split, ks, weights)
