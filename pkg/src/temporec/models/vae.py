"""Multinomial VAE for implicit feedback with hand-written backpropagation.

Encoder ``I -> H -> 2L`` (mean and log-variance heads), decoder
``L -> H -> I``, tanh hidden layers. Inputs are dropout-masked and then
L2-normalized per row. All parameters live in one flat float64 vector; the
per-layer arrays are views into it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

CHECKPOINT_FORMAT = "temporec-vae/1"
OBJECTIVES = ("relevance", "recency")


@dataclass(frozen=True)
class VaeArch:
    n_items: int
    hidden: int = 200
    latent: int = 64
    dropout: float = 0.5

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        i, h, l = self.n_items, self.hidden, self.latent
        return [
            ("enc_w", (i, h)),
            ("enc_b", (h,)),
            ("head_w", (h, 2 * l)),
            ("head_b", (2 * l,)),
            ("dec_w", (l, h)),
            ("dec_b", (h,)),
            ("out_w", (h, i)),
            ("out_b", (i,)),
        ]

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.shapes())


class VaeParams:
    """Flat parameter vector plus named, shape-correct views onto it."""

    def __init__(self, arch: VaeArch, flat: np.ndarray | None = None):
        self.arch = arch
        if flat is None:
            flat = np.zeros(arch.size)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (arch.size,):
            raise ValueError(f"expected {arch.size} parameters, got {flat.shape}")
        self.flat = flat
        self._views = unflatten(arch, flat)

    def __getattr__(self, name):
        views = self.__dict__.get("_views")
        if views is not None and name in views:
            return views[name]
        raise AttributeError(name)

    @classmethod
    def init(cls, arch: VaeArch, rng: np.random.Generator) -> "VaeParams":
        params = cls(arch)
        for name, shape in arch.shapes():
            view = params._views[name]
            if len(shape) == 2:
                view[...] = rng.normal(0.0, np.sqrt(2.0 / (shape[0] + shape[1])), size=shape)
            else:
                view[...] = rng.normal(0.0, 0.001, size=shape)
        return params

    def copy(self) -> "VaeParams":
        return VaeParams(self.arch, self.flat.copy())


def unflatten(arch: VaeArch, flat: np.ndarray) -> dict[str, np.ndarray]:
    views, offset = {}, 0
    for name, shape in arch.shapes():
        n = int(np.prod(shape))
        views[name] = flat[offset:offset + n].reshape(shape)
        offset += n
    return views


@dataclass
class ForwardPass:
    x: np.ndarray  # normalized input rows
    h_enc: np.ndarray
    mu: np.ndarray
    logvar: np.ndarray
    eps: np.ndarray
    z: np.ndarray
    h_dec: np.ndarray
    logits: np.ndarray


@dataclass(frozen=True)
class LossPair:
    relevance: float
    recency: float

    def __getitem__(self, objective: str) -> float:
        return getattr(self, objective)


def _dense(x) -> np.ndarray:
    return x.toarray() if sp.issparse(x) else np.asarray(x, dtype=np.float64)


def prepare_input(x, keep_mask: np.ndarray | None = None, dropout: float = 0.0) -> np.ndarray:
    """Apply inverted dropout (if a keep mask is given) then L2-normalize rows."""
    x = _dense(x).astype(np.float64, copy=True)
    if keep_mask is not None and dropout > 0.0:
        x = x * keep_mask / (1.0 - dropout)
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def _check(name: str, value: np.ndarray) -> np.ndarray:
    if not np.isfinite(value).all():
        raise FloatingPointError(f"non-finite values in layer {name!r}")
    return value


def vae_forward(
    params: VaeParams, x, keep_mask: np.ndarray | None = None, eps: np.ndarray | None = None
) -> ForwardPass:
    """Deterministic forward pass given the dropout mask and latent noise.

    ``x`` holds raw binary input rows; ``eps=None`` means zero noise (z = mu).
    """
    xn = prepare_input(x, keep_mask, params.arch.dropout)
    lat = params.arch.latent
    h_enc = _check("encoder", np.tanh(xn @ params.enc_w + params.enc_b))
    head = _check("encoder head", h_enc @ params.head_w + params.head_b)
    mu, logvar = head[:, :lat], head[:, lat:]
    if eps is None:
        eps = np.zeros_like(mu)
    z = _check("latent", mu + np.exp(0.5 * logvar) * eps)
    h_dec = _check("decoder", np.tanh(z @ params.dec_w + params.dec_b))
    logits = _check("output", h_dec @ params.out_w + params.out_b)
    return ForwardPass(xn, h_enc, mu, logvar, eps, z, h_dec, logits)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def kl_divergence(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """Per-row KL(N(mu, exp(logvar)) || N(0, I))."""
    return 0.5 * (np.exp(logvar) + mu * mu - 1.0 - logvar).sum(axis=1)


def _target_weights(targets: np.ndarray, weights: np.ndarray, objective: str) -> np.ndarray:
    if objective == "relevance":
        return targets
    if objective == "recency":
        return targets * weights
    raise ValueError(f"unknown objective {objective!r}")


def vae_losses(
    fp: ForwardPass,
    targets,
    weights: np.ndarray,
    beta: float,
    kl_in_recency: bool = False,
) -> LossPair:
    """Batch-mean losses for both objectives.

    relevance = -sum x * log_softmax + beta * KL
    recency   = -sum f * x * log_softmax (+ beta * KL if ``kl_in_recency``)
    """
    targets = _dense(targets)
    ls = log_softmax(fp.logits)
    n = targets.shape[0]
    kl = kl_divergence(fp.mu, fp.logvar).sum() / n
    rel = -(targets * ls).sum() / n
    rec = -((targets * weights) * ls).sum() / n
    return LossPair(float(rel + beta * kl), float(rec + (beta * kl if kl_in_recency else 0.0)))


def vae_backward(params: VaeParams, fp: ForwardPass, coef: np.ndarray, kl_beta: float) -> np.ndarray:
    """Gradient of ``mean_rows(-sum coef * log_softmax(logits) + kl_beta * KL)`` w.r.t. the flat params."""
    n = coef.shape[0]
    grad = np.zeros(params.arch.size)
    g = unflatten(params.arch, grad)

    logits = fp.logits - fp.logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    d_logits = (coef.sum(axis=1, keepdims=True) * probs - coef) / n

    g["out_w"][...] = fp.h_dec.T @ d_logits
    g["out_b"][...] = d_logits.sum(axis=0)
    d_pre_dec = (d_logits @ params.out_w.T) * (1.0 - fp.h_dec**2)
    g["dec_w"][...] = fp.z.T @ d_pre_dec
    g["dec_b"][...] = d_pre_dec.sum(axis=0)
    d_z = d_pre_dec @ params.dec_w.T

    std = np.exp(0.5 * fp.logvar)
    d_mu = d_z + (kl_beta / n) * fp.mu
    d_logvar = d_z * fp.eps * 0.5 * std + (kl_beta / n) * 0.5 * (np.exp(fp.logvar) - 1.0)
    d_head = np.concatenate([d_mu, d_logvar], axis=1)
    g["head_w"][...] = fp.h_enc.T @ d_head
    g["head_b"][...] = d_head.sum(axis=0)
    d_pre_enc = (d_head @ params.head_w.T) * (1.0 - fp.h_enc**2)
    g["enc_w"][...] = fp.x.T @ d_pre_enc
    g["enc_b"][...] = d_pre_enc.sum(axis=0)
    return grad


def objective_gradients(
    params: VaeParams,
    fp: ForwardPass,
    targets,
    weights: np.ndarray,
    beta: float,
    objectives: Sequence[str],
    kl_in_recency: bool = False,
) -> tuple[LossPair, list[np.ndarray]]:
    """Losses and one flat gradient per objective, all from the same forward pass."""
    targets = _dense(targets)
    losses = vae_losses(fp, targets, weights, beta, kl_in_recency)
    grads = []
    for obj in objectives:
        kl_beta = beta if obj == "relevance" or kl_in_recency else 0.0
        grads.append(vae_backward(params, fp, _target_weights(targets, weights, obj), kl_beta))
    return losses, grads


def sample_noise(arch: VaeArch, n_rows: int, rng: np.random.Generator):
    keep = (rng.random((n_rows, arch.n_items)) >= arch.dropout).astype(np.float64)
    eps = rng.standard_normal((n_rows, arch.latent))
    return keep, eps


def vae_gradients(
    params: VaeParams,
    batch,
    weights: np.ndarray,
    beta: float,
    objective: str,
    rng: np.random.Generator,
    kl_in_recency: bool = False,
) -> np.ndarray:
    """Sample dropout and noise from ``rng``, then return one objective's gradient."""
    keep, eps = sample_noise(params.arch, batch.shape[0], rng)
    fp = vae_forward(params, batch, keep, eps)
    return objective_gradients(params, fp, batch, weights, beta, [objective], kl_in_recency)[1][0]


class VaeModel:
    name = "vae"

    def __init__(self, params: VaeParams):
        self.params = params

    @property
    def n_items(self) -> int:
        return self.params.arch.n_items

    def score(self, x, batch_size: int = 2048) -> np.ndarray:
        """Logits with dropout off and zero latent noise."""
        if x.shape[1] != self.n_items:
            raise ValueError(f"expected {self.n_items} columns, got {x.shape[1]}")
        out = [vae_forward(self.params, x[i:i + batch_size]).logits for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.n_items))


def save_checkpoint(params: VaeParams, path: str | Path, **meta) -> Path:
    path = Path(path)
    header = json.dumps({"format": CHECKPOINT_FORMAT, "arch": asdict(params.arch), "meta": meta}, sort_keys=True)
    with path.open("wb") as fh:
        np.savez(fh, header=np.array(header), params=params.flat)
    return path


def load_checkpoint(path: str | Path) -> tuple[VaeParams, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        flat = data["params"].copy()
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
    return VaeParams(VaeArch(**header["arch"]), flat), header["meta"]
