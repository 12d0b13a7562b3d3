"""Train/validation/test construction under random and temporal holdout.

Three target-selection protocols are supported:

``traditional``
    a random fraction of each user's interactions become targets.
``proportional``
    the last fraction of each user's time-ordered interactions become targets.
``strict_cutoff``
    every interaction after a global timestamp is a target.

``assemble_phase_sets`` combines them into the sets needed by the
development phase (train/validation/test) or the deployment-ready phase
(train/validation only).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import Corpus
from .seeding import derive_seed

PROTOCOLS = ("traditional", "proportional", "strict_cutoff")
PHASES = ("development", "deployment_ready")
MANIFEST_FORMAT = "temporec-split/1"

# user index -> (item indices, timestamps), both sorted by (timestamp, item)
Histories = Mapping[int, tuple[np.ndarray, np.ndarray]]


class SplitError(ValueError):
    pass


class EmptySplitError(SplitError):
    pass


@dataclass(frozen=True, eq=False)
class Holdout:
    users: np.ndarray
    inputs: list[np.ndarray]
    targets: list[np.ndarray]
    excluded: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.users)


@dataclass(frozen=True, eq=False)
class EvalSplit:
    phase: str
    protocol: str
    users: np.ndarray
    inputs: list[np.ndarray]
    targets: list[np.ndarray]
    train_users: np.ndarray
    cutoff_time: int | None = None
    holdout_fraction: float | None = None
    excluded: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.users)

    def input_matrix(self, n_items: int) -> sp.csr_matrix:
        return _rows_to_csr(self.inputs, n_items)

    def target_matrix(self, n_items: int) -> sp.csr_matrix:
        return _rows_to_csr(self.targets, n_items)


def _rows_to_csr(rows: Sequence[np.ndarray], n_items: int) -> sp.csr_matrix:
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r) for r in rows])
    indices = np.concatenate(rows).astype(np.int64) if rows else np.zeros(0, np.int64)
    m = sp.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(len(rows), n_items))
    m.sort_indices()
    return m


def _n_targets(fraction: float, n: int) -> int:
    # round() guards against 0.2 * 15 = 3.0000000000000004
    return min(math.ceil(round(fraction * n, 9)), n - 1)


def _check_fraction(fraction: float) -> None:
    if not 0.0 < fraction < 1.0:
        raise SplitError(f"holdout fraction must lie in (0, 1), got {fraction}")


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    quotas = [f * n for f in fractions]
    counts = [math.floor(round(q, 9)) for q in quotas]
    leftover = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in order[:leftover]:
        counts[k] += 1
    return counts


def partition_users(users: Sequence[int], fractions: Sequence[float], seed: int) -> list[np.ndarray]:
    """Shuffle ``users`` and cut them into disjoint groups sized by largest remainder."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must sum to 1, got {sum(fractions)}")
    if any(f < 0 for f in fractions):
        raise SplitError("fractions must be nonnegative")
    users = np.sort(np.asarray(users, dtype=np.int64))
    counts = largest_remainder(len(users), fractions)
    if any(c == 0 for c in counts):
        raise SplitError(f"partition of {len(users)} users by {tuple(fractions)} leaves an empty set")
    perm = np.random.default_rng(seed).permutation(users)
    bounds = np.cumsum(counts)[:-1]
    return [np.sort(part) for part in np.split(perm, bounds)]


def holdout_random(histories: Histories, fraction: float, seed: int) -> Holdout:
    """Hold out ``ceil(fraction * n)`` uniformly chosen interactions per user."""
    _check_fraction(fraction)
    rng = np.random.default_rng(seed)
    users, inputs, targets = [], [], []
    too_small = 0
    for u in sorted(histories):
        items, _ = histories[u]
        n = len(items)
        if n < 2:
            too_small += 1
            continue
        chosen = np.zeros(n, dtype=bool)
        chosen[rng.choice(n, size=_n_targets(fraction, n), replace=False)] = True
        users.append(u)
        inputs.append(items[~chosen])
        targets.append(items[chosen])
    return Holdout(np.asarray(users, dtype=np.int64), inputs, targets, {"too_few_interactions": too_small})


def holdout_proportional(histories: Histories, fraction: float) -> Holdout:
    """Hold out the final ``ceil(fraction * n)`` interactions of each user."""
    _check_fraction(fraction)
    users, inputs, targets = [], [], []
    too_small = 0
    for u in sorted(histories):
        items, times = histories[u]
        n = len(items)
        if n < 2:
            too_small += 1
            continue
        order = np.lexsort((items, times))
        k = _n_targets(fraction, n)
        users.append(u)
        inputs.append(items[order[: n - k]])
        targets.append(items[order[n - k:]])
    return Holdout(np.asarray(users, dtype=np.int64), inputs, targets, {"too_few_interactions": too_small})


def holdout_cutoff(histories: Histories, cutoff_time: int) -> Holdout:
    """Targets are interactions strictly after ``cutoff_time``; inputs are the rest.

    Users with nothing on one side are excluded and tallied by side.
    """
    users, inputs, targets = [], [], []
    no_input = no_target = 0
    for u in sorted(histories):
        items, times = histories[u]
        after = times > cutoff_time
        if not after.any():
            no_target += 1
            continue
        if after.all():
            no_input += 1
            continue
        users.append(u)
        inputs.append(items[~after])
        targets.append(items[after])
    if not users:
        raise EmptySplitError(f"no user has interactions on both sides of cutoff {cutoff_time}")
    return Holdout(
        np.asarray(users, dtype=np.int64), inputs, targets, {"no_input": no_input, "no_target": no_target}
    )


def cutoff_at_quantile(times: np.ndarray, q: float) -> int:
    """Smallest observed timestamp with at least a ``q`` share of interactions at or before it."""
    if not 0.0 < q < 1.0:
        raise SplitError(f"cutoff quantile must lie in (0, 1), got {q}")
    ordered = np.sort(np.asarray(times, dtype=np.int64))
    if not len(ordered):
        raise EmptySplitError("no timestamps")
    return int(ordered[max(0, math.ceil(round(q * len(ordered), 9)) - 1)])


@dataclass(frozen=True)
class SplitParams:
    holdout_fraction: float = 0.2
    val_user_fraction: float = 0.05
    cutoff_quantile: float = 0.9
    cutoff_time: int | None = None
    val_cutoff_time: int | None = None
    # "temporal": test targets are everyone's post-cutoff interactions.
    # "user_split": disjoint train/val/test users, test held out like validation.
    test_design: str = "temporal"
    user_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0


@dataclass(frozen=True, eq=False)
class PhaseSets:
    phase: str
    protocol: str
    params: SplitParams
    train: sp.csr_matrix
    train_users: np.ndarray
    validation: EvalSplit
    test: EvalSplit | None = None
    test_cutoff_time: int | None = None


def _truncate(histories: Histories, users: Sequence[int], before: int | None) -> dict:
    out = {}
    for u in users:
        items, times = histories[u]
        if before is not None:
            keep = times <= before
            items, times = items[keep], times[keep]
        if len(items):
            out[int(u)] = (items, times)
    return out


def _holdout(protocol: str, histories: Histories, params: SplitParams, seed_stage: str, cutoff: int | None):
    if protocol == "traditional":
        return holdout_random(histories, params.holdout_fraction, derive_seed(params.seed, seed_stage)), None
    if protocol == "proportional":
        return holdout_proportional(histories, params.holdout_fraction), None
    if protocol == "strict_cutoff":
        if cutoff is None:
            raise SplitError("strict_cutoff needs a cutoff time")
        return holdout_cutoff(histories, cutoff), cutoff
    raise SplitError(f"unknown protocol {protocol!r}")


def _as_split(h: Holdout, phase, protocol, train_users, cutoff, params) -> EvalSplit:
    return EvalSplit(
        phase=phase,
        protocol=protocol,
        users=h.users,
        inputs=h.inputs,
        targets=h.targets,
        train_users=train_users,
        cutoff_time=cutoff,
        holdout_fraction=None if protocol == "strict_cutoff" else params.holdout_fraction,
        excluded=dict(h.excluded),
    )


def _train_matrix(histories: Histories, n_users: int, n_items: int) -> sp.csr_matrix:
    rows = [histories[u][0] if u in histories else np.zeros(0, np.int64) for u in range(n_users)]
    return _rows_to_csr(rows, n_items)


def assemble_phase_sets(
    corpus: Corpus, protocol: str, phase: str = "development", params: SplitParams = SplitParams()
) -> PhaseSets:
    """Build the train matrix and evaluation splits for one protocol and phase.

    Validation users are disjoint from training users. In the development
    phase with the temporal test design, everything after the test cutoff is
    held out for everyone; validation is carved from the pre-cutoff history
    and validation targets never appear as test inputs.
    """
    if protocol not in PROTOCOLS:
        raise SplitError(f"unknown protocol {protocol!r}")
    if phase not in PHASES:
        raise SplitError(f"unknown phase {phase!r}")
    histories = dict(enumerate(corpus.histories))
    n_users, n_items = corpus.n_users, corpus.n_items

    if phase == "development" and params.test_design == "user_split":
        train_u, val_u, test_u = partition_users(
            range(n_users), params.user_fractions, derive_seed(params.seed, "partition")
        )
        cut = params.cutoff_time
        if cut is None and protocol == "strict_cutoff":
            cut = cutoff_at_quantile(corpus.all_times(), params.cutoff_quantile)
        val, vcut = _holdout(protocol, _truncate(histories, val_u, None), params, "holdout-val", cut)
        test, tcut = _holdout(protocol, _truncate(histories, test_u, None), params, "holdout-test", cut)
        return PhaseSets(
            phase, protocol, params,
            train=_train_matrix(_truncate(histories, train_u, None), n_users, n_items),
            train_users=train_u,
            validation=_as_split(val, phase, protocol, train_u, vcut, params),
            test=_as_split(test, phase, protocol, train_u, tcut, params),
            test_cutoff_time=tcut,
        )
    if params.test_design not in ("temporal", "user_split"):
        raise SplitError(f"unknown test design {params.test_design!r}")

    test_cut = None
    if phase == "development":
        test_cut = params.cutoff_time
        if test_cut is None:
            test_cut = cutoff_at_quantile(corpus.all_times(), params.cutoff_quantile)
    history = _truncate(histories, range(n_users), test_cut)
    train_u, val_u = partition_users(
        sorted(history), (1.0 - params.val_user_fraction, params.val_user_fraction),
        derive_seed(params.seed, "partition"),
    )
    val_cut = params.val_cutoff_time
    if phase == "deployment_ready" and val_cut is None:
        val_cut = params.cutoff_time
    if val_cut is None and protocol == "strict_cutoff":
        val_cut = cutoff_at_quantile(np.concatenate([t for _, t in history.values()]), params.cutoff_quantile)
    val, val_cut = _holdout(protocol, {u: history[u] for u in val_u}, params, "holdout-val", val_cut)
    train = _train_matrix({u: history[u] for u in train_u}, n_users, n_items)
    validation = _as_split(val, phase, protocol, train_u, val_cut, params)

    test = None
    if phase == "development":
        held = holdout_cutoff(histories, test_cut)
        val_targets = {int(u): t for u, t in zip(val.users, val.targets)}
        inputs = []
        for u, items in zip(held.users, held.inputs):
            if int(u) in val_targets:
                items = items[~np.isin(items, val_targets[int(u)])]
            inputs.append(items)
        test = EvalSplit(
            phase=phase, protocol="strict_cutoff", users=held.users, inputs=inputs, targets=held.targets,
            train_users=train_u, cutoff_time=test_cut, excluded=dict(held.excluded),
        )
    return PhaseSets(phase, protocol, params, train, train_u, validation, test, test_cut)


def _split_payload(split: EvalSplit) -> dict:
    return {
        "phase": split.phase,
        "protocol": split.protocol,
        "cutoff_time": split.cutoff_time,
        "holdout_fraction": split.holdout_fraction,
        "excluded": split.excluded,
        "users": split.users.tolist(),
        "inputs": [x.tolist() for x in split.inputs],
        "targets": [x.tolist() for x in split.targets],
    }


def _split_from_payload(d: dict, train_users: np.ndarray) -> EvalSplit:
    return EvalSplit(
        phase=d["phase"],
        protocol=d["protocol"],
        users=np.asarray(d["users"], dtype=np.int64),
        inputs=[np.asarray(x, dtype=np.int64) for x in d["inputs"]],
        targets=[np.asarray(x, dtype=np.int64) for x in d["targets"]],
        train_users=train_users,
        cutoff_time=d["cutoff_time"],
        holdout_fraction=d["holdout_fraction"],
        excluded=d["excluded"],
    )


def corpus_hash(corpus: Corpus) -> str:
    h = hashlib.sha256()
    df = corpus.log.frame
    for col in ("user", "item"):
        h.update("\x1f".join(df[col]).encode("utf-8"))
    h.update(df["timestamp"].to_numpy().tobytes())
    return h.hexdigest()


def write_manifest(sets: PhaseSets, corpus: Corpus, path: str | Path) -> Path:
    train = sets.train
    payload = {
        "format": MANIFEST_FORMAT,
        "phase": sets.phase,
        "protocol": sets.protocol,
        "params": asdict(sets.params),
        "seed": sets.params.seed,
        "corpus_hash": corpus_hash(corpus),
        "n_users": corpus.n_users,
        "n_items": corpus.n_items,
        "test_cutoff_time": sets.test_cutoff_time,
        "train_users": sets.train_users.tolist(),
        "train": [train.indices[train.indptr[u]:train.indptr[u + 1]].tolist() for u in range(train.shape[0])],
        "validation": _split_payload(sets.validation),
        "test": None if sets.test is None else _split_payload(sets.test),
    }
    path = Path(path)
    path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
    return path


def read_manifest(path: str | Path, corpus: Corpus | None = None) -> PhaseSets:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("format") != MANIFEST_FORMAT:
        raise SplitError(f"{path}: unsupported manifest format {d.get('format')!r}")
    if corpus is not None and corpus_hash(corpus) != d["corpus_hash"]:
        raise SplitError(f"{path}: manifest was built from a different corpus")
    params = d["params"]
    params["user_fractions"] = tuple(params["user_fractions"])
    train_users = np.asarray(d["train_users"], dtype=np.int64)
    rows = [np.asarray(r, dtype=np.int64) for r in d["train"]]
    return PhaseSets(
        phase=d["phase"],
        protocol=d["protocol"],
        params=SplitParams(**params),
        train=_rows_to_csr(rows, d["n_items"]),
        train_users=train_users,
        validation=_split_from_payload(d["validation"], train_users),
        test=None if d["test"] is None else _split_from_payload(d["test"], train_users),
        test_cutoff_time=d["test_cutoff_time"],
    )
