"""Interaction log ingestion, preprocessing and indexing.

The pipeline is ``parse_interactions`` -> ``preprocess`` -> ``build_corpus``.
Everything produced here is treated as immutable downstream.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp

log = logging.getLogger(__name__)

CATALOG_FORMAT = "temporec-catalog/1"
MATRIX_FORMAT = "temporec-csr/1"
USERS_FORMAT = "temporec-users/1"

DEFAULT_COLUMNS = ("user_id", "item_id", "rating", "timestamp")


class CorpusError(ValueError):
    pass


class EmptyCorpusError(CorpusError):
    """Raised when preprocessing leaves no interactions."""


class MalformedRowError(CorpusError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    timestamp: int
    rating: float | None = None


@dataclass(frozen=True)
class ColumnSpec:
    user: str = "user_id"
    item: str = "item_id"
    rating: str | None = "rating"
    # None: the file carries no times; every interaction gets timestamp 0
    timestamp: str | None = "timestamp"


@dataclass(frozen=True, eq=False)
class InteractionLog:
    """Timestamped interactions sorted by (user, timestamp, item).

    ``frame`` has columns ``user``, ``item`` (str), ``timestamp`` (int64) and
    ``rating`` (float64, NaN when absent).
    """

    frame: pd.DataFrame
    scale: tuple[float, float] | None = None
    skipped: int = 0

    def __post_init__(self):
        frame = _canonical(self.frame)
        object.__setattr__(self, "frame", frame)

    def __len__(self) -> int:
        return len(self.frame)

    def __iter__(self) -> Iterator[Interaction]:
        return self.records()

    def __eq__(self, other) -> bool:
        if not isinstance(other, InteractionLog):
            return NotImplemented
        return self.scale == other.scale and self.frame.equals(other.frame)

    def records(self) -> Iterator[Interaction]:
        for user, item, ts, rating in self.frame.itertuples(index=False, name=None):
            yield Interaction(user, item, int(ts), None if math.isnan(rating) else float(rating))

    @property
    def has_ratings(self) -> bool:
        return bool(self.frame["rating"].notna().any())

    @classmethod
    def from_records(cls, records: Sequence[Interaction], scale=None) -> "InteractionLog":
        frame = pd.DataFrame(
            {
                "user": [r.user for r in records],
                "item": [r.item for r in records],
                "timestamp": [r.timestamp for r in records],
                "rating": [np.nan if r.rating is None else r.rating for r in records],
            }
        )
        return cls(frame, scale=scale)


def _canonical(frame: pd.DataFrame) -> pd.DataFrame:
    frame = pd.DataFrame(
        {
            "user": frame["user"].astype(str).to_numpy(dtype=object),
            "item": frame["item"].astype(str).to_numpy(dtype=object),
            "timestamp": frame["timestamp"].to_numpy(dtype=np.int64),
            "rating": frame["rating"].to_numpy(dtype=np.float64),
        }
    )
    if (frame["timestamp"] < 0).any():
        raise CorpusError("timestamps must be nonnegative")
    frame = frame.sort_values(["user", "timestamp", "item"], kind="mergesort")
    return frame.reset_index(drop=True)


def parse_interactions(
    path: str | Path,
    columns: ColumnSpec = ColumnSpec(),
    *,
    strict: bool = True,
    scale: tuple[float, float] | None = None,
) -> InteractionLog:
    """Load a headed CSV of interactions.

    Malformed rows raise :class:`MalformedRowError` in strict mode; otherwise
    they are skipped and counted in ``InteractionLog.skipped``.
    """
    path = Path(path)
    users, items, times, ratings = [], [], [], []
    skipped = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusError(f"{path}: missing header") from None
        header = [h.strip() for h in header]
        try:
            iu = header.index(columns.user)
            ii = header.index(columns.item)
            it = header.index(columns.timestamp) if columns.timestamp else None
        except ValueError as exc:
            raise CorpusError(f"{path}: {exc}") from None
        ir = header.index(columns.rating) if columns.rating and columns.rating in header else None

        for row in reader:
            line = reader.line_num
            if not row:
                continue
            try:
                if len(row) != len(header):
                    raise MalformedRowError(line, f"expected {len(header)} fields, got {len(row)}")
                ts = 0 if it is None else _parse_timestamp(row[it], line)
                rating = np.nan
                if ir is not None and row[ir].strip() != "":
                    try:
                        rating = float(row[ir])
                    except ValueError:
                        raise MalformedRowError(line, f"bad rating {row[ir]!r}") from None
                    if not math.isfinite(rating):
                        raise MalformedRowError(line, f"bad rating {row[ir]!r}")
                    if scale is not None and not scale[0] <= rating <= scale[1]:
                        raise MalformedRowError(line, f"rating {rating} outside {scale}")
                user, item = row[iu].strip(), row[ii].strip()
                if not user or not item:
                    raise MalformedRowError(line, "empty user or item id")
            except MalformedRowError:
                if strict:
                    raise
                skipped += 1
                continue
            users.append(user)
            items.append(item)
            times.append(ts)
            ratings.append(rating)

    frame = pd.DataFrame(
        {
            "user": pd.Series(users, dtype=object),
            "item": pd.Series(items, dtype=object),
            "timestamp": np.asarray(times, dtype=np.int64),
            "rating": np.asarray(ratings, dtype=np.float64),
        }
    )
    result = InteractionLog(frame, scale=scale, skipped=skipped)
    log.info("parsed %d interactions from %s (%d skipped)", len(result), path, skipped)
    return result


def _parse_timestamp(text: str, line: int) -> int:
    text = text.strip()
    try:
        value = int(text)
    except ValueError:
        try:
            as_float = float(text)
        except ValueError:
            raise MalformedRowError(line, f"bad timestamp {text!r}") from None
        if not math.isfinite(as_float) or as_float != int(as_float):
            raise MalformedRowError(line, f"bad timestamp {text!r}")
        value = int(as_float)
    if value < 0:
        raise MalformedRowError(line, f"negative timestamp {value}")
    return value


def write_interactions(log_: InteractionLog, path: str | Path) -> None:
    """Write the canonical CSV form (``user_id,item_id,rating,timestamp``)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DEFAULT_COLUMNS)
        for user, item, ts, rating in log_.frame.itertuples(index=False, name=None):
            writer.writerow([user, item, "" if math.isnan(rating) else repr(float(rating)), int(ts)])


@dataclass(frozen=True)
class PreprocessOptions:
    binarize_threshold: float | None = None
    min_user_deg: int = 5
    min_item_deg: int = 5
    window: tuple[int, int] | None = None


def preprocess(log_: InteractionLog, opts: PreprocessOptions = PreprocessOptions()) -> InteractionLog:
    """Binarize, window, deduplicate and k-core filter a log.

    Degree filtering alternates between users and items until a fixed point,
    so every surviving user and item meets its minimum degree.
    """
    df = log_.frame
    if opts.binarize_threshold is not None:
        if not log_.has_ratings:
            raise CorpusError("binarize_threshold set but the log has no ratings")
        df = df[df["rating"] >= opts.binarize_threshold]
    if opts.window is not None:
        start, end = opts.window
        df = df[(df["timestamp"] >= start) & (df["timestamp"] <= end)]
    # frame is sorted by (user, timestamp, item) so "first" is the earliest
    df = df.drop_duplicates(["user", "item"], keep="first")

    while len(df):
        n = len(df)
        if opts.min_user_deg > 1:
            deg = df.groupby("user")["item"].transform("size")
            df = df[deg >= opts.min_user_deg]
        if opts.min_item_deg > 1:
            deg = df.groupby("item")["user"].transform("size")
            df = df[deg >= opts.min_item_deg]
        if len(df) == n:
            break

    if not len(df):
        raise EmptyCorpusError("no interactions survive preprocessing")
    return InteractionLog(df, scale=log_.scale)


@dataclass(frozen=True, eq=False)
class ItemCatalog:
    item_ids: np.ndarray
    first_seen: np.ndarray
    index_of: dict[str, int] = field(repr=False)

    @property
    def t_min(self) -> int:
        return int(self.first_seen.min())

    @property
    def t_max(self) -> int:
        return int(self.first_seen.max())

    def __len__(self) -> int:
        return len(self.item_ids)


@dataclass(frozen=True, eq=False)
class Corpus:
    """Indexed view of a preprocessed log.

    ``histories[u]`` holds user ``u``'s (item index, timestamp) arrays sorted
    by (timestamp, item index).
    """

    log: InteractionLog
    catalog: ItemCatalog
    user_ids: np.ndarray
    matrix: sp.csr_matrix
    histories: list[tuple[np.ndarray, np.ndarray]] = field(repr=False)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.catalog)

    @property
    def user_index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.user_ids)}

    def all_times(self) -> np.ndarray:
        return self.log.frame["timestamp"].to_numpy()


def build_corpus(log_: InteractionLog) -> Corpus:
    """Assign dense indices, compute first-seen times and the binary CSR matrix."""
    if not len(log_):
        raise EmptyCorpusError("cannot index an empty log")
    df = log_.frame
    if df.duplicated(["user", "item"]).any():
        raise CorpusError("duplicate (user, item) pairs; run preprocess first")

    item_ids, cols = np.unique(df["item"].to_numpy(dtype=str), return_inverse=True)
    user_ids, rows = np.unique(df["user"].to_numpy(dtype=str), return_inverse=True)
    times = df["timestamp"].to_numpy(dtype=np.int64)

    first_seen = np.full(len(item_ids), np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(first_seen, cols, times)
    catalog = ItemCatalog(
        item_ids=item_ids.astype(object),
        first_seen=first_seen,
        index_of={str(item): i for i, item in enumerate(item_ids)},
    )

    matrix = sp.csr_matrix(
        (np.ones(len(rows), dtype=np.float64), (rows, cols)),
        shape=(len(user_ids), len(item_ids)),
    )
    matrix.sort_indices()

    # rows are contiguous per user and sorted by (timestamp, item id); item ids
    # map monotonically to indices, so the order carries over
    bounds = np.flatnonzero(np.diff(rows)) + 1
    histories = [
        (c.astype(np.int64), t)
        for c, t in zip(np.split(cols, bounds), np.split(times, bounds))
    ]
    return Corpus(log_, catalog, user_ids.astype(object), matrix, histories)


def build_catalog_and_matrix(log_: InteractionLog):
    """Return ``(catalog, matrix, user_index)`` for a preprocessed log."""
    corpus = build_corpus(log_)
    return corpus.catalog, corpus.matrix, corpus.user_index


def save_snapshot(corpus: Corpus, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_interactions(corpus.log, directory / "interactions.csv")
    with (directory / "catalog.csv").open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {CATALOG_FORMAT}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "index", "first_seen"])
        for i, (item, t) in enumerate(zip(corpus.catalog.item_ids, corpus.catalog.first_seen)):
            writer.writerow([item, i, int(t)])
    with (directory / "users.csv").open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {USERS_FORMAT}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "index"])
        for i, user in enumerate(corpus.user_ids):
            writer.writerow([user, i])
    m = corpus.matrix
    with (directory / "matrix.csv").open("w", encoding="utf-8") as fh:
        fh.write(f"# {MATRIX_FORMAT} rows={m.shape[0]} cols={m.shape[1]} nnz={m.nnz}\n")
        fh.write("row,col\n")
        coo = m.tocoo()
        for r, c in zip(coo.row, coo.col):
            fh.write(f"{r},{c}\n")
    return directory


def load_snapshot(directory: str | Path) -> Corpus:
    """Rebuild a corpus from a snapshot and check it against the stored catalog."""
    directory = Path(directory)
    with (directory / "catalog.csv").open(encoding="utf-8") as fh:
        tag = fh.readline().strip()
    if tag != f"# {CATALOG_FORMAT}":
        raise CorpusError(f"{directory}: unsupported catalog format {tag!r}")
    corpus = build_corpus(parse_interactions(directory / "interactions.csv"))
    stored = pd.read_csv(directory / "catalog.csv", skiprows=1, dtype={"item_id": str}, keep_default_na=False)
    if not (
        np.array_equal(stored["item_id"].to_numpy(dtype=str), corpus.catalog.item_ids.astype(str))
        and np.array_equal(stored["first_seen"].to_numpy(), corpus.catalog.first_seen)
    ):
        raise CorpusError(f"{directory}: catalog does not match interactions")
    return corpus
