"""Interaction-log ingestion and dataset construction.

Pipeline: raw TSV/CSV log -> iterated k-core filter -> per-user
timestamp-sorted sequences -> leave-one-out split -> padded batches.
All structures are plain numpy/python and immutable once built; id 0 is
reserved for padding and never appears inside a sequence.
"""

from __future__ import annotations

import gzip
import hashlib
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DataError

PAD_ID = 0

BUNDLE_FORMAT = "simdiffrec-bundle"
BUNDLE_VERSION = 1


@dataclass(frozen=True)
class InteractionLog:
    """Raw (user_key, item_key, timestamp) records in input order."""

    records: tuple[tuple[str, str, int], ...]

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class Catalog:
    """Bijective key->id maps. User ids start at 0, item ids at 1 (0 = pad)."""

    user_index: dict[str, int]
    item_index: dict[str, int]
    pad_id: int = PAD_ID

    @property
    def n_users(self) -> int:
        return len(self.user_index)

    @property
    def n_items(self) -> int:
        return len(self.item_index)

    def hash(self) -> str:
        payload = json.dumps(
            {"users": self.user_index, "items": self.item_index},
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class SequenceDataset:
    """Per-user chronologically ordered item-id sequences plus the catalog."""

    sequences: dict[int, list[int]]
    catalog: Catalog

    @property
    def n_users(self) -> int:
        return len(self.sequences)

    @property
    def n_items(self) -> int:
        return self.catalog.n_items

    @classmethod
    def from_id_sequences(cls, seqs: list[list[int]], n_items: int | None = None) -> "SequenceDataset":
        """Build a dataset directly from integer id sequences (tests, estimator)."""
        if not seqs:
            raise DataError("no sequences given")
        max_id = max(max(s) for s in seqs if s)
        if n_items is None:
            n_items = max_id
        if max_id > n_items:
            raise DataError(f"item id {max_id} exceeds n_items={n_items}")
        if any(PAD_ID in s for s in seqs):
            raise DataError("pad id 0 may not appear inside a sequence")
        catalog = Catalog(
            user_index={str(u): u for u in range(len(seqs))},
            item_index={str(i): i for i in range(1, n_items + 1)},
        )
        return cls(sequences={u: list(s) for u, s in enumerate(seqs)}, catalog=catalog)


@dataclass(frozen=True)
class Batch:
    """Left-padded id matrix with next-item targets.

    ``padding_mask`` is True at real (non-pad) positions. ``targets[i][t]``
    is ``item_ids[i][t+1]`` and pad where undefined; supervised positions are
    those where both the input and the target are non-pad.
    """

    item_ids: np.ndarray
    targets: np.ndarray
    padding_mask: np.ndarray
    user_ids: np.ndarray

    @property
    def supervised_mask(self) -> np.ndarray:
        return self.padding_mask & (self.targets != PAD_ID)


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_actions: int
    avg_length: float
    sparsity: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_users": self.n_users,
                "n_items": self.n_items,
                "n_actions": self.n_actions,
                "avg_length": self.avg_length,
                "sparsity": self.sparsity,
            },
            sort_keys=True,
            indent=2,
        )


def _open_text(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def _sniff_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("tsv", "csv"):
            raise DataError(f"unknown format {fmt!r}, expected 'tsv' or 'csv'")
        return fmt
    name = path.name[: -len(".gz")] if path.name.endswith(".gz") else path.name
    if name.endswith(".csv"):
        return "csv"
    return "tsv"


def load_interactions(path: str | Path, fmt: str | None = None) -> InteractionLog:
    """Parse a headered ``user item timestamp`` log (gz accepted by extension)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    delim = "\t" if _sniff_format(path, fmt) == "tsv" else ","

    records: list[tuple[str, str, int]] = []
    with _open_text(path) as fh:
        header = fh.readline()
        if not header:
            raise DataError(f"{path}: empty file, expected a header line")
        cols = [c.strip().lower() for c in header.rstrip("\n").split(delim)]
        try:
            iu, ii, it = cols.index("user"), cols.index("item"), cols.index("timestamp")
        except ValueError:
            raise DataError(
                f"{path}: header must name 'user', 'item' and 'timestamp' columns, got {cols}"
            ) from None
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(delim)
            if len(parts) != len(cols):
                raise DataError(f"{path}: line {lineno}: expected {len(cols)} columns, got {len(parts)}")
            user, item, ts = parts[iu].strip(), parts[ii].strip(), parts[it].strip()
            if not user or not item:
                raise DataError(f"{path}: line {lineno}: empty user or item key")
            try:
                ts_int = int(ts)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-integer timestamp {ts!r}") from None
            records.append((user, item, ts_int))
    return InteractionLog(records=tuple(records))


def kcore_filter(log: InteractionLog, min_count: int = 5) -> InteractionLog:
    """Iteratively drop users/items with < min_count interactions (true k-core)."""
    if min_count < 1:
        raise DataError(f"min_count must be >= 1, got {min_count}")
    records = list(log.records)
    while True:
        user_counts = Counter(u for u, _, _ in records)
        item_counts = Counter(i for _, i, _ in records)
        kept = [
            r for r in records
            if user_counts[r[0]] >= min_count and item_counts[r[1]] >= min_count
        ]
        if len(kept) == len(records):
            return InteractionLog(records=tuple(kept))
        records = kept


def build_sequences(log: InteractionLog, min_length: int = 3) -> SequenceDataset:
    """Group by user, sort by timestamp (stable), drop users shorter than min_length."""
    per_user: dict[str, list[tuple[int, str]]] = {}
    for user, item, ts in log.records:
        per_user.setdefault(user, []).append((ts, item))

    surviving: dict[str, list[str]] = {}
    for user, events in per_user.items():
        events.sort(key=lambda e: e[0])  # stable: input order breaks timestamp ties
        if len(events) >= min_length:
            surviving[user] = [item for _, item in events]

    user_index = {u: idx for idx, u in enumerate(sorted(surviving))}
    items = sorted({item for seq in surviving.values() for item in seq})
    item_index = {it: idx + 1 for idx, it in enumerate(items)}
    sequences = {
        user_index[u]: [item_index[it] for it in seq] for u, seq in surviving.items()
    }
    return SequenceDataset(sequences=sequences, catalog=Catalog(user_index, item_index))


def split_leave_one_out(
    ds: SequenceDataset,
) -> tuple[SequenceDataset, dict[int, tuple[list[int], int]], dict[int, tuple[list[int], int]]]:
    """Last item -> test, second-to-last -> valid, rest -> train."""
    train: dict[int, list[int]] = {}
    valid: dict[int, tuple[list[int], int]] = {}
    test: dict[int, tuple[list[int], int]] = {}
    for uid, seq in ds.sequences.items():
        if len(seq) < 3:
            raise DataError(f"user {uid}: sequence of length {len(seq)} < 3 cannot be split")
        train[uid] = seq[:-2]
        valid[uid] = (seq[:-2], seq[-2])
        test[uid] = (seq[:-1], seq[-1])
    return SequenceDataset(sequences=train, catalog=ds.catalog), valid, test


def pad_sequence(seq: list[int], max_len: int) -> list[int]:
    """Keep the most recent max_len items, left-pad to exactly max_len."""
    kept = seq[-max_len:]
    return [PAD_ID] * (max_len - len(kept)) + kept


def make_batches(
    ds: SequenceDataset,
    max_len: int,
    batch_size: int,
    shuffle_seed: int,
) -> Iterator[Batch]:
    """Yield left-padded batches over a seeded permutation of users."""
    if max_len < 2:
        raise DataError(f"max_len must be >= 2, got {max_len}")
    users = np.array(sorted(ds.sequences), dtype=np.int64)
    order = np.random.default_rng(shuffle_seed).permutation(len(users))
    users = users[order]

    for start in range(0, len(users), batch_size):
        chunk = users[start : start + batch_size]
        item_ids = np.zeros((len(chunk), max_len), dtype=np.int64)
        for row, uid in enumerate(chunk):
            item_ids[row] = pad_sequence(ds.sequences[int(uid)], max_len)
        targets = np.zeros_like(item_ids)
        targets[:, :-1] = item_ids[:, 1:]
        yield Batch(
            item_ids=item_ids,
            targets=targets,
            padding_mask=item_ids != PAD_ID,
            user_ids=chunk.copy(),
        )


def stats(ds: SequenceDataset) -> DatasetStats:
    if not ds.sequences:
        raise DataError("empty dataset")
    n_users = ds.n_users
    n_items = ds.n_items
    n_actions = sum(len(s) for s in ds.sequences.values())
    return DatasetStats(
        n_users=n_users,
        n_items=n_items,
        n_actions=n_actions,
        avg_length=n_actions / n_users,
        sparsity=1.0 - n_actions / (n_users * n_items),
    )


def save_bundle(ds: SequenceDataset, path: str | Path) -> None:
    """Write the versioned JSON dataset container (gz by extension)."""
    path = Path(path)
    payload = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "user_index": ds.catalog.user_index,
        "item_index": ds.catalog.item_index,
        "sequences": {str(uid): seq for uid, seq in ds.sequences.items()},
    }
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".gz":
        # mtime pinned and filename omitted so equal datasets produce
        # byte-identical files regardless of output path or save time
        with open(path, "wb") as raw, gzip.GzipFile(
            filename="", fileobj=raw, mode="wb", mtime=0
        ) as fh:
            fh.write(text.encode())
    else:
        path.write_text(text)


def load_bundle(path: str | Path) -> SequenceDataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such bundle: {path}")
    with _open_text(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not a valid bundle: {exc}") from None
    if payload.get("format") != BUNDLE_FORMAT:
        raise DataError(f"{path}: not a {BUNDLE_FORMAT} file")
    if payload.get("version") != BUNDLE_VERSION:
        raise DataError(f"{path}: unsupported bundle version {payload.get('version')}")
    catalog = Catalog(user_index=payload["user_index"], item_index=payload["item_index"])
    sequences = {int(uid): list(map(int, seq)) for uid, seq in payload["sequences"].items()}
    return SequenceDataset(sequences=sequences, catalog=catalog)
