"""Interaction-log ingestion, k-core filtering, splits, and synthetic data.

The pipeline here is: raw (user, item, timestamp) records -> per-user
time-ordered deduplicated sequences over a dense vocabulary -> leave-one-
out train/validation/test split -> fixed-window training rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod

PAD = 0  # reserved item index; never a real item


@dataclass(frozen=True)
class InteractionRecord:
    user: str
    item: str
    timestamp: int


@dataclass(frozen=True)
class Sequence:
    user_index: int
    items: tuple[int, ...]  # dense indices, time-ordered, duplicate-free


@dataclass
class Vocabulary:
    item_to_index: dict[str, int]
    index_to_item: list[str]  # index_to_item[0] is the padding placeholder
    user_to_index: dict[str, int]
    index_to_user: list[str]

    @property
    def item_count(self) -> int:
        return len(self.index_to_item) - 1

    @property
    def user_count(self) -> int:
        return len(self.index_to_user)


@dataclass
class SplitDataset:
    train: list[Sequence]                 # last two items removed (evaluable users)
    valid_target: dict[int, int]          # user_index -> held-out validation item
    test_target: dict[int, int]           # user_index -> held-out test item
    full: list[Sequence]
    train_only_users: int = 0             # sequences too short for leave-one-out


@dataclass(frozen=True, eq=False)
class TrainingRow:
    user_index: int
    prefix: tuple[int, ...]               # the bare items, oldest first
    window: np.ndarray                    # (max_len,) int64, left-padded with 0
    target: int

    def __post_init__(self):
        object.__setattr__(self, "window", np.asarray(self.window, dtype=np.int64))


class CorpusError(ValueError):
    pass


def load_log(path: str, format: str = "tsv") -> list[InteractionRecord]:
    """Read a headerless user/item/timestamp log, preserving row order."""
    if format not in ("tsv", "csv"):
        raise CorpusError(f"unknown log format {format!r}")
    delim = "\t" if format == "tsv" else ","
    records = []
    try:
        fh = open(path, newline="")
    except OSError as e:
        raise CorpusError(f"cannot read log {path}: {e}") from e
    with fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter=delim), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                raise CorpusError(f"{path}:{lineno}: expected user, item, timestamp")
            user, item, ts = row[0].strip(), row[1].strip(), row[2].strip()
            try:
                timestamp = int(ts)
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: non-numeric timestamp {ts!r}") from None
            if timestamp < 0:
                raise CorpusError(f"{path}:{lineno}: negative timestamp {timestamp}")
            records.append(InteractionRecord(user, item, timestamp))
    return records


def build_sequences(records: list[InteractionRecord], k_core: int = 5
                    ) -> tuple[Vocabulary, list[Sequence]]:
    """Time-order and deduplicate per user, then k-core filter to a fixed point.

    Duplicate items keep their first occurrence; timestamp ties keep input
    order. Users and items with fewer than ``k_core`` remaining
    interactions are removed iteratively until none are left to remove.
    """
    if k_core < 1:
        raise CorpusError(f"k_core must be >= 1, got {k_core}")

    by_user: dict[str, list[tuple[int, int, str]]] = {}
    for pos, rec in enumerate(records):
        by_user.setdefault(rec.user, []).append((rec.timestamp, pos, rec.item))

    seqs: dict[str, list[str]] = {}
    for user, rows in by_user.items():
        rows.sort(key=lambda r: (r[0], r[1]))  # stable on ties via input position
        seen = set()
        items = []
        for _, _, item in rows:
            if item not in seen:
                seen.add(item)
                items.append(item)
        seqs[user] = items

    # Iterative k-core: after dedup each (user, item) pair is unique, so a
    # user's interaction count is their sequence length and an item's count
    # is the number of sequences containing it.
    while True:
        item_count: dict[str, int] = {}
        for items in seqs.values():
            for it in items:
                item_count[it] = item_count.get(it, 0) + 1
        bad_items = {it for it, c in item_count.items() if c < k_core}
        changed = False
        for user in list(seqs):
            items = seqs[user]
            if bad_items:
                kept = [it for it in items if it not in bad_items]
                if len(kept) != len(items):
                    seqs[user] = items = kept
                    changed = True
            if len(items) < k_core:
                del seqs[user]
                changed = True
        if not changed:
            break

    if not seqs:
        raise CorpusError(f"empty after {k_core}-core filtering")

    item_to_index: dict[str, int] = {}
    index_to_item = ["<pad>"]
    user_to_index: dict[str, int] = {}
    index_to_user: list[str] = []
    out = []
    for user in seqs:  # insertion order of first user record: deterministic
        uidx = len(index_to_user)
        user_to_index[user] = uidx
        index_to_user.append(user)
        dense = []
        for it in seqs[user]:
            if it not in item_to_index:
                item_to_index[it] = len(index_to_item)
                index_to_item.append(it)
            dense.append(item_to_index[it])
        out.append(Sequence(uidx, tuple(dense)))
    vocab = Vocabulary(item_to_index, index_to_item, user_to_index, index_to_user)
    return vocab, out


def split_leave_one_out(sequences: list[Sequence]) -> SplitDataset:
    """Hold out the final item for test and the one before it for validation.

    Sequences shorter than 3 stay train-only: no held-out targets, counted
    in ``train_only_users``.
    """
    train, valid_target, test_target = [], {}, {}
    short = 0
    for seq in sequences:
        n = len(seq.items)
        if n < 3:
            train.append(seq)
            short += 1
            continue
        train.append(Sequence(seq.user_index, seq.items[:-2]))
        valid_target[seq.user_index] = seq.items[-2]
        test_target[seq.user_index] = seq.items[-1]
    return SplitDataset(train, valid_target, test_target, list(sequences), short)


def expand_subsequences(seq: Sequence, max_len: int) -> list[TrainingRow]:
    """Emit (prefix, next-item) training rows from one sequence.

    Only the most recent ``max_len + 1`` items participate. Each prefix is
    right-aligned into a window of ``max_len`` slots, left-padded with 0.
    """
    items = seq.items[-(max_len + 1):]
    rows = []
    for k in range(1, len(items)):
        prefix = items[:k]
        window = np.zeros(max_len, dtype=np.int64)
        window[max_len - k:] = prefix
        rows.append(TrainingRow(seq.user_index, tuple(prefix), window, items[k]))
    return rows


def write_split_manifest(path: str, vocab: Vocabulary, split: SplitDataset) -> None:
    """One audit line per user: user-id, train length, valid target, test target."""
    train_by_user = {s.user_index: s for s in split.train}
    with open(path, "w") as fh:
        for uidx, user in enumerate(vocab.index_to_user):
            seq = train_by_user[uidx]
            v = split.valid_target.get(uidx, "-")
            t = split.test_target.get(uidx, "-")
            fh.write(f"{user}\t{len(seq.items)}\t{v}\t{t}\n")


# ---------------------------------------------------------------------
# synthetic corpora with planted transition structure
# ---------------------------------------------------------------------


@dataclass
class SynthConfig:
    item_count: int
    user_count: int
    min_len: int = 6
    max_len: int = 12
    noise: float = 0.0                    # mixing weight toward uniform next-item
    transition: str = "cyclic"            # named structure, or "matrix"
    matrix: np.ndarray | None = None      # explicit row-stochastic (item_count²)

    def transition_matrix(self) -> np.ndarray:
        if self.transition == "matrix":
            if self.matrix is None:
                raise CorpusError("transition='matrix' requires an explicit matrix")
            m = np.asarray(self.matrix, dtype=np.float64)
        elif self.transition == "cyclic":
            m = np.zeros((self.item_count, self.item_count))
            for i in range(self.item_count):
                m[i, (i + 1) % self.item_count] = 1.0
        elif self.transition == "blocks":
            # two successors per item, wrapping within blocks of 4
            m = np.zeros((self.item_count, self.item_count))
            for i in range(self.item_count):
                base = (i // 4) * 4
                m[i, base + (i - base + 1) % 4] += 0.5
                m[i, base + (i - base + 2) % 4] += 0.5
        elif self.transition == "sparse":
            # three random successors per item; the wiring depends only on
            # item_count, so corpora drawn with different seeds share it
            r = rngmod.stream(self.item_count, "sparse-structure")
            m = np.zeros((self.item_count, self.item_count))
            for i in range(self.item_count):
                succ = r.choice(self.item_count - 1, size=3, replace=False)
                succ = np.where(succ >= i, succ + 1, succ)  # avoid self-loop
                m[i, succ] = 1.0 / 3.0
        else:
            raise CorpusError(f"unknown transition structure {self.transition!r}")
        if m.shape != (self.item_count, self.item_count):
            raise CorpusError("transition matrix shape does not match item_count")
        return m


def generate_synthetic(config: SynthConfig, seed: int) -> list[InteractionRecord]:
    """Sample interaction logs from a planted first-order transition process.

    Each user walks the transition matrix; with probability ``noise`` the
    next item is drawn uniformly instead. Deterministic per (config, seed).
    """
    if config.item_count <= 0 or config.user_count <= 0:
        raise CorpusError("item_count and user_count must be positive")
    if not 0.0 <= config.noise <= 1.0:
        raise CorpusError(f"noise must be in [0,1], got {config.noise}")
    if config.min_len < 2 or config.max_len < config.min_len:
        raise CorpusError("need 2 <= min_len <= max_len")
    trans = config.transition_matrix()
    rows = trans.sum(axis=1, keepdims=True)
    if np.any(rows <= 0):
        raise CorpusError("transition matrix has an all-zero row")
    trans = trans / rows

    r = rngmod.stream(seed, "synthetic")
    records = []
    for u in range(config.user_count):
        length = int(r.integers(config.min_len, config.max_len + 1))
        cur = int(r.integers(config.item_count))
        for t in range(length):
            records.append(InteractionRecord(f"u{u}", f"i{cur}", t))
            if r.random() < config.noise:
                cur = int(r.integers(config.item_count))
            else:
                cur = int(r.choice(config.item_count, p=trans[cur]))
    return records


def write_log(path: str, records: list[InteractionRecord], format: str = "tsv") -> None:
    delim = "\t" if format == "tsv" else ","
    with open(path, "w") as fh:
        for rec in records:
            fh.write(f"{rec.user}{delim}{rec.item}{delim}{rec.timestamp}\n")
