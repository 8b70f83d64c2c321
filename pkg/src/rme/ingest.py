"""Reading interaction logs, binarizing them and cutting reproducible splits."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import AllFiltered, EmptyFile, MalformedLine, MissingTimestamps

logger = logging.getLogger(__name__)

FORMATS = ("ml", "tsv", "csv")


class Label(IntEnum):
    LIKED = 1
    DISLIKED = -1


@dataclass(frozen=True)
class RawEvent:
    user: str
    item: str
    value: float
    timestamp: int | None = None


class Cell(NamedTuple):
    user: str
    item: str
    label: Label
    timestamp: int | None


@dataclass(frozen=True)
class Explicit:
    like_min: float = 4.0
    dislike_max: float = 2.0


@dataclass(frozen=True)
class Implicit:
    like_min_count: float = 1.0


BinarizePolicy = Explicit | Implicit


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------


def _make_event(fields: Sequence[str], line_no: int, path: str) -> RawEvent:
    if len(fields) not in (3, 4):
        raise MalformedLine(line_no, f"expected 3 or 4 fields, got {len(fields)}", path)
    user, item = fields[0].strip(), fields[1].strip()
    if not user or not item:
        raise MalformedLine(line_no, "empty user or item token", path)
    try:
        value = float(fields[2])
    except ValueError:
        raise MalformedLine(line_no, f"non-numeric value {fields[2]!r}", path) from None
    if not math.isfinite(value):
        raise MalformedLine(line_no, f"non-finite value {fields[2]!r}", path)
    ts = None
    if len(fields) == 4 and fields[3].strip():
        try:
            ts = int(fields[3])
        except ValueError:
            raise MalformedLine(line_no, f"bad timestamp {fields[3]!r}", path) from None
        if ts < 0:
            raise MalformedLine(line_no, f"negative timestamp {ts}", path)
    return RawEvent(user, item, value, ts)


def _iter_lines(path: Path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if line.strip():
                yield line_no, line


def parse_events(path: str | Path, fmt: str) -> list[RawEvent]:
    """Parse an interaction log into events, keeping input order.

    ``fmt`` is one of ``"ml"`` (``user::item::rating[::timestamp]``),
    ``"tsv"`` (``user<TAB>item<TAB>value[<TAB>timestamp]``) or ``"csv"``
    (header ``user,item,value[,timestamp]``). Blank lines are skipped.
    """
    path = Path(path)
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    events: list[RawEvent] = []
    if fmt == "csv":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise EmptyFile(str(path))
            names = [h.strip().lower() for h in header]
            if names not in (["user", "item", "value"], ["user", "item", "value", "timestamp"]):
                raise MalformedLine(1, f"unexpected csv header {header!r}", str(path))
            for row in reader:
                if not any(c.strip() for c in row):
                    continue
                events.append(_make_event(row, reader.line_num, str(path)))
    else:
        sep = "::" if fmt == "ml" else "\t"
        for line_no, line in _iter_lines(path):
            events.append(_make_event(line.split(sep), line_no, str(path)))
    if not events:
        raise EmptyFile(str(path))
    return events


def binarize(events: Iterable[RawEvent], policy: BinarizePolicy) -> list[Cell]:
    """Turn raw values into liked/disliked cells; values in the gap are dropped."""
    cells: list[Cell] = []
    dropped = 0
    for ev in events:
        if isinstance(policy, Explicit):
            if ev.value >= policy.like_min:
                label = Label.LIKED
            elif ev.value <= policy.dislike_max:
                label = Label.DISLIKED
            else:
                dropped += 1
                continue
        else:
            if ev.value < policy.like_min_count:
                dropped += 1
                continue
            label = Label.LIKED
        cells.append(Cell(ev.user, ev.item, label, ev.timestamp))
    if dropped:
        logger.info("binarize dropped %d of %d events", dropped, dropped + len(cells))
    return cells


# --------------------------------------------------------------------------
# the matrix
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    """Sparse user x item matrix of liked/disliked cells.

    Cells are stored as parallel arrays sorted by (user, item). ``user_ids`` and
    ``item_ids`` map dense indices back to the raw tokens; split views share
    them with the matrix they were cut from.
    """

    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray
    timestamps: np.ndarray | None
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        order = np.lexsort((self.items, self.users))
        object.__setattr__(self, "users", np.asarray(self.users, dtype=np.int64)[order])
        object.__setattr__(self, "items", np.asarray(self.items, dtype=np.int64)[order])
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int8)[order])
        if self.timestamps is not None:
            object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype=np.int64)[order])
        if len(self.users):
            if self.users.min() < 0 or self.users.max() >= self.n_users:
                raise ValueError("user index out of range")
            if self.items.min() < 0 or self.items.max() >= self.n_items:
                raise ValueError("item index out of range")
            key = self.users * self.n_items + self.items
            if np.any(key[1:] == key[:-1]):
                raise ValueError("duplicate (user, item) cell")

    @classmethod
    def from_arrays(cls, users, items, labels=None, n_users=None, n_items=None, timestamps=None):
        """Build a matrix from dense index arrays, inventing ids ``"0".."m-1"``."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if labels is None:
            labels = np.full(len(users), Label.LIKED, dtype=np.int8)
        m = int(n_users if n_users is not None else (users.max() + 1 if len(users) else 0))
        n = int(n_items if n_items is not None else (items.max() + 1 if len(items) else 0))
        return cls(
            users, items, np.asarray(labels), None if timestamps is None else np.asarray(timestamps),
            tuple(str(i) for i in range(m)), tuple(str(i) for i in range(n)),
        )

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_users, self.n_items

    def __len__(self) -> int:
        return len(self.users)

    def select(self, mask: np.ndarray) -> InteractionMatrix:
        """A view holding only the cells where ``mask`` is true."""
        ts = None if self.timestamps is None else self.timestamps[mask]
        return InteractionMatrix(
            self.users[mask], self.items[mask], self.labels[mask], ts, self.user_ids, self.item_ids
        )

    def _matrix(self, label: Label) -> sp.csr_matrix:
        key = ("csr", int(label))
        if key not in self._cache:
            sel = self.labels == label
            mat = sp.csr_matrix(
                (np.ones(int(sel.sum())), (self.users[sel], self.items[sel])), shape=self.shape
            )
            mat.sort_indices()
            self._cache[key] = mat
        return self._cache[key]

    def liked_matrix(self) -> sp.csr_matrix:
        """Binary m x n matrix with ones at liked cells."""
        return self._matrix(Label.LIKED)

    def disliked_matrix(self) -> sp.csr_matrix:
        return self._matrix(Label.DISLIKED)

    @staticmethod
    def _rows(mat: sp.csr_matrix) -> list[np.ndarray]:
        return [mat.indices[mat.indptr[r]:mat.indptr[r + 1]] for r in range(mat.shape[0])]

    def liked_lists(self) -> list[np.ndarray]:
        """Per user, the sorted indices of liked items."""
        return self._rows(self.liked_matrix())

    def disliked_lists(self) -> list[np.ndarray]:
        return self._rows(self.disliked_matrix())

    def liker_lists(self) -> list[np.ndarray]:
        """Per item, the sorted indices of users who liked it."""
        return self._rows(self.liked_matrix().T.tocsr())

    def liked_counts(self) -> np.ndarray:
        sel = self.labels == Label.LIKED
        return np.bincount(self.users[sel], minlength=self.n_users)

    def with_dislikes(self, users: np.ndarray, items: np.ndarray) -> InteractionMatrix:
        """A copy with extra Disliked cells; pairs already present are skipped."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        key = np.unique(users * self.n_items + items)
        key = key[~np.isin(key, self.users * self.n_items + self.items)]
        u, p = np.divmod(key, self.n_items) if self.n_items else (key, key)
        ts = None
        if self.timestamps is not None:
            ts = np.concatenate([self.timestamps, np.zeros(len(u), dtype=np.int64)])
        return InteractionMatrix(
            np.concatenate([self.users, u]),
            np.concatenate([self.items, p]),
            np.concatenate([self.labels, np.full(len(u), Label.DISLIKED, dtype=np.int8)]),
            ts,
            self.user_ids,
            self.item_ids,
        )

    def cells(self) -> Iterator[tuple[int, int, int, int | None]]:
        ts = self.timestamps if self.timestamps is not None else [None] * len(self)
        for u, p, lab, t in zip(self.users, self.items, self.labels, ts):
            yield int(u), int(p), int(lab), (None if t is None else int(t))


# --------------------------------------------------------------------------
# k-core filtering
# --------------------------------------------------------------------------


def _first_seen_index(tokens: Sequence[str]) -> tuple[np.ndarray, list[str]]:
    index: dict[str, int] = {}
    codes = np.empty(len(tokens), dtype=np.int64)
    for i, tok in enumerate(tokens):
        codes[i] = index.setdefault(tok, len(index))
    return codes, list(index)


def kcore_filter(cells: Sequence[Cell], user_min: int, item_min: int) -> InteractionMatrix:
    """Iteratively drop sparse users and items until both cores hold.

    A user survives with at least ``user_min`` cells of which one or more is
    liked; an item survives with at least ``item_min`` cells. Repeated
    (user, item) cells keep the last occurrence. Surviving users and items are
    re-indexed densely in order of first appearance.
    """
    if user_min < 1 or item_min < 1:
        raise ValueError("core thresholds must be >= 1")
    if not cells:
        raise AllFiltered("no cells to filter")

    ucode, uids = _first_seen_index([c.user for c in cells])
    icode, iids = _first_seen_index([c.item for c in cells])
    labels = np.array([int(c.label) for c in cells], dtype=np.int8)
    has_ts = all(c.timestamp is not None for c in cells)
    ts = np.array([c.timestamp for c in cells], dtype=np.int64) if has_ts else None

    # keep the last occurrence of each (user, item)
    key = ucode * len(iids) + icode
    _, last_rev = np.unique(key[::-1], return_index=True)
    keep = np.sort(len(key) - 1 - last_rev)
    ucode, icode, labels = ucode[keep], icode[keep], labels[keep]
    if ts is not None:
        ts = ts[keep]
    if len(keep) < len(cells):
        logger.info("collapsed %d repeated cells", len(cells) - len(keep))

    alive = np.ones(len(ucode), dtype=bool)
    rounds = 0
    while True:
        u, i = ucode[alive], icode[alive]
        ucount = np.bincount(u, minlength=len(uids))
        uliked = np.bincount(u[labels[alive] == Label.LIKED], minlength=len(uids))
        icount = np.bincount(i, minlength=len(iids))
        user_ok = (ucount >= user_min) & (uliked >= 1)
        item_ok = icount >= item_min
        nxt = alive & user_ok[ucode] & item_ok[icode]
        if np.array_equal(nxt, alive):
            break
        alive = nxt
        rounds += 1
    if not alive.any():
        raise AllFiltered(f"no cells survive cores user_min={user_min}, item_min={item_min}")
    logger.debug("k-core reached a fixed point after %d removal rounds", rounds)

    ucode, icode, labels = ucode[alive], icode[alive], labels[alive]
    if ts is not None:
        ts = ts[alive]
    uold, unew = np.unique(ucode, return_inverse=True)
    iold, inew = np.unique(icode, return_inverse=True)
    # np.unique sorts codes, and codes are first-appearance ranks, so order is preserved
    return InteractionMatrix(
        unew, inew, labels, ts, tuple(uids[c] for c in uold), tuple(iids[c] for c in iold)
    )


# --------------------------------------------------------------------------
# splitting
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    valid_frac: float = 0.1
    test_frac: float = 0.2
    mode: str = "time"  # "time" or "random"
    seed: int = 0
    fold_count: int = 1

    def __post_init__(self):
        if abs(self.train_frac + self.valid_frac + self.test_frac - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if min(self.train_frac, self.valid_frac, self.test_frac) < 0:
            raise ValueError("split fractions must be nonnegative")
        if self.mode not in ("time", "random"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if self.fold_count < 1:
            raise ValueError("fold_count must be >= 1")


def fold_rng(seed: int, fold: int) -> np.random.Generator:
    """Generator for one fold; folds of the same seed get independent streams."""
    return np.random.default_rng([seed, fold])


@dataclass
class Split:
    train: InteractionMatrix
    valid: InteractionMatrix
    test: InteractionMatrix
    fold: int = 0
    dropped_valid: int = 0
    dropped_test: int = 0

    def __iter__(self):
        return iter((self.train, self.valid, self.test))


def split(matrix: InteractionMatrix, spec: SplitSpec, fold: int = 0) -> Split:
    """Cut a matrix into train/valid/test views.

    ``time`` mode sorts cells by (timestamp, user, item), holds out the last
    ``test_frac`` as test and samples the validation share uniformly from the
    remainder. ``random`` mode permutes all cells. Valid/test cells whose user
    or item never occurs in train are dropped.
    """
    n = len(matrix)
    rng = fold_rng(spec.seed, fold)
    part = np.zeros(n, dtype=np.int8)  # 0 train, 1 valid, 2 test
    if spec.mode == "time":
        if matrix.timestamps is None:
            raise MissingTimestamps("time-ordered split needs timestamps on every cell")
        order = np.lexsort((matrix.items, matrix.users, matrix.timestamps))
        n_head = round((spec.train_frac + spec.valid_frac) * n)
        head_valid_share = spec.valid_frac / (spec.train_frac + spec.valid_frac) if n_head else 0.0
        n_valid = round(head_valid_share * n_head)
        part[order[n_head:]] = 2
        part[order[rng.choice(n_head, size=n_valid, replace=False)]] = 1
    else:
        perm = rng.permutation(n)
        n_train = round(spec.train_frac * n)
        n_valid = round(spec.valid_frac * n)
        part[perm[n_train:n_train + n_valid]] = 1
        part[perm[n_train + n_valid:]] = 2

    is_train = part == 0
    seen_u = np.zeros(matrix.n_users, dtype=bool)
    seen_i = np.zeros(matrix.n_items, dtype=bool)
    seen_u[matrix.users[is_train]] = True
    seen_i[matrix.items[is_train]] = True
    warm = seen_u[matrix.users] & seen_i[matrix.items]

    valid_mask = (part == 1) & warm
    test_mask = (part == 2) & warm
    out = Split(
        matrix.select(is_train),
        matrix.select(valid_mask),
        matrix.select(test_mask),
        fold=fold,
        dropped_valid=int(((part == 1) & ~warm).sum()),
        dropped_test=int(((part == 2) & ~warm).sum()),
    )
    if out.dropped_valid or out.dropped_test:
        logger.info(
            "fold %d: dropped %d valid and %d test cells unseen in train",
            fold, out.dropped_valid, out.dropped_test,
        )
    return out


def split_manifest(s: Split, spec: SplitSpec, extra: dict | None = None) -> str:
    lines = [
        f"fold: {s.fold}",
        f"mode: {spec.mode}",
        f"seed: {spec.seed}",
        f"fractions: {spec.train_frac}/{spec.valid_frac}/{spec.test_frac}",
        f"users: {s.train.n_users}",
        f"items: {s.train.n_items}",
    ]
    for name, part in zip(("train", "valid", "test"), s):
        liked = int((part.labels == Label.LIKED).sum())
        lines.append(f"{name}: {len(part)} cells ({liked} liked, {len(part) - liked} disliked)")
    lines.append(f"dropped_valid: {s.dropped_valid}")
    lines.append(f"dropped_test: {s.dropped_test}")
    for k, v in (extra or {}).items():
        lines.append(f"{k}: {v}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# on-disk form used by the command line driver
# --------------------------------------------------------------------------


def write_index(ids: Sequence[str], path: Path) -> None:
    path.write_text("".join(f"{tok}\n" for tok in ids), encoding="utf-8")


def read_index(path: Path) -> tuple[str, ...]:
    return tuple(path.read_text(encoding="utf-8").splitlines())


def write_cells(matrix: InteractionMatrix, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, p, lab, t in matrix.cells():
            fh.write(f"{u}\t{p}\t{lab}\t{'' if t is None else t}\n")


def read_cells(path: Path, user_ids: tuple[str, ...], item_ids: tuple[str, ...]) -> InteractionMatrix:
    rows = [line.split("\t") for line in path.read_text(encoding="utf-8").splitlines() if line]
    users = np.array([int(r[0]) for r in rows], dtype=np.int64)
    items = np.array([int(r[1]) for r in rows], dtype=np.int64)
    labels = np.array([int(r[2]) for r in rows], dtype=np.int8)
    ts = None
    if rows and all(r[3] for r in rows):
        ts = np.array([int(r[3]) for r in rows], dtype=np.int64)
    return InteractionMatrix(users, items, labels, ts, user_ids, item_ids)
