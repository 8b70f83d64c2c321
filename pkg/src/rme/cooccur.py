"""Co-occurrence pair counting and SPPMI matrices.

Every list (a user's liked items, a user's disliked items, or an item's
likers) contributes all ordered pairs of its distinct tokens. The counts feed
the shifted positive PMI transform, giving the sparse symmetric matrices that
regularize the item and user factors.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import UndefinedPair
from .ingest import InteractionMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairCounts:
    """Ordered pair counts ``#(i,j)``, marginals ``#(i)`` and total ``|D|``."""

    pairs: sp.csr_matrix  # int64, symmetric, empty diagonal
    marginal: np.ndarray  # int64
    total: int

    @property
    def dim(self) -> int:
        return self.pairs.shape[0]

    def count(self, i: int, j: int) -> int:
        return int(self.pairs[i, j])

    def merge(self, other: PairCounts) -> PairCounts:
        if other.dim != self.dim:
            raise ValueError("cannot merge counts of different dimensions")
        pairs = (self.pairs + other.pairs).tocsr()
        pairs.sort_indices()
        return PairCounts(pairs, self.marginal + other.marginal, self.total + other.total)


def _count_batch(lists: Sequence[np.ndarray], dim: int) -> PairCounts:
    lengths = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
    cols = np.concatenate(lists).astype(np.int64) if len(lists) else np.empty(0, np.int64)
    rows = np.repeat(np.arange(len(lists)), lengths)
    incidence = sp.csr_matrix(
        (np.ones(len(cols), dtype=np.int64), (rows, cols)), shape=(len(lists), dim)
    )
    if incidence.nnz and incidence.max() > 1:
        raise ValueError("token lists must not contain duplicates")
    pairs = (incidence.T @ incidence).tocsr()
    pairs = (pairs - sp.diags(pairs.diagonal())).tocsr()
    pairs.eliminate_zeros()
    pairs.sort_indices()
    pairs = pairs.astype(np.int64)
    # each token in a list of length L is the focus of L-1 pairs
    marginal = np.asarray(incidence.T @ (lengths - 1)).ravel().astype(np.int64)
    total = int((lengths * (lengths - 1)).sum())
    return PairCounts(pairs, marginal, total)


def generate_pairs(
    lists: Sequence[Sequence[int]],
    dim: int | None = None,
    batch_size: int | None = None,
    workers: int = 1,
) -> PairCounts:
    """Count all ordered pairs of distinct tokens within each list.

    Lists shorter than two contribute nothing. With ``batch_size`` the lists
    are counted in chunks (optionally on ``workers`` threads) and merged in
    chunk order; integer counts make the result independent of the chunking.
    """
    arrays = [np.asarray(x, dtype=np.int64) for x in lists]
    if dim is None:
        dim = 1 + max((int(a.max()) for a in arrays if len(a)), default=-1)
    arrays = [a for a in arrays if len(a) >= 2]
    if not arrays:
        return PairCounts(sp.csr_matrix((dim, dim), dtype=np.int64), np.zeros(dim, np.int64), 0)
    if batch_size is None or batch_size >= len(arrays):
        return _count_batch(arrays, dim)

    chunks = [arrays[i:i + batch_size] for i in range(0, len(arrays), batch_size)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _count_batch(c, dim), chunks))
    else:
        parts = [_count_batch(c, dim) for c in chunks]
    out = parts[0]
    for part in parts[1:]:
        out = out.merge(part)
    return out


def pmi(counts: PairCounts, i: int, j: int) -> float:
    """``log(#(i,j) * |D| / (#(i) * #(j)))`` for a pair that was observed."""
    c = counts.count(i, j)
    if c == 0:
        raise UndefinedPair(f"pair ({i}, {j}) never co-occurs")
    return math.log(c * counts.total / (int(counts.marginal[i]) * int(counts.marginal[j])))


@dataclass(frozen=True)
class SppmiMatrix:
    """Sparse symmetric nonnegative SPPMI matrix with the shift it was built with."""

    matrix: sp.csr_matrix
    shift: float

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    @classmethod
    def empty(cls, dim: int, shift: float = 1.0) -> SppmiMatrix:
        return cls(sp.csr_matrix((dim, dim), dtype=np.float64), shift)


def build_sppmi(counts: PairCounts, s: float = 1.0) -> SppmiMatrix:
    """``max(PMI(i,j) - log s, 0)`` over every counted pair, zeros dropped."""
    if s <= 0:
        raise ValueError("shift must be positive")
    if s < 1:
        logger.warning("shift s=%g < 1 makes the SPPMI matrix denser than plain PPMI", s)
    coo = counts.pairs.tocoo()
    if coo.nnz == 0:
        return SppmiMatrix.empty(counts.dim, s)
    c = coo.data.astype(np.float64)
    mi = counts.marginal[coo.row].astype(np.float64)
    mj = counts.marginal[coo.col].astype(np.float64)
    vals = np.log(c * counts.total / (mi * mj)) - math.log(s)
    keep = vals > 0
    mat = sp.csr_matrix(
        (vals[keep], (coo.row[keep], coo.col[keep])), shape=(counts.dim, counts.dim)
    )
    mat.sort_indices()
    return SppmiMatrix(mat, s)


def build_x(train: InteractionMatrix, s: float = 1.0, **kw) -> SppmiMatrix:
    """Co-liked items: pairs of items liked by the same user (n x n)."""
    return build_sppmi(generate_pairs(train.liked_lists(), train.n_items, **kw), s)


def build_y(train: InteractionMatrix, s: float = 1.0, **kw) -> SppmiMatrix:
    """Co-disliked items: pairs of items disliked by the same user (n x n)."""
    return build_sppmi(generate_pairs(train.disliked_lists(), train.n_items, **kw), s)


def build_z(train: InteractionMatrix, s: float = 1.0, **kw) -> SppmiMatrix:
    """Co-occurring users: pairs of users who liked the same item (m x m)."""
    return build_sppmi(generate_pairs(train.liker_lists(), train.n_users, **kw), s)


def dump_sppmi(mat: SppmiMatrix, path: str | Path) -> None:
    coo = mat.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# sppmi dim={mat.dim} s={mat.shift!r}\n")
        for k in order:
            fh.write(f"{coo.row[k]}\t{coo.col[k]}\t{float(coo.data[k])!r}\n")


def load_sppmi(path: str | Path) -> SppmiMatrix:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[:2] != ["#", "sppmi"]:
            raise ValueError(f"{path}: not an SPPMI dump")
        dim = int(header[2].removeprefix("dim="))
        shift = float(header[3].removeprefix("s="))
        rows, cols, vals = [], [], []
        for line in fh:
            i, j, v = line.split("\t")
            rows.append(int(i))
            cols.append(int(j))
            vals.append(float(v))
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim), dtype=np.float64)
    mat.sort_indices()
    return SppmiMatrix(mat, shift)
