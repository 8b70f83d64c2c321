"""Top-N ranking metrics, user-activity groups and fold-level significance."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import stats

from .errors import EmptyRelevant, InsufficientFolds, NoTestUsers

if TYPE_CHECKING:
    from .ingest import InteractionMatrix
    from .model import ModelState

METRICS = ("recall", "ndcg", "map")
DEFAULT_NS = (5, 10, 20, 50, 100)
GROUPS = ("cold", "warm", "active")


# --------------------------------------------------------------------------
# single-ranking metrics
# --------------------------------------------------------------------------


def _check(relevant, n: int) -> set:
    relevant = set(relevant)
    if not relevant:
        raise EmptyRelevant("no relevant items")
    if n < 1:
        raise ValueError("cutoff must be >= 1")
    return relevant


def recall_at(ranked: Sequence, relevant: Iterable, n: int) -> float:
    """Hits in the top ``n`` over ``min(n, |relevant|)``."""
    relevant = _check(relevant, n)
    hits = sum(1 for item in ranked[:n] if item in relevant)
    return hits / min(n, len(relevant))


def ndcg_at(ranked: Sequence, relevant: Iterable, n: int) -> float:
    """Binary-relevance NDCG with a ``log2(rank + 1)`` discount."""
    relevant = _check(relevant, n)
    dcg = 0.0
    for rank, item in enumerate(ranked[:n], start=1):
        if item in relevant:
            dcg += 1.0 / math.log2(rank + 1)
    idcg = 0.0
    for rank in range(1, min(n, len(relevant)) + 1):
        idcg += 1.0 / math.log2(rank + 1)
    return dcg / idcg


def map_at(ranked: Sequence, relevant: Iterable, n: int) -> float:
    """Average precision at ``n``: precision at each hit, over ``min(n, |relevant|)``."""
    relevant = _check(relevant, n)
    hits = 0
    total = 0.0
    for rank, item in enumerate(ranked[:n], start=1):
        if item in relevant:
            hits += 1
            total += hits / rank
    return total / min(n, len(relevant))


def rank_items(scores: np.ndarray, exclude: Iterable[int] = ()) -> np.ndarray:
    """Item indices by descending score, ties by ascending index, excluded items removed."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    exclude = np.fromiter(exclude, dtype=np.int64)
    if len(exclude):
        order = order[~np.isin(order, exclude)]
    return order


# --------------------------------------------------------------------------
# batched evaluation
# --------------------------------------------------------------------------


def _discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def _batch_metrics(hits: np.ndarray, n_rel: np.ndarray, ns: Sequence[int]) -> dict:
    """Metric arrays for a batch of users from a (users x max N) hit matrix."""
    out = {}
    disc = _discounts(hits.shape[1])
    csum = np.cumsum(hits, axis=1)
    prec = csum / np.arange(1, hits.shape[1] + 1)
    ideal = np.cumsum(disc)
    for n in ns:
        h = hits[:, :n]
        denom = np.minimum(n, n_rel)
        out["recall", n] = h.sum(axis=1) / denom
        out["ndcg", n] = (h * disc[:n]).sum(axis=1) / ideal[denom - 1]
        out["map", n] = (prec[:, :n] * h).sum(axis=1) / denom
    return out


def _score_users(alpha, beta, users, exclude: sp.csr_matrix, heldout: sp.csr_matrix,
                 max_n: int, batch: int = 512):
    """Yield (users, hit matrix, relevant counts) over batches of users."""
    n_items = beta.shape[0]
    width = min(max_n, n_items)
    for start in range(0, len(users), batch):
        us = users[start:start + batch]
        scores = alpha[us] @ beta.T
        ex = exclude[us].tocoo()
        scores[ex.row, ex.col] = -np.inf
        order = np.argsort(-scores, axis=1, kind="stable")[:, :width]
        rel = heldout[us]
        rel_dense = rel.toarray() > 0
        hits = np.take_along_axis(rel_dense, order, axis=1)
        # an excluded item is never relevant, so tail positions past the candidates are non-hits
        if width < max_n:
            hits = np.pad(hits, ((0, 0), (0, max_n - width)))
        yield us, hits.astype(np.float64), np.diff(rel.indptr)


def ranking_ndcg(alpha: np.ndarray, beta: np.ndarray, train: sp.csr_matrix,
                 heldout: sp.csr_matrix, n: int = 100) -> float:
    """Mean NDCG@n over users with held-out items, excluding ``train`` items from rankings.

    Used as the validation score for early stopping.
    """
    heldout = sp.csr_matrix(heldout)
    users = np.flatnonzero(np.diff(heldout.indptr) > 0)
    if len(users) == 0:
        return float("nan")
    exclude = sp.csr_matrix(train)
    total = 0.0
    for _, hits, n_rel in _score_users(alpha, beta, users, exclude, heldout, n):
        total += float(_batch_metrics(hits, n_rel, [n])["ndcg", n].sum())
    return total / len(users)


@dataclass(frozen=True)
class UserGroupSpec:
    """Cold/warm/active split of users sorted ascending by training activity."""

    cold_pct: int = 20
    active_pct: int = 20

    def assign(self, users: np.ndarray, activity: np.ndarray) -> dict[str, np.ndarray]:
        users = np.asarray(users)
        order = np.lexsort((users, activity[users]))
        ranked = users[order]
        size = len(ranked)
        n_cold = size * self.cold_pct // 100
        n_active = size * self.active_pct // 100
        return {
            "cold": np.sort(ranked[:n_cold]),
            "warm": np.sort(ranked[n_cold:size - n_active]),
            "active": np.sort(ranked[size - n_active:]),
        }


@dataclass
class EvalReport:
    fold: int
    ns: tuple[int, ...]
    users: np.ndarray
    per_user: dict = field(repr=False)  # (metric, N) -> array aligned with users
    groups: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return len(self.users)

    def value(self, metric: str, n: int, group: str = "all") -> float:
        vals = self.per_user[metric, n]
        if group != "all":
            vals = vals[np.isin(self.users, self.groups[group])]
        return float(vals.mean()) if len(vals) else float("nan")

    @property
    def overall(self) -> dict:
        return {(m, n): self.value(m, n) for m in METRICS for n in self.ns}

    def group_counts(self) -> dict[str, int]:
        return {g: len(u) for g, u in self.groups.items()}

    def rows(self) -> list[tuple]:
        out = []
        for group in ("all", *self.groups):
            for metric in METRICS:
                for n in self.ns:
                    out.append((self.fold, group, metric, n, self.value(metric, n, group)))
        return out

    def to_csv(self, fh=None, header: bool = True) -> str | None:
        own = fh is None
        fh = fh or io.StringIO()
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(["fold", "group", "metric", "N", "value"])
        for fold, group, metric, n, value in self.rows():
            writer.writerow([fold, group, metric, n, repr(value)])
        return fh.getvalue() if own else None

    def summary(self) -> str:
        counts = ", ".join(f"{g}={c}" for g, c in self.group_counts().items())
        lines = [f"fold {self.fold}: {self.n_users} users ({counts})"]
        for metric in METRICS:
            vals = "  ".join(f"@{n}={self.value(metric, n):.4f}" for n in self.ns)
            lines.append(f"  {metric:<6} {vals}")
        return "\n".join(lines)


def _liked(matrix) -> sp.csr_matrix:
    return matrix.liked_matrix() if hasattr(matrix, "liked_matrix") else sp.csr_matrix(matrix)


def evaluate(
    state: ModelState,
    train: InteractionMatrix,
    test: InteractionMatrix,
    ns: Sequence[int] = DEFAULT_NS,
    groups: UserGroupSpec | None = UserGroupSpec(),
    valid: InteractionMatrix | None = None,
    fold: int = 0,
) -> EvalReport:
    """Score every user with liked test items and compute all metrics at all cutoffs.

    Items the user liked in train (and valid, if given) are excluded from the
    ranking. Users are grouped by their number of liked training items.
    """
    ns = tuple(sorted(set(int(n) for n in ns)))
    train_m = _liked(train)
    test_m = _liked(test)
    exclude = train_m if valid is None else (train_m + _liked(valid)).tocsr()
    users = np.flatnonzero(np.diff(test_m.indptr) > 0)
    if len(users) == 0:
        raise NoTestUsers("no user has a liked test item")
    per_user = {(m, n): np.empty(len(users)) for m in METRICS for n in ns}
    pos = 0
    for us, hits, n_rel in _score_users(state.alpha, state.beta, users, exclude, test_m, max(ns)):
        for key, vals in _batch_metrics(hits, n_rel, ns).items():
            per_user[key][pos:pos + len(us)] = vals
        pos += len(us)
    grouping = {}
    if groups is not None:
        activity = np.diff(train_m.indptr)
        grouping = groups.assign(users, activity)
    return EvalReport(fold, ns, users, per_user, grouping)


# --------------------------------------------------------------------------
# significance
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Significance:
    t: float
    p: float
    significant: bool


def significance(a: Sequence[float], b: Sequence[float], level: float = 0.05) -> Significance:
    """Two-sided pooled-variance two-sample t-test between per-fold values."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise InsufficientFolds("need at least two folds per side")
    na, nb = len(a), len(b)
    diff = a.mean() - b.mean()
    pooled = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1.0)
    if pooled <= (1e-12 * scale) ** 2:
        # zero spread on both sides (up to rounding): any mean difference is maximally separated
        if abs(diff) <= 1e-12 * scale:
            return Significance(0.0, 1.0, False)
        return Significance(math.copysign(math.inf, diff), 0.0, True)
    t = diff / math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    p = float(2.0 * stats.t.sf(abs(t), na + nb - 2))
    return Significance(float(t), p, p < level)
