"""Personalized negative sampling for implicit feedback.

Items a user has not interacted with are drawn as inferred dislikes with
probability given by a softmax over their negated predicted scores, so low
scored items are the likeliest negatives. The EM-like loop alternates drawing
negatives with the current factors and refitting the joint model on the
co-disliked matrix built from them, keeping a refit only while validation
NDCG keeps improving.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cooccur import build_x, build_y, build_z
from .errors import NoCandidates
from .ingest import InteractionMatrix, Label
from .model import Hyperparams, ModelState, train

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NegSampleConfig:
    tau: float = 0.2
    max_iter: int = 10
    seed: int = 0
    uniform: bool = False  # ablation: ignore scores, draw uniformly from unobserved items
    warm_start: bool = True

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class NegativeSampleSet:
    """Raw draws per user (with replacement, so repeats are possible)."""

    draws: list[np.ndarray]

    def disliked_lists(self) -> list[np.ndarray]:
        return [np.unique(d) for d in self.draws]

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct (user, item) pairs, sorted."""
        lists = self.disliked_lists()
        users = np.repeat(np.arange(len(lists)), [len(x) for x in lists])
        items = np.concatenate(lists) if lists else np.empty(0, np.int64)
        return users, items.astype(np.int64)

    def apply(self, train: InteractionMatrix) -> InteractionMatrix:
        """``train`` with the sampled items added as Disliked cells."""
        users, items = self.pairs()
        return train.with_dislikes(users, items)


def sampling_prior(scores: np.ndarray, observed) -> np.ndarray:
    """Softmax of negated scores over unobserved items; observed items get exactly 0."""
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.ones(len(scores), dtype=bool)
    mask[np.fromiter(observed, dtype=np.int64)] = False
    if not mask.any():
        raise NoCandidates("every item is observed")
    logits = -scores[mask]
    logits -= logits.max()
    weights = np.exp(logits)
    prior = np.zeros(len(scores))
    prior[mask] = weights / weights.sum()
    return prior


def sample_count(n_observed: int, tau: float) -> int:
    """``floor(tau * count)``; users below one draw are skipped."""
    return int(np.floor(tau * n_observed))


def user_rng(seed: int, user: int, iteration: int = 0) -> np.random.Generator:
    """Per-user stream so draws do not depend on processing order."""
    return np.random.default_rng([seed, iteration, user])


def draw_negatives(state: ModelState, train: InteractionMatrix, cfg: NegSampleConfig,
                   iteration: int = 0) -> NegativeSampleSet:
    """Draw ``floor(tau * liked(u))`` negatives per user from the sampling prior."""
    liked = train.liked_lists()
    observed = [np.union1d(lk, dl) for lk, dl in zip(liked, train.disliked_lists())]
    draws: list[np.ndarray] = []
    skipped = 0
    for u in range(train.n_users):
        ns = sample_count(len(liked[u]), cfg.tau)
        if ns < 1:
            draws.append(np.empty(0, dtype=np.int64))
            continue
        scores = np.zeros(train.n_items) if cfg.uniform else state.beta @ state.alpha[u]
        try:
            prior = sampling_prior(scores, observed[u])
        except NoCandidates:
            skipped += 1
            draws.append(np.empty(0, dtype=np.int64))
            continue
        rng = user_rng(cfg.seed, u, iteration)
        draws.append(rng.choice(train.n_items, size=ns, replace=True, p=prior).astype(np.int64))
    if skipped:
        logger.warning("%d users observed every item and got no negatives", skipped)
    return NegativeSampleSet(draws)


@dataclass(frozen=True)
class EMRecord:
    iteration: int
    ndcg: float
    accepted: bool
    n_negatives: int


def em_train(
    train_set: InteractionMatrix,
    hp: Hyperparams,
    cfg: NegSampleConfig,
    valid: InteractionMatrix,
    on_negatives: Callable[[int, NegativeSampleSet], None] | None = None,
) -> tuple[ModelState, list[EMRecord]]:
    """Fit the joint model on implicit data with inferred dislikes.

    Starts from plain WMF, then repeats: draw negatives with the current best
    factors, rebuild the co-disliked matrix, refit. A refit replaces the best
    state only if its validation NDCG@100 beats the previous best (starting
    from 0); the first refit that does not ends the loop.
    """
    if np.any(train_set.labels == Label.DISLIKED):
        raise ValueError("implicit training data must not carry Disliked cells")
    M = train_set.liked_matrix()
    V = valid.liked_matrix()
    wmf_hp = hp.replace(use_lie=False, use_die=False, use_ue=False)
    best, _ = train(M, hp=wmf_hp, valid=V)
    best.user_ids, best.item_ids = train_set.user_ids, train_set.item_ids

    X = build_x(train_set, hp.shift) if hp.use_lie else None
    Z = build_z(train_set, hp.shift) if hp.use_ue else None
    prev_ndcg = 0.0
    history: list[EMRecord] = []
    for it in range(1, cfg.max_iter + 1):
        negatives = draw_negatives(best, train_set, cfg, iteration=it)
        if on_negatives is not None:
            on_negatives(it, negatives)
        Y = build_y(negatives.apply(train_set), hp.shift) if hp.use_die else None
        init = best if cfg.warm_start else None
        state, sweeps = train(M, X, Y, Z, hp, valid=V, init=init)
        ndcg = max(r.ndcg for r in sweeps)
        accepted = ndcg > prev_ndcg
        n_neg = sum(len(d) for d in negatives.draws)
        history.append(EMRecord(it, ndcg, accepted, n_neg))
        logger.info("EM iteration %d: ndcg@100 %.5f (%s)", it, ndcg,
                    "accepted" if accepted else "rejected")
        if not accepted:
            break
        state.user_ids, state.item_ids = train_set.user_ids, train_set.item_ids
        best, prev_ndcg = state, ndcg
    return best, history
