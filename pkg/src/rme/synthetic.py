"""Planted-block interaction data for tests and demos."""

from __future__ import annotations

import numpy as np

from .ingest import InteractionMatrix, Label


def planted_blocks(
    n_users: int = 200,
    n_items: int = 100,
    n_blocks: int = 2,
    likes_per_user: int = 10,
    dislikes_per_user: int = 5,
    noise: float = 0.05,
    seed: int = 0,
    implicit: bool = False,
    activity_spread: float = 0.0,
) -> InteractionMatrix:
    """Users and items split into ``n_blocks`` taste groups.

    Each user likes items of their own block and dislikes items of the
    others; a ``noise`` share of either kind is drawn from the wrong side
    instead. Within a block, item appeal follows a Zipf-like profile so that
    rankings carry structure beyond block membership. ``implicit`` drops the
    dislikes. ``activity_spread`` > 0 scales each user's like and dislike
    counts by a lognormal factor with that sigma (at least 2 likes), giving
    a mix of sparse and heavy users. Timestamps are random so time-ordered
    splits are possible.
    """
    rng = np.random.default_rng(seed)
    user_block = np.arange(n_users) % n_blocks
    item_block = np.arange(n_items) % n_blocks
    appeal = np.empty(n_items)
    for blk in range(n_blocks):
        members = np.flatnonzero(item_block == blk)
        appeal[members] = 1.0 / (1.0 + rng.permutation(len(members))) ** 0.7

    scale = np.ones(n_users)
    if activity_spread > 0:
        scale = rng.lognormal(-0.5 * activity_spread**2, activity_spread, size=n_users)

    users, items, labels = [], [], []
    for u in range(n_users):
        own = item_block == user_block[u]
        taken = np.zeros(n_items, dtype=bool)
        n_like = max(2, round(likes_per_user * scale[u]))
        n_dislike = 0 if implicit else round(dislikes_per_user * scale[u])
        for label, count, home in ((Label.LIKED, n_like, own), (Label.DISLIKED, n_dislike, ~own)):
            for _ in range(count):
                pool = home if rng.random() >= noise else ~home
                cand = np.flatnonzero(pool & ~taken)
                if len(cand) == 0:
                    continue
                w = appeal[cand] if label == Label.LIKED else 1.0 / appeal[cand]
                p = cand[rng.choice(len(cand), p=w / w.sum())]
                taken[p] = True
                users.append(u)
                items.append(p)
                labels.append(label)
    ts = rng.integers(0, 10**9, size=len(users))
    return InteractionMatrix(
        np.array(users), np.array(items), np.array(labels), ts,
        tuple(f"u{u}" for u in range(n_users)), tuple(f"i{p}" for p in range(n_items)),
    )
