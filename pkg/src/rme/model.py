"""Joint factorization of the preference matrix with the three SPPMI matrices.

The loss is weighted matrix factorization of the binary preference matrix M
plus three embedding terms that share the latent vectors:

* co-liked items ``X ~ beta gamma^T + b + c`` (item side),
* co-disliked items ``Y ~ beta delta^T + d + e`` (item side),
* co-occurring users ``Z ~ alpha theta^T + f + g`` (user side),

plus ridge penalties on every factor block. It is minimized by exact block
coordinate descent: each latent vector solves its own k x k normal equations
with the other blocks held fixed, so every update can only lower the loss.
Switching embedding terms off gives WMF, Cofactor and the two partial
variants.
"""

from __future__ import annotations

import dataclasses
import io
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .cooccur import SppmiMatrix
from .errors import DimensionMismatch, ModelFormatError, NonFiniteObjective, SingularSystem

logger = logging.getLogger(__name__)

#: variant name -> (co-liked, co-disliked, user) embedding toggles
VARIANTS = {
    "wmf": (False, False, False),
    "cofactor": (True, False, False),
    "u_rme": (True, False, True),
    "i_rme": (True, True, False),
    "rme": (True, True, True),
}


@dataclass(frozen=True)
class Hyperparams:
    k: int = 30
    lam: float = 1.0
    lam_context: float | None = None  # None: same as lam
    l: float = 1.0
    phi: float = 10.0
    w_pos: float = 1.0
    w_neg: float = 1.0
    w_user: float = 1.0
    shift: float = 1.0
    max_sweeps: int = 50
    patience: int = 1
    seed: int = 0
    use_lie: bool = True
    use_die: bool = True
    use_ue: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.lam < 0 or self.lam2 < 0:
            raise ValueError("regularization weights must be >= 0")
        if min(self.l, self.w_pos, self.w_neg, self.w_user) <= 0:
            raise ValueError("l and the embedding weights must be > 0")
        if self.phi < 0:
            raise ValueError("phi must be >= 0")
        if self.max_sweeps < 1 or self.patience < 1:
            raise ValueError("max_sweeps and patience must be >= 1")

    @property
    def lam2(self) -> float:
        return self.lam if self.lam_context is None else self.lam_context

    @property
    def variant(self) -> str:
        toggles = (self.use_lie, self.use_die, self.use_ue)
        for name, t in VARIANTS.items():
            if t == toggles:
                return name
        return "custom"  # DIE/UE without LIE has no named variant

    @classmethod
    def for_variant(cls, variant: str, **kw) -> Hyperparams:
        try:
            lie, die, ue = VARIANTS[variant]
        except KeyError:
            raise ValueError(f"unknown variant {variant!r}; expected one of {list(VARIANTS)}") from None
        return cls(use_lie=lie, use_die=die, use_ue=ue, **kw)

    def replace(self, **kw) -> Hyperparams:
        return dataclasses.replace(self, **kw)


@dataclass
class ModelState:
    alpha: np.ndarray  # m x k users
    beta: np.ndarray  # n x k items
    gamma: np.ndarray  # n x k co-liked contexts
    delta: np.ndarray  # n x k co-disliked contexts
    theta: np.ndarray  # m x k user contexts
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    e: np.ndarray
    f: np.ndarray
    g: np.ndarray
    use_lie: bool = True
    use_die: bool = True
    use_ue: bool = True
    user_ids: tuple[str, ...] | None = None
    item_ids: tuple[str, ...] | None = None

    @property
    def n_users(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_items(self) -> int:
        return self.beta.shape[0]

    @property
    def k(self) -> int:
        return self.alpha.shape[1]

    def copy(self) -> ModelState:
        arrays = {f.name: getattr(self, f.name).copy() for f in dataclasses.fields(self)
                  if isinstance(getattr(self, f.name), np.ndarray)}
        return dataclasses.replace(self, **arrays)

    def with_toggles(self, use_lie: bool, use_die: bool, use_ue: bool) -> ModelState:
        """Copy with new toggles; blocks of disabled terms are zeroed."""
        out = dataclasses.replace(self.copy(), use_lie=use_lie, use_die=use_die, use_ue=use_ue)
        out._zero_disabled()
        return out

    def _zero_disabled(self) -> None:
        if not self.use_lie:
            self.gamma[:] = 0.0
            self.b[:] = 0.0
            self.c[:] = 0.0
        if not self.use_die:
            self.delta[:] = 0.0
            self.d[:] = 0.0
            self.e[:] = 0.0
        if not self.use_ue:
            self.theta[:] = 0.0
            self.f[:] = 0.0
            self.g[:] = 0.0


def init_state(n_users: int, n_items: int, hp: Hyperparams) -> ModelState:
    """Seeded start: factors ~ N(0, 1/k), biases 0, disabled blocks 0.

    All five factor blocks are always drawn in the same order so alpha and beta
    start identically whatever the toggles are.
    """
    rng = np.random.default_rng(hp.seed)
    scale = 1.0 / np.sqrt(hp.k)
    draw = lambda rows: rng.standard_normal((rows, hp.k)) * scale  # noqa: E731
    alpha, beta, gamma, delta, theta = (
        draw(n_users), draw(n_items), draw(n_items), draw(n_items), draw(n_users)
    )
    zi, zu = np.zeros(n_items), np.zeros(n_users)
    state = ModelState(
        alpha, beta, gamma, delta, theta, zi.copy(), zi.copy(), zi.copy(), zi.copy(),
        zu.copy(), zu.copy(), hp.use_lie, hp.use_die, hp.use_ue,
    )
    state._zero_disabled()
    return state


# --------------------------------------------------------------------------
# sparse helpers
# --------------------------------------------------------------------------


def _as_csr(mat, shape: tuple[int, int], name: str) -> sp.csr_matrix:
    if mat is None:
        return sp.csr_matrix(shape, dtype=np.float64)
    if isinstance(mat, SppmiMatrix):
        mat = mat.matrix
    mat = sp.csr_matrix(mat, dtype=np.float64)
    if mat.shape != shape:
        raise DimensionMismatch(f"{name} has shape {mat.shape}, expected {shape}")
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


def _row_index(mat: sp.csr_matrix) -> np.ndarray:
    return np.repeat(np.arange(mat.shape[0]), np.diff(mat.indptr))


def _with_data(mat: sp.csr_matrix, data: np.ndarray) -> sp.csr_matrix:
    return sp.csr_matrix((data, mat.indices, mat.indptr), shape=mat.shape)


def _outer_rows(factors: np.ndarray) -> np.ndarray:
    """Row r holds vec(f_r f_r^T), so ``S @ out`` sums weighted Gram matrices per row of S."""
    k = factors.shape[1]
    return (factors[:, :, None] * factors[:, None, :]).reshape(len(factors), k * k)


def _spd_solve(A: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    """Batched Cholesky solve of ``A[r] x[r] = rhs[r]``."""
    if len(A) == 0:
        return np.zeros_like(rhs)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise SingularSystem(
            f"{what}: normal equations are not positive definite (zero regularization?)"
        ) from None
    y = np.linalg.solve(L, rhs[..., None])
    return np.linalg.solve(np.swapaxes(L, -1, -2), y)[..., 0]


def _nonempty_rows(mat: sp.csr_matrix) -> np.ndarray:
    return np.flatnonzero(np.diff(mat.indptr) > 0)


def _solve_context(mat_t: sp.csr_matrix, resid: np.ndarray, factors: np.ndarray, weight: float,
                   reg: float, prev: np.ndarray, what: str) -> np.ndarray:
    """Context vectors: row r of ``mat_t`` lists the factor rows it pairs with."""
    rows = _nonempty_rows(mat_t)
    out = np.zeros_like(prev) if reg > 0 else prev.copy()
    if len(rows) == 0:
        return out
    k = factors.shape[1]
    pattern = _with_data(mat_t, np.full(mat_t.nnz, weight))
    A = (pattern @ _outer_rows(factors))[rows].reshape(len(rows), k, k) + reg * np.eye(k)
    rhs = (_with_data(mat_t, weight * resid) @ factors)[rows]
    out[rows] = _spd_solve(A, rhs, what)
    return out


# --------------------------------------------------------------------------
# objective
# --------------------------------------------------------------------------


def _embedding_loss(mat: sp.csr_matrix, left: np.ndarray, right: np.ndarray,
                    row_bias: np.ndarray, col_bias: np.ndarray, weight: float) -> float:
    rows, cols = _row_index(mat), mat.indices
    r = mat.data - np.einsum("ij,ij->i", left[rows], right[cols]) - row_bias[rows] - col_bias[cols]
    return 0.5 * weight * float(r @ r)


def objective(state: ModelState, M, X=None, Y=None, Z=None, hp: Hyperparams | None = None) -> float:
    """Full loss: weighted reconstruction of M over all cells plus the enabled
    embedding terms over the nonzero SPPMI entries plus ridge penalties."""
    hp = hp or Hyperparams()
    m, n = state.n_users, state.n_items
    M = _as_csr(M, (m, n), "M")
    alpha, beta = state.alpha, state.beta

    # sum over all m*n cells without forming them: w = l off M, l(1+phi M) on M
    rows, cols, v = _row_index(M), M.indices, M.data
    s_obs = np.einsum("ij,ij->i", alpha[rows], beta[cols])
    sum_sq_all = float(np.sum((alpha.T @ alpha) * (beta.T @ beta)))
    plain = sum_sq_all - 2.0 * float(v @ s_obs) + float(v @ v)
    extra = float(np.sum(v * (v - s_obs) ** 2))
    loss = 0.5 * hp.l * plain + 0.5 * hp.l * hp.phi * extra

    if state.use_lie:
        X = _as_csr(X, (n, n), "X")
        loss += _embedding_loss(X, beta, state.gamma, state.b, state.c, hp.w_pos)
    if state.use_die:
        Y = _as_csr(Y, (n, n), "Y")
        loss += _embedding_loss(Y, beta, state.delta, state.d, state.e, hp.w_neg)
    if state.use_ue:
        Z = _as_csr(Z, (m, m), "Z")
        loss += _embedding_loss(Z, alpha, state.theta, state.f, state.g, hp.w_user)

    sq = lambda a: float(np.sum(a * a))  # noqa: E731
    loss += 0.5 * hp.lam * (sq(alpha) + sq(beta))
    loss += 0.5 * hp.lam2 * (sq(state.gamma) + sq(state.delta) + sq(state.theta))
    return loss


# --------------------------------------------------------------------------
# block updates
# --------------------------------------------------------------------------


def _wmf_side(M: sp.csr_matrix, other: np.ndarray, hp: Hyperparams):
    """Per-row Gram correction and right-hand side of the weighted MF term.

    The all-cells Gram ``l * other^T other`` is shared by every row; observed
    cells add ``l*phi*v`` times their outer product on top of it.
    """
    v = M.data
    gram = _with_data(M, hp.l * hp.phi * v) @ _outer_rows(other)
    rhs = _with_data(M, hp.l * (1.0 + hp.phi * v) * v) @ other
    base = hp.l * (other.T @ other)
    return gram, rhs, base


def update_user_factors(state: ModelState, M, Z=None, hp: Hyperparams | None = None) -> np.ndarray:
    """New alpha with beta, theta, f, g fixed."""
    hp = hp or Hyperparams()
    m, n, k = state.n_users, state.n_items, state.k
    M = _as_csr(M, (m, n), "M")
    gram, rhs, base = _wmf_side(M, state.beta, hp)
    if state.use_ue:
        Z = _as_csr(Z, (m, m), "Z")
        rows, cols = _row_index(Z), Z.indices
        resid = Z.data - state.f[rows] - state.g[cols]
        gram = gram + _with_data(Z, np.full(Z.nnz, hp.w_user)) @ _outer_rows(state.theta)
        rhs = rhs + _with_data(Z, hp.w_user * resid) @ state.theta
    A = gram.reshape(m, k, k) + base + hp.lam * np.eye(k)
    return _spd_solve(A, rhs, "user factors")


def update_item_factors(state: ModelState, M, X=None, Y=None, hp: Hyperparams | None = None) -> np.ndarray:
    """New beta with alpha, gamma, delta and the item biases fixed."""
    hp = hp or Hyperparams()
    m, n, k = state.n_users, state.n_items, state.k
    Mt = _as_csr(M, (m, n), "M").T.tocsr()
    gram, rhs, base = _wmf_side(Mt, state.alpha, hp)
    if state.use_lie:
        X = _as_csr(X, (n, n), "X")
        rows, cols = _row_index(X), X.indices
        resid = X.data - state.b[rows] - state.c[cols]
        gram = gram + _with_data(X, np.full(X.nnz, hp.w_pos)) @ _outer_rows(state.gamma)
        rhs = rhs + _with_data(X, hp.w_pos * resid) @ state.gamma
    if state.use_die:
        Y = _as_csr(Y, (n, n), "Y")
        rows, cols = _row_index(Y), Y.indices
        resid = Y.data - state.d[rows] - state.e[cols]
        gram = gram + _with_data(Y, np.full(Y.nnz, hp.w_neg)) @ _outer_rows(state.delta)
        rhs = rhs + _with_data(Y, hp.w_neg * resid) @ state.delta
    A = gram.reshape(n, k, k) + base + hp.lam * np.eye(k)
    return _spd_solve(A, rhs, "item factors")


def update_context_factors(state: ModelState, X=None, Y=None, Z=None,
                           hp: Hyperparams | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """New (gamma, delta, theta); the three blocks are independent given alpha and beta."""
    hp = hp or Hyperparams()
    m, n = state.n_users, state.n_items
    gamma, delta, theta = state.gamma, state.delta, state.theta
    if state.use_lie:
        # gamma_i pairs with beta_p for every nonzero X[p, i]; walk column i via X^T
        Xt = _as_csr(X, (n, n), "X").T.tocsr()
        resid = Xt.data - state.b[Xt.indices] - state.c[_row_index(Xt)]
        gamma = _solve_context(Xt, resid, state.beta, hp.w_pos, hp.lam2, gamma, "co-liked contexts")
    if state.use_die:
        Yt = _as_csr(Y, (n, n), "Y").T.tocsr()
        resid = Yt.data - state.d[Yt.indices] - state.e[_row_index(Yt)]
        delta = _solve_context(Yt, resid, state.beta, hp.w_neg, hp.lam2, delta, "co-disliked contexts")
    if state.use_ue:
        Zt = _as_csr(Z, (m, m), "Z").T.tocsr()
        resid = Zt.data - state.f[Zt.indices] - state.g[_row_index(Zt)]
        theta = _solve_context(Zt, resid, state.alpha, hp.w_user, hp.lam2, theta, "user contexts")
    return gamma, delta, theta


def _mean_by(index: np.ndarray, values: np.ndarray, size: int, prev: np.ndarray) -> np.ndarray:
    counts = np.bincount(index, minlength=size)
    sums = np.bincount(index, weights=values, minlength=size)
    out = prev.copy()
    hit = counts > 0
    out[hit] = sums[hit] / counts[hit]
    return out


def _bias_pair(mat, left, right, row_bias, col_bias, which):
    rows, cols = _row_index(mat), mat.indices
    fit = np.einsum("ij,ij->i", left[rows], right[cols])
    if which == "row":
        return _mean_by(rows, mat.data - fit - col_bias[cols], mat.shape[0], row_bias)
    return _mean_by(cols, mat.data - fit - row_bias[rows], mat.shape[1], col_bias)


def update_row_biases(state: ModelState, X=None, Y=None, Z=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """New (b, d, f): mean residual over each nonzero row; empty rows keep their value."""
    m, n = state.n_users, state.n_items
    b, d, f = state.b, state.d, state.f
    if state.use_lie:
        b = _bias_pair(_as_csr(X, (n, n), "X"), state.beta, state.gamma, state.b, state.c, "row")
    if state.use_die:
        d = _bias_pair(_as_csr(Y, (n, n), "Y"), state.beta, state.delta, state.d, state.e, "row")
    if state.use_ue:
        f = _bias_pair(_as_csr(Z, (m, m), "Z"), state.alpha, state.theta, state.f, state.g, "row")
    return b, d, f


def update_col_biases(state: ModelState, X=None, Y=None, Z=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """New (c, e, g): mean residual over each nonzero column."""
    m, n = state.n_users, state.n_items
    c, e, g = state.c, state.e, state.g
    if state.use_lie:
        c = _bias_pair(_as_csr(X, (n, n), "X"), state.beta, state.gamma, state.b, state.c, "col")
    if state.use_die:
        e = _bias_pair(_as_csr(Y, (n, n), "Y"), state.beta, state.delta, state.d, state.e, "col")
    if state.use_ue:
        g = _bias_pair(_as_csr(Z, (m, m), "Z"), state.alpha, state.theta, state.f, state.g, "col")
    return c, e, g


def update_biases(state: ModelState, X=None, Y=None, Z=None) -> tuple[np.ndarray, ...]:
    """New (b, c, d, e, f, g): row biases first, then column biases against them."""
    b, d, f = update_row_biases(state, X, Y, Z)
    tmp = dataclasses.replace(state, b=b, d=d, f=f)
    c, e, g = update_col_biases(tmp, X, Y, Z)
    return b, c, d, e, f, g


def sweep(state: ModelState, M, X=None, Y=None, Z=None, hp: Hyperparams | None = None) -> None:
    """One in-place pass: users, items, contexts, biases."""
    hp = hp or Hyperparams()
    state.alpha = update_user_factors(state, M, Z, hp)
    state.beta = update_item_factors(state, M, X, Y, hp)
    state.gamma, state.delta, state.theta = update_context_factors(state, X, Y, Z, hp)
    state.b, state.c, state.d, state.e, state.f, state.g = update_biases(state, X, Y, Z)


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRecord:
    sweep: int
    objective: float
    ndcg: float  # NaN without a validation set


def train(
    M,
    X=None,
    Y=None,
    Z=None,
    hp: Hyperparams | None = None,
    valid=None,
    init: ModelState | None = None,
    on_sweep: Callable[[SweepRecord], None] | None = None,
) -> tuple[ModelState, list[SweepRecord]]:
    """Alternate the block updates until validation NDCG@100 stops improving.

    ``M`` and ``valid`` are binary liked matrices (sparse, users x items).
    Without ``valid`` all ``max_sweeps`` sweeps run and the final state is
    returned. With it, training stops after ``patience`` sweeps without a
    new best and the best state is returned.
    """
    from .evaluation import ranking_ndcg  # evaluation needs ModelState only for typing

    hp = hp or Hyperparams()
    M = sp.csr_matrix(M, dtype=np.float64)
    m, n = M.shape
    mats = dict(
        X=_as_csr(X, (n, n), "X") if hp.use_lie else None,
        Y=_as_csr(Y, (n, n), "Y") if hp.use_die else None,
        Z=_as_csr(Z, (m, m), "Z") if hp.use_ue else None,
    )
    if init is None:
        state = init_state(m, n, hp)
    else:
        if (init.n_users, init.n_items, init.k) != (m, n, hp.k):
            raise DimensionMismatch("initial state does not match the data or k")
        state = init.with_toggles(hp.use_lie, hp.use_die, hp.use_ue)
    if valid is not None:
        valid = _as_csr(valid, (m, n), "valid")

    history: list[SweepRecord] = []
    best, best_ndcg, stale = state, -np.inf, 0
    for t in range(1, hp.max_sweeps + 1):
        sweep(state, M, hp=hp, **mats)
        obj = objective(state, M, hp=hp, **mats)
        if not np.isfinite(obj):
            raise NonFiniteObjective(t, obj)
        ndcg = float("nan")
        if valid is not None:
            ndcg = ranking_ndcg(state.alpha, state.beta, M, valid, 100)
        rec = SweepRecord(t, obj, ndcg)
        history.append(rec)
        logger.debug("sweep %d objective %.6g ndcg@100 %.5f", t, obj, ndcg)
        if on_sweep is not None:
            on_sweep(rec)
        if valid is not None:
            if ndcg > best_ndcg:
                best, best_ndcg, stale = state.copy(), ndcg, 0
            else:
                stale += 1
                if stale >= hp.patience:
                    break
    if valid is None:
        best = state
    return best, history


def predict_scores(state: ModelState, u: int) -> np.ndarray:
    """Item scores ``beta @ alpha_u``; biases and contexts play no part."""
    if not 0 <= u < state.n_users:
        raise IndexError(f"user index {u} out of range [0, {state.n_users})")
    return state.beta @ state.alpha[u]


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

MAGIC = "rme-model v1"
_BLOCKS = ("alpha", "beta", "gamma", "delta", "theta", "b", "c", "d", "e", "f", "g")


def _write_ids(buf: io.BytesIO, ids: tuple[str, ...] | None) -> None:
    ids = ids or ()
    buf.write(struct.pack("<Q", len(ids)))
    for tok in ids:
        raw = tok.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)


def _read_ids(buf: io.BytesIO) -> tuple[str, ...] | None:
    (count,) = struct.unpack("<Q", buf.read(8))
    out = []
    for _ in range(count):
        (size,) = struct.unpack("<I", buf.read(4))
        out.append(buf.read(size).decode("utf-8"))
    return tuple(out) if out else None


def model_bytes(state: ModelState, hp: Hyperparams) -> bytes:
    header = [
        MAGIC,
        f"m={state.n_users}",
        f"n={state.n_items}",
        f"k={state.k}",
        f"toggles={int(state.use_lie)}{int(state.use_die)}{int(state.use_ue)}",
    ]
    for fld in dataclasses.fields(hp):
        header.append(f"hp.{fld.name}={getattr(hp, fld.name)!r}")
    buf = io.BytesIO()
    buf.write(("\n".join(header) + "\n\n").encode("utf-8"))
    for name in _BLOCKS:
        buf.write(np.ascontiguousarray(getattr(state, name), dtype="<f8").tobytes())
    _write_ids(buf, state.user_ids)
    _write_ids(buf, state.item_ids)
    return buf.getvalue()


def save_model(state: ModelState, hp: Hyperparams, path: str | Path) -> None:
    Path(path).write_bytes(model_bytes(state, hp))


def _parse_value(text: str):
    if text == "None":
        return None
    if text in ("True", "False"):
        return text == "True"
    try:
        return int(text)
    except ValueError:
        return float(text)


def load_model(path: str | Path) -> tuple[ModelState, Hyperparams]:
    data = Path(path).read_bytes()
    head, sep, body = data.partition(b"\n\n")
    if not sep:
        raise ModelFormatError(f"{path}: missing header terminator")
    lines = head.decode("utf-8").split("\n")
    if lines[0] != MAGIC:
        raise ModelFormatError(f"{path}: not an {MAGIC} file")
    meta, hp_kw = {}, {}
    for line in lines[1:]:
        key, _, val = line.partition("=")
        if key.startswith("hp."):
            hp_kw[key[3:]] = _parse_value(val)
        else:
            meta[key] = val
    m, n, k = int(meta["m"]), int(meta["n"]), int(meta["k"])
    toggles = [ch == "1" for ch in meta["toggles"]]
    known = {f.name for f in dataclasses.fields(Hyperparams)}
    hp = Hyperparams(**{key: val for key, val in hp_kw.items() if key in known})

    buf = io.BytesIO(body)
    sizes = dict(alpha=(m, k), beta=(n, k), gamma=(n, k), delta=(n, k), theta=(m, k),
                 b=(n,), c=(n,), d=(n,), e=(n,), f=(m,), g=(m,))
    arrays = {}
    for name in _BLOCKS:
        shape = sizes[name]
        count = int(np.prod(shape))
        raw = buf.read(8 * count)
        if len(raw) != 8 * count:
            raise ModelFormatError(f"{path}: truncated block {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    user_ids = _read_ids(buf)
    item_ids = _read_ids(buf)
    state = ModelState(**arrays, use_lie=toggles[0], use_die=toggles[1], use_ue=toggles[2],
                       user_ids=user_ids, item_ids=item_ids)
    return state, hp
