"""The three non-neural-pipeline comparison recommenders.

* skip-gram item embeddings with negative sampling, trained on sessions
  as sentences (sequential signal only),
* weighted matrix factorization of play counts by alternating least
  squares (general-preference signal only),
* a factorized first-order Markov chain trained with sequential pairwise
  ranking (both signals).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .util import make_rng, top_k_indices


def _session_items(sessions):
    """Accept Session objects or bare index lists."""
    return [list(getattr(s, "items", s)) for s in sessions]


# ---------------------------------------------------------------------------
# Skip-gram with negative sampling
# ---------------------------------------------------------------------------


@dataclass
class ItemEmbeddings:
    """Center (v_in) and context (v_out) vectors per song."""

    model_type = "w2v"

    v_in: np.ndarray
    v_out: np.ndarray
    loss_history: list = field(default_factory=list)

    @property
    def n_songs(self) -> int:
        return self.v_in.shape[0]

    def score_catalog(self, u, context) -> np.ndarray:
        """Cosine of every song's center vector to the mean context vector.

        The user index is ignored: this model carries no per-user state.
        """
        query = self.v_in[np.asarray(context)].mean(axis=0)
        qn = np.linalg.norm(query)
        norms = np.linalg.norm(self.v_in, axis=1)
        denom = np.maximum(norms * qn, 1e-12)
        return (self.v_in @ query) / denom

    def to_checkpoint(self):
        meta = {"n_songs": self.n_songs, "d": int(self.v_in.shape[1])}
        return "w2v", meta, {"v_in": self.v_in, "v_out": self.v_out}

    @classmethod
    def from_checkpoint(cls, meta, tensors):
        expected = (meta["n_songs"], meta["d"])
        for name in ("v_in", "v_out"):
            if tensors[name].shape != expected:
                raise ValueError(f"tensor {name}: shape {tensors[name].shape} != {expected}")
        return cls(tensors["v_in"], tensors["v_out"])


def _sgns_loss_from_scores(s_pos: float, s_negs: np.ndarray) -> float:
    # -log sigmoid(x) == logaddexp(0, -x), stable for any x
    return float(np.logaddexp(0.0, -s_pos) + np.logaddexp(0.0, s_negs).sum())


def sgns_pair_loss(v_center: np.ndarray, v_pos: np.ndarray, v_negs: np.ndarray) -> float:
    """Negative-sampling loss of one (center, context) pair:
    -log sigma(c.p) - sum_n log sigma(-c.n). All-zero vectors give
    (1 + #negatives) * ln 2 since every sigmoid term is 1/2.
    """
    return _sgns_loss_from_scores(float(v_center @ v_pos), v_negs @ v_center)


def _noise_cumdist(sessions_items, n_songs: int) -> np.ndarray:
    counts = np.zeros(n_songs)
    for items in sessions_items:
        np.add.at(counts, items, 1.0)
    weights = counts**0.75
    total = weights.sum()
    if total <= 0:
        raise ValueError("empty sessions: nothing to sample negatives from")
    return np.cumsum(weights / total)


def _pair_count(length: int, window: int) -> int:
    return sum(
        min(c + window, length - 1) - max(c - window, 0) for c in range(length)
    )


def w2v_train(
    sessions,
    n_songs: int,
    d: int = 60,
    window: int = 5,
    negatives: int = 5,
    lr: float = 0.025,
    epochs: int = 5,
    rng: np.random.Generator | None = None,
) -> ItemEmbeddings:
    """Skip-gram with negative sampling over sessions-as-sentences.

    For every (center, context) pair within the window the positive term
    log sigma(v_c . v'_o) and ``negatives`` noise terms log sigma(-v_c . v'_n)
    are ascended by SGD; negatives are drawn from the unigram^0.75
    distribution of the training sessions. The learning rate decays
    linearly over all scheduled updates down to a floor of lr * 1e-4.

    Center vectors start uniform in [-0.5/d, 0.5/d), context vectors at
    zero; epochs=0 returns that initialization untouched.
    """
    if window < 1 or negatives < 1:
        raise ValueError("window and negatives must be >= 1")
    items_lists = _session_items(sessions)
    if not items_lists or all(len(x) == 0 for x in items_lists):
        raise ValueError("empty sessions")
    if rng is None:
        rng = make_rng(0)

    v_in = rng.uniform(-0.5 / d, 0.5 / d, size=(n_songs, d))
    v_out = np.zeros((n_songs, d))
    emb = ItemEmbeddings(v_in, v_out)
    if epochs == 0:
        return emb

    cum = _noise_cumdist(items_lists, n_songs)
    total_pairs = epochs * sum(_pair_count(len(x), window) for x in items_lists)
    min_lr = lr * 1e-4
    done = 0
    for _ in range(epochs):
        epoch_loss = 0.0
        epoch_pairs = 0
        for items in items_lists:
            length = len(items)
            for c in range(length):
                center = items[c]
                lo = max(c - window, 0)
                hi = min(c + window, length - 1)
                for o_pos in range(lo, hi + 1):
                    if o_pos == c:
                        continue
                    step_lr = max(lr * (1.0 - done / total_pairs), min_lr)
                    done += 1
                    target = items[o_pos]
                    negs = np.searchsorted(cum, rng.random(negatives))
                    np.clip(negs, 0, len(cum) - 1, out=negs)
                    rows = np.concatenate(([target], negs))
                    vc = v_in[center]
                    scores = v_out[rows] @ vc
                    epoch_loss += _sgns_loss_from_scores(scores[0], scores[1:])
                    epoch_pairs += 1
                    coef = expit(scores)
                    coef[0] -= 1.0  # positive label
                    dvc = coef @ v_out[rows]
                    # add.at: duplicate negative rows must accumulate
                    np.add.at(v_out, rows, -step_lr * np.outer(coef, vc))
                    v_in[center] -= step_lr * dvc
        emb.loss_history.append(epoch_loss / max(epoch_pairs, 1))
    return emb


def w2v_recommend(context, embeddings: ItemEmbeddings, k: int) -> np.ndarray:
    """Top-k catalog songs by cosine to the mean of the context's center
    vectors. Context items are not excluded (repeat listening is common)."""
    if len(context) == 0:
        raise ValueError("context must be non-empty")
    return top_k_indices(embeddings.score_catalog(None, context), k)


# ---------------------------------------------------------------------------
# Weighted matrix factorization (implicit feedback, ALS)
# ---------------------------------------------------------------------------


@dataclass
class WmfFactors:
    """User/item factors of the confidence-weighted binary factorization."""

    model_type = "wmf"

    x: np.ndarray  # (U, f)
    y: np.ndarray  # (N, f)
    alpha: float = 40.0
    lam: float = 0.1
    objective_history: list = field(default_factory=list)

    @property
    def n_songs(self) -> int:
        return self.y.shape[0]

    @property
    def rank(self) -> int:
        return self.x.shape[1]

    def score_catalog(self, u, context) -> np.ndarray:
        """Predicted preference of user u for every song; the sequence
        context is deliberately ignored."""
        u = int(u)
        if not 0 <= u < self.x.shape[0]:
            raise IndexError(f"user {u} out of range [0, {self.x.shape[0]})")
        return self.y @ self.x[u]

    def to_checkpoint(self):
        meta = {
            "n_users": int(self.x.shape[0]),
            "n_songs": int(self.y.shape[0]),
            "f": self.rank,
            "alpha": self.alpha,
            "lam": self.lam,
        }
        return "wmf", meta, {"x": self.x, "y": self.y}

    @classmethod
    def from_checkpoint(cls, meta, tensors):
        x, y = tensors["x"], tensors["y"]
        if x.shape != (meta["n_users"], meta["f"]) or y.shape != (meta["n_songs"], meta["f"]):
            raise ValueError(f"factor shapes {x.shape}/{y.shape} mismatch header {meta}")
        return cls(x, y, alpha=meta["alpha"], lam=meta["lam"])


def play_count_matrix(sessions, n_users: int, n_songs: int) -> sp.csr_matrix:
    """(user, song) play counts aggregated over the whole training split."""
    rows, cols = [], []
    for s in sessions:
        rows.extend([s.user] * len(s.items))
        cols.extend(s.items)
    data = np.ones(len(rows))
    return sp.csr_matrix(
        (data, (rows, cols)), shape=(n_users, n_songs)
    )


def wmf_objective(r: sp.spmatrix, x: np.ndarray, y: np.ndarray, alpha: float, lam: float) -> float:
    """Exact weighted objective over ALL user-item cells.

    sum_{u,i} c_ui (p_ui - x_u . y_i)^2 + lam (|X|^2 + |Y|^2), with
    p = 1 at observed cells, c = 1 + alpha * count. The all-cells term
    is tr((X^T X)(Y^T Y)) plus observed-cell corrections, so no dense
    U x N matrix is formed.
    """
    coo = sp.coo_matrix(r)
    shat = np.einsum("ij,ij->i", x[coo.row], y[coo.col])
    conf = 1.0 + alpha * coo.data
    full = np.trace((x.T @ x) @ (y.T @ y))
    corr = np.sum(conf * (1.0 - shat) ** 2 - shat**2)
    reg = lam * (np.sum(x * x) + np.sum(y * y))
    return float(full + corr + reg)


def _als_half_sweep(r_csr: sp.csr_matrix, this: np.ndarray, other: np.ndarray, alpha: float, lam: float):
    """Solve the exact f x f normal equations for every row of ``this``
    with ``other`` frozen."""
    f = other.shape[1]
    gram = other.T @ other + lam * np.eye(f)
    for i in range(this.shape[0]):
        lo, hi = r_csr.indptr[i], r_csr.indptr[i + 1]
        idx = r_csr.indices[lo:hi]
        if idx.size == 0:
            this[i] = 0.0  # unconstrained row: regularizer alone wins
            continue
        counts = r_csr.data[lo:hi]
        m = other[idx]
        a = gram + (m.T * (alpha * counts)) @ m
        rhs = m.T @ (1.0 + alpha * counts)
        this[i] = np.linalg.solve(a, rhs)


def wmf_train(
    r: sp.spmatrix,
    f: int = 60,
    alpha: float = 40.0,
    lam: float = 0.1,
    iters: int = 15,
    rng: np.random.Generator | None = None,
    track_objective: bool = False,
) -> WmfFactors:
    """Alternating least squares on the confidence-weighted objective.

    Each half-sweep solves every user's (then every item's) regularized
    normal equations exactly, so the objective never increases. With
    ``track_objective`` the exact objective is recorded at initialization
    and after every half-sweep.
    """
    if lam <= 0:
        raise ValueError("regularization lam must be > 0")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if rng is None:
        rng = make_rng(0)
    r_csr = sp.csr_matrix(r)
    if r_csr.nnz and r_csr.data.min() < 0:
        raise ValueError("count matrix must be non-negative")
    rt_csr = sp.csr_matrix(r.T)
    n_users, n_songs = r_csr.shape
    x = 0.01 * rng.standard_normal((n_users, f))
    y = 0.01 * rng.standard_normal((n_songs, f))
    factors = WmfFactors(x, y, alpha, lam)
    if track_objective:
        factors.objective_history.append(wmf_objective(r_csr, x, y, alpha, lam))
    for _ in range(iters):
        _als_half_sweep(r_csr, x, y, alpha, lam)
        if track_objective:
            factors.objective_history.append(wmf_objective(r_csr, x, y, alpha, lam))
        _als_half_sweep(rt_csr, y, x, alpha, lam)
        if track_objective:
            factors.objective_history.append(wmf_objective(r_csr, x, y, alpha, lam))
    return factors


def wmf_recommend(u, factors: WmfFactors, k: int) -> np.ndarray:
    return top_k_indices(factors.score_catalog(u, None), k)


# ---------------------------------------------------------------------------
# Factorized first-order Markov chain with pairwise ranking
# ---------------------------------------------------------------------------


@dataclass
class FpmcFactors:
    """Four factor blocks: user<->item preference (v_ui, v_iu) and
    previous-item -> item transition (v_li, v_il); all share rank f."""

    model_type = "fpmc"

    v_ui: np.ndarray  # (U, f) user side of user-item term
    v_iu: np.ndarray  # (N, f) item side of user-item term
    v_il: np.ndarray  # (N, f) item side of transition term
    v_li: np.ndarray  # (N, f) previous-item side of transition term
    lr: float = 0.05
    lam: float = 0.01
    loss_history: list = field(default_factory=list)

    @property
    def n_songs(self) -> int:
        return self.v_iu.shape[0]

    def score_catalog(self, u, context) -> np.ndarray:
        """Scores for every candidate next song given the last played one."""
        u = int(u)
        prev = int(np.asarray(context).reshape(-1)[-1])
        self._check(u, prev)
        return self.v_iu @ self.v_ui[u] + self.v_il @ self.v_li[prev]

    def _check(self, u, prev, i=None):
        if not 0 <= u < self.v_ui.shape[0]:
            raise IndexError(f"user {u} out of range [0, {self.v_ui.shape[0]})")
        n = self.n_songs
        for name, v in (("prev", prev),) + ((("item", i),) if i is not None else ()):
            if not 0 <= v < n:
                raise IndexError(f"{name} index {v} out of range [0, {n})")

    def to_checkpoint(self):
        meta = {
            "n_users": int(self.v_ui.shape[0]),
            "n_songs": self.n_songs,
            "f": int(self.v_ui.shape[1]),
            "lr": self.lr,
            "lam": self.lam,
        }
        tensors = {
            "v_ui": self.v_ui,
            "v_iu": self.v_iu,
            "v_il": self.v_il,
            "v_li": self.v_li,
        }
        return "fpmc", meta, tensors

    @classmethod
    def from_checkpoint(cls, meta, tensors):
        shapes = {
            "v_ui": (meta["n_users"], meta["f"]),
            "v_iu": (meta["n_songs"], meta["f"]),
            "v_il": (meta["n_songs"], meta["f"]),
            "v_li": (meta["n_songs"], meta["f"]),
        }
        for name, want in shapes.items():
            if tensors[name].shape != want:
                raise ValueError(f"tensor {name}: shape {tensors[name].shape} != {want}")
        return cls(
            tensors["v_ui"], tensors["v_iu"], tensors["v_il"], tensors["v_li"],
            lr=meta["lr"], lam=meta["lam"],
        )


def fpmc_score(u: int, prev: int, i: int, factors: FpmcFactors) -> float:
    """<v_ui[u], v_iu[i]> + <v_il[i], v_li[prev]>."""
    factors._check(u, prev, i)
    return float(
        factors.v_ui[u] @ factors.v_iu[i] + factors.v_il[i] @ factors.v_li[prev]
    )


def fpmc_init(
    n_users: int, n_songs: int, f: int = 32, lr: float = 0.05, lam: float = 0.01,
    rng: np.random.Generator | None = None,
) -> FpmcFactors:
    if rng is None:
        rng = make_rng(0)
    scale = 0.01
    return FpmcFactors(
        v_ui=scale * rng.standard_normal((n_users, f)),
        v_iu=scale * rng.standard_normal((n_songs, f)),
        v_il=scale * rng.standard_normal((n_songs, f)),
        v_li=scale * rng.standard_normal((n_songs, f)),
        lr=lr,
        lam=lam,
    )


def fpmc_sbpr_update(factors: FpmcFactors, u: int, prev: int, pos: int, neg: int) -> float:
    """One sequential pairwise-ranking ascent step on (pos over neg).

    Returns -log sigma(score_pos - score_neg) before the update.
    """
    lr, lam = factors.lr, factors.lam
    vu = factors.v_ui[u].copy()
    vip, vin = factors.v_iu[pos].copy(), factors.v_iu[neg].copy()
    tip, tin = factors.v_il[pos].copy(), factors.v_il[neg].copy()
    tl = factors.v_li[prev].copy()
    diff = vu @ (vip - vin) + (tip - tin) @ tl
    delta = expit(-diff)  # 1 - sigma(diff)
    factors.v_ui[u] += lr * (delta * (vip - vin) - lam * vu)
    factors.v_iu[pos] += lr * (delta * vu - lam * vip)
    factors.v_iu[neg] += lr * (-delta * vu - lam * vin)
    factors.v_il[pos] += lr * (delta * tl - lam * tip)
    factors.v_il[neg] += lr * (-delta * tl - lam * tin)
    factors.v_li[prev] += lr * (delta * (tip - tin) - lam * tl)
    return float(np.logaddexp(0.0, -diff))


def fpmc_train(
    examples,
    n_users: int,
    n_songs: int,
    f: int = 32,
    lr: float = 0.05,
    lam: float = 0.01,
    epochs: int = 30,
    rng: np.random.Generator | None = None,
    factors: FpmcFactors | None = None,
) -> FpmcFactors:
    """Sequential pairwise-ranking SGD over (user, previous song, next song)
    triples; the non-observed competitor is sampled uniformly per step.

    ``examples`` must have context length exactly 1 (first-order model).
    """
    if not examples:
        raise ValueError("no training examples")
    triples = []
    for e in examples:
        if hasattr(e, "context"):
            user, context, target = e.user, e.context, e.target
        else:
            user, context, target = e
        if len(context) != 1:
            raise ValueError("first-order model needs context length 1")
        triples.append((user, context[0], target))
    if rng is None:
        rng = make_rng(0)
    if factors is None:
        factors = fpmc_init(n_users, n_songs, f, lr, lam, rng)
    n = len(triples)
    for _ in range(epochs):
        total = 0.0
        for idx in rng.permutation(n):
            u, prev, pos = triples[idx]
            neg = int(rng.integers(n_songs))
            while neg == pos:
                neg = int(rng.integers(n_songs))
            total += fpmc_sbpr_update(factors, u, prev, pos, neg)
        factors.loss_history.append(total / n)
    return factors


def fpmc_recommend(u, prev, factors: FpmcFactors, k: int) -> np.ndarray:
    return top_k_indices(factors.score_catalog(u, [prev]), k)
