"""Direct average-precision optimisation over a ranked pair of groups.

Items are ordered G1 first, then G2: item ``k < n1`` is a first-group
(low-distortion) sample.  A ranking is stored as ``order``, the item indices
from the top position down.  The scoring function is

    F(y) = 1/(n1*n2) * sum_{i in G1, j in G2} y_ij * (phi_i - phi_j)

with ``phi`` the cosine similarity of each item to the template.  The
gradient of the AP loss follows the direct-loss rule: the difference of
``grad F`` at the loss-augmented ranking and at the model's own ranking,
plus ``lambda * grad F`` at the loss-augmented ranking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels


@dataclass(frozen=True)
class RankingConfig:
    direction: str = "positive"
    epsilon: float = 1.0
    lam: float = 5.0
    g1_size: int = 5
    g2_size: int = 10

    def __post_init__(self):
        if self.direction not in ("positive", "negative"):
            raise ValueError("direction must be 'positive' or 'negative'")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "positive" else -1.0


@dataclass
class RankingOutcome:
    order: np.ndarray
    n1: int

    @property
    def n(self) -> int:
        return len(self.order)

    @property
    def p(self) -> np.ndarray:
        """1 at rank positions holding a G1 item."""
        return (self.order < self.n1).astype(np.int64)

    @property
    def y(self) -> np.ndarray:
        """Pairwise matrix: ``y[i, j] = +1`` if item i is ranked above item j."""
        rank = np.empty(self.n, dtype=np.int64)
        rank[self.order] = np.arange(self.n)
        return np.sign(rank[None, :] - rank[:, None]).astype(np.int64)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def similarities(embeddings: np.ndarray) -> np.ndarray:
    """Cosine similarity of rows 1.. to row 0 (the template)."""
    e = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(e, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm embedding")
    return (e[1:] @ e[0]) / (norms[1:] * norms[0])


def _pair_matrix(y, n1: int, n2: int) -> np.ndarray:
    if isinstance(y, RankingOutcome):
        y = y.y
    y = np.asarray(y)
    if y.shape == (n1 + n2, n1 + n2):
        return y[:n1, n1:]
    if y.shape == (n1, n2):
        return y
    raise ValueError(f"y of shape {y.shape} does not match group sizes ({n1}, {n2})")


def score_function(sims_g1: Sequence[float], sims_g2: Sequence[float], y) -> float:
    s1 = np.asarray(sims_g1, dtype=np.float64)
    s2 = np.asarray(sims_g2, dtype=np.float64)
    n1, n2 = len(s1), len(s2)
    if n1 == 0 or n2 == 0:
        raise ValueError("both groups must be non-empty")
    Y = _pair_matrix(y, n1, n2)
    return float(np.sum(Y * (s1[:, None] - s2[None, :])) / (n1 * n2))


def score_gradient(y, n1: int, n2: int) -> np.ndarray:
    """``dF/dphi`` for all ``n1 + n2`` items at a fixed ranking."""
    Y = _pair_matrix(y, n1, n2).astype(np.float64)
    norm = 1.0 / (n1 * n2)
    return np.concatenate([Y.sum(axis=1) * norm, -Y.sum(axis=0) * norm])


def average_precision(p_hat: Sequence[int]) -> float:
    p = np.asarray(p_hat)
    hits = np.flatnonzero(p == 1)
    if len(hits) == 0:
        raise ValueError("ranking contains no positive items")
    prec = np.arange(1, len(hits) + 1) / (hits + 1)
    return float(prec.mean())


def ap_loss(p_true: Sequence[int], p_hat: Sequence[int]) -> float:
    """``1 - AP`` of ``p_hat``; both vectors must be 0/1 with the same number of ones."""
    pt, ph = np.asarray(p_true), np.asarray(p_hat)
    if pt.shape != ph.shape or pt.ndim != 1:
        raise ValueError("p_true and p_hat must be 1-D vectors of equal length")
    for v in (pt, ph):
        if not np.all((v == 0) | (v == 1)):
            raise ValueError("rank vectors must be binary")
    if pt.sum() != ph.sum() or pt.sum() == 0:
        raise ValueError("rank vectors must contain the same, non-zero number of positives")
    return 1.0 - average_precision(ph)


def true_ranking(n1: int, n2: int) -> np.ndarray:
    return np.concatenate([np.ones(n1, dtype=np.int64), np.zeros(n2, dtype=np.int64)])


def infer_yw(sims: Sequence[float], n1: int) -> RankingOutcome:
    """Model ranking: descending similarity; ties put G1 first, then lower index."""
    s = np.asarray(sims, dtype=np.float64)
    idx = np.arange(len(s))
    order = np.lexsort((idx, (idx >= n1).astype(np.int64), -s))
    return RankingOutcome(order, n1)


def infer_ydirect(sims: Sequence[float], n1: int, config: RankingConfig = RankingConfig()) -> RankingOutcome:
    """Loss-augmented ranking ``argmax F(y) +/- eps * L_AP(y)`` by dynamic programming.

    Within each group the optimum keeps descending similarity order, so only
    the interleaving is searched: O(n1 * n2).
    """
    s = np.asarray(sims, dtype=np.float64)
    g1 = np.argsort(-s[:n1], kind="stable")
    g2 = np.argsort(-s[n1:], kind="stable") + n1
    pattern, _ = kernels.loss_augmented_dp(s[g1], s[g2], config.sign * config.epsilon)
    order = np.empty(len(s), dtype=np.int64)
    order[pattern] = g1
    order[~pattern] = g2
    return RankingOutcome(order, n1)


def objective(sims: Sequence[float], n1: int, outcome: RankingOutcome, eps_signed: float) -> float:
    s = np.asarray(sims, dtype=np.float64)
    return score_function(s[:n1], s[n1:], outcome) + eps_signed * ap_loss(true_ranking(n1, len(s) - n1), outcome.p)


# ---------------------------------------------------------------------------
# gradients with respect to embeddings


def _cosine_backward(e: np.ndarray, sims: np.ndarray, g_sims: np.ndarray) -> np.ndarray:
    """Chain ``dL/dphi_i`` back to all embedding rows (row 0 is the template)."""
    e = np.asarray(e, dtype=np.float64)
    norms = np.linalg.norm(e, axis=1)
    u = e / norms[:, None]
    grad = np.zeros_like(e)
    # d phi_i / d e_i = (u0 - phi_i u_i) / |e_i| ; d phi_i / d e0 = (u_i - phi_i u0) / |e0|
    grad[1:] = g_sims[:, None] * (u[0][None, :] - sims[:, None] * u[1:]) / norms[1:, None]
    grad[0] = (g_sims[:, None] * (u[1:] - sims[:, None] * u[0][None, :])).sum(axis=0) / norms[0]
    return grad


def ap_gradient(embeddings: np.ndarray, config: RankingConfig = RankingConfig()):
    """Gradient of the regularised AP loss w.r.t. ``[template, G1..., G2...]`` embeddings.

    Returns ``(grad, info)``; ``info`` carries both rankings, the AP loss of
    the model ranking and the scores.
    """
    n1 = config.g1_size
    sims = similarities(embeddings)
    n2 = len(sims) - n1
    if n2 != config.g2_size:
        raise ValueError(f"expected {1 + config.g1_size + config.g2_size} embeddings, got {len(embeddings)}")
    y_w = infer_yw(sims, n1)
    y_d = infer_ydirect(sims, n1, config)
    g_d = score_gradient(y_d, n1, n2)
    g_w = score_gradient(y_w, n1, n2)
    g_sims = config.sign * (g_d - g_w) + config.lam * g_d
    grad = _cosine_backward(embeddings, sims, g_sims)
    loss = ap_loss(true_ranking(n1, n2), y_w.p)
    info = {"y_w": y_w, "y_direct": y_d, "ap_loss": loss, "ap": 1.0 - loss, "sims": sims}
    return grad, info


def score_gradient_embeddings(embeddings: np.ndarray, y, n1: int) -> np.ndarray:
    """``dF/d(embeddings)`` at a fixed ranking ``y``."""
    sims = similarities(embeddings)
    return _cosine_backward(embeddings, sims, score_gradient(y, n1, len(sims) - n1))


def ce_loss(logits: np.ndarray, labels) -> tuple:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if z.ndim == 1:
        z = z[None, :]
    B, M = z.shape
    if M < 2:
        raise ValueError("cross-entropy needs at least 2 classes")
    if lab.shape != (B,):
        raise ValueError("one label per row required")
    if np.any(lab < 0) or np.any(lab >= M):
        raise ValueError(f"label out of range [0, {M})")
    shift = z - z.max(axis=1, keepdims=True)
    logp = shift - np.log(np.exp(shift).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(B), lab].mean()
    grad = np.exp(logp)
    grad[np.arange(B), lab] -= 1.0
    return float(loss), grad / B


# ---------------------------------------------------------------------------
# baseline losses


def _normalized(e):
    e = np.asarray(e, dtype=np.float64)
    norms = np.linalg.norm(e, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm embedding")
    return e / norms[:, None], norms


def _dist_backward(u, norms, i, j, d, w, grad):
    """Accumulate ``w * d(dist_ij)/d(e)`` into ``grad`` (no-op at d == 0)."""
    if d == 0 or w == 0:
        return
    gu = w * (u[i] - u[j]) / d
    grad[i] += (gu - (gu @ u[i]) * u[i]) / norms[i]
    grad[j] -= (gu - (gu @ u[j]) * u[j]) / norms[j]


def triplet_loss(embeddings: np.ndarray, n1: int = 5, margin: float = 0.25, n_hard: int = 8) -> tuple:
    """Hardest-``n_hard`` triplets (template, G1, G2) plus mean intra-G1 distance."""
    u, norms = _normalized(embeddings)
    N = len(u) - 1
    pos = np.arange(1, n1 + 1)
    neg = np.arange(n1 + 1, N + 1)
    d = np.linalg.norm(u[:, None, :] - u[None, :, :], axis=2)
    viol = (d[0, pos][:, None] - d[0, neg][None, :] + margin).ravel()
    hard = np.argsort(-viol, kind="stable")[: n_hard]
    active = hard[viol[hard] > 0]
    k = len(hard)
    trip = float(np.sum(viol[active]) / k) if k else 0.0
    pairs = [(a, b) for ai, a in enumerate(pos) for b in pos[ai + 1:]]
    intra = float(np.mean([d[a, b] for a, b in pairs])) if pairs else 0.0
    grad = np.zeros_like(u)
    for flat in active:
        p, q = pos[flat // len(neg)], neg[flat % len(neg)]
        _dist_backward(u, norms, 0, p, d[0, p], 1.0 / k, grad)
        _dist_backward(u, norms, 0, q, d[0, q], -1.0 / k, grad)
    for a, b in pairs:
        _dist_backward(u, norms, a, b, d[a, b], 1.0 / len(pairs), grad)
    info = {"violations": viol, "hard": hard, "triplet": trip, "intra": intra}
    return trip + intra, grad, info


def bce_loss(embeddings: np.ndarray, n1: int = 5, scale: float = 5.0, pos_target: float = 0.9,
             neg_target: float = 0.5, pos_weight: float = 2.0) -> tuple:
    """Soft-label sigmoid cross-entropy on rescaled cosine similarities to the template."""
    sims = similarities(embeddings)
    z = scale * sims
    prob = 1.0 / (1.0 + np.exp(-z))
    t = np.where(np.arange(len(sims)) < n1, pos_target, neg_target)
    w = np.where(np.arange(len(sims)) < n1, pos_weight, 1.0)
    # log-sigmoid forms stay finite for large |z|
    per = t * np.logaddexp(0.0, -z) + (1 - t) * np.logaddexp(0.0, z)
    total_w = w.sum()
    loss = float(np.sum(w * per) / total_w)
    g_sims = w * (prob - t) * scale / total_w
    return loss, _cosine_backward(embeddings, sims, g_sims), {"per_pair": per, "weights": w}
