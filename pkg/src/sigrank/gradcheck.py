"""Finite-difference and enumeration checks of every hand-written gradient and the DP."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import network as nn
from .ranking import (RankingConfig, RankingOutcome, bce_loss, ce_loss, infer_ydirect, infer_yw, objective, score_function,
                      score_gradient_embeddings, similarities, triplet_loss)

TOLERANCE = 1e-4
TINY = dict(n_classes=3, channels=(4, 4, 8, 8, 16, 16), embed_dim=8)


@dataclass
class CheckResult:
    component: str
    max_rel_error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    a, n = np.ravel(analytic), np.ravel(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def central_difference(f: Callable[[], float], x: np.ndarray, h: float = 1e-5, points: int = 2) -> np.ndarray:
    """Numerical gradient of ``f`` w.r.t. ``x`` (perturbed in place, restored).

    ``points=4`` uses the fourth-order stencil, for entries too small for the
    two-point rule's truncation error.
    """
    if points not in (2, 4):
        raise ValueError("points must be 2 or 4")
    flat = x.reshape(-1)
    out = np.zeros(flat.size)

    def at(i, delta):
        flat[i] = orig + delta
        return f()

    for i in range(flat.size):
        orig = flat[i]
        if points == 2:
            out[i] = (at(i, h) - at(i, -h)) / (2 * h)
        else:
            out[i] = (-at(i, 2 * h) + 8 * at(i, h) - 8 * at(i, -h) + at(i, -2 * h)) / (12 * h)
        flat[i] = orig
    return out.reshape(x.shape)


def tiny_problem(seed: int = 0, lengths=(20, 17, 9, 24)):
    cfg = nn.NetConfig(**TINY)
    params = nn.init_params(cfg, seed, np.float64)
    rng = np.random.default_rng(seed)
    seqs = [rng.standard_normal((3, n)) for n in lengths]
    labels = rng.integers(cfg.n_classes, size=len(seqs))
    return cfg, params, nn.make_batch(seqs, labels, dtype=np.float64)


def check_network(inject: Optional[str] = None, seed: int = 0) -> list:
    """CE and fixed-ranking F through the whole network, every parameter entry."""
    cfg, params, batch = tiny_problem(seed)
    n1 = 1  # rows: template, one first-group item, two second-group items
    y = infer_yw(similarities(nn.forward(params, batch, cfg).embeddings), n1)

    def loss():
        r = nn.forward(params, batch, cfg)
        ce, _ = ce_loss(r.logits, batch.labels)
        s = similarities(r.embeddings)
        return ce + score_function(s[:n1], s[n1:], y)

    r = nn.forward(params, batch, cfg)
    _, g_logits = ce_loss(r.logits, batch.labels)
    g_emb = score_gradient_embeddings(r.embeddings, y, n1)
    grads = nn.backward(params, r.cache, g_emb, g_logits)
    if inject is not None:
        if inject not in grads:
            raise KeyError(f"unknown parameter {inject!r}")
        grads[inject] = -grads[inject]
    out = []
    for name in params:
        num = central_difference(loss, params[name])
        out.append(CheckResult(f"network:{name}", rel_error(grads[name], num), TOLERANCE))
    return out


def _embeddings(seed: int, n: int = 16, d: int = 8) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, d))


def check_score_gradient(seed: int = 1) -> CheckResult:
    e = _embeddings(seed)
    n1 = 5
    y = infer_yw(similarities(e), n1)

    def f():
        s = similarities(e)
        return score_function(s[:n1], s[n1:], y)

    g = score_gradient_embeddings(e, y, n1)
    return CheckResult("ranking:F", rel_error(g, central_difference(f, e)), TOLERANCE)


def check_ce(seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((6, 5))
    lab = rng.integers(5, size=6)
    _, g = ce_loss(z, lab)
    return CheckResult("ranking:ce", rel_error(g, central_difference(lambda: ce_loss(z, lab)[0], z)), TOLERANCE)


def check_triplet(seed: int = 3) -> CheckResult:
    e = _embeddings(seed)
    _, g, info = triplet_loss(e)
    hard = info["hard"]

    def f():
        # fixed mining: the same hardest set as the analytic pass
        loss, _, inf = triplet_loss(e)
        if not np.array_equal(inf["hard"], hard):
            raise RuntimeError("finite-difference step changed the mined triplets")
        return loss

    return CheckResult("baseline:triplet", rel_error(g, central_difference(f, e, 1e-6)), TOLERANCE)


def check_bce(seed: int = 4) -> CheckResult:
    e = _embeddings(seed)
    _, g, _ = bce_loss(e)
    return CheckResult("baseline:bce", rel_error(g, central_difference(lambda: bce_loss(e)[0], e)), TOLERANCE)


def enumerate_rankings(n1: int, n2: int):
    """All interleavings of G1 (indices < n1) and G2 as top-to-bottom group patterns."""
    for pos in itertools.combinations(range(n1 + n2), n1):
        pattern = np.zeros(n1 + n2, dtype=bool)
        pattern[list(pos)] = True
        yield pattern


def brute_force_max(sims: np.ndarray, n1: int, eps_signed: float, full: bool = False) -> float:
    """Max of F +/- eps L by enumeration.

    By default every interleaving of the two groups (each kept in descending
    similarity order) is scored; ``full=True`` scores every permutation.
    """
    s = np.asarray(sims, dtype=np.float64)
    n = len(s)
    best = -np.inf
    if full:
        candidates = (np.array(p) for p in itertools.permutations(range(n)))
    else:
        g1 = np.argsort(-s[:n1], kind="stable")
        g2 = np.argsort(-s[n1:], kind="stable") + n1

        def interleave(pattern):
            order = np.empty(n, dtype=np.int64)
            order[pattern], order[~pattern] = g1, g2
            return order

        candidates = (interleave(p) for p in enumerate_rankings(n1, n - n1))
    for order in candidates:
        best = max(best, objective(s, n1, RankingOutcome(order, n1), eps_signed))
    return best


def check_dp(trials: int = 30, seed: int = 5) -> CheckResult:
    """DP objective vs. exhaustive permutation search; the error is the worst shortfall."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n1, n2 in ((1, 1), (2, 2), (2, 3), (3, 4)):
        for _ in range(trials):
            s = rng.uniform(-1, 1, n1 + n2)
            for eps in (0.1, 1.0, 10.0):
                for direction in ("positive", "negative"):
                    cfg = RankingConfig(direction, eps, 0.0, n1, n2)
                    out = infer_ydirect(s, n1, cfg)
                    got = objective(s, n1, out, cfg.sign * eps)
                    best = brute_force_max(s, n1, cfg.sign * eps, full=n1 + n2 <= 5)
                    worst = max(worst, (best - got) / max(abs(best), 1e-12))
    return CheckResult("ranking:dp", worst, 1e-12)


def run_all(inject: Optional[str] = None) -> list:
    results = check_network(inject)
    results += [check_score_gradient(), check_ce(), check_triplet(), check_bce(), check_dp()]
    return results
