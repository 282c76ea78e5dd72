"""Distance scoring, equal error rates and the T5/T1 evaluation protocols."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class TrialScore:
    s_ave: float
    s_min: float
    label: str  # "genuine" | "forgery"

    def __post_init__(self):
        if self.label not in ("genuine", "forgery"):
            raise ValueError(f"label must be 'genuine' or 'forgery', got {self.label!r}")
        if self.s_min > self.s_ave + 1e-12:
            raise ValueError("s_min must not exceed s_ave")

    @property
    def combined(self) -> float:
        return self.s_ave + self.s_min


def _unit_rows(e) -> np.ndarray:
    e = np.atleast_2d(np.asarray(e, dtype=np.float64))
    norms = np.linalg.norm(e, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm embedding")
    return e / norms[:, None]


def embed_distance(xi, xj) -> float:
    """Euclidean distance between the l2-normalised embeddings, in [0, 2]."""
    ui, uj = _unit_rows(xi)[0], _unit_rows(xj)[0]
    return float(np.linalg.norm(ui - uj))


def pairwise_distances(a, b) -> np.ndarray:
    ua, ub = _unit_rows(a), _unit_rows(b)
    sq = np.maximum(2.0 - 2.0 * (ua @ ub.T), 0.0)
    return np.sqrt(sq)


class TemplateSet:
    """Reference embeddings of one client plus their mean pairwise distance."""

    def __init__(self, client, embeddings):
        e = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
        if len(e) < 1:
            raise ValueError("a template set needs at least one embedding")
        self.client = client
        self.units = _unit_rows(e)
        n = len(e)
        if n == 1:
            self.d_bar = 1.0
        else:
            d = pairwise_distances(self.units, self.units)
            self.d_bar = float(d[np.triu_indices(n, 1)].mean())
            if not self.d_bar > 0:
                raise ValueError("template embeddings coincide; mean pairwise distance is 0")

    def __len__(self):
        return len(self.units)


def score(template_set: TemplateSet, test, label: str = "genuine") -> TrialScore:
    d = pairwise_distances(template_set.units, test)[:, 0] / math.sqrt(template_set.d_bar)
    return TrialScore(float(d.mean()), float(d.min()), label)


def score_many(template_set: TemplateSet, tests, label: str) -> list:
    d = pairwise_distances(template_set.units, tests) / math.sqrt(template_set.d_bar)
    return [TrialScore(float(a), float(m), label) for a, m in zip(d.mean(axis=0), d.min(axis=0))]


def decide(trial: TrialScore, c: float) -> bool:
    """Accept (True) iff ``s_ave + s_min <= c``."""
    return trial.combined <= c


# ---------------------------------------------------------------------------
# equal error rate


def _split(trials) -> tuple:
    gen = np.array([t.combined for t in trials if t.label == "genuine"], dtype=np.float64)
    forg = np.array([t.combined for t in trials if t.label == "forgery"], dtype=np.float64)
    if len(gen) == 0 or len(forg) == 0:
        raise ValueError("EER needs both genuine and forgery trials")
    return gen, forg


def eer_from_scores(genuine: np.ndarray, forgery: np.ndarray) -> float:
    """EER (percent) for "accept iff score <= c".

    Operating points are ``c = -inf`` followed by every distinct score in
    ascending order.  The first point with ``FRR - FAR <= 0`` is taken as
    is when the difference is exactly zero; otherwise FRR and FAR are
    interpolated linearly between it and the previous point.
    """
    g = np.sort(np.asarray(genuine, dtype=np.float64))
    f = np.sort(np.asarray(forgery, dtype=np.float64))
    if len(g) == 0 or len(f) == 0:
        raise ValueError("EER needs both genuine and forgery scores")
    thresholds = np.unique(np.concatenate([g, f]))
    frr = np.concatenate([[1.0], (len(g) - np.searchsorted(g, thresholds, side="right")) / len(g)])
    far = np.concatenate([[0.0], np.searchsorted(f, thresholds, side="right") / len(f)])
    diff = frr - far
    k = int(np.argmax(diff <= 0))  # the last point always has FRR = 0
    if diff[k] == 0:
        return 100.0 * float(frr[k])
    a = diff[k - 1] / (diff[k - 1] - diff[k])
    return 100.0 * float(frr[k - 1] + a * (frr[k] - frr[k - 1]))


def eer(trials: Sequence[TrialScore], mode: str = "global", users: Sequence = None) -> float:
    """Global EER, or the unweighted mean of per-user EERs (``users[i]`` owns ``trials[i]``)."""
    if mode == "global":
        return eer_from_scores(*_split(trials))
    if mode != "user_specific":
        raise ValueError("mode must be 'global' or 'user_specific'")
    if users is None or len(users) != len(trials):
        raise ValueError("user_specific mode needs one user id per trial")
    by_user = {}
    for u, t in zip(users, trials):
        by_user.setdefault(u, []).append(t)
    return float(np.mean([eer_from_scores(*_split(ts)) for ts in by_user.values()]))


# ---------------------------------------------------------------------------
# protocols

T5_TEMPLATES = 5


@dataclass
class SignerEmbeddings:
    genuine: np.ndarray
    forgery: np.ndarray


def _check_order(g: float, u: float, where: str):
    if g < u - 1e-9:
        warnings.warn(f"{where}: global EER {g:.3f}% is below the mean user-specific EER {u:.3f}%",
                      RuntimeWarning, stacklevel=3)


def evaluate_t5(signers: Mapping, trials: int = 50, seed: int = 0, n_templates: int = T5_TEMPLATES) -> dict:
    """Random ``n_templates``-template draws; rest of the genuines and all forgeries are tested."""
    usable = {}
    for k, (sid, emb) in enumerate(signers.items()):
        if len(emb.genuine) < n_templates + 1 or len(emb.forgery) < 1:
            warnings.warn(f"signer {sid!r} skipped: T5 needs >= {n_templates + 1} genuine and >= 1 forgery",
                          RuntimeWarning, stacklevel=2)
            continue
        usable[sid] = (emb, np.random.default_rng([seed, k]))
    if not usable:
        raise ValueError("no signer has enough signatures for T5")
    glob, user = [], []
    for _ in range(trials):
        all_g, all_f, per_user = [], [], []
        for sid, (emb, rng) in usable.items():
            pick = rng.choice(len(emb.genuine), size=n_templates, replace=False)
            rest = np.setdiff1d(np.arange(len(emb.genuine)), pick)
            ts = TemplateSet(sid, emb.genuine[pick])
            g = [t.combined for t in score_many(ts, emb.genuine[rest], "genuine")]
            f = [t.combined for t in score_many(ts, emb.forgery, "forgery")]
            all_g += g
            all_f += f
            per_user.append(eer_from_scores(np.array(g), np.array(f)))
        glob.append(eer_from_scores(np.array(all_g), np.array(all_f)))
        user.append(float(np.mean(per_user)))
    out = {"global": float(np.mean(glob)), "user": float(np.mean(user))}
    _check_order(out["global"], out["user"], "T5")
    return out


def evaluate_t1(signers: Mapping) -> dict:
    """Every genuine is in turn the only template; rest of the genuines and all forgeries are tested."""
    all_g, all_f, per_user = [], [], []
    for sid, emb in signers.items():
        if len(emb.genuine) < 2 or len(emb.forgery) < 1:
            warnings.warn(f"signer {sid!r} skipped: T1 needs >= 2 genuine and >= 1 forgery",
                          RuntimeWarning, stacklevel=2)
            continue
        g, f = [], []
        for i in range(len(emb.genuine)):
            ts = TemplateSet(sid, emb.genuine[i:i + 1])
            rest = np.delete(emb.genuine, i, axis=0)
            g += [t.combined for t in score_many(ts, rest, "genuine")]
            f += [t.combined for t in score_many(ts, emb.forgery, "forgery")]
        all_g += g
        all_f += f
        per_user.append(eer_from_scores(np.array(g), np.array(f)))
    if not per_user:
        raise ValueError("no signer has enough signatures for T1")
    out = {"global": eer_from_scores(np.array(all_g), np.array(all_f)), "user": float(np.mean(per_user))}
    _check_order(out["global"], out["user"], "T1")
    return out


def evaluate(signers: Mapping, protocol: str = "both", trials: int = 50, seed: int = 0) -> dict:
    row = {"t5_global": None, "t5_user": None, "t1_global": None, "t1_user": None}
    if protocol in ("t5", "both"):
        r = evaluate_t5(signers, trials, seed)
        row["t5_global"], row["t5_user"] = r["global"], r["user"]
    if protocol in ("t1", "both"):
        r = evaluate_t1(signers)
        row["t1_global"], row["t1_user"] = r["global"], r["user"]
    if protocol not in ("t5", "t1", "both"):
        raise ValueError("protocol must be 't5', 't1' or 'both'")
    return row


def fold_blocks(signer_ids: Sequence, folds: int) -> list:
    """Contiguous signer blocks: fold k holds the k-th slice of the ordered ids."""
    if folds < 1 or folds > len(signer_ids):
        raise ValueError(f"folds must lie in [1, {len(signer_ids)}]")
    return [list(b) for b in np.array_split(np.array(list(signer_ids), dtype=object), folds)]


def run_protocol(corpus, embed_for_fold: Callable, protocol: str = "both", folds: int = 10,
                 trials: int = 50, seed: int = 0, dataset: str = "") -> dict:
    """k-fold evaluation.

    ``embed_for_fold(train_ids, fold)`` trains (or loads) a model on the
    genuine signatures of ``train_ids`` and returns a callable mapping a list
    of signatures to an ``(n, d)`` embedding array.  With ``folds == 1`` the
    model sees every signer (closed-set evaluation).
    """
    ids = list(corpus.signers)
    blocks = fold_blocks(ids, folds)
    rows = []
    for k, test_ids in enumerate(blocks):
        train_ids = ids if folds == 1 else [s for s in ids if s not in set(test_ids)]
        embed_fn = embed_for_fold(train_ids, k)
        emb = {}
        for sid in test_ids:
            entry = corpus.signers[sid]
            gen = embed_fn(entry["genuine"])
            forg = embed_fn(entry["forgery"]) if entry["forgery"] else np.zeros((0, gen.shape[1]))
            emb[sid] = SignerEmbeddings(gen, forg)
        row = evaluate(emb, protocol, trials, seed + k)
        row["fold"] = k
        rows.append(row)
    keys = ("t5_global", "t5_user", "t1_global", "t1_user")
    mean = {key: (float(np.mean([r[key] for r in rows])) if rows[0][key] is not None else None) for key in keys}
    return {"dataset": dataset, "protocol": protocol,
            "folds": [{"fold": r["fold"], **{key: r[key] for key in keys}} for r in rows], "mean": mean}


REPORT_SCHEMA = {
    "type": "object",
    "required": ["dataset", "protocol", "folds", "mean"],
    "properties": {
        "dataset": {"type": "string"},
        "protocol": {"enum": ["t5", "t1", "both"]},
        "folds": {"type": "array", "items": {
            "type": "object", "required": ["fold", "t5_global", "t5_user", "t1_global", "t1_user"],
            "properties": {"fold": {"type": "integer"},
                           **{k: {"type": ["number", "null"]} for k in ("t5_global", "t5_user", "t1_global", "t1_user")}}}},
        "mean": {"type": "object", "required": ["t5_global", "t5_user", "t1_global", "t1_user"],
                 "properties": {k: {"type": ["number", "null"]} for k in ("t5_global", "t5_user", "t1_global", "t1_user")}},
    },
}
