"""Training loop: template, low- and medium-distortion groups, ranking + classification loss."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import network as nn
from .preprocess import extract_signature, real_signature_features, synthetic_signature_features
from .ranking import (RankingConfig, ap_gradient, ap_loss, bce_loss, ce_loss, infer_yw, similarities,
                      triplet_loss, true_ranking)
from .synthesis import G1, G2, SyntheticGroupSpec, build_pools

log = logging.getLogger(__name__)

LOSSES = ("ap", "triplet", "bce")
GROUP_SOURCES = ("synthetic", "real-g1", "real-g2", "real-both")
METRICS_HEADER = "batch_idx,ap_loss,ce_loss,train_ap"


@dataclass
class TrainConfig:
    loss: str = "ap"
    group_source: str = "synthetic"
    g1_size: int = 5
    g2_size: int = 10
    pool_size: int = 20
    lam: float = 5.0
    epsilon: float = 1.0
    direction: str = "positive"
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.001
    batches_per_class: int = 800
    total_batches: Optional[int] = None
    seed: int = 0
    channels: tuple = (64, 64, 128, 128, 256, 256)
    embed_dim: int = 512

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.group_source not in GROUP_SOURCES:
            raise ValueError(f"group_source must be one of {GROUP_SOURCES}, got {self.group_source!r}")
        for name in ("g1_size", "g2_size", "pool_size", "batches_per_class", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.pool_size < max(self.g1_size, self.g2_size):
            raise ValueError("pool_size must be >= max(g1_size, g2_size)")
        if not (self.lr > 0 and 0 <= self.momentum < 1 and self.weight_decay >= 0):
            raise ValueError("need lr > 0, 0 <= momentum < 1, weight_decay >= 0")
        if self.total_batches is not None and self.total_batches < 0:
            raise ValueError("total_batches must be >= 0")
        if len(self.channels) != 6:
            raise ValueError("the network has six conv layers")
        RankingConfig(self.direction, self.epsilon, self.lam, self.g1_size, self.g2_size)

    def ranking(self) -> RankingConfig:
        return RankingConfig(self.direction, self.epsilon, self.lam, self.g1_size, self.g2_size)

    def n_batches(self, n_classes: int) -> int:
        return self.total_batches if self.total_batches is not None else n_classes * self.batches_per_class

    def to_json(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class TemplateEntry:
    label: int
    signer: str
    template: np.ndarray  # (3, L)
    g1: list  # candidate (3, L) arrays for the first group
    g2: list


@dataclass
class TrainingSet:
    classes: list  # signer ids, index = class label
    entries: list = field(default_factory=list)


def _pool_seed(seed: int, label: int, j: int) -> int:
    return int(np.random.SeedSequence([seed, label, j]).generate_state(1)[0])


def build_training_set(signers: dict, config: TrainConfig, progress: Optional[Callable] = None) -> TrainingSet:
    """One entry per genuine signature of every training signer.

    Synthetic groups come from offline pools synthesised from the template's
    extracted strokes.  ``real-g1`` draws the first group from the signer's
    other genuine signatures, ``real-g2`` the second from their skilled
    forgeries; ``real-both`` does both and skips extraction.
    """
    ids = list(signers)
    if len(ids) < 2:
        raise ValueError("training needs at least two signers (classes)")
    need_synth = config.group_source != "real-both"
    spec_kw = dict(g1_size=config.g1_size, g2_size=config.g2_size, pool_size=config.pool_size)
    out = TrainingSet(ids)
    for label, sid in enumerate(ids):
        genuine = signers[sid]["genuine"]
        forgery = signers[sid].get("forgery", [])
        real_feats = [real_signature_features(s).channels for s in genuine]
        forg_feats = [real_signature_features(s).channels for s in forgery]
        if config.group_source in ("real-g1", "real-both") and len(genuine) - 1 < config.g1_size:
            raise ValueError(f"signer {sid!r}: {len(genuine)} genuines cannot supply a first group of {config.g1_size}")
        if config.group_source in ("real-g2", "real-both") and len(forgery) < config.g2_size:
            raise ValueError(f"signer {sid!r}: {len(forgery)} forgeries cannot supply a second group of {config.g2_size}")
        for j, sig in enumerate(genuine):
            p1 = p2 = None
            if need_synth:
                spec = SyntheticGroupSpec(seed=_pool_seed(config.seed, label, j), **spec_kw)
                pools = build_pools(extract_signature(sig), spec, G1, G2)
                p1 = [synthetic_signature_features(s).channels for s in pools[0]]
                p2 = [synthetic_signature_features(s).channels for s in pools[1]]
            others = [f for k, f in enumerate(real_feats) if k != j]
            g1 = others if config.group_source in ("real-g1", "real-both") else p1
            g2 = forg_feats if config.group_source in ("real-g2", "real-both") else p2
            out.entries.append(TemplateEntry(label, sid, real_feats[j], g1, g2))
            if progress:
                progress(len(out.entries))
    return out


@dataclass
class StepMetrics:
    batch_idx: int
    ap_loss: float
    ce_loss: float
    train_ap: float
    ranking_loss: float

    def csv(self) -> str:
        return f"{self.batch_idx},{self.ap_loss!r},{self.ce_loss!r},{self.train_ap!r}"


class Trainer:
    """Owns the parameters, momentum buffers and the sampling RNG."""

    def __init__(self, data: TrainingSet, config: TrainConfig, params: Optional[dict] = None,
                 velocity: Optional[dict] = None, step: int = 0, rng_state: Optional[dict] = None):
        self.data = data
        self.config = config
        self.net = nn.NetConfig(n_classes=len(data.classes), channels=config.channels, embed_dim=config.embed_dim)
        self.params = params if params is not None else nn.init_params(self.net, config.seed)
        self.velocity = velocity if velocity is not None else {}
        self.step_count = step
        self.rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
        if rng_state is not None:
            self.rng.bit_generator.state = rng_state
        self.rank_cfg = config.ranking()

    @property
    def total_batches(self) -> int:
        return self.config.n_batches(len(self.data.classes))

    def _embedding_grad(self, emb: np.ndarray):
        c = self.config
        if c.loss == "ap":
            grad, info = ap_gradient(emb, self.rank_cfg)
            return grad, info["ap_loss"]
        if c.loss == "triplet":
            loss, grad, _ = triplet_loss(emb, c.g1_size)
        else:
            loss, grad, _ = bce_loss(emb, c.g1_size)
        return grad, loss

    def step(self, entry_index: Optional[int] = None) -> StepMetrics:
        c = self.config
        if entry_index is None:
            entry_index = int(self.rng.integers(len(self.data.entries)))
        e = self.data.entries[entry_index]
        i1 = self.rng.choice(len(e.g1), size=c.g1_size, replace=False)
        i2 = self.rng.choice(len(e.g2), size=c.g2_size, replace=False)
        seqs = [e.template] + [e.g1[i] for i in i1] + [e.g2[i] for i in i2]
        labels = np.full(len(seqs), e.label, dtype=np.int64)
        batch = nn.make_batch(seqs, labels, dtype=self.params["conv1.weight"].dtype)
        res = nn.forward(self.params, batch, self.net)
        emb = res.embeddings.astype(np.float64)
        g_emb, rank_loss = self._embedding_grad(emb)
        ce, g_logits = ce_loss(res.logits.astype(np.float64), labels)
        grads = nn.backward(self.params, res.cache, g_emb, g_logits)
        nn.sgd_step(self.params, grads, self.velocity, c.lr, c.momentum, c.weight_decay)
        yw = infer_yw(similarities(emb), c.g1_size)
        ap = 1.0 - _ap_loss_of(yw)
        self.step_count += 1
        return StepMetrics(self.step_count - 1, 1.0 - ap, ce, ap, float(rank_loss))

    def run(self, n_batches: Optional[int] = None, metrics_path=None, checkpoint_path=None,
            checkpoint_every: int = 0, on_checkpoint: Optional[Callable] = None) -> list:
        """Train until ``n_batches`` total steps (default: the configured schedule)."""
        target = self.total_batches if n_batches is None else n_batches
        rows = []
        fh = None
        if metrics_path is not None:
            metrics_path = Path(metrics_path)
            fresh = not metrics_path.exists() or self.step_count == 0
            fh = open(metrics_path, "w" if fresh else "a")
            if fresh:
                fh.write(METRICS_HEADER + "\n")
        try:
            while self.step_count < target:
                m = self.step()
                rows.append(m)
                if fh:
                    fh.write(m.csv() + "\n")
                if checkpoint_every and self.step_count % checkpoint_every == 0:
                    if fh:
                        fh.flush()
                    if checkpoint_path is not None:
                        self.save(Path(checkpoint_path).with_name(
                            f"{Path(checkpoint_path).stem}_{self.step_count:06d}.ckpt"))
                    if on_checkpoint:
                        on_checkpoint(self)
                if self.step_count % 200 == 0:
                    log.info("batch %d/%d ap_loss %.4f ce %.4f", self.step_count, target, m.ap_loss, m.ce_loss)
        finally:
            if fh:
                fh.close()
        if checkpoint_path is not None:
            self.save(checkpoint_path)
        return rows

    def save(self, path):
        meta = {"step": self.step_count, "rng_state": _jsonable(self.rng.bit_generator.state),
                "train_config": self.config.to_json(), "classes": list(self.data.classes)}
        vel = {f"velocity/{k}": v for k, v in self.velocity.items()}
        nn.save_checkpoint(path, self.params, self.net, vel, meta)

    @classmethod
    def resume(cls, path, data: TrainingSet, config: Optional[TrainConfig] = None) -> "Trainer":
        params, _, extras, meta = nn.load_checkpoint(path)
        if config is None:
            config = TrainConfig(**meta["train_config"])
        velocity = {k.split("/", 1)[1]: v for k, v in extras.items() if k.startswith("velocity/")}
        return cls(data, config, params, velocity, meta.get("step", 0), meta.get("rng_state"))

    def embedder(self) -> Callable:
        params, net = copy.deepcopy(self.params), self.net
        return lambda sigs: nn.embed(params, net, [real_signature_features(s) for s in sigs])


def _ap_loss_of(outcome) -> float:
    n2 = outcome.n - outcome.n1
    return ap_loss(true_ranking(outcome.n1, n2), outcome.p)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def embedder_from_params(params: dict, net: nn.NetConfig) -> Callable:
    return lambda sigs: nn.embed(params, net, [real_signature_features(s) for s in sigs])
