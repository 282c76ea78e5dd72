"""Six-layer 1D CNN with masked average pooling, two heads and manual backprop.

Activations are kept channel-last, ``(batch, time, channels)``.  After every
activation and every pooling stage the padded tail of each sequence is set
back to zero, so each batch item is computed exactly as if it had been run
on its own with zero padding.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946

ARCH_TAG = "sigrank-cnn"
CHECKPOINT_VERSION = 1
MIN_LENGTH = 8


@dataclass(frozen=True)
class NetConfig:
    n_classes: int
    channels: tuple = (64, 64, 128, 128, 256, 256)
    kernels: tuple = (7, 3, 3, 3, 3, 3)
    paddings: tuple = (3, 1, 1, 1, 1, 1)
    pool_after: tuple = (0, 2, 4)
    embed_dim: int = 512
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "kernels", tuple(self.kernels))
        object.__setattr__(self, "paddings", tuple(self.paddings))
        object.__setattr__(self, "pool_after", tuple(self.pool_after))
        if not (len(self.channels) == len(self.kernels) == len(self.paddings)):
            raise ValueError("channels, kernels and paddings must have equal length")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")

    def shapes(self) -> dict:
        out = {}
        cin = self.in_channels
        for i, (c, k) in enumerate(zip(self.channels, self.kernels)):
            out[f"conv{i + 1}.weight"] = (c, cin, k)
            out[f"conv{i + 1}.bias"] = (c,)
            cin = c
        out["fc_softmax.weight"] = (self.n_classes, cin)
        out["fc_softmax.bias"] = (self.n_classes,)
        out["fc_embed.weight"] = (self.embed_dim, cin)
        out["fc_embed.bias"] = (self.embed_dim,)
        return out


def receptive_field(cfg: NetConfig) -> int:
    """Receptive field of the last conv layer in input timesteps."""
    rf, jump = 1, 1
    for i, k in enumerate(cfg.kernels):
        rf += (k - 1) * jump
        if i in cfg.pool_after and i != len(cfg.kernels) - 1:
            rf += jump
            jump *= 2
    return rf


def init_params(cfg: NetConfig, seed: int = 0, dtype=np.float32) -> dict:
    """Normal(0, 1/fan_in) weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in cfg.shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype)
    return params


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    inputs: np.ndarray  # (B, L_max, 3)
    lengths: np.ndarray  # (B,)
    labels: Optional[np.ndarray] = None
    groups: Optional[list] = None

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.inputs.shape[1])[None, :] < self.lengths[:, None]


def make_batch(sequences: Sequence, labels=None, groups=None, dtype=np.float32) -> Batch:
    """Zero-pad ``(3, L_i)`` feature arrays (or FeatureSequences) into one batch."""
    arrays = [np.asarray(getattr(s, "channels", s)) for s in sequences]
    lengths = np.array([a.shape[1] for a in arrays], dtype=np.int64)
    L = int(lengths.max())
    x = np.zeros((len(arrays), L, arrays[0].shape[0]), dtype=dtype)
    for b, a in enumerate(arrays):
        x[b, : a.shape[1]] = a.T
    lab = None if labels is None else np.asarray(labels, dtype=np.int64)
    return Batch(x, lengths, lab, groups)


# ---------------------------------------------------------------------------
# layers


def selu(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, SELU_SCALE * x, (SELU_SCALE * SELU_ALPHA) * np.expm1(np.minimum(x, 0)))


def _conv_forward(x, W, b, pad, lengths):
    B, L, C = x.shape
    cout, _, K = W.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    cols = sliding_window_view(xp, K, axis=1)[:, : L]  # (B, L, C, K)
    cols = np.ascontiguousarray(cols).reshape(B, L, C * K)
    Wm = W.reshape(cout, C * K).T
    out = np.zeros((B, L, cout), dtype=np.result_type(x, W))
    # one GEMM per item over its valid rows: the rounding then cannot depend
    # on batch companions or on how much padding follows
    for i in range(B):
        n = int(lengths[i])
        np.matmul(cols[i, :n], Wm, out=out[i, :n])
        out[i, :n] += b
    return out, cols.reshape(B * L, C * K)


def _conv_backward(dout, cols, W, pad, x_shape):
    B, L, C = x_shape
    cout, _, K = W.shape
    d2 = dout.reshape(B * L, cout)
    dW = (d2.T @ cols).reshape(W.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ W.reshape(cout, C * K)).reshape(B, L, C, K)
    dxp = np.zeros((B, L + 2 * pad, C), dtype=dout.dtype)
    for k in range(K):
        dxp[:, k: k + L] += dcols[:, :, :, k]
    return dxp[:, pad: pad + L], dW, db


def _rowwise_linear(x, W, b):
    return np.stack([W @ row for row in x]) + b


def _mask_time(x, lengths):
    m = np.arange(x.shape[1])[None, :] < lengths[:, None]
    return x * m[:, :, None].astype(x.dtype)


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class ForwardResult:
    pooled: np.ndarray
    embeddings: np.ndarray
    logits: np.ndarray
    cache: dict = field(repr=False)
    conv_outputs: list = field(default_factory=list, repr=False)


def forward(params: dict, batch: Batch, cfg: NetConfig, keep_activations: bool = False) -> ForwardResult:
    x = batch.inputs.astype(params["conv1.weight"].dtype, copy=False)
    if x.shape[1] < MIN_LENGTH or batch.lengths.min() < MIN_LENGTH:
        raise ValueError(f"sequences shorter than {MIN_LENGTH} timesteps collapse under pooling")
    lengths = np.ascontiguousarray(batch.lengths, dtype=np.int64)
    x = _mask_time(x, lengths)
    layers = []
    conv_outputs = []
    for i in range(len(cfg.channels)):
        W, b = params[f"conv{i + 1}.weight"], params[f"conv{i + 1}.bias"]
        z, cols = _conv_forward(x, W, b, cfg.paddings[i], lengths)
        a = kernels.selu_mask_forward(z, lengths)
        entry = {"x_shape": x.shape, "cols": cols, "z": z, "a": a, "lengths": lengths}
        if keep_activations:
            conv_outputs.append(a)
        if i in cfg.pool_after and i != len(cfg.channels) - 1:
            entry["pre_pool_len"] = a.shape[1]
            lengths = lengths // 2
            a, arg = kernels.maxpool_forward(a, lengths)
            entry["arg"] = arg
            entry["pooled_lengths"] = lengths
        layers.append(entry)
        x = a
    # masked average pooling; per-item sums over the valid prefix only
    pooled = np.stack([x[b, : lengths[b]].sum(axis=0) / lengths[b] for b in range(x.shape[0])])
    emb = _rowwise_linear(pooled, params["fc_embed.weight"], params["fc_embed.bias"])
    logits = _rowwise_linear(pooled, params["fc_softmax.weight"], params["fc_softmax.bias"])
    cache = {"layers": layers, "final": x, "final_lengths": lengths, "pooled": pooled, "cfg": cfg}
    return ForwardResult(pooled, emb, logits, cache, conv_outputs)


def backward(params: dict, cache: dict, grad_embeddings: np.ndarray, grad_logits: np.ndarray) -> dict:
    """Gradients of ``sum(grad_embeddings * emb) + sum(grad_logits * logits)`` w.r.t. params."""
    cfg = cache["cfg"]
    pooled = cache["pooled"]
    B = pooled.shape[0]
    dtype = pooled.dtype
    ge = np.asarray(grad_embeddings, dtype=dtype)
    gl = np.asarray(grad_logits, dtype=dtype)
    if ge.shape != (B, cfg.embed_dim) or gl.shape != (B, cfg.n_classes):
        raise ValueError(f"upstream gradient shapes {ge.shape}, {gl.shape} do not match the cached batch")
    grads = {
        "fc_embed.weight": ge.T @ pooled,
        "fc_embed.bias": ge.sum(axis=0),
        "fc_softmax.weight": gl.T @ pooled,
        "fc_softmax.bias": gl.sum(axis=0),
    }
    dpooled = ge @ params["fc_embed.weight"] + gl @ params["fc_softmax.weight"]
    final, lengths = cache["final"], cache["final_lengths"]
    dx = np.zeros_like(final)
    for b in range(B):
        dx[b, : lengths[b]] = dpooled[b] / lengths[b]
    for i in reversed(range(len(cfg.channels))):
        entry = cache["layers"][i]
        if "arg" in entry:
            dx = kernels.maxpool_backward(dx, entry["arg"], entry["pooled_lengths"], entry["pre_pool_len"])
        dz = kernels.selu_mask_backward(dx, entry["z"], entry["a"], entry["lengths"])
        W = params[f"conv{i + 1}.weight"]
        dx, dW, db = _conv_backward(dz, entry["cols"], W, cfg.paddings[i], entry["x_shape"])
        grads[f"conv{i + 1}.weight"] = dW
        grads[f"conv{i + 1}.bias"] = db
    return grads


def embed(params: dict, cfg: NetConfig, sequences: Sequence, batch_size: int = 32) -> np.ndarray:
    """Embeddings for many feature sequences, batched by similar length."""
    order = np.argsort([np.asarray(getattr(s, "channels", s)).shape[1] for s in sequences], kind="stable")
    out = np.zeros((len(sequences), cfg.embed_dim), dtype=np.float64)
    dtype = params["conv1.weight"].dtype
    for start in range(0, len(order), batch_size):
        idx = order[start: start + batch_size]
        res = forward(params, make_batch([sequences[i] for i in idx], dtype=dtype), cfg)
        out[idx] = res.embeddings
    return out


# ---------------------------------------------------------------------------
# optimiser


def sgd_step(params: dict, grads: dict, velocity: dict, lr: float = 0.001, momentum: float = 0.9,
             weight_decay: float = 0.001) -> dict:
    """In-place SGD with momentum; decay is folded into the velocity for every tensor."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * p
        p -= lr * v
    return params


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line, then little-endian float32 tensors


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict, cfg: NetConfig, extra_tensors: Optional[dict] = None,
                    meta: Optional[dict] = None):
    tensors = dict(params)
    for k, v in (extra_tensors or {}).items():
        tensors[k] = v
    index, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = {"version": CHECKPOINT_VERSION, "arch": ARCH_TAG, "M": cfg.n_classes,
              "config": asdict(cfg), "tensor_index": index}
    if meta:
        header["meta"] = meta
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expect: Optional[NetConfig] = None):
    """Returns ``(params, cfg, extra_tensors, meta)``."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointError("missing header line")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION or header.get("arch") != ARCH_TAG:
        raise CheckpointError(f"unsupported checkpoint {header.get('arch')!r} v{header.get('version')}")
    cfg = NetConfig(**header["config"])
    payload = memoryview(raw)[nl + 1:]
    tensors = {}
    for item in header["tensor_index"]:
        n = int(np.prod(item["shape"])) if item["shape"] else 1
        start = item["offset"]
        if start + 4 * n > len(payload):
            raise CheckpointError(f"tensor {item['name']} runs past the end of the payload")
        arr = np.frombuffer(payload[start: start + 4 * n], dtype="<f4").reshape(item["shape"])
        tensors[item["name"]] = arr.astype(np.float32)
    shapes = cfg.shapes()
    if expect is not None:
        for name, shape in expect.shapes().items():
            got = tensors.get(name)
            if got is None or got.shape != shape:
                raise CheckpointError(f"tensor {name}: expected shape {shape}, got {None if got is None else got.shape}")
    params = {}
    for name, shape in shapes.items():
        if name not in tensors:
            raise CheckpointError(f"tensor {name} missing from checkpoint")
        if tensors[name].shape != shape:
            raise CheckpointError(f"tensor {name}: expected shape {shape}, got {tensors[name].shape}")
        params[name] = tensors.pop(name)
    return params, cfg, tensors, header.get("meta", {})
