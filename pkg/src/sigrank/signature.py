"""The ``Signature`` container and its canonical JSON encoding."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .lognormal import Component

LABELS = ("genuine", "skilled_forgery")


class SchemaError(ValueError):
    """Malformed canonical signature document."""


@dataclass
class Signature:
    signer: str
    components: list
    rate: float = 100.0
    label: str = "genuine"
    source: str = ""
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.components:
            raise ValueError("a signature needs at least one component")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        for c in self.components:
            if c.rate != self.rate:
                raise ValueError("all components must share the signature rate")

    @property
    def n_samples(self) -> int:
        return sum(len(c) for c in self.components)

    @property
    def has_params(self) -> bool:
        return all(c.params is not None for c in self.components)


def signature_to_json(sig: Signature) -> dict:
    return {
        "signer": sig.signer,
        "label": sig.label,
        "rate": float(sig.rate),
        "components": [c.samples.tolist() for c in sig.components],
    }


def signature_from_json(obj, source: str = "") -> Signature:
    if not isinstance(obj, dict):
        raise SchemaError("canonical signature must be a JSON object")
    for key in ("signer", "label", "rate", "components"):
        if key not in obj:
            raise SchemaError(f"missing key {key!r}")
    rate = obj["rate"]
    if not isinstance(rate, (int, float)) or isinstance(rate, bool) or not rate > 0:
        raise SchemaError(f"rate must be a positive number, got {rate!r}")
    if obj["label"] not in LABELS:
        raise SchemaError(f"label must be one of {LABELS}, got {obj['label']!r}")
    comps = obj["components"]
    if not isinstance(comps, list) or not comps:
        raise SchemaError("components must be a non-empty list")
    out = []
    for k, pts in enumerate(comps):
        try:
            arr = np.array(pts, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"component {k}: {exc}") from None
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise SchemaError(f"component {k}: expected a list of [x, y] pairs")
        if len(arr) < 2:
            raise SchemaError(f"component {k}: needs >= 2 points, got {len(arr)}")
        if not np.all(np.isfinite(arr)):
            raise SchemaError(f"component {k}: non-finite coordinate")
        out.append(Component(arr, float(rate)))
    return Signature(str(obj["signer"]), out, float(rate), obj["label"], source)


def write_canonical(sig: Signature) -> bytes:
    # json uses repr() for floats, which round-trips every 64-bit value
    return json.dumps(signature_to_json(sig), separators=(",", ":")).encode("utf-8")


def read_canonical(data, source: str = "") -> Signature:
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    return signature_from_json(obj, source)
