"""Resampling, filtering, virtual pen-ups and velocity features."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, sosfilt, sosfiltfilt

from .lognormal import ANALYSIS_RATE, Component, extract_parameters
from .signature import Signature

FEATURE_RATE = 100.0
CUTOFF_HZ = 10.0
FILTER_ORDER = 4
NORM_EPS = 1e-8


@dataclass
class FeatureSequence:
    channels: np.ndarray  # (3, L): v_x, v_y, v

    def __len__(self):
        return self.channels.shape[1]

    def to_text(self) -> str:
        return "".join(f"{a!r} {b!r} {c!r}\n" for a, b, c in self.channels.T.tolist())


def resample(component: Component, target_rate: float) -> Component:
    """Linear-interpolation resampling onto a uniform grid at ``target_rate``.

    Both endpoints are kept; the step is ``duration / round(duration * rate)``,
    i.e. the target rate up to rounding of the sample count.
    """
    if component.times is None and component.rate == target_rate:
        return Component(component.samples.copy(), target_rate)
    if component.times is not None:
        t = component.times - component.times[0]
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
    else:
        t = np.arange(len(component)) / component.rate
    duration = t[-1]
    n = max(int(round(duration * target_rate)) + 1, 2)
    tn = np.linspace(0.0, duration, n)
    xy = np.stack([np.interp(tn, t, component.x), np.interp(tn, t, component.y)], axis=1)
    xy[0], xy[-1] = component.samples[0], component.samples[-1]
    return Component(xy, target_rate)


def butter_sos(cutoff: float, rate: float, order: int = FILTER_ORDER) -> np.ndarray:
    if not 0 < cutoff < rate / 2:
        raise ValueError(f"cutoff {cutoff} Hz must lie in (0, Nyquist={rate / 2} Hz)")
    return butter(order, cutoff, btype="low", fs=rate, output="sos")


def lowpass(component: Component, cutoff: float = CUTOFF_HZ, order: int = FILTER_ORDER) -> Component:
    """Zero-phase (forward-backward) Butterworth lowpass of x and y."""
    if component.times is not None:
        raise ValueError("lowpass needs uniform sampling; resample first")
    sos = butter_sos(cutoff, component.rate, order)
    n = len(component)
    padlen = min(3 * (2 * len(sos) + 1), n - 1)
    xy = sosfiltfilt(sos, component.samples, axis=0, padlen=padlen)
    return Component(xy, component.rate)


def lowpass_single_pass(component: Component, cutoff: float = CUTOFF_HZ, order: int = FILTER_ORDER) -> Component:
    """Causal single pass of the same filter (for response checks)."""
    sos = butter_sos(cutoff, component.rate, order)
    return Component(sosfilt(sos, component.samples, axis=0), component.rate)


def join_components(signature: Signature) -> Component:
    """Concatenate pen-downs, bridging gaps with constant-speed straight lines.

    The bridge speed is the mean per-sample displacement over all pen-down
    samples; a gap of ``g`` gets ``ceil(g / step) - 1`` interior points
    spaced exactly ``step`` apart.
    """
    comps = signature.components
    if len(comps) == 1:
        return Component(comps[0].samples.copy(), comps[0].rate)
    steps = sum(len(c) - 1 for c in comps)
    path = sum(float(np.sum(np.hypot(*np.diff(c.samples, axis=0).T))) for c in comps)
    step = path / steps if steps else 0.0
    parts = [comps[0].samples]
    for prev, nxt in zip(comps[:-1], comps[1:]):
        a, b = prev.samples[-1], nxt.samples[0]
        gap = float(np.hypot(*(b - a)))
        if step > 0 and gap > step:
            k = int(math.ceil(gap / step - 1e-9)) - 1
            if k > 0:
                direction = (b - a) / gap
                parts.append(a + np.outer(np.arange(1, k + 1) * step, direction))
        parts.append(nxt.samples)
    return Component(np.concatenate(parts), signature.rate)


def velocity_channels(component: Component) -> np.ndarray:
    """Raw central-difference velocities ``(v_x, v_y, v)`` with replicated ends."""
    xy = component.samples
    padded = np.concatenate([xy[:1], xy, xy[-1:]])
    v = (padded[2:] - padded[:-2]) / 2.0
    return np.stack([v[:, 0], v[:, 1], np.hypot(v[:, 0], v[:, 1])])


def features(component: Component) -> FeatureSequence:
    """Per-channel z-normalised velocity features; constant channels become zeros."""
    if len(component) < 3:
        raise ValueError(f"features need >= 3 samples, got {len(component)}")
    raw = velocity_channels(component)
    mean = raw.mean(axis=1, keepdims=True)
    std = raw.std(axis=1, keepdims=True)
    out = np.where(std < NORM_EPS, 0.0, (raw - mean) / np.where(std < NORM_EPS, 1.0, std))
    return FeatureSequence(out)


# ---------------------------------------------------------------------------
# pipelines


def prepare_for_extraction(signature: Signature, cutoff: float = CUTOFF_HZ) -> Signature:
    comps = [lowpass(resample(c, ANALYSIS_RATE), cutoff) for c in signature.components]
    return Signature(signature.signer, comps, ANALYSIS_RATE, signature.label, signature.source)


def extract_signature(signature: Signature, cutoff: float = CUTOFF_HZ, **kwargs) -> Signature:
    """Resample to the analysis rate, filter, and attach stroke parameters to every component."""
    prepared = prepare_for_extraction(signature, cutoff)
    for c in prepared.components:
        c.params = extract_parameters(c, **kwargs)
    return prepared


def real_signature_features(signature: Signature, cutoff: float = CUTOFF_HZ) -> FeatureSequence:
    """Recorded signature -> 200 Hz, lowpass, 100 Hz, joined, features."""
    prepared = prepare_for_extraction(signature, cutoff)
    comps = [resample(c, FEATURE_RATE) for c in prepared.components]
    sig = Signature(signature.signer, comps, FEATURE_RATE, signature.label, signature.source)
    return features(join_components(sig))


def synthetic_signature_features(signature: Signature) -> FeatureSequence:
    """Synthesised signature (already smooth, at 100 Hz) -> joined features."""
    if signature.rate != FEATURE_RATE:
        comps = [resample(c, FEATURE_RATE) for c in signature.components]
        signature = Signature(signature.signer, comps, FEATURE_RATE, signature.label, signature.source)
    return features(join_components(signature))
