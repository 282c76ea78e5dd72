"""Distortion-controlled synthesis of signatures from extracted strokes.

Stroke parameters of a component are perturbed with one random draw per
component (shared by all of its strokes): multiplicative for ``D``, ``t0``,
``mu`` and ``sigma``, additive for the two angles.  Two presets give a low
distortion level (``G1``, augmented genuines) and a medium one (``G2``,
synthetic skilled forgeries).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .lognormal import ComponentParams, LognormalStroke, SIGMA_FLOOR, reconstruct_component
from .signature import Signature, read_canonical, write_canonical

Interval = tuple

SYNTH_RATE = 100.0


class MissingParametersError(ValueError):
    """Template components have not been through extraction."""


def _check_intervals(name, intervals):
    if not intervals:
        raise ValueError(f"{name}: empty interval set")
    for lo, hi in intervals:
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ValueError(f"{name}: bad interval [{lo}, {hi}]")


def sample_union(intervals: Sequence[Interval], rng: np.random.Generator) -> float:
    """Uniform draw over a union of disjoint closed intervals."""
    lengths = np.array([hi - lo for lo, hi in intervals], dtype=np.float64)
    if lengths.sum() <= 0:
        lo, _ = intervals[int(rng.integers(len(intervals)))]
        return float(lo)
    k = int(rng.choice(len(intervals), p=lengths / lengths.sum()))
    lo, hi = intervals[k]
    return float(rng.uniform(lo, hi))


@dataclass(frozen=True)
class DistortionLevel:
    D: tuple
    t0: tuple
    mu: tuple
    sigma: tuple
    theta_s: tuple
    theta_e: tuple
    name: str = "custom"

    def __post_init__(self):
        for key in ("D", "t0", "mu", "sigma"):
            _check_intervals(key, getattr(self, key))
        for key in ("theta_s", "theta_e"):
            _check_intervals(key, [getattr(self, key)])

    def draw(self, rng: np.random.Generator) -> dict:
        return {
            "D": sample_union(self.D, rng),
            "t0": sample_union(self.t0, rng),
            "mu": sample_union(self.mu, rng),
            "sigma": sample_union(self.sigma, rng),
            "theta_s": sample_union([self.theta_s], rng),
            "theta_e": sample_union([self.theta_e], rng),
        }

    def to_json(self) -> dict:
        return {"name": self.name, "D": self.D, "t0": self.t0, "mu": self.mu, "sigma": self.sigma,
                "theta_s": self.theta_s, "theta_e": self.theta_e}


# admissible relative variation (low, high) per parameter
ADMISSIBLE = {
    "D": (-0.1000, 0.1000),
    "t0": (-0.0825, 0.0850),
    "mu": (-0.3950, 0.3775),
    "sigma": (-0.3250, 0.2875),
}


def _inner(key, a):
    lo, hi = ADMISSIBLE[key]
    return ((a * lo, a * hi),)


def _band(key, a, b):
    lo, hi = ADMISSIBLE[key]
    return ((b * lo, a * lo), (a * hi, b * hi))


G1 = DistortionLevel(
    D=_inner("D", 0.25), t0=_inner("t0", 0.25), mu=_inner("mu", 0.17), sigma=_inner("sigma", 0.25),
    theta_s=(-0.10, 0.10), theta_e=(-0.10, 0.10), name="G1",
)
G2 = DistortionLevel(
    D=_band("D", 0.40, 0.65), t0=_band("t0", 0.40, 0.65), mu=_band("mu", 0.27, 0.43),
    sigma=_band("sigma", 0.40, 0.65), theta_s=(-0.20, 0.20), theta_e=(-0.20, 0.20), name="G2",
)
IDENTITY = DistortionLevel(
    D=((0.0, 0.0),), t0=((0.0, 0.0),), mu=((0.0, 0.0),), sigma=((0.0, 0.0),),
    theta_s=(0.0, 0.0), theta_e=(0.0, 0.0), name="identity",
)
PRESETS = {"G1": G1, "G2": G2, "identity": IDENTITY}


def apply_draw(params: ComponentParams, r: dict) -> ComponentParams:
    strokes = []
    for s in params.strokes:
        strokes.append(LognormalStroke(
            D=s.D * (1 + r["D"]),
            t0=s.t0 * (1 + r["t0"]),
            mu=s.mu * (1 + r["mu"]),
            sigma=max(s.sigma * (1 + r["sigma"]), SIGMA_FLOOR),
            theta_s=s.theta_s + r["theta_s"],
            theta_e=s.theta_e + r["theta_e"],
        ))
    return ComponentParams(strokes, params.residual_x, params.residual_y, params.rate)


def perturb_parameters(params: ComponentParams, level: DistortionLevel, rng: np.random.Generator) -> ComponentParams:
    """One draw per component, applied to every stroke; residuals untouched."""
    return apply_draw(params, level.draw(rng))


def _activity_end(params: ComponentParams) -> float:
    if not params.strokes:
        return 0.0
    return max(s.t0 + math.exp(s.mu + 3 * s.sigma) for s in params.strokes)


def synthesize_component(params: ComponentParams, level: DistortionLevel, rng: np.random.Generator,
                         rate: float = SYNTH_RATE):
    """Perturb and rebuild one component; the residual is stretched with the strokes."""
    new = perturb_parameters(params, level, rng)
    duration = (len(params.residual_x) - 1) / params.rate
    end, new_end = _activity_end(params), _activity_end(new)
    if end > 0 and new_end > 0:
        duration *= new_end / end
    return reconstruct_component(new, rate, duration)


def synthesize_signature(template: Signature, level: DistortionLevel, rng: np.random.Generator,
                         rate: float = SYNTH_RATE) -> Signature:
    """New signature with every component independently perturbed.

    Each component draws from its own child stream of ``rng`` (one
    ``Generator.spawn`` child per component, in component order).
    """
    if not template.has_params:
        raise MissingParametersError(
            "template components have no stroke parameters; run extraction first "
            "(sigrank.preprocess.extract_signature)")
    children = rng.spawn(len(template.components))
    comps = [synthesize_component(c.params, level, child, rate) for c, child in zip(template.components, children)]
    return Signature(template.signer, comps, rate, template.label, source=f"synth:{level.name}")


@dataclass(frozen=True)
class SyntheticGroupSpec:
    g1_size: int = 5
    g2_size: int = 10
    pool_size: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.g1_size < 1 or self.g2_size < 1:
            raise ValueError("group sizes must be >= 1")
        if self.pool_size < max(self.g1_size, self.g2_size):
            raise ValueError("pool_size must be >= max(g1_size, g2_size)")


def build_pools(template: Signature, spec: SyntheticGroupSpec = SyntheticGroupSpec(),
                g1: DistortionLevel = G1, g2: DistortionLevel = G2):
    """Offline pools: ``pool_size`` G1-level and ``pool_size`` G2-level signatures."""
    streams = np.random.default_rng(spec.seed).spawn(2 * spec.pool_size)
    p1 = [synthesize_signature(template, g1, streams[i]) for i in range(spec.pool_size)]
    p2 = [synthesize_signature(template, g2, streams[spec.pool_size + i]) for i in range(spec.pool_size)]
    return p1, p2


def draw_groups(p1: list, p2: list, spec: SyntheticGroupSpec, rng: np.random.Generator):
    """Sample ``g1_size`` items of P1 and ``g2_size`` of P2 without replacement."""
    i1 = rng.choice(len(p1), size=spec.g1_size, replace=False)
    i2 = rng.choice(len(p2), size=spec.g2_size, replace=False)
    return [p1[i] for i in i1], [p2[i] for i in i2]


def save_pools(directory, p1: list, p2: list, spec: SyntheticGroupSpec, g1: DistortionLevel = G1,
               g2: DistortionLevel = G2):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for prefix, pool in (("p1", p1), ("p2", p2)):
        for i, sig in enumerate(pool):
            (d / f"{prefix}_{i:03d}.json").write_bytes(write_canonical(sig))
    manifest = {"seed": spec.seed, "pool_size": spec.pool_size, "g1_size": spec.g1_size,
                "g2_size": spec.g2_size, "presets": {"p1": g1.to_json(), "p2": g2.to_json()}}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_pools(directory):
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    n = manifest["pool_size"]
    p1 = [read_canonical((d / f"p1_{i:03d}.json").read_bytes()) for i in range(n)]
    p2 = [read_canonical((d / f"p2_{i:03d}.json").read_bytes()) for i in range(n)]
    return p1, p2, manifest
