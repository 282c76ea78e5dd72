"""Dataset ingestion, the virtual-signer corpus and corpus persistence."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lognormal import Component, ComponentParams, LognormalStroke, reconstruct_component
from .signature import Signature, read_canonical, write_canonical
from .synthesis import G1, G2, synthesize_signature

__all__ = [
    "ParseError", "parse_svc2004", "svc2004_label", "Corpus", "generate_virtual_corpus",
    "save_corpus", "load_corpus", "read_canonical", "write_canonical", "VIRTUAL_RANGES",
]

SVC_RATE = 100.0


class ParseError(ValueError):
    """Malformed input file; the message names the offending line."""


def parse_svc2004(data, signer: str = "", label: str = "genuine") -> Signature:
    """Parse one SVC2004 text file into pen-down components.

    Line 1 holds the point count; each following line is
    ``X Y timestamp button [azimuth altitude pressure]`` with integer fields.
    Components are maximal runs of ``button == 1``.  Timestamps are
    milliseconds and are kept (in seconds from the first pen-down sample) so
    that resampling can handle irregular spacing.  Pen-down runs of a single
    point carry no trajectory and are dropped.
    """
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode("ascii")
        except UnicodeDecodeError as exc:
            raise ParseError(f"non-ASCII input: {exc}") from None
    lines = [ln for ln in data.splitlines()]
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise ParseError("line 1: empty file")
    try:
        count = int(lines[0].strip())
    except ValueError:
        raise ParseError(f"line 1: point count must be an integer, got {lines[0].strip()!r}") from None
    if count < 0 or len(lines) - 1 != count:
        raise ParseError(f"line 1: header announces {count} points but {len(lines) - 1} follow")
    rows = []
    for no, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if len(fields) not in (4, 7):
            raise ParseError(f"line {no}: expected 4 or 7 fields, got {len(fields)}")
        try:
            vals = [int(f) for f in fields]
        except ValueError:
            raise ParseError(f"line {no}: non-integer field in {line.strip()!r}") from None
        if vals[3] not in (0, 1):
            raise ParseError(f"line {no}: button status must be 0 or 1, got {vals[3]}")
        if rows and vals[2] <= rows[-1][1][2]:
            raise ParseError(f"line {no}: timestamp {vals[2]} does not increase")
        rows.append((no, vals))
    down = [(no, v) for no, v in rows if v[3] == 1]
    if not down:
        raise ParseError(f"line {len(lines)}: no pen-down points")
    t_origin = down[0][1][2]
    comps, run = [], []
    for no, v in rows + [(None, None)]:
        if v is not None and v[3] == 1:
            run.append(v)
            continue
        if len(run) >= 2:
            arr = np.array(run, dtype=np.float64)
            comps.append(Component(arr[:, :2], SVC_RATE, times=(arr[:, 2] - t_origin) / 1000.0))
        run = []
    if not comps:
        raise ParseError(f"line {len(lines)}: every pen-down run has a single point")
    return Signature(signer, comps, SVC_RATE, label, source="svc2004")


def svc2004_label(filename: str) -> tuple:
    """``U<signer>S<k>.TXT`` -> (signer id, label); sessions 1-20 are genuine, 21-40 skilled forgeries."""
    m = re.fullmatch(r"U(\d+)S(\d+)(?:\.txt)?", Path(filename).name, flags=re.IGNORECASE)
    if not m:
        raise ParseError(f"unrecognised SVC2004 file name {filename!r}")
    k = int(m.group(2))
    return f"U{int(m.group(1))}", ("genuine" if k <= 20 else "skilled_forgery")


# ---------------------------------------------------------------------------
# corpus


@dataclass
class Corpus:
    signers: dict  # id -> {"genuine": [Signature], "forgery": [Signature]}
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for sid, entry in self.signers.items():
            if not entry.get("genuine"):
                raise ValueError(f"signer {sid!r} has no genuine signature")
            entry.setdefault("forgery", [])

    def counts(self) -> tuple:
        g = sum(len(e["genuine"]) for e in self.signers.values())
        f = sum(len(e["forgery"]) for e in self.signers.values())
        return g, f

    def subset(self, ids) -> "Corpus":
        return Corpus({s: self.signers[s] for s in ids}, dict(self.meta))


def save_corpus(corpus: Corpus, root) -> None:
    root = Path(root)
    for sid, entry in corpus.signers.items():
        for kind in ("genuine", "forgery"):
            d = root / sid / kind
            d.mkdir(parents=True, exist_ok=True)
            for i, sig in enumerate(entry[kind]):
                (d / f"{i:03d}.json").write_bytes(write_canonical(sig))


def load_corpus(root) -> Corpus:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory {root} does not exist")
    signers = {}
    for sd in sorted(p for p in root.iterdir() if p.is_dir()):
        entry = {}
        for kind in ("genuine", "forgery"):
            files = sorted((sd / kind).glob("*.json")) if (sd / kind).is_dir() else []
            entry[kind] = [read_canonical(f.read_bytes(), source=str(f)) for f in files]
        if entry["genuine"]:
            signers[sd.name] = entry
    if not signers:
        raise ValueError(f"no signer with genuine signatures under {root}")
    return Corpus(signers, {"root": str(root)})


# ---------------------------------------------------------------------------
# virtual signers

VIRTUAL_RANGES = {
    "components": (2, 4),
    "strokes": (4, 10),
    "mu": (-2.2, -1.0),
    "sigma": (0.1, 0.45),
    "D": (5.0, 60.0),
    "t0_gap": (0.02, 0.12),
    "theta_s": (-math.pi, math.pi),
    "turn": (-math.pi / 2, math.pi / 2),  # theta_e - theta_s
    "pen_up_dx": (5.0, 20.0),
    "pen_up_dy": (-10.0, 10.0),
}


def _master_component(rng: np.random.Generator, origin) -> Component:
    r = VIRTUAL_RANGES
    n = int(rng.integers(r["strokes"][0], r["strokes"][1] + 1))
    t0 = np.cumsum(rng.uniform(*r["t0_gap"], size=n))
    strokes = []
    for k in range(n):
        th = rng.uniform(*r["theta_s"])
        strokes.append(LognormalStroke(D=rng.uniform(*r["D"]), t0=float(t0[k]), mu=rng.uniform(*r["mu"]),
                                       sigma=rng.uniform(*r["sigma"]), theta_s=th,
                                       theta_e=th + rng.uniform(*r["turn"])))
    # the trajectory ends once every stroke is past mu + 2 sigma of its lognormal time
    duration = max(s.t0 + math.exp(s.mu + 2 * s.sigma) for s in strokes)
    m = int(round(duration * SVC_RATE)) + 1
    params = ComponentParams(strokes, np.full(m, float(origin[0])), np.full(m, float(origin[1])), SVC_RATE)
    comp = reconstruct_component(params)
    comp.params = params
    return comp


def master_signature(signer: str, rng: np.random.Generator) -> Signature:
    r = VIRTUAL_RANGES
    n = int(rng.integers(r["components"][0], r["components"][1] + 1))
    comps, origin = [], np.zeros(2)
    for _ in range(n):
        c = _master_component(rng, origin)
        comps.append(c)
        origin = np.array([c.x[-1] + rng.uniform(*r["pen_up_dx"]), rng.uniform(*r["pen_up_dy"])])
    return Signature(signer, comps, SVC_RATE, "genuine", source="virtual:master")


def generate_virtual_corpus(n_signers: int = 20, genuine_per_signer: int = 10, seed: int = 0,
                            forgeries_per_signer: int = None, keep_masters: bool = False) -> Corpus:
    """Random master signatures; genuines at G1 distortion, forgeries at G2 distortion.

    Each signer owns one spawned RNG stream, so signers are independent and
    the corpus is bitwise reproducible for a given seed.
    """
    if n_signers < 2:
        raise ValueError("n_signers must be >= 2")
    if genuine_per_signer < 1:
        raise ValueError("genuine_per_signer must be >= 1")
    n_forg = genuine_per_signer if forgeries_per_signer is None else forgeries_per_signer
    signers, masters = {}, {}
    for k, stream in enumerate(np.random.default_rng(seed).spawn(n_signers)):
        sid = f"v{k:03d}"
        m_rng, g_rng, f_rng = stream.spawn(3)
        master = master_signature(sid, m_rng)
        gen = [synthesize_signature(master, G1, c) for c in g_rng.spawn(genuine_per_signer)]
        forg = [synthesize_signature(master, G2, c) for c in f_rng.spawn(n_forg)]
        for s in gen:
            s.source = "virtual:genuine"
        for s in forg:
            s.label, s.source = "skilled_forgery", "virtual:forgery"
        signers[sid] = {"genuine": gen, "forgery": forg}
        masters[sid] = master
    meta = {"seed": seed, "rate": SVC_RATE, "source": "virtual"}
    if keep_masters:
        meta["masters"] = masters
    return Corpus(signers, meta)
