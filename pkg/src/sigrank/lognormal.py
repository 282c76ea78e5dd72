"""Sigma-Lognormal stroke model: evaluation, reconstruction and extraction.

A component's pen-tip velocity is the vector sum of lognormal impulse
responses ("strokes").  Each stroke is ``(D, t0, mu, sigma, theta_s,
theta_e)``; its direction moves linearly from ``theta_s`` to ``theta_e`` as
the travelled fraction of ``D`` goes from 0 to 1.  Because that fraction is
the lognormal CDF, the displacement of a stroke integrates in closed form
(an arc of a circle), so reconstruction here is exact rather than quadrature
based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq, least_squares
from scipy.special import ndtr

SQRT_2PI = math.sqrt(2.0 * math.pi)
ANALYSIS_RATE = 200.0
MIN_EXTRACT_SAMPLES = 10
SIGMA_FLOOR = 1e-3


class InvalidParameterError(ValueError):
    """Raised for stroke parameters outside the model's domain."""


@dataclass(frozen=True)
class LognormalStroke:
    D: float
    t0: float
    mu: float
    sigma: float
    theta_s: float
    theta_e: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidParameterError(f"sigma must be > 0, got {self.sigma}")
        if not self.D > 0:
            raise InvalidParameterError(f"D must be > 0, got {self.D}")

    def as_array(self) -> np.ndarray:
        return np.array([self.D, self.t0, self.mu, self.sigma, self.theta_s, self.theta_e])

    @classmethod
    def from_array(cls, row: Sequence[float]) -> "LognormalStroke":
        return cls(*(float(v) for v in row))

    @property
    def peak_time(self) -> float:
        return self.t0 + math.exp(self.mu - self.sigma**2)

    @property
    def peak_speed(self) -> float:
        return self.D * math.exp(self.sigma**2 / 2 - self.mu) / (SQRT_2PI * self.sigma)


@dataclass
class ComponentParams:
    """Strokes of one pen-down plus the residual trajectory they leave out.

    ``residual_x``/``residual_y`` are sampled at ``rate`` and start at t=0.
    """

    strokes: list
    residual_x: np.ndarray
    residual_y: np.ndarray
    rate: float = ANALYSIS_RATE
    snr: Optional[float] = None

    def __post_init__(self):
        self.residual_x = np.asarray(self.residual_x, dtype=np.float64)
        self.residual_y = np.asarray(self.residual_y, dtype=np.float64)
        if self.residual_x.shape != self.residual_y.shape:
            raise ValueError("residual_x and residual_y must have the same length")
        self.strokes = sorted(self.strokes, key=lambda s: s.t0)

    def stroke_array(self) -> np.ndarray:
        if not self.strokes:
            return np.zeros((0, 6))
        return np.stack([s.as_array() for s in self.strokes])

    def to_json(self) -> dict:
        return {
            "strokes": [[float(v) for v in s.as_array()] for s in self.strokes],
            "residual_x": self.residual_x.tolist(),
            "residual_y": self.residual_y.tolist(),
            "rate": float(self.rate),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ComponentParams":
        strokes = [LognormalStroke.from_array(row) for row in obj["strokes"]]
        return cls(strokes, obj["residual_x"], obj["residual_y"], float(obj.get("rate", ANALYSIS_RATE)))


@dataclass
class Component:
    """One pen-down trajectory.

    ``samples`` is an ``(n, 2)`` array.  ``times`` is only set for irregularly
    sampled input (e.g. straight from a tablet file); otherwise sample ``k``
    sits at ``k / rate``.
    """

    samples: np.ndarray
    rate: float
    params: Optional[ComponentParams] = None
    times: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1, 2)
        if len(self.samples) < 2:
            raise ValueError(f"a component needs >= 2 samples, got {len(self.samples)}")
        if not self.rate > 0:
            raise ValueError(f"rate must be > 0, got {self.rate}")
        if self.times is not None:
            self.times = np.asarray(self.times, dtype=np.float64)
            if self.times.shape != (len(self.samples),):
                raise ValueError("times must have one entry per sample")

    def __len__(self):
        return len(self.samples)

    @property
    def x(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.samples[:, 1]

    @property
    def duration(self) -> float:
        if self.times is not None:
            return float(self.times[-1] - self.times[0])
        return (len(self.samples) - 1) / self.rate


# ---------------------------------------------------------------------------
# single-stroke evaluation


def _check(stroke: LognormalStroke):
    if not stroke.sigma > 0:
        raise InvalidParameterError(f"sigma must be > 0, got {stroke.sigma}")


def stroke_speed(stroke: LognormalStroke, t):
    """Lognormal speed profile; zero for ``t <= t0``."""
    _check(stroke)
    t = np.asarray(t, dtype=np.float64)
    dt = t - stroke.t0
    out = np.zeros_like(dt)
    pos = dt > 0
    lx = np.log(dt[pos])
    out[pos] = stroke.D / (SQRT_2PI * stroke.sigma * dt[pos]) * np.exp(-((lx - stroke.mu) ** 2) / (2 * stroke.sigma**2))
    return out if out.ndim else float(out)


def stroke_progress(stroke: LognormalStroke, t):
    """Fraction of ``D`` travelled by time ``t`` (the lognormal CDF)."""
    _check(stroke)
    t = np.asarray(t, dtype=np.float64)
    dt = t - stroke.t0
    out = np.zeros_like(dt)
    pos = dt > 0
    out[pos] = ndtr((np.log(dt[pos]) - stroke.mu) / stroke.sigma)
    return out if out.ndim else float(out)


def stroke_direction(stroke: LognormalStroke, t):
    return stroke.theta_s + (stroke.theta_e - stroke.theta_s) * stroke_progress(stroke, t)


# ---------------------------------------------------------------------------
# vectorised multi-stroke evaluation on an (k, 6) parameter array


def _progress_and_speed(P: np.ndarray, t: np.ndarray):
    D, t0, mu, sigma = P[:, 0:1], P[:, 1:2], P[:, 2:3], P[:, 3:4]
    dt = t[None, :] - t0
    pos = dt > 0
    safe = np.where(pos, dt, 1.0)
    z = (np.log(safe) - mu) / sigma
    speed = np.where(pos, D / (SQRT_2PI * sigma * safe) * np.exp(-0.5 * z * z), 0.0)
    prog = np.where(pos, ndtr(z), 0.0)
    return prog, speed


def strokes_velocity(P: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Summed velocity vectors of all strokes, shape ``(len(t), 2)``."""
    t = np.asarray(t, dtype=np.float64)
    if len(P) == 0:
        return np.zeros((len(t), 2))
    prog, speed = _progress_and_speed(P, t)
    phi = P[:, 4:5] + (P[:, 5:6] - P[:, 4:5]) * prog
    return np.stack([(speed * np.cos(phi)).sum(0), (speed * np.sin(phi)).sum(0)], axis=1)


def strokes_displacement(P: np.ndarray, t: np.ndarray, origin: float = 0.0) -> np.ndarray:
    """Exact integral of :func:`strokes_velocity` from ``origin`` to each ``t``.

    With ``u`` the stroke progress, ``|v| dt = D du`` and the direction is
    ``theta_s + delta * u``, so each stroke contributes
    ``D * (u - u0) * sinc(delta (u - u0) / 2)`` along the mean chord angle.
    """
    t = np.asarray(t, dtype=np.float64)
    if len(P) == 0:
        return np.zeros((len(t), 2))
    u, _ = _progress_and_speed(P, t)
    u0, _ = _progress_and_speed(P, np.array([origin], dtype=np.float64))
    D, ts, delta = P[:, 0:1], P[:, 4:5], P[:, 5:6] - P[:, 4:5]
    du = u - u0
    chord = D * du * np.sinc(delta * du / (2 * np.pi))
    ang = ts + delta * (u + u0) / 2
    return np.stack([(chord * np.cos(ang)).sum(0), (chord * np.sin(ang)).sum(0)], axis=1)


def _resample_linear(seq: np.ndarray, n: int) -> np.ndarray:
    if len(seq) == n:
        return seq.copy()
    if len(seq) == 1:
        return np.full(n, seq[0])
    src = np.linspace(0.0, 1.0, len(seq))
    dst = np.linspace(0.0, 1.0, n)
    return np.interp(dst, src, seq)


def reconstruct_component(params: ComponentParams, rate: Optional[float] = None,
                          duration: Optional[float] = None) -> Component:
    """Rebuild a trajectory from strokes plus residuals, sampled at ``rate``.

    The sample count is ``round(duration * rate) + 1``; ``duration`` defaults
    to the span of the residual sequence at ``params.rate``.  Residuals are
    linearly resampled onto the output grid.
    """
    rate = params.rate if rate is None else float(rate)
    n_res = len(params.residual_x)
    if not params.strokes and n_res == 0:
        raise ValueError("nothing to reconstruct: no strokes and no residuals")
    if duration is None:
        if n_res < 2:
            raise ValueError("duration is required when residuals are absent")
        duration = (n_res - 1) / params.rate
    n = int(round(duration * rate)) + 1
    n = max(n, 2)
    t = np.arange(n) / rate
    xy = strokes_displacement(params.stroke_array(), t)
    if n_res:
        xy[:, 0] += _resample_linear(params.residual_x, n)
        xy[:, 1] += _resample_linear(params.residual_y, n)
    return Component(xy, rate)


# ---------------------------------------------------------------------------
# extraction

def _inflection_offsets(sigma: float):
    """Offsets ``w`` with ``t - t0 = exp(mu + sigma*w)`` at the two inflection points."""
    r = math.sqrt(sigma * sigma + 4.0)
    return (-3.0 * sigma - r) / 2.0, (-3.0 * sigma + r) / 2.0


def _asymmetry(sigma: float) -> float:
    w1, w3 = _inflection_offsets(sigma)
    a1, a2, a3 = math.exp(sigma * w1), math.exp(-sigma * sigma), math.exp(sigma * w3)
    return (a3 - a2) / (a2 - a1)


def lognormal_from_characteristic_times(t1: float, t2: float, t3: float, v_peak: float):
    """Solve ``(D, t0, mu, sigma)`` from inflection/peak times and peak speed.

    Returns ``None`` when the times are not consistent with any lognormal.
    """
    if not (t1 < t2 < t3):
        return None
    ratio = (t3 - t2) / (t2 - t1)
    lo, hi = 0.01, 3.0
    f_lo, f_hi = _asymmetry(lo) - ratio, _asymmetry(hi) - ratio
    if f_lo >= 0:
        sigma = lo
    elif f_hi <= 0:
        sigma = hi
    else:
        sigma = brentq(lambda s: _asymmetry(s) - ratio, lo, hi, xtol=1e-12)
    w1, w3 = _inflection_offsets(sigma)
    emu = (t3 - t1) / (math.exp(sigma * w3) - math.exp(sigma * w1))
    mu = math.log(emu)
    t0 = t2 - math.exp(mu - sigma * sigma)
    D = v_peak * SQRT_2PI * sigma * math.exp(mu - sigma * sigma / 2)
    return D, t0, mu, sigma


def _zero_crossing(d2: np.ndarray, i: int, j: int) -> float:
    """Linear interpolation of the sign change of ``d2`` between ``i`` and ``j``."""
    a, b = d2[i], d2[j]
    if a == b:
        return float(i)
    return i + (j - i) * a / (a - b)


def _find_inflections(sp: np.ndarray, k: int):
    d2 = np.gradient(np.gradient(sp))
    n = len(sp)
    left = right = None
    i = k
    while i > 0:
        if d2[i - 1] >= 0 > d2[i] or (d2[i - 1] > 0 and d2[i] <= 0):
            left = _zero_crossing(d2, i - 1, i)
            break
        i -= 1
    i = k
    while i < n - 1:
        if d2[i] < 0 <= d2[i + 1] or (d2[i] <= 0 < d2[i + 1]):
            right = _zero_crossing(d2, i, i + 1)
            break
        i += 1
    return left, right


def _refine_peak(sp: np.ndarray, k: int):
    if 0 < k < len(sp) - 1:
        a, b, c = sp[k - 1], sp[k], sp[k + 1]
        den = a - 2 * b + c
        if den < 0:
            off = 0.5 * (a - c) / den
            return k + off, b - 0.25 * (a - c) * off
    return float(k), sp[k]


def _fit_angles(P4: np.ndarray, t: np.ndarray, v: np.ndarray, lo: int, hi: int):
    """Weighted fit of ``phi = theta_s + delta * progress`` over samples lo..hi."""
    sl = slice(max(lo, 0), min(hi, len(t) - 1) + 1)
    vv = v[sl]
    w = np.einsum("ij,ij->i", vv, vv)
    phi = np.unwrap(np.arctan2(vv[:, 1], vv[:, 0]))
    k_peak = int(np.argmax(w))
    if len(phi) < 3 or w.sum() <= 0:
        return float(phi[k_peak]), float(phi[k_peak])
    u, _ = _progress_and_speed(np.array([[*P4, 0.0, 0.0]]), t[sl])
    u = u[0]
    X = np.stack([np.ones_like(u), u], axis=1)
    sw = np.sqrt(w)
    (ts, delta), *_ = np.linalg.lstsq(X * sw[:, None], phi * sw, rcond=None)
    # keep theta_s in (-pi, pi]
    shift = 2 * np.pi * np.round(ts / (2 * np.pi))
    return float(ts - shift), float(ts + delta - shift)


def _fit_single(t: np.ndarray, v: np.ndarray, sp: np.ndarray, k: int, rate: float):
    left, right = _find_inflections(sp, k)
    kp, vp = _refine_peak(sp, k)
    dt = 1.0 / rate
    if left is None or right is None or not (left < kp < right):
        return None
    est = lognormal_from_characteristic_times(left * dt, kp * dt, right * dt, vp)
    if est is None:
        return None
    D, t0, mu, sigma = est
    # local least-squares polish of the speed profile over the stroke core
    lo = max(int(math.floor(left - (kp - left))), 0)
    hi = min(int(math.ceil(right + 0.5 * (right - kp))), len(t) - 1)
    if hi - lo >= 5:
        tw, sw = t[lo:hi + 1], sp[lo:hi + 1]

        def res(p):
            return _progress_and_speed(np.array([[math.exp(p[0]), p[1], p[2], math.exp(p[3])]]), tw)[1][0] - sw

        x0 = np.array([math.log(max(D, 1e-12)), t0, mu, math.log(sigma)])
        try:
            fit = least_squares(res, x0, method="lm", max_nfev=200)
            if np.all(np.isfinite(fit.x)) and np.sum(fit.fun**2) <= np.sum(res(x0) ** 2):
                D, t0, mu, sigma = math.exp(fit.x[0]), fit.x[1], fit.x[2], math.exp(fit.x[3])
        except (ValueError, FloatingPointError):
            pass
    if not (sigma > SIGMA_FLOOR and D > 0 and np.isfinite([D, t0, mu, sigma]).all()):
        return None
    ts, te = _fit_angles(np.array([D, t0, mu, sigma]), t, v, int(math.floor(left)), int(math.ceil(right)))
    return np.array([D, t0, mu, sigma, ts, te])


def _velocity_jacobian(P: np.ndarray, t: np.ndarray) -> np.ndarray:
    """d(velocity)/d(log D, t0, mu, log sigma, theta_s, theta_e), rows interleaved (vx, vy)."""
    k, n = len(P), len(t)
    D, t0, mu, sigma = P[:, 0:1], P[:, 1:2], P[:, 2:3], P[:, 3:4]
    ts, te = P[:, 4:5], P[:, 5:6]
    dt = t[None, :] - t0
    pos = dt > 0
    x = np.where(pos, dt, 1.0)
    z = (np.log(x) - mu) / sigma
    pdf = np.where(pos, np.exp(-0.5 * z * z) / SQRT_2PI, 0.0)
    s = D / (sigma * x) * pdf
    u = np.where(pos, ndtr(z), 0.0)
    delta = te - ts
    phi = ts + delta * u
    c, sn = np.cos(phi), np.sin(phi)
    ds = [s, s * (1 + z / sigma) / x, s * z / sigma, s * (z * z - 1), np.zeros_like(s), np.zeros_like(s)]
    dphi = [np.zeros_like(s), -delta * pdf / (sigma * x), -delta * pdf / sigma, -delta * pdf * z,
            np.where(pos, 1 - u, 1.0), u]
    J = np.empty((n, 2, k, 6))
    for q in range(6):
        J[:, 0, :, q] = (ds[q] * c - s * sn * dphi[q]).T
        J[:, 1, :, q] = (ds[q] * sn + s * c * dphi[q]).T
    return J.reshape(2 * n, 6 * k)


def _joint_refine(P: np.ndarray, t: np.ndarray, v: np.ndarray, max_nfev: int = 40) -> np.ndarray:
    """Least-squares polish of all strokes against the observed velocity."""
    if len(P) == 0:
        return P
    k = len(P)

    def unpack(p):
        q = p.reshape(k, 6).copy()
        q[:, 0] = np.exp(q[:, 0])
        q[:, 3] = np.exp(q[:, 3])
        return q

    def res(p):
        return (strokes_velocity(unpack(p), t) - v).ravel()

    def jac(p):
        return _velocity_jacobian(unpack(p), t)

    x0 = P.copy()
    x0[:, 0] = np.log(x0[:, 0])
    x0[:, 3] = np.log(x0[:, 3])
    x0 = x0.ravel()
    r0 = np.sum(res(x0) ** 2)
    try:
        # trial steps may overflow; trf shrinks the trust region on non-finite residuals
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            fit = least_squares(res, x0, jac=jac, method="trf", x_scale="jac", max_nfev=max_nfev)
    except (ValueError, FloatingPointError):
        return P
    if not np.all(np.isfinite(fit.x)) or np.sum(fit.fun**2) > r0:
        return P
    out = unpack(fit.x)
    if np.any(out[:, 3] < SIGMA_FLOOR):
        return P
    return out


def _velocity(xy: np.ndarray, rate: float) -> np.ndarray:
    return np.gradient(xy, 1.0 / rate, axis=0)


def reconstruction_snr(component: Component, params: ComponentParams) -> float:
    """``10 log10(sum |v|^2 / sum |v - v_strokes|^2)`` on sampled velocities (dB)."""
    n = len(component)
    t = np.arange(n) / component.rate
    v = _velocity(component.samples, component.rate)
    vr = _velocity(strokes_displacement(params.stroke_array(), t), component.rate)
    num = float(np.sum(v**2))
    den = float(np.sum((v - vr) ** 2))
    if den == 0.0:
        return math.inf
    if num == 0.0:
        return -math.inf
    return 10.0 * math.log10(num / den)


def extract_parameters(component: Component, noise_floor: float = 0.01, stop_energy: float = 0.05,
                       max_strokes: int = 64, target_snr: float = 25.0, max_passes: int = 4) -> ComponentParams:
    """Estimate lognormal strokes of a uniformly sampled component.

    Greedy peak-by-peak estimation: take the highest remaining speed peak,
    solve ``(t0, mu, sigma)`` from its inflection points, ``D`` from its
    height, fit the angles, subtract its velocity and repeat until the
    remaining energy drops below ``stop_energy`` of the original.  Each pass
    ends with a joint least-squares polish; passes repeat while the SNR is
    under ``target_snr``.
    """
    xy = component.samples
    rate = component.rate
    n = len(xy)
    empty = ComponentParams([], xy[:, 0].copy(), xy[:, 1].copy(), rate)
    if n < MIN_EXTRACT_SAMPLES:
        empty.snr = reconstruction_snr(component, empty)
        return empty
    t = np.arange(n) / rate
    v_obs = _velocity(xy, rate)
    e0 = float(np.sum(v_obs**2))
    peak0 = float(np.sqrt(np.max(np.sum(v_obs**2, axis=1))))
    if peak0 <= 1e-12:
        empty.snr = reconstruction_snr(component, empty)
        return empty
    floor = noise_floor * peak0

    P = np.zeros((0, 6))
    best_P, best_snr = P, 0.0
    for _ in range(max_passes):
        v = v_obs - strokes_velocity(P, t)
        rejected = set()
        added = 0
        while len(P) < max_strokes:
            if np.sum(v**2) < stop_energy * e0:
                break
            sp = np.sqrt(np.sum(v**2, axis=1))
            inner = (sp[1:-1] >= sp[:-2]) & (sp[1:-1] > sp[2:]) & (sp[1:-1] > floor)
            cand = [i + 1 for i in np.flatnonzero(inner) if i + 1 not in rejected]
            if not cand:
                break
            k = max(cand, key=lambda i: (sp[i], -i))
            row = _fit_single(t, v, sp, k, rate)
            if row is not None:
                v_new = v - strokes_velocity(row[None, :], t)
                # a stroke must lower the unexplained energy
                if not np.sum(v_new**2) < np.sum(v**2):
                    row = None
            if row is None:
                rejected.add(k)
                continue
            P = np.vstack([P, row])
            v = v_new
            added += 1
        P = _joint_refine(P, t, v_obs)
        P = P[np.argsort(P[:, 1], kind="stable")]
        snr = _snr_from_velocity(v_obs, _velocity(strokes_displacement(P, t), rate))
        if snr < best_snr:
            P = best_P
            break
        best_P, best_snr = P, snr
        if snr >= target_snr or added == 0 or len(P) >= max_strokes:
            break
        stop_energy = min(stop_energy / 4, 10.0 ** (-target_snr / 10.0))

    strokes = [LognormalStroke.from_array(row) for row in P]
    model = strokes_displacement(P, t)
    params = ComponentParams(strokes, xy[:, 0] - model[:, 0], xy[:, 1] - model[:, 1], rate)
    params.snr = reconstruction_snr(component, params)
    return params


def _snr_from_velocity(v: np.ndarray, vr: np.ndarray) -> float:
    den = float(np.sum((v - vr) ** 2))
    num = float(np.sum(v**2))
    if den == 0.0:
        return math.inf
    return 10.0 * math.log10(num / den) if num > 0 else -math.inf
