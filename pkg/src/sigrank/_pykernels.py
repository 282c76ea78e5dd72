"""Pure-Python inner loops; the reference for the compiled ``_kernels``."""

import math

import numpy as np


def dtw_distance(a, b) -> float:
    """Dynamic time warping cost with Euclidean local distance (unnormalised)."""
    A = np.asarray(a, dtype=np.float64).reshape(len(a), -1)
    B = np.asarray(b, dtype=np.float64).reshape(len(b), -1)
    if A.shape[1] != B.shape[1]:
        raise ValueError("dimension mismatch")
    if len(A) == 0 or len(B) == 0:
        raise ValueError("empty sequence")
    n, m = len(A), len(B)
    prev = [math.inf] * (m + 1)
    prev[0] = 0.0
    for i in range(n):
        cost = np.sqrt(((B - A[i]) ** 2).sum(axis=1)).tolist()
        cur = [math.inf] * (m + 1)
        for j in range(1, m + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = cost[j - 1] + best
        prev = cur
    return float(prev[m])


def loss_augmented_dp(s1, s2, eps_signed: float):
    """Best interleaving of two descending-sorted groups under score + eps * (1 - AP).

    Returns ``(pattern, value)`` where ``pattern[k]`` is True when rank
    position ``k`` holds a first-group item.  Ties prefer the first group.
    """
    g1 = [float(v) for v in s1]
    g2 = [float(v) for v in s2]
    n1, n2 = len(g1), len(g2)
    prefix = [0.0] * (n2 + 1)
    for j in range(n2):
        prefix[j + 1] = prefix[j] + g2[j]
    total = prefix[n2]
    norm = 1.0 / (n1 * n2)
    V = [[-math.inf] * (n2 + 1) for _ in range(n1 + 1)]
    choice = [[0] * (n2 + 1) for _ in range(n1 + 1)]
    V[0][0] = eps_signed
    for i in range(n1 + 1):
        for j in range(n2 + 1):
            if i == 0 and j == 0:
                continue
            a = b = -math.inf
            if i > 0:
                gain = ((n2 - 2 * j) * g1[i - 1] + 2.0 * prefix[j] - total) * norm
                a = V[i - 1][j] + gain - eps_signed * (i / (i + j)) / n1
            if j > 0:
                b = V[i][j - 1]
            if a >= b:
                V[i][j], choice[i][j] = a, 1
            else:
                V[i][j], choice[i][j] = b, 0
    pattern = np.zeros(n1 + n2, dtype=bool)
    i, j = n1, n2
    while i > 0 or j > 0:
        if choice[i][j] == 1:
            pattern[i + j - 1] = True
            i -= 1
        else:
            j -= 1
    return pattern, float(V[n1][n2])


# ---------------------------------------------------------------------------
# network elementwise kernels on (batch, time, channels) arrays

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946


def _time_mask(shape, lengths, dtype):
    return (np.arange(shape[1])[None, :] < lengths[:, None])[:, :, None].astype(dtype)


def selu_mask_forward(z, lengths):
    """SELU, then zero every timestep at or beyond each item's length."""
    neg = (SELU_SCALE * SELU_ALPHA) * np.expm1(np.minimum(z, 0))
    out = np.where(z > 0, SELU_SCALE * z, neg).astype(z.dtype, copy=False)
    return out * _time_mask(z.shape, lengths, z.dtype)


def selu_mask_backward(dx, z, a, lengths):
    """Gradient through :func:`selu_mask_forward`; ``a`` is its output (d/dz = a + scale*alpha for z <= 0)."""
    d = np.where(z > 0, SELU_SCALE, a + SELU_SCALE * SELU_ALPHA).astype(z.dtype, copy=False)
    return dx * d * _time_mask(z.shape, lengths, z.dtype)


def maxpool_forward(x, out_lengths):
    """Kernel 2, stride 2, trailing odd element dropped; first element wins ties."""
    B, L, C = x.shape
    half = L // 2
    pairs = x[:, : 2 * half].reshape(B, half, 2, C)
    arg = (pairs[:, :, 1] > pairs[:, :, 0]).astype(np.uint8)
    out = np.where(arg.astype(bool), pairs[:, :, 1], pairs[:, :, 0])
    keep = _time_mask(out.shape, out_lengths, x.dtype)
    return out * keep, arg * keep.astype(np.uint8)


def maxpool_backward(dout, arg, out_lengths, L):
    B, half, C = dout.shape
    d = dout * _time_mask(dout.shape, out_lengths, dout.dtype)
    dx = np.zeros((B, L, C), dtype=dout.dtype)
    sel = arg.astype(bool)
    dx[:, 0: 2 * half: 2] = np.where(sel, 0, d)
    dx[:, 1: 2 * half: 2] = np.where(sel, d, 0)
    return dx
