"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each backend runs in its own interpreter because the choice is made at
import time (``SIGRANK_PURE_PYTHON=1`` forces the fallback).
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

WORKER = r"""
import json, sys, timeit
import numpy as np
from sigrank import kernels, network as nn
from sigrank.ranking import RankingConfig, ap_gradient, ce_loss

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
a, b = rng.standard_normal((300, 2)), rng.standard_normal((280, 2))
s1, s2 = -np.sort(-rng.uniform(-1, 1, 5)), -np.sort(-rng.uniform(-1, 1, 10))
z = rng.standard_normal((16, 400, 128)).astype(np.float32)
lengths = rng.integers(200, 401, 16).astype(np.int64)
act = kernels.selu_mask_forward(z, lengths)
cfg = nn.NetConfig(20)
params = nn.init_params(cfg, 0)
seqs = [rng.standard_normal((3, int(n))) for n in rng.integers(190, 730, 16)]
batch = nn.make_batch(seqs, np.zeros(16, dtype=np.int64))

def step():
    r = nn.forward(params, batch, cfg)
    g, _ = ap_gradient(r.embeddings.astype(np.float64), RankingConfig())
    _, gl = ce_loss(r.logits.astype(np.float64), batch.labels)
    nn.backward(params, r.cache, g, gl)

cases = {
    "dtw 300x280": lambda: kernels.dtw_distance(a, b),
    "loss-augmented dp 5x10": lambda: kernels.loss_augmented_dp(s1, s2, 1.0),
    "selu+mask 16x400x128": lambda: kernels.selu_mask_forward(z, lengths),
    "maxpool 16x400x128": lambda: kernels.maxpool_forward(act, lengths // 2),
    "train step (16 seqs)": step,
}
out = {}
for name, fn in cases.items():
    fn()
    n = 1 if name.startswith(("dtw", "train")) else 20
    out[name] = min(timeit.repeat(fn, number=n, repeat=repeat)) / n
print(json.dumps({"backend": kernels.BACKEND, "times": out}))
"""


def run(pure: bool, repeat: int) -> dict:
    env = dict(os.environ, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1")
    if pure:
        env["SIGRANK_PURE_PYTHON"] = "1"
    else:
        env.pop("SIGRANK_PURE_PYTHON", None)
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    if fast["backend"] != "cython":
        print("compiled extension not available; both columns use the Python fallback", file=sys.stderr)
    print(f"{'kernel':<26}{'compiled ms':>13}{'python ms':>12}{'speedup':>9}")
    for name, t_fast in fast["times"].items():
        t_slow = slow["times"][name]
        print(f"{name:<26}{1e3 * t_fast:>13.3f}{1e3 * t_slow:>12.3f}{t_slow / t_fast:>8.1f}x")


if __name__ == "__main__":
    main()
