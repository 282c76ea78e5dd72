"""Command-line entry point: ``sigrank <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("sigrank")


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    dataset_root: str = ""
    dataset: str = ""
    protocol: str = "both"
    folds: int = 10
    trials: int = 50
    output_dir: str = "runs"
    checkpoint_every: int = 0
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

    def validate(self):
        if self.protocol not in ("t5", "t1", "both"):
            raise ConfigError(f"protocol must be t5, t1 or both, got {self.protocol!r}")
        if self.folds < 1:
            raise ConfigError("folds must be >= 1")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def train_config(self):
        from .training import TrainConfig

        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config file must hold a JSON object")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(obj) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**obj)


# flag name -> RunConfig field
_OVERRIDES = {
    "dataset_root": str, "dataset": str, "protocol": str, "folds": int, "trials": int, "output_dir": str,
    "checkpoint_every": int, "loss": str, "group_source": str, "g1_size": int, "g2_size": int, "pool_size": int,
    "lam": float, "epsilon": float, "direction": str, "lr": float, "momentum": float, "weight_decay": float,
    "batches_per_class": int, "total_batches": int, "seed": int,
}


def _add_run_flags(p):
    p.add_argument("--config", help="JSON run configuration; flags override its values")
    for name, typ in _OVERRIDES.items():
        flag = "--lambda" if name == "lam" else "--" + name.replace("_", "-")
        p.add_argument(flag, dest=name, type=typ, default=None)


def load_run_config(args) -> RunConfig:
    obj = {}
    if args.config:
        try:
            obj = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise FileNotFoundError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config}: {exc}") from None
    try:
        cfg = RunConfig.from_json(obj)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    for name in _OVERRIDES:
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if not cfg.dataset_root:
        cfg.dataset_root = os.environ.get("SIGRANK_DATA", "")
    return cfg.validate()


# ---------------------------------------------------------------------------
# helpers


def _read_signature(path: Path, fmt: str = "auto"):
    from .datasets import parse_svc2004, svc2004_label
    from .signature import read_canonical

    data = path.read_bytes()
    if fmt == "auto":
        fmt = "canonical" if data.lstrip()[:1] == b"{" else "svc2004"
    if fmt == "canonical":
        return read_canonical(data, source=str(path))
    try:
        signer, label = svc2004_label(path.name)
    except ValueError:
        signer, label = path.stem, "genuine"
    return parse_svc2004(data, signer, label)


def _load_corpus(cfg: RunConfig):
    from .datasets import load_corpus

    if not cfg.dataset_root:
        raise ConfigError("no dataset root: pass --dataset-root or set SIGRANK_DATA")
    return load_corpus(cfg.dataset_root)


def _fold_plan(corpus, cfg: RunConfig):
    from .verification import fold_blocks

    ids = list(corpus.signers)
    blocks = fold_blocks(ids, cfg.folds)
    for k, test_ids in enumerate(blocks):
        train_ids = ids if cfg.folds == 1 else [s for s in ids if s not in set(test_ids)]
        yield k, train_ids, test_ids


def _latest_checkpoint(out: Path, k: int) -> Optional[Path]:
    final = out / f"fold{k}.ckpt"
    if final.exists():
        return final
    steps = sorted(out.glob(f"fold{k}_*.ckpt"))
    return steps[-1] if steps else None


def _step_checkpoints(out: Path, k: int) -> list:
    found = []
    for p in out.glob(f"fold{k}_*.ckpt"):
        m = re.fullmatch(rf"fold{k}_(\d+)\.ckpt", p.name)
        if m:
            found.append((int(m.group(1)), p))
    return sorted(found)


def _truncate_metrics(path: Path, step: int):
    if not path.exists():
        return
    lines = path.read_text().splitlines()
    keep = [lines[0]] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) < step]
    path.write_text("\n".join(keep) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_extract(args) -> int:
    from .preprocess import extract_signature

    sig = _read_signature(Path(args.input), args.format)
    out = extract_signature(sig)
    doc = {"signer": sig.signer, "label": sig.label, "rate": out.rate, "components": []}
    print(f"{'component':>9}  {'strokes':>7}  {'snr_db':>8}")
    for k, c in enumerate(out.components):
        entry = c.params.to_json()
        entry["snr"] = c.params.snr
        doc["components"].append(entry)
        print(f"{k:>9}  {len(c.params.strokes):>7}  {round(c.params.snr, 2) + 0.0:8.2f}")
    dest = Path(args.output)
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(json.dumps(doc, indent=1))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .preprocess import extract_signature
    from .synthesis import SyntheticGroupSpec, build_pools, save_pools

    try:
        spec = SyntheticGroupSpec(args.g1_size, args.g2_size, args.pool_size, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    template = extract_signature(_read_signature(Path(args.input), args.format))
    p1, p2 = build_pools(template, spec)
    save_pools(args.output, p1, p2, spec)
    print(f"wrote {len(p1)} + {len(p2)} signatures to {args.output}")
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    from .datasets import generate_virtual_corpus, save_corpus

    if args.signers < 2 or args.genuine < 1:
        raise ConfigError("need --signers >= 2 and --genuine >= 1")
    corpus = generate_virtual_corpus(args.signers, args.genuine, args.seed)
    save_corpus(corpus, args.output)
    g, f = corpus.counts()
    print(f"wrote {len(corpus.signers)} signers ({g} genuine, {f} forgeries) to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import Trainer, build_training_set

    cfg = load_run_config(args)
    tcfg = cfg.train_config()
    corpus = _load_corpus(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_json(), indent=2))
    for k, train_ids, _ in _fold_plan(corpus, cfg):
        data = build_training_set({s: corpus.signers[s] for s in train_ids}, tcfg)
        metrics = out / f"fold{k}_metrics.csv"
        ckpt = _latest_checkpoint(out, k) if args.resume else None
        if ckpt is not None:
            trainer = Trainer.resume(ckpt, data, tcfg)
            _truncate_metrics(metrics, trainer.step_count)
            log.info("fold %d: resuming from %s at batch %d", k, ckpt.name, trainer.step_count)
        else:
            trainer = Trainer(data, tcfg)
        trainer.run(metrics_path=metrics, checkpoint_path=out / f"fold{k}.ckpt",
                    checkpoint_every=cfg.checkpoint_every)
        print(f"fold {k}: {trainer.step_count} batches on {len(train_ids)} signers -> {out / f'fold{k}.ckpt'}")
    return EXIT_OK


def _fold_embedder(out: Path, k: int, n_classes: int, cfg: RunConfig, ckpt: Optional[Path] = None):
    from . import network as nn
    from .training import embedder_from_params

    path = ckpt or out / f"fold{k}.ckpt"
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    tcfg = cfg.train_config()
    expect = nn.NetConfig(n_classes=n_classes, channels=tcfg.channels, embed_dim=tcfg.embed_dim)
    params, net, _, _ = nn.load_checkpoint(path, expect)
    return embedder_from_params(params, net)


def cmd_eval(args) -> int:
    from .verification import run_protocol

    cfg = load_run_config(args)
    corpus = _load_corpus(cfg)
    out = Path(args.checkpoint_dir or cfg.output_dir)
    plan = {k: train_ids for k, train_ids, _ in _fold_plan(corpus, cfg)}
    report = run_protocol(corpus, lambda train_ids, k: _fold_embedder(out, k, len(plan[k]), cfg), cfg.protocol,
                          cfg.folds, cfg.trials, cfg.seed, cfg.dataset or Path(cfg.dataset_root).name)
    dest = out / "eer_report.json"
    dest.write_text(json.dumps(report, indent=2))
    m = report["mean"]
    for key in ("t5_global", "t5_user", "t1_global", "t1_user"):
        if m[key] is not None:
            print(f"{key:>10}: {m[key]:6.2f}%")
    print(f"report -> {dest}")
    return EXIT_OK


def cmd_plot_data(args) -> int:
    from .verification import SignerEmbeddings, evaluate

    cfg = load_run_config(args)
    corpus = _load_corpus(cfg)
    out = Path(args.checkpoint_dir or cfg.output_dir)
    curves = {}
    for k, train_ids, test_ids in _fold_plan(corpus, cfg):
        for step, path in _step_checkpoints(out, k):
            f = _fold_embedder(out, k, len(train_ids), cfg, path)
            emb = {s: SignerEmbeddings(f(corpus.signers[s]["genuine"]), f(corpus.signers[s]["forgery"]))
                   for s in test_ids}
            row = evaluate(emb, "both", cfg.trials, cfg.seed + k)
            curves.setdefault(step, []).append((row["t5_global"], row["t1_global"]))
    if not curves:
        raise FileNotFoundError(f"no intermediate checkpoints (fold<k>_<batch>.ckpt) in {out}")
    dest = Path(args.output) if args.output else out / "plot_data.csv"
    lines = ["batch_idx,eer_t5,eer_t1"]
    for step in sorted(curves):
        t5, t1 = np.mean(curves[step], axis=0)
        lines.append(f"{step},{t5!r},{t1!r}")
    dest.write_text("\n".join(lines) + "\n")
    print(f"{len(curves)} points -> {dest}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    results = run_all(inject=args.inject_sign_error)
    width = max(len(r.component) for r in results)
    failed = []
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{r.component:<{width}}  max_rel_error={r.max_rel_error:.3e}  tol={r.tolerance:.0e}  {status}")
        if not r.ok:
            failed.append(r.component)
    if failed:
        print("gradient check failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sigrank", description="Signature verification with synthetic ranking groups.")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads (1 = bitwise deterministic)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("extract", help="extract stroke parameters from one signature")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--format", choices=("auto", "canonical", "svc2004"), default="auto")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("synth", help="build the two synthetic pools for one template")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--format", choices=("auto", "canonical", "svc2004"), default="auto")
    s.add_argument("--pool-size", type=int, default=20)
    s.add_argument("--g1-size", type=int, default=5)
    s.add_argument("--g2-size", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("gen-corpus", help="write a virtual-signer corpus")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--signers", type=int, default=20)
    s.add_argument("--genuine", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gen_corpus)

    s = sub.add_parser("train", help="train one model per fold")
    _add_run_flags(s)
    s.add_argument("--resume", action="store_true", help="continue from the latest checkpoint of each fold")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="T5/T1 evaluation of trained folds")
    _add_run_flags(s)
    s.add_argument("--checkpoint-dir", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("plot-data", help="EER per intermediate checkpoint as CSV")
    _add_run_flags(s)
    s.add_argument("--checkpoint-dir", default=None)
    s.add_argument("-o", "--output", default=None)
    s.set_defaults(func=cmd_plot_data)

    s = sub.add_parser("gradcheck", help="finite-difference and DP checks")
    s.add_argument("--inject-sign-error", metavar="PARAM", default=None, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("sigrank: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    from threadpoolctl import threadpool_limits

    from .datasets import ParseError
    from .network import CheckpointError
    from .signature import SchemaError

    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except ConfigError as exc:
        print(f"sigrank: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"sigrank: checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ParseError, SchemaError) as exc:
        print(f"sigrank: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ArithmeticError) as exc:
        print(f"sigrank: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
