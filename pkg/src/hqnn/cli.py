"""Command-line entry point.

Subcommands: synth, train, eval, qsim, gradcheck, experiment. Every command
echoes its fully resolved configuration before doing work, and exit codes are
stable for scripting: 0 success, 1 usage/config, 2 data, 3 divergence.
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import DEFAULTS, dump_config, model_config_from, resolve_config, train_config_from
from .data import DatasetManifest, build_manifest, synth_dataset
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    DivergenceError,
    HqnnError,
    UsageError,
)
from .metrics import format_metrics_report
from .model import HQNNModel, load_checkpoint, save_checkpoint
from .qsim import QuantumLayerParams, circuit_forward, circuit_gradient, describe_circuit
from .training import evaluate, export_features, multi_seed_experiment, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="hqnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--quantum-enabled", default=None)
    p.add_argument("--connectivity", default=None)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("qsim", help="run the circuit standalone")
    p.add_argument("--angles", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--theta-file", default=None)
    group.add_argument("--theta-zero", action="store_true")
    p.add_argument("--connectivity", default="ring")
    p.add_argument("--layers", type=int, default=2)

    p = sub.add_parser("gradcheck", help="three-way gradient comparison")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--coords", type=int, default=4,
                   help="finite-difference coordinates sampled per parameter")

    p = sub.add_parser("experiment", help="multi-seed config comparison")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config-a", required=True)
    p.add_argument("--config-b", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed-base", type=int, default=42)

    return parser


def _split_overrides(extra: list[str]) -> dict[str, str]:
    """Consume trailing ``--dotted.key value`` pairs."""
    overrides: dict[str, str] = {}
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--"):
            raise UsageError(f"unexpected argument {token!r}")
        key = token[2:]
        if key not in DEFAULTS:
            raise UsageError(f"unknown option --{key}")
        if i + 1 >= len(extra):
            raise UsageError(f"option --{key} needs a value")
        overrides[key] = extra[i + 1]
        i += 2
    return overrides


def _resolve(args, extra) -> dict:
    overrides = _split_overrides(extra)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "quantum_enabled", None) is not None:
        overrides["model.quantum_enabled"] = args.quantum_enabled
    if getattr(args, "connectivity", None) is not None:
        overrides["model.connectivity"] = args.connectivity
    return resolve_config(getattr(args, "config", None), overrides)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _roc_csv(rep) -> str:
    lines = ["fpr,tpr,threshold"]
    for f, t, thr in zip(rep.roc_fpr, rep.roc_tpr, rep.roc_thresholds):
        lines.append(f"{f:.12g},{t:.12g},{thr:.12g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, extra) -> int:
    if extra:
        raise UsageError(f"unexpected arguments: {extra}")
    manifest = synth_dataset(args.out, args.per_class, args.seed)
    counts = manifest.counts()
    print(f"wrote {len(manifest.records)} images under {args.out}")
    for split in ("train", "val"):
        c = counts[split]
        print(f"  {split}: {c[0]} normal + {c[1]} malignant")
    return 0


def _prepare_run(args, extra):
    cfg = _resolve(args, extra)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    extra_keys = {"data.root": args.data, "out.dir": args.out}
    _write(out_dir / "config.resolved", dump_config(cfg, extra_keys))
    manifest = build_manifest(args.data, cfg["seed"])
    return cfg, out_dir, manifest


def cmd_train(args, extra) -> int:
    cfg, out_dir, manifest = _prepare_run(args, extra)
    model = HQNNModel(model_config_from(cfg), seed=cfg["seed"])
    tcfg = train_config_from(cfg)
    log = None if args.quiet else print
    t0 = time.perf_counter()
    cache: dict = {}
    history, optimizer = train(model, manifest, tcfg, cache=cache, log=log)
    total = time.perf_counter() - t0
    report = evaluate(model, manifest, "val", tcfg.batch_size, cache=cache)
    _write(out_dir / "history.csv", history.to_csv())
    _write(out_dir / "metrics.txt", format_metrics_report(report))
    if report.roc_fpr is not None:
        _write(out_dir / "roc.csv", _roc_csv(report))
    export_features(model, manifest, "val", out_dir / "features.csv",
                    tcfg.batch_size, cache=cache)
    save_checkpoint(out_dir / "checkpoint.bin", model, optimizer.state())
    timing = [f"epoch {e.epoch} {e.wall_time:.3f}s" for e in history.epochs]
    timing.append(f"total {total:.3f}s")
    _write(out_dir / "timing.txt", "\n".join(timing) + "\n")
    print(f"stopped after epoch {history.epochs[-1].epoch} ({history.stop_reason}), "
          f"best epoch {history.best_epoch}")
    print(f"val accuracy {report.accuracy:.4f}  outputs in {out_dir}")
    return 0


def cmd_eval(args, extra) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    cfg = _resolve(args, extra)
    seed = cfg["seed"]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write(out_dir / "config.resolved",
           dump_config(cfg, {"data.root": args.data, "out.dir": args.out,
                             "eval.checkpoint": args.checkpoint,
                             "eval.split": args.split}))
    manifest = build_manifest(args.data, seed)
    split = args.split
    if split == "test" and not manifest.split_indices("test"):
        print("no test directory supplied; evaluating the val split instead")
        split = "val"
    cache: dict = {}
    report = evaluate(model, manifest, split, cache=cache)
    print(format_metrics_report(report), end="")
    _write(out_dir / "metrics.txt", format_metrics_report(report))
    if report.roc_fpr is not None:
        _write(out_dir / "roc.csv", _roc_csv(report))
    export_features(model, manifest, split, out_dir / "features.csv", cache=cache)
    return 0


def cmd_qsim(args, extra) -> int:
    if extra:
        raise UsageError(f"unexpected arguments: {extra}")
    try:
        angles = np.array([float(v) for v in args.angles.split(",")])
    except ValueError as exc:
        raise UsageError(f"malformed angle list {args.angles!r}") from exc
    n = len(angles)
    if args.theta_zero:
        theta = np.zeros((args.layers, n, 3))
    else:
        try:
            values = np.loadtxt(args.theta_file).reshape(args.layers, n, 3)
        except OSError as exc:
            raise DataError(f"cannot read theta file: {exc}") from exc
        except ValueError as exc:
            raise UsageError(
                f"theta file must hold {args.layers * n * 3} values"
            ) from exc
        theta = values
    params = QuantumLayerParams(n, args.layers, theta, args.connectivity)
    for line in describe_circuit(angles, params):
        print(line)
    expectations = circuit_forward(angles, params)
    print("expectations " + " ".join(f"{v:.9g}" for v in expectations))
    return 0


def cmd_gradcheck(args, extra) -> int:
    if extra:
        raise UsageError(f"unexpected arguments: {extra}")
    if args.eps < 1e-8:
        print(f"warning: eps={args.eps:g} is cancellation-dominated in float64; "
              "expect meaningless finite differences")
    rng = np.random.default_rng(args.seed)
    threshold = 1e-3
    # Circuit-level: parameter-shift vs adjoint vs central differences.
    worst_circuit = 0.0
    for _ in range(5):
        phi = rng.uniform(-np.pi, np.pi, 4)
        theta = rng.uniform(-np.pi, np.pi, (2, 4, 3))
        upstream = rng.normal(size=4)
        params = QuantumLayerParams(4, 2, theta, "ring")
        shift = circuit_gradient(phi, params, upstream, "parameter-shift")
        adj = circuit_gradient(phi, params, upstream, "adjoint")
        fd_phi = np.zeros(4)
        eps = max(args.eps, 1e-12)
        for i in range(4):
            d = np.zeros(4)
            d[i] = eps
            fp = upstream @ circuit_forward(phi + d, params)
            fm = upstream @ circuit_forward(phi - d, params)
            fd_phi[i] = (fp - fm) / (2 * eps)
        worst_circuit = max(
            worst_circuit,
            float(np.max(np.abs(shift[0] - adj[0]))),
            float(np.max(np.abs(shift[1] - adj[1]))),
            float(np.max(np.abs(adj[0] - fd_phi))),
        )
    print(f"circuit gradient max pairwise error: {worst_circuit:.3e}")
    # End-to-end: autodiff vs central differences on sampled coordinates.
    model = HQNNModel(seed=args.seed)
    x = T.Tensor(rng.normal(size=(2, 3, 64, 64)))
    names = ["theta", "eq", "gate.w", "conv1.w", "head2.w", "cross.wq", "qmap.w"]
    tensors = [model.params[n] for n in names]

    def f(*_):
        logits = model.forward(x, mode="eval")
        return T.cross_entropy(logits, np.array([0, 1]))

    err = T.grad_check(f, tensors, eps=args.eps, max_coords=args.coords,
                       rng=np.random.default_rng(args.seed))
    print(f"end-to-end autodiff vs finite differences: {err:.3e}")
    ok = worst_circuit <= 1e-6 and err <= threshold
    print("gradcheck " + ("PASS" if ok else "FAIL"))
    return 0 if ok else 3


def cmd_experiment(args, extra) -> int:
    cfg_common = _resolve(args, extra)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_a = resolve_config(args.config_a)
    cfg_b = resolve_config(args.config_b)
    _write(out_dir / "config.resolved",
           dump_config(cfg_common,
                       {"data.root": args.data, "out.dir": args.out,
                        "experiment.config_a": args.config_a,
                        "experiment.config_b": args.config_b,
                        "experiment.seeds": args.seeds,
                        "experiment.seed_base": args.seed_base}))
    manifest = build_manifest(args.data, cfg_common["seed"])
    seeds = list(range(args.seed_base, args.seed_base + args.seeds))
    report = multi_seed_experiment(
        manifest, model_config_from(cfg_a), model_config_from(cfg_b),
        train_config_from(cfg_a), seeds, label_a="a", label_b="b", log=print,
    )
    text = report.to_text()
    print(text, end="")
    _write(out_dir / "comparison.txt", text)
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "qsim": cmd_qsim,
    "gradcheck": cmd_gradcheck,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        return _COMMANDS[args.command](args, extra)
    except (UsageError, ConfigError, ContractError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
