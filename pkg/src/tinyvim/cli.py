"""Command-line entry point: ``tinyvim <subcommand>`` or ``python -m tinyvim``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .backbone import ModelSpec, build_model, count_macs, count_params, fuse_reparam, toy_spec
from .bench import bench_scan, rows_to_csv, scaling_ratios
from .data import ToyDatasetSpec, generate_dataset
from .io import FormatError, load_weights, read_tvmt, save_weights, write_tvmt
from .laplace import MIXER_MODES
from .spectral import export_magnitude_grid, spectrum_report
from .tensor import Tensor, default_dtype, no_grad


def _model_from_args(args):
    if getattr(args, "config", None):
        spec = ModelSpec.from_json(Path(args.config).read_text())
        model = build_model(spec, seed=args.seed)
    else:
        model = build_model(args.variant, num_classes=args.num_classes, seed=args.seed)
    if getattr(args, "weights", None):
        load_weights(model, args.weights)
    return model


def cmd_build(args) -> int:
    model = _model_from_args(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(model.spec.to_json() + "\n")
    save_weights(model, out / "weights.tvmw")
    print(f"{model.spec.name}: {count_params(model)} parameters -> {out}")
    return 0


def cmd_count_params(args) -> int:
    print(count_params(_model_from_args(args)))
    return 0


def cmd_count_macs(args) -> int:
    print(count_macs(_model_from_args(args), (1, 3, args.size, args.size)))
    return 0


def cmd_forward(args) -> int:
    model = _model_from_args(args)
    x = read_tvmt(args.input)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"input must be (3, H, W) or (N, 3, H, W), got {x.shape}")
    model.eval()
    with no_grad():
        logits = model(Tensor(x.astype(np.float32)))
    write_tvmt(args.output, logits.data)
    print(f"wrote logits {logits.shape} to {args.output}")
    return 0


def cmd_spectrum(args) -> int:
    feats = read_tvmt(args.input)
    rep = spectrum_report(feats, args.rho)
    if args.csv:
        rep.to_csv(args.csv)
    else:
        sys.stdout.write("freq,delta_log_amp\n")
        for f, v in rep.rla_curve:
            sys.stdout.write(f"{f:.6f},{v:.9f}\n")
    if args.pgm_dir:
        export_magnitude_grid(feats, args.pgm_dir)
    print(f"low_freq_energy_ratio(rho={args.rho}) = {rep.energy_ratio:.6f}", file=sys.stderr)
    return 0


def cmd_make_dataset(args) -> int:
    spec = ToyDatasetSpec(seed=args.seed, samples_per_class=args.samples_per_class)
    print(generate_dataset(spec, args.out_dir))
    return 0


def cmd_train_toy(args) -> int:
    from .train import TrainConfig, train_toy

    cfg = TrainConfig(mode=args.mode, steps=args.steps, batch_size=args.batch_size, lr=args.lr,
                      seed=args.seed)
    result = train_toy(cfg)
    if args.loss_csv:
        result.write_loss_csv(args.loss_csv)
    if args.save:
        save_weights(result.model, args.save)
    print(json.dumps({
        "mode": cfg.mode,
        "steps": cfg.steps,
        "final_loss": result.losses[-1] if result.losses else None,
        "train_accuracy": result.train_accuracy,
        "test_accuracy": result.test_accuracy,
    }))
    return 0


def cmd_bench_scan(args) -> int:
    lengths = [int(v) for v in args.lengths.split(",")]
    rows = bench_scan(lengths, repeats=args.repeats, d_inner=args.d_inner, d_state=args.d_state)
    text = rows_to_csv(rows)
    if args.csv:
        Path(args.csv).write_text(text)
    sys.stdout.write(text)
    ratios = ", ".join(f"{r:.3f}" for r in scaling_ratios(rows))
    print(f"s6 time ratios: {ratios}", file=sys.stderr)
    return 0


def cmd_fuse_check(args) -> int:
    with default_dtype(np.float64 if args.float64 else np.float32):
        model = build_model(args.variant, num_classes=args.num_classes, seed=args.seed)
        model.eval()
        x = Tensor(np.random.default_rng(args.seed).normal(size=(2, 3, args.size, args.size)))
        with no_grad():
            before = model(x).data
            n_before = count_params(model)
            fuse_reparam(model)
            after = model(x).data
    diff = float(np.max(np.abs(after - before)))
    print(f"params {n_before} -> {count_params(model)}; max |fused - unfused| = {diff:.3e}")
    return 0 if diff <= args.tol else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tinyvim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def model_args(p):
        p.add_argument("--variant", default="S", choices=["S", "B", "L"])
        p.add_argument("--num-classes", type=int, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="ModelSpec JSON (overrides --variant)")

    p = sub.add_parser("build", help="build a model and write config.json + weights.tvmw")
    model_args(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("count-params", help="print the number of learnable scalars")
    model_args(p)
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("count-macs", help="print multiply-accumulates for one image")
    model_args(p)
    p.add_argument("--size", type=int, default=224)
    p.set_defaults(func=cmd_count_macs)

    p = sub.add_parser("forward", help="run a TVMT input through a model, write TVMT logits")
    model_args(p)
    p.add_argument("--weights")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="logits.tvmt")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("spectrum", help="spectral report of a TVMT feature dump")
    p.add_argument("--input", required=True)
    p.add_argument("--rho", type=float, default=0.25)
    p.add_argument("--csv")
    p.add_argument("--pgm-dir")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("make-dataset", help="write the synthetic toy dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--samples-per-class", type=int, default=120)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train-toy", help="train the toy model on the synthetic dataset")
    p.add_argument("--mode", default="low-only", choices=MIXER_MODES)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--loss-csv")
    p.add_argument("--save")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("bench-scan", help="time the selective scan at several lengths")
    p.add_argument("--lengths", default="1024,2048,4096")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--d-inner", type=int, default=16)
    p.add_argument("--d-state", type=int, default=16)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_bench_scan)

    p = sub.add_parser("fuse-check", help="compare fused and multi-branch outputs")
    p.add_argument("--variant", default="S", choices=["S", "B", "L"])
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--float64", action="store_true")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_fuse_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (OSError, FormatError, ValueError) as exc:
        print(f"tinyvim {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
