"""Command line entry point: ``python -m tdrg <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure
(non-finite loss or failed gradient check), 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import numeric as nm
from .ablation import SUITES, run_ablation
from .config import Config, parse_overrides
from .data import SyntheticDatasetConfig, generate_dataset, label_cooccurrence, load_dataset, load_split
from .errors import ConfigError, ContractError, DimensionError, GenerationError, NumericError
from .model import GRADCHECK_CONFIG, gradcheck_model
from .train import TrainConfig, evaluate, load_checkpoint, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _config(args) -> Config:
    return Config.load(args.config, args.set)


def cmd_generate(args) -> int:
    cfg = _config(args)
    ds = generate_dataset(SyntheticDatasetConfig.from_config(cfg), args.out)
    print(f"wrote {len(ds.train)} train and {len(ds.test)} test samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = load_dataset(args.data)
    static = None
    if cfg["semantic.enabled"] and cfg["semantic.correlation"] == "static" and not cfg["semantic.static_path"]:
        static = label_cooccurrence(ds.train.labels)
    ckpt = train(TrainConfig.from_config(cfg), cfg, ds, out_dir=args.out, static_correlation=static,
                 eval_every=args.eval_every)
    last = ckpt.history[-1] if ckpt.history else {}
    print(f"trained {ckpt.epoch} epochs; final loss {last.get('total', float('nan')):.4f}; "
          f"checkpoint in {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    split = load_split(Path(args.data) / args.split)
    report = evaluate(ckpt, split, args.batch_size)
    print(report.to_text())
    if args.out:
        report.save(args.out)
    return EXIT_OK


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    image = nm.load_tensor(args.image)
    if image.ndim != 3:
        raise DimensionError(f"expected one [3, H, W] image, got shape {image.shape}")
    fwd = ckpt.model(image[None])
    scores = 1.0 / (1.0 + np.exp(-fwd.prediction.fused.data[0].astype(np.float64)))
    for c, s in enumerate(scores):
        print(f"class {c}: {s:.6f}")
    if args.maps:
        out = Path(args.maps)
        out.mkdir(parents=True, exist_ok=True)
        if fwd.semantic is not None:
            nm.save_tensor(out / "class_maps.tdrg", fwd.semantic.class_maps.data[0])
        for f, layers in zip(fwd.structural.factors, fwd.structural.attention_maps):
            if layers:  # [layers, heads, N, N]
                nm.save_tensor(out / f"attention_1_{f}.tdrg", np.stack([a[0] for a in layers]))
        print(f"maps written to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    # a config file replaces the small default model; --set always applies on top
    base = Config.load(args.config) if args.config else Config(GRADCHECK_CONFIG)
    cfg = base.replace(parse_overrides(args.set))
    results = gradcheck_model(cfg, seed=args.seed, max_coords=args.max_coords)
    failed = [r for r in results if not r.ok]
    for r in results:
        if args.verbose or not r.ok:
            print(f"{'ok  ' if r.ok else 'FAIL'} {r.name:<40} rel_err={r.max_rel_err:.2e} n={r.checked}")
    print(f"{len(results) - len(failed)}/{len(results)} parameters pass "
          f"(rtol {nm.TOL.fd_rtol:g}, eps {nm.TOL.fd_eps:g})")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    ds = load_dataset(args.data)
    seeds = [int(s) for s in args.seeds.split(",")]
    table = run_ablation(args.suite, ds, TrainConfig.from_config(cfg), cfg, seeds,
                         log=lambda msg: print(msg, flush=True))
    print(table.to_text())
    if args.out:
        table.save(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdrg", description="Transformer-based dual relation graph toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, config=True):
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("--config", help="flat key = value config file")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                           help="override one config key (repeatable)")
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "write a synthetic dataset")
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eval-every", type=int, default=5)

    p = add("eval", cmd_eval, "metric report of a checkpoint", config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out", help="write the report as JSON")

    p = add("infer", cmd_infer, "per-class scores for one image tensor", config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="[3, H, W] tensor file")
    p.add_argument("--maps", help="directory for class-map and attention tensors")

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of the full model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-coords", type=int, default=None, help="coordinates sampled per parameter")

    p = add("ablate", cmd_ablate, "train a suite of configurations on shared seeds")
    p.add_argument("--suite", required=True, choices=sorted(SUITES))
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", help="write the table as JSON")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ContractError, DimensionError, GenerationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
