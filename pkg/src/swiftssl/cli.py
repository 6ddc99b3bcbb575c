"""Command-line entry point: synth / probe / train / eval / diagnose."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields as dc_fields

from .data import BundleError, SyntheticSpec, load_bundle, make_synthetic, save_bundle
from .diagnostics import write_diagnostics
from .model import load_model
from .trainer import TrainConfig, run_swift, test_accuracy, write_run_outputs


def _load_json(path: str) -> dict:
    with open(path) as f:
        return json.load(f)


def _spec_from_file(path: str) -> SyntheticSpec:
    d = _load_json(path)
    known = {f.name for f in dc_fields(SyntheticSpec)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown synthetic spec keys: {sorted(unknown)}")
    spec = SyntheticSpec(**d)
    spec.validate()
    return spec


def _build_config(args) -> TrainConfig:
    d = _load_json(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got: {item}")
        key, raw = item.split("=", 1)
        try:
            d[key] = json.loads(raw)
        except json.JSONDecodeError:
            d[key] = raw
    if getattr(args, "stages", None):
        d["stages"] = [int(s) for s in args.stages.split(",")]
    if getattr(args, "method", None):
        d["method"] = args.method
    if getattr(args, "no_ra", False):
        d["retrieval"] = False
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "init", None):
        d["init"] = args.init
    if getattr(args, "t_loss_init", None) is not None:
        d["t_loss_init"] = args.t_loss_init
    if getattr(args, "fixed_t_loss", None) is not None:
        d["t_loss_init"] = args.fixed_t_loss
        d["learn_t_loss"] = False
    return TrainConfig.from_dict(d)


def cmd_synth(args) -> int:
    spec = _spec_from_file(args.spec)
    bundle = make_synthetic(spec)
    save_bundle(bundle, args.out)
    print(f"wrote synthetic bundle to {args.out} "
          f"(C={bundle.num_classes}, d={bundle.dim}, "
          f"L={bundle.labeled.count}, U={bundle.unlabeled_weak.count}, "
          f"R={bundle.retrieved.count})")
    return 0


def cmd_probe(args) -> int:
    cfg = _build_config(args)
    cfg.stages = (1,)
    bundle = load_bundle(args.data)
    report = run_swift(bundle, cfg)
    write_run_outputs(report, args.out)
    print(f"stage-1 test accuracy: {report['final']['test_acc']:.4f}")
    return 0


def cmd_train(args) -> int:
    cfg = _build_config(args)
    bundle = load_bundle(args.data)
    if 2 in cfg.stages and 1 not in cfg.stages:
        print("note: stage 2 without stage 1 starts from the text-initialized head",
              file=sys.stderr)
    report = run_swift(bundle, cfg)
    write_run_outputs(report, args.out)
    print(f"final test accuracy: {report['final']['test_acc']:.4f}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    bundle = load_bundle(args.data)
    acc = test_accuracy(model, bundle)
    print(f"test accuracy: {acc:.4f}")
    return 0


def cmd_diagnose(args) -> int:
    model = load_model(args.checkpoint)
    bundle = load_bundle(args.data)
    grid = [float(t) for t in args.grid.split(",")]
    write_diagnostics(model, bundle, grid, args.sigma, args.out)
    print(f"wrote diagnostics to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="swift-ssl",
        description="Semi-supervised few-shot learning over precomputed embeddings",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic bundle from a spec file")
    sp.add_argument("spec", help="JSON file with synthetic task parameters")
    sp.add_argument("out", help="output bundle directory")
    sp.set_defaults(func=cmd_synth)

    def add_train_opts(q, probe=False):
        q.add_argument("data", help="bundle directory")
        q.add_argument("--out", required=True, help="output directory")
        q.add_argument("--config", help="JSON config file")
        q.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field (repeatable)")
        q.add_argument("--seed", type=int)
        if probe:
            q.add_argument("--init", choices=["text", "random"])
            q.add_argument("--t-loss-init", type=float, dest="t_loss_init")
            q.add_argument("--fixed-t-loss", type=float, dest="fixed_t_loss",
                           help="use a fixed (non-learnable) loss temperature")
        else:
            q.add_argument("--stages", help="comma-separated subset of 1,2,3")
            q.add_argument("--method", choices=["fixmatch", "debiaspl"])
            q.add_argument("--no-ra", action="store_true", dest="no_ra",
                           help="disable retrieval augmentation")

    tp = sub.add_parser("probe", help="stage-1 linear probe only")
    add_train_opts(tp, probe=True)
    tp.set_defaults(func=cmd_probe)

    rp = sub.add_parser("train", help="run the stage-wise pipeline")
    add_train_opts(rp)
    rp.set_defaults(func=cmd_train)

    ep = sub.add_parser("eval", help="evaluate a checkpoint on a bundle's test split")
    ep.add_argument("checkpoint", help="checkpoint directory (model.json + model.f32)")
    ep.add_argument("data", help="bundle directory")
    ep.set_defaults(func=cmd_eval)

    dp = sub.add_parser("diagnose", help="confidence histogram and temperature sweep")
    dp.add_argument("checkpoint")
    dp.add_argument("data")
    dp.add_argument("--grid", default="0.001,0.005,0.01,0.05,1.0",
                    help="comma-separated confidence temperatures")
    dp.add_argument("--sigma", type=float, default=0.8)
    dp.add_argument("--out", required=True)
    dp.set_defaults(func=cmd_diagnose)
    return p


def main(argv: list[str] | None = None) -> int:
    # SWIFT_THREADS caps data-parallel workers; the engine is single-threaded,
    # so any value >= 1 is accepted as-is.
    threads = os.environ.get("SWIFT_THREADS")
    if threads is not None and (not threads.isdigit() or int(threads) < 1):
        print(f"error: SWIFT_THREADS must be a positive integer, got {threads!r}",
              file=sys.stderr)
        return 2
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BundleError, ValueError, FileNotFoundError, OSError) as e:
        print(json.dumps({"error": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
