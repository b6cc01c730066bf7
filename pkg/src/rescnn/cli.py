"""Command line entry point: ``rescnn {train,eval,inspect,synth-check}``.

Exit codes:
    0  success
    1  synth-check accuracy below target
    2  invalid configuration or arguments
    3  dataset / manifest / checkpoint problem
    4  numeric divergence (non-finite loss or gradient)
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
import tempfile
import time
from pathlib import Path

from .checkpoint import file_digest, load_checkpoint
from .config import DATA_ROOT_ENV, build_config, load_config
from .data import read_manifest
from .errors import CheckpointError, ConfigError, DatasetError, DivergenceError
from .evaluation import collect_activations, evaluate, export_heatmap_csv, export_topk_csv

EXIT_OK, EXIT_ACCURACY, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4

SYNTH_TARGET = 0.95
SYNTH_EPOCHS = 20

log = logging.getLogger("rescnn")


def _config_for_checkpoint(args, manifest):
    return build_config({"dataset": manifest.get("dataset") or "synthetic"}, {"data_root": args.data_root})


def _load_eval_inputs(args):
    from .training import load_split

    model, _ = load_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest)
    cfg = _config_for_checkpoint(args, manifest)
    split, _ = load_split(cfg, manifest)
    part = split.parts()[args.part]
    if not part:
        raise DatasetError(f"manifest has no {args.part} segments", args.manifest)
    seg = part[0]
    mc = model.config
    if seg.channels != mc.input_channels or seg.length < mc.input_length:
        raise DatasetError(
            f"checkpoint expects {mc.input_channels} channel(s) and length >= {mc.input_length}, "
            f"data has {seg.channels} channel(s) of length {seg.length}"
        )
    return model, manifest, part


def cmd_train(args) -> int:
    from .training import run_training

    cfg = load_config(args.config, {"seed": args.seed, "epochs": args.epochs, "data_root": args.data_root,
                                    "output_dir": args.out, "manifest": args.manifest,
                                    "dataset": args.dataset})
    art = run_training(cfg)
    print(json.dumps({"out_dir": str(art.out_dir), **art.final_metrics}, sort_keys=True))
    return EXIT_OK


def eval_document(model, manifest, part_name, part, checkpoint, batch_size):
    report, cm, _ = evaluate(model, part, model.config.input_length, batch_size)
    return {
        **report.to_dict(),
        "part": part_name,
        "confusion": cm.counts.tolist(),
        "seed": manifest.get("seed"),
        "checkpoint_sha256": file_digest(checkpoint),
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def cmd_eval(args) -> int:
    model, manifest, part = _load_eval_inputs(args)
    doc = eval_document(model, manifest, args.part, part, args.checkpoint, args.batch_size)
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name(f"eval_{args.part}.json")
    out.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_inspect(args) -> int:
    model, _, part = _load_eval_inputs(args)
    acts = collect_activations(model, part, model.config.input_length, args.batch_size)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "inspect"
    out.mkdir(parents=True, exist_ok=True)
    export_heatmap_csv(acts, out / "heatmap.csv")
    export_topk_csv(acts, out / "topk.csv", k=args.top_k, units=args.units)
    print(json.dumps({"out_dir": str(out), "n_examples": len(acts.segment_ids), "n_units": acts.n_units}))
    return EXIT_OK


def synth_check(seed=0, epochs=SYNTH_EPOCHS, out_dir=None, quick=False):
    """Train on the synthetic task and return ``(test accuracy, run artifacts, seconds)``."""
    from .evaluation import evaluate as _evaluate
    from .training import load_split, run_training

    with tempfile.TemporaryDirectory() as tmp:
        cfg = build_config({"dataset": "synthetic", "epochs": 1 if quick else epochs, "seed": seed,
                            "output_dir": str(out_dir or Path(tmp) / "synth")})
        t0 = time.perf_counter()
        art = run_training(cfg)
        model, _ = load_checkpoint(art.best_checkpoint)
        split, _ = load_split(cfg)
        report, _, _ = _evaluate(model, split.test, cfg.resolved_crop(), cfg.batch_size)
        return report.accuracy, art, time.perf_counter() - t0


def cmd_synth_check(args) -> int:
    acc, _, secs = synth_check(args.seed, args.epochs or SYNTH_EPOCHS, args.out, args.quick)
    print(f"synthetic test accuracy {acc:.4f} (target {SYNTH_TARGET}) in {secs:.1f}s")
    if args.quick or acc >= SYNTH_TARGET:
        return EXIT_OK
    return EXIT_ACCURACY


def build_parser():
    p = argparse.ArgumentParser(prog="rescnn", description="Residual 1D CNN for EEG classification")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a run directory")
    t.add_argument("--config", help="JSON run configuration")
    t.add_argument("--dataset", choices=["bonn", "bern", "synthetic"])
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--data-root", help=f"dataset directory (default ${DATA_ROOT_ENV})")
    t.add_argument("--out", help="run output directory")
    t.add_argument("--manifest", help="reuse an exported split manifest")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "evaluate a checkpoint"),
                                 ("inspect", cmd_inspect, "export hidden-layer activations")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--manifest", required=True, help="split manifest written by train")
        e.add_argument("--data-root")
        e.add_argument("--part", choices=["train", "val", "test"], default="test")
        e.add_argument("--batch-size", type=int, default=20)
        e.add_argument("--out")
        e.set_defaults(func=func)
        if name == "inspect":
            e.add_argument("--top-k", type=int, default=4)
            e.add_argument("--units", type=int, nargs="+", help="restrict top-k tables to these units (0-based)")

    s = sub.add_parser("synth-check", help="desk-scale learning check on synthetic data")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int)
    s.add_argument("--quick", action="store_true", help="one epoch, report without asserting")
    s.add_argument("--out", help="keep the run directory here")
    s.set_defaults(func=cmd_synth_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
