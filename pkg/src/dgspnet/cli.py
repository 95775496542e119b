"""Command-line entry point: gen-data, pretrain, train, eval, predict.

Exit codes: 0 success, 1 usage error, 2 data/runtime error. Logs go to
stderr; with ``eval --json`` stdout carries a single JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, restore_model
from .config import Config, load_config
from .data import load_dataset, read_png, synth_generate, write_png
from .errors import DGSPError
from .metrics import evaluate_dataset
from .network import DGSPNet
from .train import evaluate_model, fit, predict_probs

log = logging.getLogger("dgspnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _env_seed() -> int | None:
    raw = os.environ.get("DGSP_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"DGSP_SEED must be an integer, got {raw!r}")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="dgspnet", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic dataset", formatter_class=fmt)
    g.add_argument("--out", required=True, help="output dataset root")
    g.add_argument("--count", type=int, default=8, help="number of image/mask pairs")
    g.add_argument("--size", type=int, default=64, help="image side, multiple of 16")
    g.add_argument("--seed", type=int, default=None, help="RNG seed (falls back to $DGSP_SEED, then 0)")

    for name in ("pretrain", "train"):
        t = sub.add_parser(name, help=f"run the {name} phase", formatter_class=fmt)
        t.add_argument("--config", default=None, help="JSON config file")
        t.add_argument("--preset", default="toy", choices=("toy", "full"), help="base defaults")
        t.add_argument("--data", default=None, help="dataset root (overrides data.root)")
        t.add_argument("--out", required=True, help="run directory for checkpoints and metrics.jsonl")
        t.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-key config override, repeatable")
        t.add_argument("--resume", default=None, help="checkpoint to resume from")
        if name == "train":
            t.add_argument("--init", default=None, help="pretraining checkpoint to initialize from")

    e = sub.add_parser("eval", help="score predictions or a checkpoint", formatter_class=fmt)
    e.add_argument("--checkpoint", default=None, help="trained checkpoint to run on --data")
    e.add_argument("--data", default=None, help="dataset root for --checkpoint mode")
    e.add_argument("--split", default="test", choices=("train", "test"))
    e.add_argument("--pred-dir", default=None, help="directory of predicted PNG maps")
    e.add_argument("--gt-dir", default=None, help="directory of ground-truth PNG masks")
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--match-radius", type=float, default=3.0, help="centroid distance in pixels")
    e.add_argument("--report", default=None, help="write the JSON report here")
    e.add_argument("--json", action="store_true", help="print the report as one JSON object")

    p = sub.add_parser("predict", help="segment one image", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="input grayscale PNG")
    p.add_argument("--out", required=True, help="output mask PNG (0/255)")
    p.add_argument("--threshold", type=float, default=0.5)
    return parser


def _load_detector(path: str) -> tuple[DGSPNet, Config]:
    ckpt = load_checkpoint(path)
    if ckpt.phase != "train":
        raise DGSPError(f"{path} is a {ckpt.phase!r} checkpoint; predict/eval need phase 'train'")
    cfg = Config.from_dict(ckpt.config)
    model = DGSPNet(cfg.model)
    restore_model(model, ckpt.tensors)
    model.eval()
    return model, cfg


def cmd_gen_data(args) -> int:
    seed = args.seed if args.seed is not None else (_env_seed() or 0)
    m = synth_generate(args.out, args.count, args.size, seed)
    log.info("wrote %d train / %d test pairs to %s (seed %d)",
             len(m.splits["train"]), len(m.splits["test"]), args.out, seed)
    return 0


def cmd_fit(args, phase: str) -> int:
    if args.resume:
        result = fit(Config(), args.out, resume=args.resume)
    else:
        seed = _env_seed()
        extra = [f"train.phase={phase}"]
        if args.data:
            extra.append(f"data.root={args.data}")
        if phase == "train" and args.init:
            extra.append(f"train.init_checkpoint={args.init}")
        cfg = load_config(args.config, extra + args.overrides, args.preset,
                          base_overrides=[f"train.seed={seed}"] if seed is not None else [])
        log.info("effective config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
        result = fit(cfg, args.out)
    last = result.log[-1] if result.log else {}
    log.info("finished at step %s; last checkpoint %s", last.get("step"), result.last_checkpoint)
    return 0


def cmd_eval(args) -> int:
    if args.checkpoint:
        if not args.data:
            raise UsageError("eval --checkpoint needs --data")
        model, cfg = _load_detector(args.checkpoint)
        pairs = load_dataset(args.data, args.split)
        report = evaluate_model(model, pairs, args.threshold, args.match_radius, cfg.data.standardize)
    elif args.pred_dir and args.gt_dir:
        gt_paths = sorted(Path(args.gt_dir).glob("*.png"))
        if not gt_paths:
            raise DGSPError(f"no PNG masks in {args.gt_dir}")
        preds, gts = [], []
        for gp in gt_paths:
            pp = Path(args.pred_dir) / gp.name
            if not pp.exists():
                raise DGSPError(f"missing prediction {pp}")
            preds.append(read_png(pp))
            gts.append(read_png(gp) > 0)
        report = evaluate_dataset(preds, gts, args.threshold, args.match_radius,
                                  ids=[p.stem for p in gt_paths])
    else:
        raise UsageError("eval needs --checkpoint/--data or --pred-dir/--gt-dir")
    if args.report:
        report.write_json(args.report)
    if args.json:
        print(json.dumps(report.to_dict()))
    else:
        print(report.table_row())
    return 0


def cmd_predict(args) -> int:
    model, cfg = _load_detector(args.checkpoint)
    image = read_png(args.image)
    probs = predict_probs(model, image, cfg.data.standardize)
    write_png(args.out, np.where(probs > args.threshold, 255, 0).astype(np.uint8))
    log.info("wrote %s (%d target pixels)", args.out, int((probs > args.threshold).sum()))
    return 0


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"dgspnet: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    torch.set_num_threads(1)
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args)
        if args.command in ("pretrain", "train"):
            return cmd_fit(args, args.command)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "predict":
            return cmd_predict(args)
    except UsageError as exc:
        print(f"dgspnet: error: {exc}", file=sys.stderr)
        return 1
    except (DGSPError, OSError) as exc:
        log.error("%s", exc)
        return 2
    return 1


def main() -> None:
    sys.exit(run())
