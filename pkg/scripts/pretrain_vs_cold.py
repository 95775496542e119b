"""Does reconstruction pretraining speed up detection training?

For each seed: pretrain for ``--pretrain-steps``, then train from that
checkpoint and from a cold start, and compare the per-step train losses.
"""

import argparse
import logging
import statistics
import tempfile
from pathlib import Path

from dgspnet.config import apply_overrides, toy_config
from dgspnet.data import load_dataset, synth_generate
from dgspnet.train import Trainer


def train_losses(pairs, seed, steps, schedule_steps, init=None, overrides=()):
    cfg = apply_overrides(toy_config(), [f"train.seed={seed}", f"train.max_steps={schedule_steps}",
                                         *overrides])
    cfg.train.init_checkpoint = init
    t = Trainer(cfg, None, train_pairs=pairs)
    return [t.run_step()["total"] for _ in range(steps)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default=None)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--pretrain-steps", type=int, default=100)
    ap.add_argument("--at", type=int, default=50, help="compare losses at this step")
    ap.add_argument("--schedule-steps", type=int, default=300, help="poly schedule length")
    ap.add_argument("--pre-set", action="append", default=[], metavar="KEY=VALUE",
                    help="overrides for the pretraining run")
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    root = args.data or tempfile.mkdtemp(prefix="dgsp_synth_")
    if args.data is None:
        synth_generate(root, 8, 64, 7)
    pairs = load_dataset(root, "train")
    work = Path(tempfile.mkdtemp(prefix="dgsp_pre_"))
    cold, warm = [], []
    print("seed  pre_mse  pre_contra  cold@%d  warm@%d  cold_mean  warm_mean" % (args.at, args.at))
    for seed in args.seeds:
        pre = apply_overrides(toy_config(), ["train.phase=pretrain", f"train.seed={seed}",
                                             f"train.max_steps={args.pretrain_steps}", *args.pre_set])
        p = Trainer(pre, None, train_pairs=pairs)
        last = [p.run_step() for _ in range(args.pretrain_steps)][-1]
        ckpt = p.save(work / f"pre{seed}.ckpt")
        c = train_losses(pairs, seed, args.at, args.schedule_steps)
        w = train_losses(pairs, seed, args.at, args.schedule_steps, str(ckpt))
        cold.append(c)
        warm.append(w)
        print(f"{seed:4d}  {last['mse']:.4f}   {last['contra']:.4f}     {c[-1]:.4f}  {w[-1]:.4f}  "
              f"{statistics.mean(c):.4f}     {statistics.mean(w):.4f}")
    mc = statistics.median(c[-1] for c in cold)
    mw = statistics.median(w[-1] for w in warm)
    print(f"median loss at step {args.at}: warm {mw:.4f} vs cold {mc:.4f} -> "
          f"{'warm <= cold' if mw <= mc else 'warm > cold'}")


if __name__ == "__main__":
    main()
