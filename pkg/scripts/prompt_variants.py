"""Train each prompt variant (n_t = 0..4 learned tokens) briefly and compare."""

import argparse
import logging
import tempfile

from dgspnet.config import apply_overrides, toy_config
from dgspnet.data import load_dataset, synth_generate
from dgspnet.prompt import build_template
from dgspnet.train import Trainer, evaluate_model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default=None)
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    root = args.data or tempfile.mkdtemp(prefix="dgsp_synth_")
    if args.data is None:
        synth_generate(root, 8, 64, 7)
    train, test = load_dataset(root, "train"), load_dataset(root, "test")
    for n in range(5):
        cfg = apply_overrides(toy_config(), [f"model.n_tokens={n}", f"train.max_steps={args.steps}",
                                             f"train.seed={args.seed}"])
        t = Trainer(cfg, None, train_pairs=train, test_pairs=test)
        losses = [t.run_step()["total"] for _ in range(args.steps)]
        rep = evaluate_model(t.model, test, cfg.train.threshold)
        print(f"n_t={n}  loss {losses[0]:.4f} -> {losses[-1]:.4f}  test {rep.table_row()}")
        print(f"       {build_template(n).text}")


if __name__ == "__main__":
    main()
