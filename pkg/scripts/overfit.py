"""Memorize one recolor pair at the desk config and reconstruct it with `sama edit`."""

import argparse
import tempfile

from sama.experiments import run_overfit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default=None, help="keep outputs here (default: a temp dir)")
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        r = run_overfit(args.workdir or tmp, steps=args.steps, seed=args.seed)
    print(f"total loss {r.initial_total:.4f} -> {r.final_total:.4f} ({100 * r.loss_ratio:.1f}% of initial)")
    print(f"edit mean-abs error vs target: {r.reconstruction_error:.4f} (32 steps), "
          f"{r.reconstruction_error_4_steps:.4f} (4 steps)")
    print(f"train {r.train_seconds:.0f}s, train + edit {r.total_seconds:.0f}s")


if __name__ == "__main__":
    main()
