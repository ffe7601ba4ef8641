"""Stage-0 training with and without pretext tasks, scored on held-out clips.

Reports tube-shuffle restoration error (pretext / task=None only / untrained)
and zero-shot recolor preservation error (pretext / untrained).
"""

import argparse
import json
import tempfile

from sama.experiments import stage0_run_config, stage0_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default=None, help="keep the corpus, runs and reports here")
    ap.add_argument("--steps", type=int, default=600)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eval-limit", type=int, default=24)
    args = ap.parse_args()
    cfg = stage0_run_config(steps=args.steps, seed=args.seed)
    with tempfile.TemporaryDirectory() as tmp:
        r = stage0_study(args.workdir or tmp, cfg, args.eval_limit)
    print(json.dumps({"restoration_error": r.restoration, "preservation_error": r.preservation}, indent=2))
    print(f"margin over untrained: {100 * (1 - r.restoration['pretext'] / r.restoration['untrained']):.0f}%; "
          f"{r.seconds:.0f}s")


if __name__ == "__main__":
    main()
