"""Desk-scale training: overfit the solver on 8 synthetic triplets.

The fixture inverts the relighting model with a known constant gain per
rectangle, so the solver has an exact solution to find. Trains for a few
hundred steps (a minute or two on CPU), then reports the shadow-region
LAB error against the identity baseline. Pass --steps to change length.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from deshadow import evaluation, save_image
from deshadow.solver import SolverConfig, solve_image
from deshadow.training import TrainConfig, make_overfit_set, train

parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=300)
args = parser.parse_args()

out = Path(__file__).parent / "out" / "04"
out.mkdir(parents=True, exist_ok=True)

samples = make_overfit_set(count=8, size=64, seed=0)
solver_cfg = SolverConfig(k=3, widths=(8, 16), blocks_per_scale=1, dtype="float32")
train_cfg = TrainConfig(
    learning_rate=5e-4, batch_size=8, max_steps=args.steps, seed=0, resize=64,
    checkpoint_every=100,
)

baseline = np.mean(
    [evaluation.rmse_lab(s.shadow, s.ground_truth, s.mask, region="shadow") for s in samples]
)
print(f"identity baseline shadow MAE-LAB: {baseline:.3f}")
print(f"training {args.steps} steps ...")

weights = train(train_cfg, solver_cfg, samples, out)

errors = []
for s in samples:
    result, _ = solve_image(s.shadow, s.target_mask, weights, solver_cfg)
    errors.append(evaluation.rmse_lab(result, s.ground_truth, s.mask, region="shadow"))
    save_image(s.shadow, out / f"{s.image_id}_in.png")
    save_image(result, out / f"{s.image_id}_out.png")
    save_image(s.ground_truth, out / f"{s.image_id}_gt.png")

trained = float(np.mean(errors))
print(f"trained shadow MAE-LAB: {trained:.3f} ({100 * (1 - trained / baseline):.1f}% better)")
print(f"loss trace: {out / 'loss_trace.csv'}")
print(f"checkpoint: {out / 'checkpoint.pt'}")
sys.exit(0)
