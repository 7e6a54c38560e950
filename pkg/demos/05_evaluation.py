"""Region-wise metrics on a small directory fixture.

Creates prediction/ground-truth/mask triples of increasing quality, scores
them with the benchmark conventions (LAB "RMSE" = mean absolute error,
region SSIM from a full-image map, region PSNR), and renders the
comparison table. Outputs land in demos/out/05/.
"""

from pathlib import Path

import cv2
import numpy as np

from deshadow import ImageTensor, ShadowMask, save_image, save_mask
from deshadow.evaluation import evaluate_dir, render_table

out = Path(__file__).parent / "out" / "05"
rng = np.random.default_rng(3)

for noise, name in [(0.08, "noisy"), (0.02, "better")]:
    pred_dir = out / name / "pred"
    gt_dir = out / name / "gt"
    mask_dir = out / name / "mask"
    for d in (pred_dir, gt_dir, mask_dir):
        d.mkdir(parents=True, exist_ok=True)
    local = np.random.default_rng(3)
    for i in range(3):
        gt = np.clip(cv2.resize(local.uniform(0.2, 0.8, (6, 6, 3)), (64, 64)), 0, 1)
        pred = np.clip(gt + local.normal(0, noise, gt.shape), 0, 1)
        mask = np.zeros((64, 64))
        mask[12:44, 10 + 6 * i : 50] = 1.0
        save_image(ImageTensor(gt), gt_dir / f"img{i}.png")
        save_image(ImageTensor(pred), pred_dir / f"img{i}.png")
        save_mask(ShadowMask(mask), mask_dir / f"img{i}.png")

rows = []
for name in ("noisy", "better"):
    per_image, aggregate = evaluate_dir(
        out / name / "pred", out / name / "gt", out / name / "mask",
        resize=64, out_dir=out / name,
    )
    rows.append((name, aggregate))
    print(f"{name}: per-image rows {len(per_image)}, "
          f"rmse_all {aggregate.rmse_all:.3f}, ssim {aggregate.ssim:.4f}, psnr {aggregate.psnr:.2f}")

print()
print(render_table(rows, label_header="Model", bold_best=True))
print("full CSVs under", out)
