"""Candidate scoring and shadow-mask selection, end to end on disk.

Writes a synthetic scene plus four candidate masks in the on-disk layout
(<root>/<image_id>/<k>.png), loads them back, scores every candidate
against its surrounding ring, and selects the shadow mask. Outputs land in
demos/out/02/.
"""

from pathlib import Path

import numpy as np

from deshadow import ImageTensor, ShadowMask, save_image, save_mask
from deshadow.mask_prior import SelectionConfig, load_candidates, select_shadow_mask

out = Path(__file__).parent / "out" / "02"
cands_root = out / "candidates"
(cands_root / "scene").mkdir(parents=True, exist_ok=True)

size = 128
rng = np.random.default_rng(1)
base = np.full((size, size, 3), 0.7) + rng.uniform(-0.03, 0.03, (size, size, 3))
truth = np.zeros((size, size))
truth[36:92, 24:88] = 1.0
img = ImageTensor(np.clip(base * (1.0 - truth[..., None] * 0.55), 0, 1))
save_image(img, out / "scene.png")

# Candidate bag: the real shadow plus three distractors.
candidates = {
    "shadow": truth,
    "bright_corner": np.zeros((size, size)),
    "tiny_speck": np.zeros((size, size)),
    "background": np.ones((size, size)),
}
candidates["bright_corner"][0:30, 0:30] = 1.0
candidates["tiny_speck"][5:7, 120:122] = 1.0
candidates["background"][30:98, 20:94] = 0.0
for name, arr in candidates.items():
    save_mask(ShadowMask(arr), cands_root / "scene" / f"{name}.png")

loaded = load_candidates(cands_root, "scene", image_shape=(size, size))
print(f"loaded {len(loaded)} candidates")

cfg = SelectionConfig(dilation_radius=1)
result = select_shadow_mask(img, loaded, cfg)
for source_id, score in sorted(result.scores.items()):
    marker = "*" if source_id in result.chosen_ids else " "
    print(
        f" {marker} {source_id:14s} darkness {score.darkness:+.3f} "
        f"ring contrast {score.ring_contrast:+.3f} chroma shift {score.chroma_shift:.2f}"
    )

save_mask(result.mask, out / "selected_Ms.png")
inter = np.logical_and(result.mask.data > 0, truth > 0).sum()
union = np.logical_or(result.mask.data > 0, truth > 0).sum()
print(f"low_confidence={result.low_confidence}  IoU vs truth = {inter / union:.3f}")
