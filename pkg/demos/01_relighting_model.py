"""Walkthrough of the relighting model and the enhancement blend.

Builds a synthetic shadowed scene, relights it with the known gain field,
applies the quadratic brightness curve, and sweeps the blend weight.
Outputs land in demos/out/01/.
"""

from pathlib import Path

import numpy as np

from deshadow import ImageTensor, save_image
from deshadow.illumination import CurveParams, apply_shadow_model, blend_final, enhance_second_order

out = Path(__file__).parent / "out" / "01"
out.mkdir(parents=True, exist_ok=True)

# A smooth scene with a rectangle darkened by a factor of 1 / (1 + gain).
rng = np.random.default_rng(0)
yy, xx = np.mgrid[0:128, 0:128] / 128.0
clean = np.stack([0.45 + 0.35 * yy, 0.55 + 0.2 * xx, 0.5 + 0.2 * yy * xx], axis=-1)

mask = np.zeros((128, 128))
mask[30:90, 40:100] = 1.0
gain_true = 0.8
shadowed = clean * (mask[..., None] / (1.0 + gain_true) + (1.0 - mask[..., None]))

save_image(ImageTensor(np.clip(clean, 0, 1)), out / "clean.png")
save_image(ImageTensor(np.clip(shadowed, 0, 1)), out / "shadowed.png")

# Relighting with the exact gain restores the clean image inside the mask
# and leaves the outside untouched.
relit = apply_shadow_model(shadowed, np.full_like(shadowed, gain_true), mask)
print("max |relit - clean| =", np.abs(relit - clean).max())
save_image(ImageTensor(relit), out / "relit.png")

# The quadratic curve brightens mid-tones; 0 and 1 are fixed points.
curve = CurveParams(a1=0.6, a2=0.3)
enhanced = enhance_second_order(shadowed, curve)
print("mean brightness: shadowed %.3f -> enhanced %.3f" % (shadowed.mean(), enhanced.mean()))

# Blend sweep: alpha 0 is pure shadow removal, alpha 1 pure enhancement.
for alpha in (0.0, 0.5, 1.0):
    final = blend_final(enhanced, relit, alpha)
    save_image(ImageTensor(np.clip(final, 0, 1)), out / f"final_alpha{alpha:.1f}.png")
    print(f"alpha={alpha}: mean {final.mean():.4f}")

print("wrote", sorted(p.name for p in out.glob("*.png")))
