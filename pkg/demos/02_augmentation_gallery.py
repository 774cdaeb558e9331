"""
A gallery of feature augmentations
==================================

Every operation from the image toolbox applied to the same 14 x 14 grid of one
channel. The figure is written to ``augmentation_gallery.png``.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from frofa import AugmentationSpec, apply_frofa
from frofa.augmentations import KINDS

# a smooth blob plus noise reads well as an image
yy, xx = np.mgrid[0:14, 0:14]
blob = np.exp(-((yy - 5.0) ** 2 + (xx - 8.0) ** 2) / 12.0)
rng = np.random.default_rng(0)
tokens = (blob[..., None] + 0.1 * rng.normal(size=(14, 14, 4))).reshape(196, 4).astype(np.float32)

# a strong but legal value for each kind
strong = {
    "rotate": (45.0, None), "shear_x": (0.5, None), "shear_y": (0.5, None),
    "translate_x": (4, None), "translate_y": (4, None), "crop": (10, None),
    "resized_crop": (24, None), "inception_crop": (1.0, None), "patch_dropout": (49, None),
    "channel_dropout": (0.5, None), "brightness": (0.5, None), "contrast": (3.0, None),
    "equalize": (1.0, None), "invert": (1.0, None), "posterize": (1, 2),
    "sharpness": (3.0, None), "solarize": (1.0, None), "uniform_noise": (0.3, None),
    "jpeg": (5, 20),
}

kinds = [k for k in KINDS if k != "mixup"]  # mixup needs a batch
fig, axes = plt.subplots(4, 5, figsize=(10, 8))
axes = axes.ravel()
axes[0].imshow(tokens[:, 0].reshape(14, 14), cmap="viridis")
axes[0].set_title("input", fontsize=8)
for ax, kind in zip(axes[1:], kinds):
    v, v2 = strong[kind]
    out = apply_frofa(tokens, AugmentationSpec(kind, v, v2), rng_key=(7, len(kind)))
    side = int(round(np.sqrt(len(out))))
    image = out[:, 0].reshape(side, side) if side * side == len(out) else out[:, 0][None]
    ax.imshow(image, cmap="viridis")
    ax.set_title(kind, fontsize=8)
for ax in axes:
    ax.axis("off")
fig.tight_layout()
fig.savefig("augmentation_gallery.png", dpi=80)
print("wrote augmentation_gallery.png")
