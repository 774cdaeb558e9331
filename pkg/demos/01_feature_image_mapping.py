"""
Frozen features as a tiny image
===============================

A cached ViT example is an N x C token matrix. Reshaping the tokens into a
sqrt(N) x sqrt(N) grid and rescaling the values to [0, 1] turns it into
something image operations understand. The inverse map brings the result back
to feature space.
"""

import numpy as np

from frofa import AugmentationSpec, apply_frofa, feature_to_image, generate_synthetic, image_to_feature
from frofa.core import to_grid, to_tokens

# one synthetic example: 16 tokens, 8 channels
cache = generate_synthetic(num_classes=3, per_class=2, N=16, C=8, seed=0)
tokens = cache.features[0]
print("tokens", tokens.shape, "grid", to_grid(tokens).shape)

# the grid is a pure reshape, so the round trip is exact
assert np.array_equal(to_tokens(to_grid(tokens)), tokens)

# global scope: one (min, max) pair for the whole example
mapped = feature_to_image(to_grid(tokens), "global")
print("global range  ", mapped.grid.min(), mapped.grid.max())

# per-channel scope: every channel is stretched to [0, 1] on its own
per_channel = feature_to_image(to_grid(tokens), "per_channel")
print("channel mins  ", np.round(per_channel.grid.min(axis=(0, 1)), 3))
print("channel maxes ", np.round(per_channel.grid.max(axis=(0, 1)), 3))

back = image_to_feature(mapped)
print("round trip max abs error", np.abs(to_tokens(back) - tokens).max())

# brightness in image space, three ways of sampling the shift
for variant in ("default", "channel", "channel2"):
    spec = AugmentationSpec("brightness", 0.5, variant=variant)
    out = apply_frofa(tokens, spec, rng_key=(0, 1))
    shift = (out - tokens).mean(axis=0)
    print(f"{variant:9s} mean shift per channel", np.round(shift, 2))
