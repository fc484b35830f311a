"""What a shared feature extractor leaks about glyph images.

Features from a one-layer extractor are inverted by gradient descent on
the input. A wide layer is invertible and the glyph comes back; a narrow
layer throws information away and the reconstruction stays blurred.

    python demos/inversion.py
"""

import numpy as np

from gefl.datasets import make_glyphs
from gefl.metrics import invert_feature
from gefl.nn import mlp


def show(img, side=8):
    return "\n".join("".join("#" if v > 0.5 else "." for v in row) for row in img.reshape(side, side))


glyphs = make_glyphs(4, 8, 1, 0.0, 0, seed=0)
x = glyphs.inputs[:1]
for width in (64, 8):
    fe = mlp([64, width], activation="tanh", out_activation="tanh", rng=np.random.default_rng(1))
    res = invert_feature(fe, fe(x), steps=2000, lr=0.5, tv_weight=1e-3)
    print(f"feature width {width}: pixel error {np.abs(res.x - x).mean():.3f}")
    print(show(res.x[0]), end="\n\n")
print("original")
print(show(x[0]))
