"""How the nearest-neighbour memorization ratio reacts to overfitting.

A diffusion model is fit to only sixteen training points. Early on its
samples are noise and sit far from everything, so the ratio is near zero.
After long training the samples collapse onto the training points and the
ratio climbs above one: synthetic data is now closer to the training set
than fresh held-out data is.

    python demos/memorization.py
"""

import numpy as np

from gefl import rng as rngs
from gefl.datasets import make_blobs, split_train_val
from gefl.genmodels import build_generative
from gefl.metrics import mnd_ratio

ds = make_blobs(4, 8, 200, 1.5, seed=0)
train, test = split_train_val(ds, 0.5, seed=0)
tiny, val = train.subset(np.arange(16)), test.subset(np.arange(64))

gen = build_generative("cddpm", 4, 8, rng=rngs.stream(0, "demo"))
draw = rngs.stream(0, "train")
done = 0
for checkpoint in (20, 200, 1000, 3000):
    for _ in range(checkpoint - done):
        gen.train_step(tiny.inputs, tiny.labels, draw)
    done = checkpoint
    syn = gen.sample(val.labels, rngs.stream(0, "sample"))
    rep = mnd_ratio(tiny.inputs, syn, val.inputs)
    print(f"{checkpoint:>5} steps: mean ratio {rep.mean_ratio:.3f}  duplicates {rep.duplicate_hits}")
