"""The heterogeneous MLP zoo used as client target networks.

A target network is ``header_m(fe(x))``. The feature extractor ``fe`` is
the first ``hl`` layers of a common trunk (identity when ``hl == 0``); the
headers differ per architecture index. At the maximal level the whole
network, classifier included, is shared and every header is the identity.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError
from .nn import Activation, Dense, Network, mlp

HEADER_HIDDEN: tuple[tuple[int, ...], ...] = (
    (),
    (16,),
    (32,),
    (16, 16),
    (32, 16),
    (8,),
    (24, 12),
    (32, 32),
    (12, 12, 12),
    (24,),
)

DEFAULT_TRUNK = (32, 16)


def max_level(trunk: Sequence[int]) -> int:
    return len(trunk) + 1


def feature_extractor(in_dim: int, num_classes: int, hl: int, trunk: Sequence[int] = DEFAULT_TRUNK,
                      rng: np.random.Generator | None = None) -> Network:
    if not 0 <= hl <= max_level(trunk):
        raise ConfigError(f"homogeneity level must lie in [0, {max_level(trunk)}]")
    if hl == 0:
        return Network([], dim=in_dim)
    dims = [in_dim, *trunk[:hl]] if hl <= len(trunk) else [in_dim, *trunk, num_classes]
    layers = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        layers.append(Dense(a, b))
        if hl <= len(trunk) or i < len(dims) - 2:
            layers.append(Activation("relu"))
    return Network(layers, rng=rng)


def header(arch: int, feat_dim: int, num_classes: int, hl: int,
           trunk: Sequence[int] = DEFAULT_TRUNK, rng: np.random.Generator | None = None) -> Network:
    if hl == max_level(trunk):
        return Network([], dim=num_classes)
    if not 0 <= arch < len(HEADER_HIDDEN):
        raise ConfigError(f"architecture index must lie in [0, {len(HEADER_HIDDEN)})")
    return mlp([feat_dim, *HEADER_HIDDEN[arch], num_classes], rng=rng)


def target_network(arch: int, in_dim: int, num_classes: int, hl: int = 0,
                   trunk: Sequence[int] = DEFAULT_TRUNK,
                   rng: np.random.Generator | None = None) -> Network:
    fe = feature_extractor(in_dim, num_classes, hl, trunk, rng)
    return fe.concat(header(arch, fe.out_dim, num_classes, hl, trunk, rng))
