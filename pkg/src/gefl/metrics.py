"""Accuracy, memorization ratio, feature inversion and communication accounting."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .datasets import LabeledDataset
from .errors import ConfigError, DomainError, ShapeError
from .nn import Network


def accuracy(net: Network, inputs: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        raise DomainError("empty test set")
    return float(np.mean(np.argmax(net(inputs), axis=1) == labels))


def mean_accuracy(targets: Mapping[int, Network], test: LabeledDataset,
                  fe: Network | None = None) -> tuple[dict[int, float], float]:
    """Top-1 accuracy per architecture and their unweighted mean."""
    if len(test) == 0:
        raise DomainError("empty test set")
    x = fe(test.inputs) if fe is not None and fe.param_count else test.inputs
    per = {m: accuracy(net, x, test.labels) for m, net in sorted(targets.items())}
    return per, float(sum(per.values()) / len(per))


# memorization ----------------------------------------------------------


@dataclass
class MndReport:
    per_sample_ratios: list[float]
    mean_ratio: float
    distance_kind: str
    synthetic_size: int
    validation_size: int
    duplicate_hits: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def nearest_distances(points: np.ndarray, pool: np.ndarray, block: int = 256) -> np.ndarray:
    """Euclidean distance from every row of ``points`` to its nearest row of ``pool``.

    Squared differences are accumulated coordinate by coordinate in ascending
    order, so the result does not depend on BLAS or on blocking.
    """
    out = np.empty(points.shape[0])
    for s in range(0, points.shape[0], block):
        p = points[s:s + block]
        acc = np.zeros((p.shape[0], pool.shape[0]))
        for j in range(points.shape[1]):
            diff = p[:, j, None] - pool[None, :, j]
            acc += diff * diff
        out[s:s + block] = np.sqrt(acc.min(axis=1))
    return out


def mnd_ratio(probe: np.ndarray, synthetic: np.ndarray, validation: np.ndarray,
              distance: str = "l2", embed: Callable[[np.ndarray], np.ndarray] | None = None) -> MndReport:
    """Nearest-validation over nearest-synthetic distance for each probe point.

    Ratios above 1 mean synthetic samples sit closer to training points than
    held-out real data does. Probes whose nearest synthetic sample is an exact
    duplicate (distance 0) are counted in ``duplicate_hits`` and left out of the
    mean instead of contributing an infinite ratio.
    """
    probe, synthetic, validation = (np.atleast_2d(np.asarray(a, dtype=np.float64))
                                    for a in (probe, synthetic, validation))
    if synthetic.shape[0] != validation.shape[0] or synthetic.shape[0] < 1:
        raise DomainError("synthetic and validation sets must be non-empty and of equal size")
    if not probe.shape[1] == synthetic.shape[1] == validation.shape[1]:
        raise ShapeError("probe, synthetic and validation dims disagree")
    if distance == "probe_feature":
        if embed is None:
            raise ConfigError("probe_feature distance needs an embedding function")
        probe, synthetic, validation = embed(probe), embed(synthetic), embed(validation)
    elif distance != "l2":
        raise ConfigError(f"unknown distance {distance!r}")
    num = nearest_distances(probe, validation)
    den = nearest_distances(probe, synthetic)
    ratios, dup = [], 0
    for a, b in zip(num, den):
        if b == 0.0:
            dup += 1
        else:
            ratios.append(float(a / b))
    total = 0.0
    for r in ratios:
        total += r
    mean = total / len(ratios) if ratios else float("nan")
    return MndReport(ratios, mean, distance, synthetic.shape[0], validation.shape[0], dup)


def probe_embedding(net: Network, n_dense: int) -> Callable[[np.ndarray], np.ndarray]:
    """Embedding given by the first ``n_dense`` dense layers of a trained classifier."""
    fe, _ = net.split(n_dense)
    return fe.forward


# inversion -------------------------------------------------------------


@dataclass
class InversionResult:
    x: np.ndarray
    residual: float
    objective_history: list[float] = field(default_factory=list)
    residual_history: list[float] = field(default_factory=list)


def _tv(x: np.ndarray, side: int) -> tuple[float, np.ndarray]:
    """Squared-difference total variation over a ``side x side`` grid, with gradient."""
    img = x.reshape(x.shape[0], side, side)
    dv = img[:, 1:, :] - img[:, :-1, :]
    dh = img[:, :, 1:] - img[:, :, :-1]
    g = np.zeros_like(img)
    g[:, 1:, :] += 2 * dv
    g[:, :-1, :] -= 2 * dv
    g[:, :, 1:] += 2 * dh
    g[:, :, :-1] -= 2 * dh
    return float(np.sum(dv * dv) + np.sum(dh * dh)), g.reshape(x.shape)


def invert_feature(fe: Network, target_feature: np.ndarray, steps: int = 500, lr: float = 0.05,
                   tv_weight: float = 1e-3, image_side: int | None = None,
                   max_halvings: int = 40) -> InversionResult:
    """Recover inputs in [0, 1]^d whose features match ``target_feature``.

    Projected gradient descent on ``||F(x) - f||^2 + tv_weight * TV(x)`` from
    a constant 0.5 image. A step that would raise the objective is retried
    with half the step size, so the objective never increases.
    """
    f = np.atleast_2d(np.asarray(target_feature, dtype=np.float64))
    if f.shape[1] != fe.out_dim:
        raise ShapeError(f"feature dim {f.shape[1]} != extractor output {fe.out_dim}")
    d = fe.in_dim
    if tv_weight > 0:
        if image_side is None:
            side = int(round(np.sqrt(d)))
            if side * side != d:
                raise ConfigError(f"tv_weight > 0 needs square image inputs, got dim {d}")
            image_side = side
        elif image_side * image_side != d:
            raise ConfigError(f"image_side {image_side} does not match input dim {d}")

    def evaluate(x):
        out, cache = fe.forward_cache(x)
        r = out - f
        data = float(np.sum(r * r))
        obj = data
        g = fe.backward(cache, 2.0 * r)[1]
        if tv_weight > 0:
            tv, gtv = _tv(x, image_side)
            obj += tv_weight * tv
            g = g + tv_weight * gtv
        return obj, np.sqrt(data), g

    x = np.full((f.shape[0], d), 0.5)
    obj, res, g = evaluate(x)
    objs, ress = [obj], [res]
    step = lr
    for _ in range(steps):
        for _ in range(max_halvings):
            cand = np.clip(x - step * g, 0.0, 1.0)
            c_obj, c_res, c_g = evaluate(cand)
            if c_obj <= obj:
                break
            step *= 0.5
        else:
            break
        x, obj, res, g = cand, c_obj, c_res, c_g
        objs.append(obj)
        ress.append(res)
    return InversionResult(x, res, objs, ress)


# communication ---------------------------------------------------------


@dataclass
class CommLedger:
    """Per-client float counts for one run, following the closed forms of the
    communication table: FE, KA and (conditional) TN terms, each up and down.

    ``tn_up``/``tn_down`` map architecture index to the per-client count, zero
    for architectures no other client shares. ``warmup_header_*`` holds the
    per-architecture header exchange during the warm-up phase of the
    feature-space variant, which the table folds away.
    """

    fe_up: int = 0
    fe_down: int = 0
    ka_up: int = 0
    ka_down: int = 0
    tn_up: dict[int, int] = field(default_factory=dict)
    tn_down: dict[int, int] = field(default_factory=dict)
    warmup_header_up: dict[int, int] = field(default_factory=dict)
    warmup_header_down: dict[int, int] = field(default_factory=dict)

    def client_up(self, arch: int) -> int:
        return self.fe_up + self.ka_up + self.tn_up.get(arch, 0) + self.warmup_header_up.get(arch, 0)

    def client_down(self, arch: int) -> int:
        return (self.fe_down + self.ka_down + self.tn_down.get(arch, 0)
                + self.warmup_header_down.get(arch, 0))

    def totals(self, client_archs: Sequence[int]) -> tuple[int, int]:
        """System-wide (upload, download) floats over all clients."""
        return (sum(self.client_up(a) for a in client_archs),
                sum(self.client_down(a) for a in client_archs))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("tn_up", "tn_down", "warmup_header_up", "warmup_header_down"):
            d[k] = {str(m): v for m, v in sorted(d[k].items())}
        return d


METHODS = ("gefl", "geflf", "grouped_fedavg", "local_only", "lg_partial")


def comm_ledger(method: str, client_archs: Sequence[int], t_ka: int, t_tn: int, t_fe: int,
                target_sizes: Mapping[int, int], gen_size: int = 0, fe_size: int = 0,
                header_sizes: Mapping[int, int] | None = None,
                shared_layer_size: int = 0) -> CommLedger:
    """Closed-form float counts for ``method``.

    ``target_sizes`` maps architecture to full target size; ``header_sizes``
    (feature-space variant) to header size; ``shared_layer_size`` is the size
    of the first layer that the partial-averaging baseline shares globally.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    counts: dict[int, int] = {}
    for a in client_archs:
        counts[a] = counts.get(a, 0) + 1
    shared = {m for m, c in counts.items() if c >= 2}
    led = CommLedger()
    if method in ("gefl", "geflf"):
        led.ka_up = led.ka_down = t_ka * gen_size
    if method == "geflf":
        led.fe_up = led.fe_down = t_fe * fe_size
        header_sizes = header_sizes or {}
        for m in counts:
            if m in shared:
                led.tn_up[m] = led.tn_down[m] = t_tn * header_sizes[m]
                led.warmup_header_up[m] = led.warmup_header_down[m] = t_fe * header_sizes[m]
            else:
                led.tn_up[m] = led.tn_down[m] = 0
                led.warmup_header_up[m] = led.warmup_header_down[m] = 0
        return led
    if method == "local_only":
        for m in counts:
            led.tn_up[m] = led.tn_down[m] = 0
        return led
    if method == "lg_partial":
        led.fe_up = led.fe_down = t_tn * shared_layer_size
    for m in counts:
        size = target_sizes[m] - (shared_layer_size if method == "lg_partial" else 0)
        led.tn_up[m] = led.tn_down[m] = t_tn * size if m in shared else 0
    return led


def eval_mode(run: Callable[..., float], cfg, mode: str) -> float:
    """Run ``run(cfg)`` trained on synthetic data only or on synthetic then real data."""
    if mode == "syn_only":
        return run(dataclasses.replace(cfg, t_r=0))
    if mode == "real_plus_syn":
        return run(cfg)
    raise ConfigError(f"unknown eval mode {mode!r}")
