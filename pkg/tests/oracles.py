"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np

from gefl.nn import loss_and_grad


def central_difference(net, x, y, loss, h=1e-6):
    flat = net.flatten_params()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        net.unflatten_params(up)
        f_up, _ = loss_and_grad(net, x, y, loss)
        net.unflatten_params(down)
        f_down, _ = loss_and_grad(net, x, y, loss)
        grad[i] = (f_up - f_down) / (2 * h)
    net.unflatten_params(flat)
    return grad


def relative_error(a, b, floor=1e-4):
    """Max coordinate-wise relative error; the denominator floor makes tiny
    gradients compare on an absolute scale of ``1e-4 * floor``."""
    a, b = np.asarray(a), np.asarray(b)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def brute_mean(vectors):
    """Coordinate-wise mean with exact rational arithmetic, rounded once."""
    from fractions import Fraction
    rows = [list(map(Fraction, v)) for v in vectors]
    k = len(rows)
    return np.array([float(sum(col) / k) for col in zip(*rows)])


def brute_mnd(probe, synthetic, validation):
    """Double-loop nearest-neighbour ratios, summing squared differences in coordinate order."""
    def nearest(p, pool):
        best = np.inf
        for q in pool:
            acc = 0.0
            for a, b in zip(p, q):
                acc += (a - b) * (a - b)
            best = min(best, acc)
        return np.sqrt(best)

    ratios, dup = [], 0
    for p in probe:
        num, den = nearest(p, validation), nearest(p, synthetic)
        if den == 0.0:
            dup += 1
        else:
            ratios.append(num / den)
    total = 0.0
    for r in ratios:
        total += r
    return ratios, (total / len(ratios) if ratios else float("nan")), dup


def brute_aggregate(vectors):
    """Scalar loop over coordinates of ``p_0 + sum_k (p_k - p_0) / K``, in list order."""
    k = len(vectors)
    out = []
    for i in range(len(vectors[0])):
        base = float(vectors[0][i])
        acc = 0.0
        for v in vectors[1:]:
            acc += float(v[i]) - base
        out.append(base + acc / k)
    return np.array(out)


def conditional_only_sampler(model, labels, rng):
    """Reference ancestral sampler with no unconditional branch at all."""
    x = rng.standard_normal((labels.size, model.sample_dim))
    for t in range(model.steps, 0, -1):
        eps = model.predict_eps(x, t, labels)
        beta, abar = model.betas[t - 1], model.alpha_bar[t - 1]
        x = (x - beta / np.sqrt(1 - abar) * eps) / np.sqrt(1 - beta)
        if t > 1:
            x = x + np.sqrt(beta) * rng.standard_normal(x.shape)
    return model._from_unit(x)


def dense_size(widths):
    """Parameter count of a dense stack with the given layer widths."""
    return sum(a * b + b for a, b in zip(widths, widths[1:]))
