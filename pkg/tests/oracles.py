"""Independent oracles used by the acceptance suite.

Everything here recomputes expectations from first principles (finite
differences, sorting-based statistics, brute-force confusion counts) so the
checks stay independent of the implementation paths they validate.
"""

import numpy as np


def numerical_param_grads(params, compute_loss, step=1e-5):
    """Central finite differences over every parameter of a network."""
    grads = []
    for layer in params.layers:
        layer_grads = []
        for arr in (layer.weights, layer.biases):
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + step
                up = compute_loss()
                arr[idx] = old - step
                down = compute_loss()
                arr[idx] = old
                g[idx] = (up - down) / (2 * step)
            layer_grads.append(g)
        grads.append(layer_grads)
    return grads


def max_relative_error(analytic, numerical):
    worst = 0.0
    for a_layer, n_layer in zip(analytic, numerical):
        for a, n in [(a_layer.weights, n_layer[0]), (a_layer.biases, n_layer[1])]:
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-3)
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def ks_statistic(samples, cdf):
    """Two-sided Kolmogorov-Smirnov statistic against an analytic CDF."""
    x = np.sort(np.asarray(samples))
    n = len(x)
    c = cdf(x)
    hi = np.arange(1, n + 1) / n
    lo = np.arange(0, n) / n
    return max(float(np.max(np.abs(hi - c))), float(np.max(np.abs(c - lo))))


def spearman_rho(x, y):
    """Rank correlation via Pearson on midranks (handles ties)."""

    def ranks(v):
        v = np.asarray(v, dtype=float)
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            r[order[i : j + 1]] = (i + j) / 2.0 + 1.0
            i = j + 1
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx * ry).sum() / np.sqrt((rx**2).sum() * (ry**2).sum()))
