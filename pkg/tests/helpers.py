"""Shared oracles for the unit and acceptance suites."""
import itertools

import numpy as np

from softproprio.inverse import QpProblem
from softproprio.regressor import ShapeRegressor


def random_qp(rng, n=None, with_equality=True):
    """Random least-squares QP of dimension <= 3 with box bounds and sometimes one equality row."""
    n = n or int(rng.integers(1, 4))
    m = int(rng.integers(n, n + 3))
    W = rng.normal(size=(m, n))
    d = rng.normal(size=m) * 2
    lo = -rng.uniform(0.1, 2, n)
    hi = rng.uniform(0.1, 2, n)
    eq = {}
    if with_equality and n > 1 and rng.random() < 0.5:
        k = int(rng.integers(n))
        eq[k] = float(rng.uniform(lo[k], hi[k]))
    return QpProblem(W, d, np.column_stack([lo, hi]), eq, 0.0)


def grid_minimum(p: QpProblem, levels=4, points=41):
    """Coarse-to-fine exhaustive search over the box; the last lattice steps at 1e-3 of the width."""
    lo, hi = p.bounds[:, 0].copy(), p.bounds[:, 1].copy()
    for k, v in p.equality.items():
        lo[k] = hi[k] = v
    width = hi - lo

    def best_on(axes):
        pts = np.array(list(itertools.product(*axes)))
        r = pts @ p.W.T - p.delta_target
        vals = np.einsum("ij,ij->i", r, r)
        i = int(np.argmin(vals))
        return pts[i], float(vals[i])

    best_x, _ = best_on([np.linspace(lo[i], hi[i], points) for i in range(p.dim)])
    for level in range(1, levels):
        half = width * 2.5 ** -level
        a, b = np.maximum(lo, best_x - half), np.minimum(hi, best_x + half)
        best_x, _ = best_on([np.linspace(a[i], b[i], points) for i in range(p.dim)])
    _, val = best_on([np.clip(best_x[i] + width[i] * 1e-3 * np.arange(-20, 21), lo[i], hi[i])
                      for i in range(p.dim)])
    return val


def fitted_regressor(preset, n_segments=8, n_out=8, seed=0):
    """A regressor fitted for one epoch on random data, ready for gradient checks."""
    rng = np.random.default_rng(seed)
    reg = ShapeRegressor(preset=preset, epochs=1, random_state=seed)
    w = 5 if preset == "strip" else 1
    X = rng.normal(size=(40, w, n_segments))
    Y = rng.normal(size=(40, n_out))
    return reg.fit(X, Y), X, Y


def gradient_check(reg, X, Y, n_params=5, step=1e-5, seed=0):
    """Worst relative error between analytic and central-difference gradients on random parameters.

    Dropout masks are drawn once and held fixed so the loss is a deterministic function.
    The denominator has a 1e-6 floor: some entries are structurally zero (bias gradients of
    a linear layer on standardized inputs) and their difference quotient is pure round-off.
    """
    rng = np.random.default_rng(seed)
    Xs = (reg._as_windows(X) - reg.x_mean_) / reg.x_scale_
    Ys = (np.asarray(Y, float) - reg.y_mean_) / reg.y_scale_
    layers = [{k: (v.copy() if k != "type" else v) for k, v in L.items()} for L in reg.layers_]
    masks = reg._dropout_masks(rng, layers, len(Xs), Xs)
    _, grads = reg.loss_and_grads(layers, Xs, Ys, masks)
    keys = [(i, k) for i, L in enumerate(layers) for k in ("W", "b")]
    worst = 0.0
    for _ in range(n_params):
        i, k = keys[int(rng.integers(len(keys)))]
        idx = tuple(int(rng.integers(s)) for s in layers[i][k].shape)
        orig = layers[i][k][idx]
        layers[i][k][idx] = orig + step
        up, _ = reg.loss_and_grads(layers, Xs, Ys, masks)
        layers[i][k][idx] = orig - step
        down, _ = reg.loss_and_grads(layers, Xs, Ys, masks)
        layers[i][k][idx] = orig
        fd = (up - down) / (2 * step)
        an = grads[i][k][idx]
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    return worst
