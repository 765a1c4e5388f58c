"""Feed-forward resistance-to-shape regressor with two architecture presets.

``strip``: a 3x3 convolution with 32 filters over the stacked resistance window, dropout
0.5, flattened into a linear output layer.  ``finger``: dense layers of 32 and 16 units
with dropout 0.2.  Hidden units use tanh.  Inputs and targets are standardized with
statistics from the training set.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import Diverged, ShapeMismatch, ValidationError

PRESETS = {
    "strip": {"architecture": "conv", "filters": 32, "kernel": 3, "hidden": (), "dropout": 0.5, "window": 5},
    "finger": {"architecture": "dense", "filters": 0, "kernel": 0, "hidden": (32, 16), "dropout": 0.2, "window": 1},
    "linear": {"architecture": "dense", "filters": 0, "kernel": 0, "hidden": (), "dropout": 0.0, "window": 1},
}


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out))


class ShapeRegressor(RegressorMixin, BaseEstimator):
    """Maps a window of resistance vectors to a shape vector.

    ``X`` may be ``(n, window, m)`` or flattened ``(n, window * m)`` with the oldest
    reading first.  Training is mini-batch SGD with momentum on the mean squared error;
    the parameters with the lowest validation loss are kept.
    """

    def __init__(self, preset="finger", window=None, hidden=None, dropout=None, epochs=200,
                 learning_rate=1e-3, momentum=0.9, batch_size=64, random_state=0):
        self.preset = preset
        self.window = window
        self.hidden = hidden
        self.dropout = dropout
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.random_state = random_state

    # -- configuration -------------------------------------------------------------
    def _config(self):
        if self.preset not in PRESETS:
            raise ValidationError(f"unknown preset {self.preset!r}")
        cfg = dict(PRESETS[self.preset])
        if self.window is not None:
            cfg["window"] = int(self.window)
        if self.hidden is not None:
            cfg["hidden"] = tuple(self.hidden)
        if self.dropout is not None:
            cfg["dropout"] = float(self.dropout)
        return cfg

    def _as_windows(self, X, window=None):
        X = np.asarray(X, float)
        w = window if window is not None else self.window_
        if X.ndim == 3:
            if X.shape[1] != w:
                raise ShapeMismatch(f"window length {X.shape[1]} != {w}")
            X = X.reshape(len(X), -1)
        return X

    # -- network -------------------------------------------------------------------
    def _init_params(self, rng, n_in, n_out):
        cfg = self.cfg_
        layers = []
        if cfg["architecture"] == "conv":
            k, f = cfg["kernel"], cfg["filters"]
            h, m = self.window_, n_in // self.window_
            if h < k or m < k:
                raise ValidationError(f"conv preset needs a window and segment count >= {k}")
            layers.append({"type": "conv", "W": _glorot(rng, k * k, f), "b": np.zeros(f)})
            width = (h - k + 1) * (m - k + 1) * f
        else:
            width = n_in
        for units in cfg["hidden"]:
            layers.append({"type": "dense", "W": _glorot(rng, width, units), "b": np.zeros(units)})
            width = units
        layers.append({"type": "dense", "W": _glorot(rng, width, n_out), "b": np.zeros(n_out)})
        return layers

    def _patches(self, Xs):
        k = self.cfg_["kernel"]
        img = Xs.reshape(len(Xs), self.window_, -1)
        p = np.lib.stride_tricks.sliding_window_view(img, (k, k), axis=(1, 2))
        return p.reshape(len(Xs), -1, k * k)

    def _forward(self, layers, Xs, masks=None):
        """Return output and the cache of per-layer inputs/activations."""
        cache = []
        a = Xs
        n_layers = len(layers)
        for i, layer in enumerate(layers):
            if layer["type"] == "conv":
                patches = self._patches(a)
                z = patches @ layer["W"] + layer["b"]
                cache.append(patches)
                a = np.tanh(z).reshape(len(Xs), -1)
            else:
                cache.append(a)
                z = a @ layer["W"] + layer["b"]
                a = z if i == n_layers - 1 else np.tanh(z)
            if i < n_layers - 1:
                cache.append(a)
                if masks is not None:
                    a = a * masks[i]
        return a, cache

    def _backward(self, layers, cache, masks, grad_out):
        grads = [None] * len(layers)
        g = grad_out
        for i in reversed(range(len(layers))):
            layer = layers[i]
            if i < len(layers) - 1:
                act = cache[2 * i + 1]
                if masks is not None:
                    g = g * masks[i]
                g = g * (1.0 - act * act)
            inp = cache[2 * i]
            if layer["type"] == "conv":
                gz = g.reshape(len(g), -1, layer["W"].shape[1])
                grads[i] = {"W": np.einsum("npk,npf->kf", inp, gz), "b": gz.sum(axis=(0, 1))}
            else:
                grads[i] = {"W": inp.T @ g, "b": g.sum(axis=0)}
                if i > 0:
                    g = g @ layer["W"].T
        return grads

    def _dropout_masks(self, rng, layers, n, Xs):
        p = self.cfg_["dropout"]
        if p <= 0:
            return None
        _, cache = self._forward(layers, Xs[:1])
        masks = []
        for i in range(len(layers) - 1):
            width = cache[2 * i + 1].shape[1]
            masks.append((rng.random((n, width)) >= p) / (1.0 - p))
        return masks

    def loss_and_grads(self, layers, Xs, Ys, masks=None):
        """Mean squared error on standardized data and its parameter gradients."""
        out, cache = self._forward(layers, Xs, masks)
        diff = out - Ys
        loss = float(np.mean(diff * diff))
        grads = self._backward(layers, cache, masks, 2.0 * diff / diff.size)
        return loss, grads

    def _loss(self, layers, Xs, Ys):
        out, _ = self._forward(layers, Xs)
        return float(np.mean((out - Ys) ** 2))

    # -- estimator API -------------------------------------------------------------
    def fit(self, X, y, X_val=None, y_val=None):
        self.cfg_ = self._config()
        self.window_ = self.cfg_["window"]
        X = self._as_windows(X, self.window_)
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        y = y.reshape(len(y), -1)
        if X.shape[1] % self.window_:
            raise ShapeMismatch("input width is not a multiple of the window length")
        self.n_features_in_ = X.shape[1]
        self.n_segments_ = X.shape[1] // self.window_
        self.x_mean_, self.x_scale_ = X.mean(0), X.std(0)
        self.x_scale_[self.x_scale_ < 1e-12] = 1.0
        self.y_mean_, self.y_scale_ = y.mean(0), y.std(0)
        self.y_scale_[self.y_scale_ < 1e-12] = 1.0
        Xs = (X - self.x_mean_) / self.x_scale_
        Ys = (y - self.y_mean_) / self.y_scale_
        if X_val is not None:
            Xv = check_array(self._as_windows(X_val, self.window_))
            Yv = (np.asarray(y_val, float).reshape(len(Xv), -1) - self.y_mean_) / self.y_scale_
            Xv = (Xv - self.x_mean_) / self.x_scale_
        else:
            Xv, Yv = Xs, Ys
        rng = np.random.default_rng(self.random_state)
        layers = self._init_params(rng, X.shape[1], y.shape[1])
        velocity = [{k: np.zeros_like(v) for k, v in L.items() if k != "type"} for L in layers]
        best = (np.inf, None, -1)
        self.loss_curve_, self.validation_curve_ = [], []
        n = len(Xs)
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                masks = self._dropout_masks(rng, layers, len(idx), Xs)
                _, grads = self.loss_and_grads(layers, Xs[idx], Ys[idx], masks)
                for L, G, V in zip(layers, grads, velocity):
                    for key in V:
                        V[key] = self.momentum * V[key] - self.learning_rate * G[key]
                        L[key] = L[key] + V[key]
            train_loss = self._loss(layers, Xs, Ys)
            val_loss = self._loss(layers, Xv, Yv)
            if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
                raise Diverged(f"loss became non-finite at epoch {epoch}")
            self.loss_curve_.append(train_loss)
            self.validation_curve_.append(val_loss)
            if val_loss < best[0]:
                best = (val_loss, [{k: (v.copy() if k != "type" else v) for k, v in L.items()}
                                   for L in layers], epoch)
        self.layers_ = best[1] if best[1] is not None else layers
        self.best_epoch_ = best[2]
        return self

    def predict(self, X):
        check_is_fitted(self, "layers_")
        X = check_array(self._as_windows(X))
        if X.shape[1] != self.n_features_in_:
            raise ShapeMismatch(f"expected {self.n_features_in_} input values, got {X.shape[1]}")
        out, _ = self._forward(self.layers_, (X - self.x_mean_) / self.x_scale_)
        return out * self.y_scale_ + self.y_mean_

    # -- persistence ---------------------------------------------------------------
    def to_json(self) -> dict:
        check_is_fitted(self, "layers_")
        return {
            "params": self.get_params(),
            "architecture": self.cfg_,
            "variant": "conv2d" if self.cfg_["architecture"] == "conv" else "dense",
            "window": self.window_,
            "n_features_in": self.n_features_in_,
            "layer_sizes": [list(L["W"].shape) for L in self.layers_],
            "layers": [{"type": L["type"], "W": L["W"].tolist(), "b": L["b"].tolist()} for L in self.layers_],
            "x_mean": self.x_mean_.tolist(), "x_scale": self.x_scale_.tolist(),
            "y_mean": self.y_mean_.tolist(), "y_scale": self.y_scale_.tolist(),
            "best_epoch": self.best_epoch_,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ShapeRegressor":
        params = dict(d["params"])
        if params.get("hidden") is not None:
            params["hidden"] = tuple(params["hidden"])
        reg = cls(**params)
        reg.cfg_ = dict(d["architecture"])
        reg.cfg_["hidden"] = tuple(reg.cfg_["hidden"])
        reg.window_ = d["window"]
        reg.n_features_in_ = d["n_features_in"]
        reg.n_segments_ = reg.n_features_in_ // reg.window_
        reg.layers_ = [{"type": L["type"], "W": np.array(L["W"], float), "b": np.array(L["b"], float)}
                       for L in d["layers"]]
        for key in ("x_mean", "x_scale", "y_mean", "y_scale"):
            setattr(reg, key + "_", np.array(d[key], float))
        reg.best_epoch_ = d.get("best_epoch", -1)
        return reg


def save_regressor(reg: ShapeRegressor, path) -> None:
    Path(path).write_text(json.dumps(reg.to_json()))


def load_regressor(path) -> ShapeRegressor:
    return ShapeRegressor.from_json(json.loads(Path(path).read_text()))


def train_regressor(dataset, preset: str = "finger", epochs: int = 200, seed: int = 0,
                    **params) -> ShapeRegressor:
    """Fit on the ``train`` split, select on ``validation`` (falls back to train)."""
    train = dataset.subset("train")
    if len(train) == 0:
        raise ValidationError("dataset has no training samples")
    val = dataset.subset("validation")
    reg = ShapeRegressor(preset=preset, window=dataset.window, epochs=epochs, random_state=seed, **params)
    if len(val):
        return reg.fit(train.X, train.Y, val.X, val.Y)
    return reg.fit(train.X, train.Y)


def predict_shape(reg: ShapeRegressor, window) -> np.ndarray:
    """Shape vector for one ``(window, m)`` stack of resistance readings (oldest first)."""
    window = np.asarray(window, float)
    if window.ndim == 1:
        window = window[None, :]
    if window.shape[0] != reg.window_ or window.size != reg.n_features_in_:
        raise ShapeMismatch(f"expected a ({reg.window_}, {reg.n_segments_}) window, got {window.shape}")
    return reg.predict(window.reshape(1, -1))[0]
