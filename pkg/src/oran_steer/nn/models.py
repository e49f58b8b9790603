"""Sequence-to-sequence LSTM autoencoder and a small dense regressor.

Both follow the scikit-learn estimator conventions: hyperparameters in
``__init__``, fitted state in trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .. import container
from .layers import DenseLayer, LstmLayer
from .train import mse, train


class _Network:
    """Shared parameter plumbing over an ordered ``layers_`` dict."""

    def parameters(self):
        return {f"{name}.{key}": arr for name, layer in self.layers_.items()
                for key, arr in layer.params.items()}

    def _pack(self, grads_by_layer):
        return {f"{name}.{key}": g for name, grads in grads_by_layer.items()
                for key, g in grads.items()}

    def get_weights(self):
        return {k: v.copy() for k, v in self.parameters().items()}

    def set_weights(self, weights):
        for key, arr in self.parameters().items():
            if weights[key].shape != arr.shape:
                raise ValueError(f"shape mismatch for {key}: {weights[key].shape} vs {arr.shape}")
            arr[...] = weights[key]


class Seq2SeqAutoencoder(_Network, BaseEstimator):
    """LSTM encoder / LSTM decoder with a dense head.

    The latent code is the final hidden state of the last encoder layer
    (width ``latent_dim``). The decoder receives that code repeated at every
    step and emits ``output_len`` steps of width ``output_dim``. Input and
    output shapes default to the training inputs, giving a plain autoencoder;
    passing explicit targets to :meth:`fit` trains a cross-reconstructor.
    """

    def __init__(self, hidden_size=16, latent_dim=8, n_layers=1, epochs=200, batch_size=32,
                 lr=1e-3, seed=0):
        self.hidden_size = hidden_size
        self.latent_dim = latent_dim
        self.n_layers = n_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def build(self, input_dim, output_dim, output_len):
        rng = np.random.default_rng(self.seed)
        layers = {}
        width = input_dim
        enc_sizes = [self.hidden_size] * (self.n_layers - 1) + [self.latent_dim]
        for i, size in enumerate(enc_sizes):
            layers[f"enc{i}"] = LstmLayer(width, size, rng=rng)
            width = size
        for i in range(self.n_layers):
            layers[f"dec{i}"] = LstmLayer(width, self.hidden_size, rng=rng)
            width = self.hidden_size
        layers["head"] = DenseLayer(width, output_dim, "identity", rng=rng)
        self.layers_ = layers
        self.input_dim_ = input_dim
        self.output_dim_ = output_dim
        self.output_len_ = output_len
        self.loss_history_ = []
        return self

    def _check_input(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or X.shape[2] != self.input_dim_:
            raise ValueError(f"expected (batch, steps, {self.input_dim_}) input, got {X.shape}")
        return X

    def _forward(self, X):
        caches = {}
        h = X
        for i in range(self.n_layers):
            h, caches[f"enc{i}"] = self.layers_[f"enc{i}"].forward(h)
        latent = h[:, -1]
        h = np.repeat(latent[:, None, :], self.output_len_, axis=1)
        for i in range(self.n_layers):
            h, caches[f"dec{i}"] = self.layers_[f"dec{i}"].forward(h)
        out, caches["head"] = self.layers_["head"].forward(h)
        return out, latent, caches

    def _backward(self, dout, caches):
        grads = {}
        dh, grads["head"] = self.layers_["head"].backward(dout, caches["head"])
        for i in reversed(range(self.n_layers)):
            dh, grads[f"dec{i}"] = self.layers_[f"dec{i}"].backward(dh, caches[f"dec{i}"])
        dlatent = dh.sum(axis=1)
        dhs, dlast = None, dlatent
        for i in reversed(range(self.n_layers)):
            dhs, grads[f"enc{i}"] = self.layers_[f"enc{i}"].backward(dhs, caches[f"enc{i}"],
                                                                     dh_last=dlast)
            dlast = None
        return self._pack(grads)

    def forward(self, sequence):
        """Return ``(reconstruction, latent)`` for one (steps, features) sequence."""
        check_is_fitted(self, "layers_")
        seq = np.asarray(sequence, dtype=float)
        if seq.ndim != 2:
            raise ValueError(f"expected a (steps, features) sequence, got shape {seq.shape}")
        out, latent, _ = self._forward(self._check_input(seq[None]))
        return out[0], latent[0]

    def loss_and_grads(self, X, Y):
        out, _, caches = self._forward(X)
        loss, dout = mse(out, Y)
        return loss, self._backward(dout, caches)

    def backward(self, sequence, target):
        """Gradients of the MSE between the reconstruction of ``sequence`` and ``target``."""
        X = self._check_input(np.asarray(sequence, dtype=float)[None])
        return self.loss_and_grads(X, np.asarray(target, dtype=float)[None])[1]

    def fit(self, X, Y=None):
        X = np.asarray(X, dtype=float)
        Y = X if Y is None else np.asarray(Y, dtype=float)
        if X.ndim != 3 or Y.ndim != 3:
            raise ValueError("fit expects (samples, steps, features) arrays")
        self.build(X.shape[2], Y.shape[2], Y.shape[1])
        self.loss_history_, _ = train(self, X, Y, epochs=self.epochs,
                                      batch_size=self.batch_size, lr=self.lr, seed=self.seed)
        return self

    def transform(self, X):
        """Latent codes, shape (samples, latent_dim)."""
        check_is_fitted(self, "layers_")
        return self._forward(self._check_input(X))[1]

    def predict(self, X):
        check_is_fitted(self, "layers_")
        return self._forward(self._check_input(X))[0]

    def reconstruction_loss(self, X, Y=None):
        """Per-sample mean squared reconstruction error against ``Y`` (default ``X``)."""
        out = self.predict(X)
        Y = np.asarray(X if Y is None else Y, dtype=float)
        return np.mean((out - Y) ** 2, axis=(1, 2))

    def to_bytes(self):
        check_is_fitted(self, "layers_")
        meta = {**self.get_params(), "input_dim": self.input_dim_, "output_dim": self.output_dim_,
                "output_len": self.output_len_, "loss_history": list(map(float, self.loss_history_))}
        return container.dumps("seq2seq_ae", meta, self.get_weights())

    @classmethod
    def from_bytes(cls, blob):
        _, meta, arrays = container.loads(blob, "seq2seq_ae")
        model = cls(**{k: meta[k] for k in cls().get_params()})
        model.build(meta["input_dim"], meta["output_dim"], meta["output_len"])
        model.set_weights(arrays)
        model.loss_history_ = meta["loss_history"]
        return model


class DenseRegressor(_Network, RegressorMixin, BaseEstimator):
    """Multilayer perceptron regressor trained with Adam on standardized targets."""

    def __init__(self, hidden=(32, 32), activation="tanh", epochs=300, batch_size=32, lr=1e-2,
                 seed=0):
        self.hidden = hidden
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def _forward(self, X):
        caches = []
        h = (X - self.x_mean_) / self.x_scale_
        for name, layer in self.layers_.items():
            h, cache = layer.forward(h)
            caches.append(cache)
        return h, caches

    def loss_and_grads(self, X, Y):
        out, caches = self._forward(X)
        loss, d = mse(out, (Y - self.y_mean_) / np.where(self.y_scale_ > 0, self.y_scale_, 1.0))
        grads = {}
        for (name, layer), cache in zip(reversed(self.layers_.items()), reversed(caches)):
            d, grads[name] = layer.backward(d, cache)
        return loss, self._pack(grads)

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).reshape(len(X), -1)
        rng = np.random.default_rng(self.seed)
        self.x_mean_ = X.mean(axis=0)
        self.x_scale_ = np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
        self.y_mean_ = y.mean(axis=0)
        # zero scale for a constant target: predictions collapse to its mean exactly
        self.y_scale_ = y.std(axis=0)
        sizes = [X.shape[1], *self.hidden, y.shape[1]]
        layers = {}
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = self.activation if i < len(sizes) - 2 else "identity"
            layers[f"fc{i}"] = DenseLayer(a, b, act, rng=rng)
        self.layers_ = layers
        self.n_features_in_ = X.shape[1]
        self.loss_history_, _ = train(self, X, y, epochs=self.epochs, batch_size=self.batch_size,
                                      lr=self.lr, seed=self.seed)
        return self

    def predict(self, X):
        check_is_fitted(self, "layers_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = self._forward(X)[0] * self.y_scale_ + self.y_mean_
        return out[:, 0] if out.shape[1] == 1 else out

    def to_bytes(self):
        check_is_fitted(self, "layers_")
        meta = {**self.get_params(), "hidden": list(self.hidden), "n_features": self.n_features_in_}
        arrays = {**self.get_weights(), "x_mean": self.x_mean_, "x_scale": self.x_scale_,
                  "y_mean": self.y_mean_, "y_scale": self.y_scale_}
        return container.dumps("dense_regressor", meta, arrays)

    @classmethod
    def from_bytes(cls, blob):
        _, meta, arrays = container.loads(blob, "dense_regressor")
        params = {k: meta[k] for k in cls().get_params()}
        params["hidden"] = tuple(params["hidden"])
        model = cls(**params)
        rng = np.random.default_rng(0)
        sizes = [meta["n_features"], *model.hidden, len(arrays["y_mean"])]
        model.layers_ = {f"fc{i}": DenseLayer(a, b, model.activation if i < len(sizes) - 2 else "identity",
                                              rng=rng)
                         for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))}
        model.set_weights({k: v for k, v in arrays.items() if "." in k})
        model.x_mean_, model.x_scale_ = arrays["x_mean"], arrays["x_scale"]
        model.y_mean_, model.y_scale_ = arrays["y_mean"], arrays["y_scale"]
        model.n_features_in_ = meta["n_features"]
        return model
