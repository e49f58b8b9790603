"""Classical anomaly detectors: isolation forest, one-class SVM and a linear autoencoder.

All three expose ``fit`` and ``anomaly_score`` (higher means more anomalous)
so the benchmark code can treat them uniformly, plus ``predict`` returning 1
for flagged rows once a threshold is known.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import container
from .nn.layers import DenseLayer
from .nn.models import _Network
from .nn.train import mse, train

EULER_GAMMA = 0.5772156649015329


def average_path_length(n):
    """Expected unsuccessful-search path length in a BST of ``n`` points."""
    n = np.asarray(n, dtype=float)
    out = np.zeros_like(n)
    big = n > 2
    out[big] = 2.0 * (np.log(n[big] - 1.0) + EULER_GAMMA) - 2.0 * (n[big] - 1.0) / n[big]
    out[n == 2] = 1.0
    return out


class IsolationForest(BaseEstimator):
    """Isolation forest with array-backed trees.

    ``score_samples`` returns the anomaly score ``2 ** (-E[h(x)] / c(psi))``
    in (0, 1]; higher is more anomalous (the opposite sign convention from
    scikit-learn's estimator of the same name).
    """

    def __init__(self, n_trees=100, subsample_size=256, contamination=0.1, random_state=0):
        self.n_trees = n_trees
        self.subsample_size = subsample_size
        self.contamination = contamination
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        n, d = X.shape
        rng = np.random.default_rng(self.random_state)
        psi = min(self.subsample_size, n)
        self.max_depth_ = max(int(math.ceil(math.log2(psi))), 0) if psi > 1 else 0
        max_nodes = 2 ** (self.max_depth_ + 1) - 1
        feature = np.full((self.n_trees, max_nodes), -1, dtype=np.int64)
        threshold = np.zeros((self.n_trees, max_nodes))
        left = np.zeros((self.n_trees, max_nodes), dtype=np.int64)
        right = np.zeros((self.n_trees, max_nodes), dtype=np.int64)
        size = np.zeros((self.n_trees, max_nodes))
        for t in range(self.n_trees):
            sample = X[rng.choice(n, size=psi, replace=False)]
            next_free = 1
            stack = [(0, np.arange(psi), 0)]
            while stack:
                node, idx, depth = stack.pop()
                size[t, node] = len(idx)
                if depth >= self.max_depth_ or len(idx) <= 1:
                    continue
                sub = sample[idx]
                lo, hi = sub.min(axis=0), sub.max(axis=0)
                splittable = np.flatnonzero(hi > lo)
                if splittable.size == 0:
                    continue
                q = splittable[rng.integers(splittable.size)]
                p = rng.uniform(lo[q], hi[q])
                mask = sub[:, q] < p
                feature[t, node] = q
                threshold[t, node] = p
                left[t, node], right[t, node] = next_free, next_free + 1
                next_free += 2
                stack.append((left[t, node], idx[mask], depth + 1))
                stack.append((right[t, node], idx[~mask], depth + 1))
        self.feature_, self.threshold_ = feature, threshold
        self.left_, self.right_, self.size_ = left, right, size
        self.psi_ = psi
        self.n_features_in_ = d
        self.score_threshold_ = float(np.quantile(self.score_samples(X), 1.0 - self.contamination))
        return self

    def path_length(self, X):
        """Mean path length over trees, including the c(size) leaf adjustment."""
        check_is_fitted(self, "feature_")
        X = check_array(X, dtype=float)
        rows = np.arange(self.n_trees)[:, None]
        node = np.zeros((self.n_trees, len(X)), dtype=np.int64)
        depth = np.zeros((self.n_trees, len(X)))
        for _ in range(self.max_depth_):
            feat = self.feature_[rows, node]
            internal = feat >= 0
            if not internal.any():
                break
            vals = X[np.arange(len(X))[None, :], np.where(internal, feat, 0)]
            go_left = vals < self.threshold_[rows, node]
            child = np.where(go_left, self.left_[rows, node], self.right_[rows, node])
            node = np.where(internal, child, node)
            depth += internal
        depth += average_path_length(self.size_[rows, node])
        return depth.mean(axis=0)

    def score_samples(self, X):
        norm = float(average_path_length(self.psi_))
        if norm == 0.0:
            return np.ones(len(check_array(X, dtype=float)))
        return np.power(2.0, -self.path_length(X) / norm)

    anomaly_score = score_samples

    def predict(self, X):
        return (self.score_samples(X) > self.score_threshold_).astype(int)

    def to_bytes(self):
        meta = {**self.get_params(), "max_depth": self.max_depth_, "psi": self.psi_,
                "n_features": self.n_features_in_, "score_threshold": self.score_threshold_}
        arrays = {"feature": self.feature_, "threshold": self.threshold_, "left": self.left_,
                  "right": self.right_, "size": self.size_}
        return container.dumps("iforest", meta, arrays)

    @classmethod
    def from_bytes(cls, blob):
        _, meta, arrays = container.loads(blob, "iforest")
        model = cls(**{k: meta[k] for k in cls().get_params()})
        model.max_depth_, model.psi_ = meta["max_depth"], meta["psi"]
        model.n_features_in_, model.score_threshold_ = meta["n_features"], meta["score_threshold"]
        model.feature_, model.threshold_ = arrays["feature"], arrays["threshold"]
        model.left_, model.right_, model.size_ = arrays["left"], arrays["right"], arrays["size"]
        return model


def rbf_kernel(A, B, gamma):
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


class OneClassSVM(BaseEstimator):
    """nu-parameterized one-class SVM with an RBF kernel, solved by SMO.

    Dual: minimize ``0.5 a^T K a`` subject to ``0 <= a_i <= 1/(nu*l)`` and
    ``sum(a) = 1``. Each step moves weight between the maximal violating pair.
    ``decision_function`` is ``sum_i a_i K(x_i, x) - rho``; negative means outlier.
    """

    def __init__(self, nu=0.1, gamma=None, tol=1e-4, max_iter=200_000):
        self.nu = nu
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if not 0.0 < self.nu <= 1.0:
            raise ValueError(f"nu must lie in (0, 1], got {self.nu}")
        n = len(X)
        var = X.var()
        gamma = self.gamma if self.gamma is not None else 1.0 / (X.shape[1] * (var if var > 0 else 1.0))
        K = rbf_kernel(X, X, gamma)
        C = 1.0 / (self.nu * n)
        alpha = np.zeros(n)
        n_full = int(self.nu * n)
        alpha[:n_full] = C
        if n_full < n:
            alpha[n_full] = 1.0 - C * n_full
        G = K @ alpha
        diag = np.diag(K)
        eps = 1e-12
        it = 0
        for it in range(self.max_iter):
            up = alpha < C - eps
            low = alpha > eps
            i = np.flatnonzero(up)[np.argmin(G[up])]
            j = np.flatnonzero(low)[np.argmax(G[low])]
            gap = G[j] - G[i]
            if gap < self.tol:
                break
            curv = max(diag[i] + diag[j] - 2.0 * K[i, j], 1e-12)
            step = min(gap / curv, C - alpha[i], alpha[j])
            alpha[i] += step
            alpha[j] -= step
            G += step * (K[:, i] - K[:, j])
        free = (alpha > eps) & (alpha < C - eps)
        if free.any():
            rho = float(G[free].mean())
        else:
            lo = G[alpha < C - eps].min(initial=np.inf)
            hi = G[alpha > eps].max(initial=-np.inf)
            rho = float((lo + hi) / 2.0)
        sv = alpha > eps
        self.support_vectors_ = X[sv]
        self.dual_coef_ = alpha[sv]
        self.rho_ = rho
        self.gamma_ = gamma
        self.n_iter_ = it
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "support_vectors_")
        X = check_array(X, dtype=float)
        return rbf_kernel(X, self.support_vectors_, self.gamma_) @ self.dual_coef_ - self.rho_

    def anomaly_score(self, X):
        return -self.decision_function(X)

    def predict(self, X):
        return (self.decision_function(X) < 0).astype(int)

    def to_bytes(self):
        meta = {**self.get_params(), "rho": self.rho_, "gamma_fitted": self.gamma_}
        return container.dumps("ocsvm", meta, {"support_vectors": self.support_vectors_,
                                               "dual_coef": self.dual_coef_})

    @classmethod
    def from_bytes(cls, blob):
        _, meta, arrays = container.loads(blob, "ocsvm")
        model = cls(**{k: meta[k] for k in cls().get_params()})
        model.rho_, model.gamma_ = meta["rho"], meta["gamma_fitted"]
        model.support_vectors_, model.dual_coef_ = arrays["support_vectors"], arrays["dual_coef"]
        model.n_features_in_ = model.support_vectors_.shape[1]
        return model


class LinearAutoencoder(_Network, BaseEstimator):
    """Affine encoder and decoder trained with Adam on reconstruction MSE."""

    def __init__(self, latent_dim=4, epochs=200, batch_size=32, lr=1e-3, seed=0):
        self.latent_dim = latent_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def _build(self, n_features):
        rng = np.random.default_rng(self.seed)
        self.layers_ = {"encoder": DenseLayer(n_features, self.latent_dim, rng=rng),
                        "decoder": DenseLayer(self.latent_dim, n_features, rng=rng)}
        self.n_features_in_ = n_features
        return self

    def loss_and_grads(self, X, Y):
        z, c_enc = self.layers_["encoder"].forward(X)
        out, c_dec = self.layers_["decoder"].forward(z)
        loss, d = mse(out, Y)
        dz, g_dec = self.layers_["decoder"].backward(d, c_dec)
        _, g_enc = self.layers_["encoder"].backward(dz, c_enc)
        return loss, self._pack({"encoder": g_enc, "decoder": g_dec})

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self._build(X.shape[1])
        self.loss_history_, _ = train(self, X, X, epochs=self.epochs, batch_size=self.batch_size,
                                      lr=self.lr, seed=self.seed)
        return self

    def transform(self, X):
        check_is_fitted(self, "layers_")
        return self.layers_["encoder"].forward(check_array(X, dtype=float))[0]

    def inverse_transform(self, Z):
        return self.layers_["decoder"].forward(np.asarray(Z, dtype=float))[0]

    def reconstruction_loss(self, X):
        X = check_array(X, dtype=float)
        return np.mean((self.inverse_transform(self.transform(X)) - X) ** 2, axis=1)

    anomaly_score = reconstruction_loss

    def to_bytes(self):
        return container.dumps("linear_ae", {**self.get_params(), "n_features": self.n_features_in_},
                               self.get_weights())

    @classmethod
    def from_bytes(cls, blob):
        _, meta, arrays = container.loads(blob, "linear_ae")
        model = cls(**{k: meta[k] for k in cls().get_params()})._build(meta["n_features"])
        model.set_weights(arrays)
        return model
