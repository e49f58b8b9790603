"""Dense and LSTM layers with explicit forward caches and hand-written backward passes.

Forward passes are pure: they return ``(output, cache)`` and never mutate the
layer. Backward passes consume the cache and return input gradients plus a
dict of parameter gradients keyed like ``layer.params``.
"""

from __future__ import annotations

import numpy as np

ACTIVATIONS = ("identity", "tanh", "sigmoid", "relu")


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(z, kind):
    if kind == "identity":
        return z
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(z, a, kind):
    if kind == "identity":
        return np.ones_like(z)
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "sigmoid":
        return a * (1.0 - a)
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    raise ValueError(f"unknown activation {kind!r}")


class DenseLayer:
    """Fully connected layer ``y = act(x @ W.T + b)`` with ``W`` of shape (out, in)."""

    def __init__(self, n_in, n_out, activation="identity", rng=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(rng)
        limit = np.sqrt(6.0 / (n_in + n_out))
        self.n_in = n_in
        self.n_out = n_out
        self.activation = activation
        self.params = {
            "W": rng.uniform(-limit, limit, size=(n_out, n_in)),
            "b": np.zeros(n_out),
        }

    def forward(self, x):
        z = x @ self.params["W"].T + self.params["b"]
        a = _activate(z, self.activation)
        return a, (x, z, a)

    def backward(self, da, cache):
        x, z, a = cache
        dz = da * _activation_grad(z, a, self.activation)
        flat_dz = dz.reshape(-1, self.n_out)
        flat_x = x.reshape(-1, self.n_in)
        grads = {"W": flat_dz.T @ flat_x, "b": flat_dz.sum(axis=0)}
        dx = dz @ self.params["W"]
        return dx, grads


class LstmLayer:
    """Batch-first LSTM layer.

    Gate pre-activations are packed in the order (input, forget, output,
    candidate): ``W`` has shape (in, 4H), ``U`` (H, 4H), ``b`` (4H,).
    The forget-gate bias starts at 1.
    """

    def __init__(self, n_in, hidden_size, rng=None):
        rng = np.random.default_rng(rng)
        H = hidden_size
        self.n_in = n_in
        self.hidden_size = H
        k = 1.0 / np.sqrt(H)
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        self.params = {
            "W": rng.uniform(-k, k, size=(n_in, 4 * H)),
            "U": rng.uniform(-k, k, size=(H, 4 * H)),
            "b": b,
        }

    def forward(self, x):
        """Run over ``x`` of shape (B, T, in); returns hidden states (B, T, H)."""
        B, T, _ = x.shape
        H = self.hidden_size
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        xw = x @ W + b
        hs = np.zeros((B, T + 1, H))
        cs = np.zeros((B, T + 1, H))
        gates = np.empty((B, T, 4 * H))
        for t in range(T):
            z = xw[:, t] + hs[:, t] @ U
            ifo = sigmoid(z[:, :3 * H])
            g = np.tanh(z[:, 3 * H:])
            gates[:, t, :3 * H] = ifo
            gates[:, t, 3 * H:] = g
            cs[:, t + 1] = ifo[:, H:2 * H] * cs[:, t] + ifo[:, :H] * g
            hs[:, t + 1] = ifo[:, 2 * H:] * np.tanh(cs[:, t + 1])
        return hs[:, 1:], (x, hs, cs, gates)

    def backward(self, dhs, cache, dh_last=None):
        """Backpropagate through time.

        ``dhs`` is the loss gradient w.r.t. every output hidden state and may be
        ``None``; ``dh_last`` is an extra gradient on the final hidden state.
        """
        x, hs, cs, gates = cache
        B, T, _ = x.shape
        H = self.hidden_size
        U = self.params["U"]
        dz_all = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H)) if dh_last is None else dh_last.copy()
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = dh_next if dhs is None else dhs[:, t] + dh_next
            i = gates[:, t, :H]
            f = gates[:, t, H:2 * H]
            o = gates[:, t, 2 * H:3 * H]
            g = gates[:, t, 3 * H:]
            tc = np.tanh(cs[:, t + 1])
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dz_all[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * cs[:, t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            dz[:, 3 * H:] = dc * i * (1.0 - g * g)
            dc_next = dc * f
            dh_next = dz @ U.T
        flat_dz = dz_all.reshape(B * T, 4 * H)
        grads = {
            "W": x.reshape(B * T, -1).T @ flat_dz,
            "U": hs[:, :-1].reshape(B * T, H).T @ flat_dz,
            "b": flat_dz.sum(axis=0),
        }
        dx = dz_all @ self.params["W"].T
        return dx, grads
