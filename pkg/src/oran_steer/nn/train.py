from __future__ import annotations

import logging

import numpy as np

from .optim import AdamState, adam_step

logger = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e6


class TrainingError(RuntimeError):
    """Raised when training hits NaN gradients or diverges; carries the loss history so far."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


def mse(output, target):
    diff = output - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def train(model, X, Y, epochs=200, batch_size=32, lr=1e-3, seed=0, state=None):
    """Minibatch Adam on ``model.loss_and_grads``.

    Returns ``(history, state)`` where ``history[e]`` is the sample-weighted
    mean batch loss of epoch ``e``. Only ``model`` and ``state`` are mutated.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n = len(X)
    if n == 0:
        raise ValueError("empty training set")
    if len(Y) != n:
        raise ValueError(f"inputs and targets differ in length: {n} vs {len(Y)}")
    state = state or AdamState(lr=lr)
    rng = np.random.default_rng(seed)
    params = model.parameters()
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, grads = model.loss_and_grads(X[idx], Y[idx])
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingError(f"non-finite gradient at epoch {epoch}", history)
            adam_step(params, grads, state)
            total += loss * len(idx)
        epoch_loss = total / n
        history.append(epoch_loss)
        if not np.isfinite(epoch_loss) or epoch_loss > DIVERGENCE_LOSS:
            raise TrainingError(f"loss diverged at epoch {epoch}: {epoch_loss:g}", history)
    logger.debug("trained %s for %d epochs, final loss %s", type(model).__name__, epochs,
                 history[-1] if history else None)
    return history, state
