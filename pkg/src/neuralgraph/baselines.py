"""Symmetry-unaware reference models the graph models are measured against:
a plain MLP on flattened parameter vectors, a per-layer-statistics regressor,
and a nearest-neighbor classifier in raw weight space.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .netzoo import Checkpoint
from .trainer import adam_step, binary_cross_entropy, cross_entropy, init_adam_state, mse


def flatten_checkpoint(net: Checkpoint) -> np.ndarray:
    return np.concatenate(
        [net.params[i][k].reshape(-1) for i in range(len(net.params)) for k in sorted(net.params[i])]
        or [np.zeros(0)]
    )


def layer_statistics(net: Checkpoint, max_layers: int) -> np.ndarray:
    """Per-layer mean/std/quantiles of weights and biases, zero-padded to a
    fixed layer count, with a per-layer presence flag."""
    qs = (0.0, 0.25, 0.5, 0.75, 1.0)
    feats = []
    for i in range(max_layers):
        if i < len(net.params) and net.params[i]:
            prm = net.params[i]
            w = prm.get("weight", prm.get("scale", np.zeros(1))).reshape(-1)
            b = prm.get("bias", prm.get("shift", np.zeros(1))).reshape(-1)
            row = [1.0, w.mean(), w.std(), *np.quantile(w, qs), b.mean(), b.std(), *np.quantile(b, qs)]
        else:
            row = [0.0] * 15
        feats.append(np.asarray(row, dtype=np.float64))
    return np.concatenate(feats)


class VectorMLP:
    """Small fully connected net on fixed-length feature vectors."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng: Rng, depth: int = 2):
        dims = [in_dim] + [hidden] * depth + [out_dim]
        self.params: dict[str, Tensor] = {}
        for i in range(len(dims) - 1):
            bound = np.sqrt(6.0 / (dims[i] + dims[i + 1]))
            self.params[f"w{i}"] = Tensor(
                rng.uniform(-bound, bound, size=(dims[i], dims[i + 1])), requires_grad=True
            )
            self.params[f"b{i}"] = Tensor(np.zeros(dims[i + 1]), requires_grad=True)
        self.depth = len(dims) - 1

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for i in range(self.depth):
            h = ad.add(ad.matmul(h, self.params[f"w{i}"]), self.params[f"b{i}"])
            if i < self.depth - 1:
                h = ad.relu(h)
        return h

    def fit(
        self,
        x: np.ndarray,
        y: np.ndarray,
        rng: Rng,
        epochs: int = 200,
        batch: int = 32,
        lr: float = 1e-3,
        loss: str = "cross-entropy",
        x_val: np.ndarray | None = None,
        y_val: np.ndarray | None = None,
        patience: int = 20,
    ):
        state = init_adam_state(self.params)
        best = np.inf
        best_params = {k: t.data.copy() for k, t in self.params.items()}
        bad = 0
        for epoch in range(epochs):
            order = rng.permutation(len(x))
            for lo in range(0, len(x), batch):
                sel = order[lo : lo + batch]
                out = self.forward(Tensor(x[sel]))
                if loss == "cross-entropy":
                    l = cross_entropy(out, y[sel])
                elif loss == "mse":
                    l = mse(out, y[sel].reshape(out.data.shape))
                else:
                    l = binary_cross_entropy(out, y[sel].reshape(out.data.shape))
                for t in self.params.values():
                    t.grad = None
                ad.backward(l)
                adam_step(self.params, {k: t.grad for k, t in self.params.items() if t.grad is not None}, state, lr=lr)
            if x_val is not None:
                out = self.forward(Tensor(x_val)).data
                if loss == "cross-entropy":
                    cur = -np.mean(
                        np.log(
                            np.exp(out - out.max(1, keepdims=True))[np.arange(len(y_val)), y_val]
                            / np.exp(out - out.max(1, keepdims=True)).sum(1)
                        )
                    )
                else:
                    cur = float(((out.reshape(np.asarray(y_val).shape) - y_val) ** 2).mean())
                if cur < best - 1e-12:
                    best, bad = cur, 0
                    best_params = {k: t.data.copy() for k, t in self.params.items()}
                else:
                    bad += 1
                    if bad > patience:
                        break
        if x_val is not None:
            for k, t in self.params.items():
                t.data = best_params[k]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(x)).data


def nearest_neighbor_accuracy(
    train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray, test_y: np.ndarray
) -> float:
    """1-NN classification accuracy in raw feature space."""
    d = ((test_x[:, None, :] - train_x[None, :, :]) ** 2).sum(axis=2)
    pred = train_y[d.argmin(axis=1)]
    return float((pred == test_y).mean())
