"""Optimization loop, variable-size graph batching, and evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import models as md
from .autodiff import Rng, Tensor

LOSSES = ("cross-entropy", "mse", "binary-cross-entropy")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    patience: int = 10
    loss: str = "cross-entropy"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError("learning rate and eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.patience < 0 or self.weight_decay < 0:
            raise ValueError("patience and weight decay must be non-negative")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")


# -- losses -----------------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    logp = ad.log_softmax(logits, axis=-1)
    n, c = logits.data.shape
    picked = ad.gather_rows(ad.reshape(logp, (-1,)), np.arange(n) * c + labels)
    return ad.neg(ad.rmean(picked))


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    err = ad.sub(pred, Tensor(np.asarray(target, dtype=np.float64)))
    return ad.rmean(ad.mul(err, err))


def binary_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """BCE with logits against targets in [0, 1], the numerically stable form:
    max(x, 0) - x*t + log(1 + exp(-|x|))."""
    t = Tensor(np.asarray(target, dtype=np.float64))
    x = logits
    sp = ad.log(ad.add(Tensor(1.0), ad.exp(ad.neg(ad.mul(x, Tensor(np.sign(x.data)))))))
    return ad.rmean(ad.add(ad.sub(ad.relu(x), ad.mul(x, t)), sp))


# -- Adam -------------------------------------------------------------------------------


def init_adam_state(params: dict[str, Tensor]) -> dict:
    return {
        "step": 0,
        "m": {k: np.zeros_like(t.data) for k, t in params.items()},
        "v": {k: np.zeros_like(t.data) for k, t in params.items()},
    }


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: dict,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
):
    """Standard bias-corrected Adam with decoupled weight decay, in place."""
    state["step"] += 1
    t = state["step"]
    for name in sorted(params):
        g = grads.get(name)
        if g is None:
            continue
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        if weight_decay:
            params[name].data -= lr * weight_decay * params[name].data
        params[name].data -= lr * mhat / (np.sqrt(vhat) + eps)


# -- batching ----------------------------------------------------------------------------


def batch(graphs) -> "md.NeuralGraph":
    """Disjoint union: node/edge arrays concatenated with index offsets, a
    per-node graph id, and the member list kept for the dense model."""
    from .graphbuild import NeuralGraph

    graphs = list(graphs)
    if not graphs:
        raise ValueError("batch: no graphs")
    if len(graphs) == 1:
        g = graphs[0].copy()
        g.graph_id = np.zeros(g.n, dtype=np.int64)
        g.metadata["members"] = [graphs[0]]
        return g
    nlay = graphs[0].node_layout
    elay = graphs[0].edge_layout
    for g in graphs[1:]:
        if g.node_layout != nlay or g.edge_layout != elay:
            raise ValueError("batch: graphs disagree on feature layouts")
    offsets = np.concatenate([[0], np.cumsum([g.n for g in graphs])])
    out = NeuralGraph(
        node_band=np.concatenate([g.node_band for g in graphs]),
        index_in_band=np.concatenate([g.index_in_band for g in graphs]),
        spatial_pos=np.concatenate([g.spatial_pos for g in graphs]),
        io_role=np.concatenate([g.io_role for g in graphs]),
        activation=np.concatenate([g.activation for g in graphs]),
        node_features=np.concatenate([g.node_features for g in graphs]),
        node_layout=list(nlay),
        src=np.concatenate([g.src + offsets[i] for i, g in enumerate(graphs)]),
        dst=np.concatenate([g.dst + offsets[i] for i, g in enumerate(graphs)]),
        edge_features=np.concatenate([g.edge_features for g in graphs]),
        edge_layout=list(elay),
        edge_kind=np.concatenate([g.edge_kind for g in graphs]),
        direction=np.concatenate([g.direction for g in graphs]),
        kernel_w=np.concatenate([g.kernel_w for g in graphs]),
        kernel_h=np.concatenate([g.kernel_h for g in graphs]),
        bands=[b for g in graphs for b in g.bands],
        max_kernel=graphs[0].max_kernel,
        linear_mode=graphs[0].linear_mode,
        flatten_mode=graphs[0].flatten_mode,
        metadata={"members": graphs},
        graph_id=np.concatenate(
            [np.full(g.n, i, dtype=np.int64) for i, g in enumerate(graphs)]
        ),
        exec_weight=(
            np.concatenate([g.exec_weight for g in graphs])
            if all(g.exec_weight is not None for g in graphs)
            else None
        ),
        exec_bias=(
            np.concatenate([g.exec_bias for g in graphs])
            if all(g.exec_bias is not None for g in graphs)
            else None
        ),
    )
    return out


# -- fit ---------------------------------------------------------------------------------


@dataclass
class MetricsLog:
    rows: list[tuple[int, str, str, float]] = field(default_factory=list)

    def add(self, epoch: int, split: str, metric: str, value: float):
        self.rows.append((epoch, split, metric, float(value)))

    def write_csv(self, path: str):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "split", "metric", "value"])
            for row in self.rows:
                w.writerow(row)

    def series(self, split: str, metric: str) -> list[tuple[int, float]]:
        return [(e, v) for e, s, m, v in self.rows if s == split and m == metric]


def _dataset_loss(cfg, out, targets, loss_name: str) -> Tensor:
    if isinstance(out, dict):  # parameter-delta targets: edge and node parts
        edge_t, node_t = targets
        le = mse(out["edge"], edge_t)
        ln = mse(out["node"], node_t)
        return ad.add(le, ln)
    if loss_name == "cross-entropy":
        return cross_entropy(out, targets)
    if loss_name == "mse":
        return mse(out, np.asarray(targets, dtype=np.float64).reshape(out.data.shape))
    return binary_cross_entropy(out, np.asarray(targets, dtype=np.float64).reshape(out.data.shape))


def _metric(out_data: np.ndarray, targets, loss_name: str) -> tuple[str, float]:
    if loss_name == "cross-entropy":
        return "accuracy", float((out_data.argmax(axis=1) == np.asarray(targets)).mean())
    t = np.asarray(targets, dtype=np.float64).reshape(out_data.shape)
    if loss_name == "binary-cross-entropy":
        prob = 1.0 / (1.0 + np.exp(-out_data))
        return "mse", float(((prob - t) ** 2).mean())
    return "mse", float(((out_data - t) ** 2).mean())


def predict(model_cfg, params, graphs, batch_size: int = 16):
    """Model outputs for a list of graphs, batched, dropout off."""
    outs = []
    for lo in range(0, len(graphs), batch_size):
        chunk = graphs[lo : lo + batch_size]
        out = md.forward(batch(chunk), model_cfg, params, training=False)
        if isinstance(out, dict):
            outs.append(out)
        else:
            outs.append(out.data)
    if outs and isinstance(outs[0], dict):
        return outs
    return np.concatenate(outs, axis=0)


def fit(model_cfg, dataset, cfg: TrainConfig, init: md.ModelParams | None = None, verbose: bool = False):
    """Train a model on a task dataset; returns (best-validation params, log).

    The dataset provides graphs(split) and targets(split) for the train/val
    splits; everything is seeded and deterministic.
    """
    rng = Rng(cfg.seed)
    train_graphs = dataset.graphs("train")
    train_targets = dataset.targets("train")
    val_graphs = dataset.graphs("val")
    val_targets = dataset.targets("val")
    if not train_graphs or not val_graphs:
        raise ValueError("fit: empty train or val split")
    params = init.copy() if init is not None else md.init_params(model_cfg, train_graphs[0], rng.derive(0))
    state = init_adam_state(params.tensors)
    log = MetricsLog()
    best_val = np.inf
    best_params = params.copy()
    bad_epochs = 0
    order_rng = rng.derive(1)
    drop_rng = rng.derive(2)
    delta_targets = getattr(dataset, "target_kind", "") == "delta"

    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(train_graphs))
        total = 0.0
        nb = 0
        for lo in range(0, len(order), cfg.batch_size):
            sel = order[lo : lo + cfg.batch_size]
            graphs = [train_graphs[i] for i in sel]
            if delta_targets:
                targets = (
                    np.concatenate([train_targets[0][i] for i in sel]),
                    np.concatenate([train_targets[1][i] for i in sel]),
                )
            else:
                targets = np.asarray([train_targets[i] for i in sel])
            out = md.forward(batch(graphs), model_cfg, params, training=True, rng=drop_rng)
            loss = _dataset_loss(model_cfg, out, targets, cfg.loss)
            params.zero_grad()
            ad.backward(loss)
            adam_step(
                params.tensors,
                {k: t.grad for k, t in params.tensors.items() if t.grad is not None},
                state,
                lr=cfg.lr,
                beta1=cfg.beta1,
                beta2=cfg.beta2,
                eps=cfg.eps,
                weight_decay=cfg.weight_decay,
            )
            total += float(loss.data)
            nb += 1
        log.add(epoch, "train", "loss", total / max(nb, 1))

        val_loss, metric_name, metric_val = evaluate_split(
            model_cfg, params, val_graphs, val_targets, cfg.loss, cfg.batch_size, delta_targets
        )
        log.add(epoch, "val", "loss", val_loss)
        log.add(epoch, "val", metric_name, metric_val)
        if verbose:
            print(f"epoch {epoch}: train loss {total / max(nb, 1):.4f} "
                  f"val loss {val_loss:.4f} val {metric_name} {metric_val:.4f}")
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_params = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                break
    return best_params, log


def evaluate_split(model_cfg, params, graphs, targets, loss_name, batch_size=16, delta=False):
    total = 0.0
    correct_terms = []
    count = 0
    for lo in range(0, len(graphs), batch_size):
        chunk = graphs[lo : lo + batch_size]
        if delta:
            tgt = (
                np.concatenate([targets[0][i] for i in range(lo, lo + len(chunk))]),
                np.concatenate([targets[1][i] for i in range(lo, lo + len(chunk))]),
            )
        else:
            tgt = np.asarray([targets[i] for i in range(lo, lo + len(chunk))])
        out = md.forward(batch(chunk), model_cfg, params, training=False)
        loss = _dataset_loss(model_cfg, out, tgt, loss_name)
        total += float(loss.data) * len(chunk)
        count += len(chunk)
        if not isinstance(out, dict):
            correct_terms.append((out.data, tgt))
    avg_loss = total / max(count, 1)
    if correct_terms:
        outs = np.concatenate([o for o, _ in correct_terms])
        tgts = np.concatenate([np.atleast_1d(t) for _, t in correct_terms])
        name, val = _metric(outs, tgts, loss_name)
    else:
        name, val = "loss", avg_loss
    return avg_loss, name, val


# -- flat key-value experiment configs ---------------------------------------------------


def parse_config_file(path: str) -> dict[str, str]:
    """One `key = value` per line; blank lines and #-comments allowed."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def train_config_from_mapping(kv: dict[str, str]) -> TrainConfig:
    cfg = TrainConfig()
    casts = {
        "epochs": int, "batch_size": int, "seed": int, "patience": int,
        "lr": float, "weight_decay": float, "beta1": float, "beta2": float,
        "eps": float, "loss": str,
    }
    for key, value in kv.items():
        if key not in casts:
            raise ValueError(f"unknown training option {key!r}")
        setattr(cfg, key, casts[key](value))
    cfg.__post_init__()
    return cfg
