"""Learning to optimize: per-parameter feature extraction, the feed-forward
update rule, and its graph-fed variants.

Every scalar parameter contributes 7 raw signals (value, gradient, momentum
EMAs at scales 0.5/0.9/0.99/0.999/0.9999), each expanded to a clamped log
magnitude and a sign, for 14 channels. The plain update rule runs a shared MLP
over those channels; the graph-fed variants first process the optimizee's
neural graph (weight channels replaced by the 14-channel blocks) with one of
the graph models and append the resulting node/edge states to the MLP input.

The outer objective is the mean inner-loop loss over a truncated unroll; input
features are detached, so gradients reach the update rule through the
parameter updates it emitted inside the segment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import graphbuild as gbuild
from . import models as md
from . import netzoo
from .autodiff import Rng, Tensor
from .graphbuild import NeuralGraph, PositionalEmbeddings, _padded_slots
from .images import labeled_image_batch
from .netzoo import Checkpoint, LayerSpec
from .trainer import adam_step, cross_entropy, init_adam_state

MOMENTUM_SCALES = (0.5, 0.9, 0.99, 0.999, 0.9999)
LOG_CLAMP = -18.42  # log(1e-8)
L2O_CHANNELS = 2 * (2 + len(MOMENTUM_SCALES))  # (value, grad, momenta) x (log, sign)


def log_sign(v: np.ndarray) -> np.ndarray:
    """(..., 2) channels per value: clamped log magnitude and sign."""
    v = np.asarray(v, dtype=np.float64)
    mag = np.where(np.abs(v) >= 1e-8, np.log(np.maximum(np.abs(v), 1e-300)), LOG_CLAMP)
    return np.stack([mag, np.sign(v)], axis=-1)


@dataclass
class L2OState:
    """Per-parameter momentum EMAs at the five scales, plus current gradients."""

    momenta: list[dict[str, np.ndarray]]  # per layer: name -> (5, *shape)
    grads: list[dict[str, np.ndarray]]

    @classmethod
    def init(cls, net: Checkpoint) -> "L2OState":
        momenta = [
            {k: np.zeros((len(MOMENTUM_SCALES),) + v.shape) for k, v in prm.items()}
            for prm in net.params
        ]
        grads = [{k: np.zeros_like(v) for k, v in prm.items()} for prm in net.params]
        return cls(momenta, grads)

    def update(self, grads: list[dict[str, np.ndarray]]):
        """m <- beta m + (1 - beta) g at every scale; keeps the raw gradient."""
        for layer, new in enumerate(grads):
            for k, gval in new.items():
                m = self.momenta[layer][k]
                b = np.asarray(MOMENTUM_SCALES).reshape((-1,) + (1,) * gval.ndim)
                m *= b
                m += (1 - b) * gval
                self.grads[layer][k] = gval.copy()


def scalar_feature_stack(value, grad, momenta) -> np.ndarray:
    """(..., 14) per-scalar features: log/sign of value, gradient, and the
    five momentum EMAs."""
    parts = [log_sign(value), log_sign(grad)]
    for s in range(len(MOMENTUM_SCALES)):
        parts.append(log_sign(momenta[s]))
    return np.concatenate(parts, axis=-1)


def extract_l2o_features(
    state: L2OState, net: Checkpoint, max_kernel: tuple[int, int] = (3, 3)
) -> NeuralGraph:
    """The network's graph with weight/bias channels replaced by optimizer
    features: 14 channels per kernel slot on edges (slot-major) and 14 per
    node. Padding slots stay zero; a parameter that is exactly zero still gets
    the clamped log channel, so it remains distinguishable from padding."""
    g = gbuild.network_to_graph(net, max_kernel=max_kernel, linear_mode="as-1x1-conv")
    wh = max_kernel[0] * max_kernel[1]
    edge_feats = np.zeros((g.num_edges, wh * L2O_CHANNELS))
    node_feats = np.zeros((g.n, L2O_CHANNELS))
    for layer, sel, didx, sidx, band in _layer_edge_selections(net, g):
        spec = net.spec[layer]
        prm = net.params[layer]
        feats = scalar_feature_stack(
            prm["weight"], state.grads[layer]["weight"], state.momenta[layer]["weight"]
        )
        if spec.kind == "linear":
            slots = _padded_slots(max_kernel, 1, 1)
            block = np.zeros((len(didx), wh, L2O_CHANNELS))
            block[:, slots[0]] = feats[didx, sidx]
        else:
            kw, kh = spec.kernel
            slots = _padded_slots(max_kernel, kw, kh)
            block = np.zeros((len(didx), wh, L2O_CHANNELS))
            block[:, slots] = feats[didx, sidx].reshape(len(didx), kw * kh, L2O_CHANNELS)
        edge_feats[sel] = block.reshape(len(didx), wh * L2O_CHANNELS)
        off = g.band_offsets()
        lo, hi = off[band], off[band + 1]
        node_feats[lo:hi] = scalar_feature_stack(
            prm["bias"], state.grads[layer]["bias"], state.momenta[layer]["bias"]
        )
    g.edge_features = edge_feats
    g.edge_layout = [("l2o", wh * L2O_CHANNELS)]
    g.node_features = node_feats
    g.node_layout = [("l2o", L2O_CHANNELS)]
    return g


def _layer_edge_selections(net: Checkpoint, g: NeuralGraph):
    """Per parameterized layer: the forward-edge mask into its band and the
    (dst, src) local indices, in canonical edge order."""
    off = g.band_offsets()
    band = 1
    out = []
    for layer, spec in enumerate(net.spec):
        if spec.kind == "flatten":
            continue
        if spec.kind not in ("linear", "conv2d"):
            band += 2 if spec.kind == "attention-block" else 1
            continue
        lo, hi = off[band], off[band + 1]
        sel = (
            (g.dst >= lo)
            & (g.dst < hi)
            & np.isin(g.edge_kind, (gbuild.EK_LINEAR, gbuild.EK_CONV))
            & (g.direction == 0)
        )
        didx = g.dst[sel] - lo
        sidx = g.src[sel] - off[band - 1]
        out.append((layer, sel, didx, sidx, band))
        band += 1
    return out


# -- optimizer models ---------------------------------------------------------------------


@dataclass
class L2OConfig:
    """Update-rule configuration: 'ff' is the per-parameter MLP; 'gnn-ff' and
    'ngt-ff' first transform the feature graph and feed the resulting states
    to the same kind of per-parameter head."""

    kind: str = "ff"
    hidden: int = 32
    graph_layers: int = 2
    graph_width: int = 16
    step_scale: float = 0.01
    max_kernel: tuple[int, int] = (3, 3)
    d_pos: int = 8

    def __post_init__(self):
        if self.kind not in ("ff", "gnn-ff", "ngt-ff"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")

    @property
    def state_width(self) -> int:
        return 0 if self.kind == "ff" else self.graph_width


def init_l2o_params(cfg: L2OConfig, rng: Rng, sample_graph: NeuralGraph | None = None) -> md.ModelParams:
    tensors: dict[str, Tensor] = {}
    fan_in = L2O_CHANNELS + cfg.state_width
    bound = np.sqrt(6.0 / (fan_in + cfg.hidden))
    tensors["ff.0.w"] = Tensor(rng.uniform(-bound, bound, size=(fan_in, cfg.hidden)), requires_grad=True)
    tensors["ff.0.b"] = Tensor(np.zeros(cfg.hidden), requires_grad=True)
    # zero-initialized head: the fresh optimizer emits zero updates
    tensors["ff.1.w"] = Tensor(np.zeros((cfg.hidden, 1)), requires_grad=True)
    tensors["ff.1.b"] = Tensor(np.zeros(1), requires_grad=True)
    params = md.ModelParams(tensors)
    if cfg.kind != "ff":
        if sample_graph is None:
            raise ValueError("graph-fed optimizers need a sample feature graph")
        inner = _graph_cfg(cfg)
        graph_params = md.init_params(inner, sample_graph, rng.derive(1))
        for k, v in graph_params.tensors.items():
            tensors[f"graph.{k}"] = v
    return params


def _graph_cfg(cfg: L2OConfig):
    if cfg.kind == "gnn-ff":
        return md.GNNConfig(
            layers=cfg.graph_layers,
            node_width=cfg.graph_width,
            edge_width=cfg.graph_width,
            message_width=cfg.graph_width,
            readout="per-node",
            head_hidden=4,
            out_dim=1,
        )
    return md.NGTConfig(
        layers=cfg.graph_layers,
        width=cfg.graph_width,
        edge_width=max(4, cfg.graph_width // 2),
        heads=2,
        readout="per-node",
        head_hidden=4,
        out_dim=1,
    )


def _graph_view(params: md.ModelParams) -> md.ModelParams:
    return md.ModelParams(
        {k[len("graph.") :]: v for k, v in params.tensors.items() if k.startswith("graph.")}
    )


def _ff_head(params: md.ModelParams, feats: Tensor, scale: float) -> Tensor:
    h = ad.relu(ad.add(ad.matmul(feats, params.tensors["ff.0.w"]), params.tensors["ff.0.b"]))
    out = ad.add(ad.matmul(h, params.tensors["ff.1.w"]), params.tensors["ff.1.b"])
    return ad.mul(out, Tensor(scale))


def compute_updates(
    cfg: L2OConfig,
    params: md.ModelParams,
    net: Checkpoint,
    state: L2OState,
    pe: PositionalEmbeddings | None,
) -> list[dict[str, Tensor]]:
    """Per-layer parameter update tensors, differentiable in the rule's params.

    Input features are plain numbers (detached by construction); for graph-fed
    rules the graph states are appended to each scalar's feature row.
    """
    graph = None
    v_states = e_states = None
    if cfg.kind != "ff":
        graph = extract_l2o_features(state, net, cfg.max_kernel)
        if pe is not None:
            graph = gbuild.attach_positional_embeddings(graph, pe)
        inner_cfg = _graph_cfg(cfg)
        gview = _graph_view(params)
        v_states, e_states = md.encode(graph, inner_cfg, gview)
        for k in range(inner_cfg.layers):
            if cfg.kind == "gnn-ff":
                v_states, e_states = md.gnn_layer(graph, v_states, e_states, inner_cfg, gview, k)
            else:
                v_states, e_states = md.ngt_layer(v_states, e_states, inner_cfg, gview, k)
        if cfg.kind == "ngt-ff":
            n = graph.n
            flat = ad.reshape(e_states, (n * n, -1))
            e_states = ad.gather_rows(flat, graph.src * n + graph.dst)
            ew = e_states.data.shape[1]
            if ew < cfg.graph_width:
                e_states = ad.concat(
                    [e_states, Tensor(np.zeros((graph.num_edges, cfg.graph_width - ew)))], axis=1
                )

    updates: list[dict[str, Tensor]] = [dict() for _ in net.params]
    selections = None if graph is None else _layer_edge_selections(net, graph)
    sel_by_layer = {} if selections is None else {s[0]: s for s in selections}
    off = None if graph is None else graph.band_offsets()
    wh = cfg.max_kernel[0] * cfg.max_kernel[1]
    for layer, prm in enumerate(net.params):
        if not prm:
            continue
        spec = net.spec[layer]
        w = prm["weight"]
        b = prm["bias"]
        wfeat = scalar_feature_stack(w, state.grads[layer]["weight"], state.momenta[layer]["weight"])
        bfeat = scalar_feature_stack(b, state.grads[layer]["bias"], state.momenta[layer]["bias"])
        if cfg.kind == "ff":
            win = Tensor(wfeat.reshape(-1, L2O_CHANNELS))
            bin_ = Tensor(bfeat)
        else:
            _, sel, didx, sidx, band = sel_by_layer[layer]
            edge_rows = np.flatnonzero(sel)
            estate_rows = ad.gather_rows(e_states, edge_rows)  # (E_l, ew)
            if spec.kind == "linear":
                reps = 1
                flat_feats = wfeat[didx, sidx].reshape(-1, L2O_CHANNELS)
            else:
                kw, kh = spec.kernel
                reps = kw * kh
                flat_feats = wfeat[didx, sidx].reshape(-1, L2O_CHANNELS)
            rep_states = ad.gather_rows(estate_rows, np.repeat(np.arange(len(edge_rows)), reps))
            win = ad.concat([Tensor(flat_feats), rep_states], axis=1)
            lo, hi = off[band], off[band + 1]
            node_states = ad.gather_rows(v_states, np.arange(lo, hi))
            bin_ = ad.concat([Tensor(bfeat), node_states], axis=1)
        dw_rows = _ff_head(params, win, cfg.step_scale)
        db = _ff_head(params, bin_, cfg.step_scale)
        if cfg.kind == "ff":
            dw = ad.reshape(dw_rows, w.shape)
        else:
            _, sel, didx, sidx, band = sel_by_layer[layer]
            dw = ad.reshape(_rows_to_param_order(dw_rows, didx, sidx, spec, w.shape), w.shape)
        updates[layer] = {"weight": dw, "bias": ad.reshape(db, b.shape)}
    return updates


def _rows_to_param_order(rows: Tensor, didx, sidx, spec: LayerSpec, wshape) -> Tensor:
    """Reorder per-edge (slot-minor) update rows into flat parameter order.

    Edge rows follow the canonical (dst, src) edge order; each edge contributes
    one row per kernel slot in row-major slot order, which matches the weight
    tensor's trailing axes."""
    if spec.kind == "linear":
        flat_index = didx * wshape[1] + sidx
    else:
        kw, kh = spec.kernel
        flat_index = (
            (didx * wshape[1] + sidx)[:, None] * (kw * kh) + np.arange(kw * kh)[None, :]
        ).reshape(-1)
    return ad.gather_rows(rows, np.argsort(flat_index, kind="stable"))


# -- optimizee task -----------------------------------------------------------------------


def make_optimizee(rng: Rng, channels=(4, 8), classes: int = 3) -> Checkpoint:
    """A small CNN for the built-in shape task, the network being optimized."""
    chans = (1,) + tuple(channels)
    kernels = tuple((3, 3) for _ in channels)
    return netzoo.random_cnn(rng, channels=chans, kernels=kernels, classes=classes, activation="relu")


@dataclass
class InnerTask:
    """Fixed image pool with a deterministic batch schedule."""

    x: np.ndarray
    y: np.ndarray
    batch: int
    rng: Rng

    @classmethod
    def create(cls, seed: int, pool: int = 96, batch: int = 12) -> "InnerTask":
        rng = Rng(seed)
        x, y = labeled_image_batch(rng.derive(0), pool)
        return cls(x, y, batch, rng.derive(1))

    def next_batch(self):
        idx = self.rng.integers(0, len(self.x), size=self.batch)
        return self.x[idx], self.y[idx]


def _layered(params_flat: dict[str, Tensor], net: Checkpoint) -> list[dict[str, Tensor]]:
    return [{k: params_flat[f"{i}.{k}"] for k in prm} for i, prm in enumerate(net.params)]


def inner_loss(net: Checkpoint, theta: dict[str, Tensor], x, y) -> Tensor:
    logits = netzoo.forward(net, Tensor(x), _layered(theta, net))
    return cross_entropy(logits, y)


def inner_gradients(net: Checkpoint, theta: dict[str, Tensor], x, y) -> list[dict[str, np.ndarray]]:
    """Plain-number gradients at the current parameter values (detached pass)."""
    detached = {k: Tensor(t.data.copy(), requires_grad=True) for k, t in theta.items()}
    loss = inner_loss(net, detached, x, y)
    ad.backward(loss)
    return [
        {k: detached[f"{i}.{k}"].grad.copy() for k in prm} for i, prm in enumerate(net.params)
    ]


def _theta_init(net: Checkpoint) -> dict[str, Tensor]:
    return {
        f"{i}.{k}": Tensor(v.copy()) for i, prm in enumerate(net.params) for k, v in prm.items()
    }


def _fixed_pe(cfg: L2OConfig, net: Checkpoint) -> PositionalEmbeddings:
    g = extract_l2o_features(L2OState.init(net), net, cfg.max_kernel)
    return PositionalEmbeddings.for_graph(g, Rng(314159), cfg.d_pos)


def l2o_train(
    cfg: L2OConfig,
    rng: Rng,
    unroll: int = 15,
    outer_steps: int = 60,
    segments_per_episode: int = 4,
    outer_lr: float = 3e-3,
    optimizee_channels=(4, 8),
) -> tuple[md.ModelParams, dict]:
    """Train an update rule by unrolling it on fresh optimizees.

    Each outer step backpropagates the mean inner loss of one truncated
    segment; a non-finite inner loss aborts the segment (no update) and
    restarts the episode, recorded in the report.
    """
    proto = make_optimizee(rng.derive(0), channels=optimizee_channels)
    pe = _fixed_pe(cfg, proto)
    sample_graph = extract_l2o_features(L2OState.init(proto), proto, cfg.max_kernel)
    if cfg.kind != "ff":
        sample_graph = gbuild.attach_positional_embeddings(sample_graph, pe)
    params = init_l2o_params(cfg, rng.derive(1), sample_graph)
    opt_state = init_adam_state(params.tensors)
    report = {"outer_losses": [], "events": []}

    episode = -1
    segment_in_episode = segments_per_episode  # force a fresh episode immediately
    net = theta = task = state = None
    for outer in range(outer_steps):
        if segment_in_episode >= segments_per_episode:
            episode += 1
            net = make_optimizee(rng.derive(100 + episode), channels=optimizee_channels)
            task = InnerTask.create(rng.seed * 7919 + episode)
            theta = _theta_init(net)
            state = L2OState.init(net)
            segment_in_episode = 0

        losses = []
        aborted = False
        for step in range(unroll):
            x, y = task.next_batch()
            grads = inner_gradients(net, theta, x, y)
            state.update(grads)
            loss_t = inner_loss(net, theta, x, y)
            if not np.isfinite(loss_t.data):
                report["events"].append(f"outer {outer}: non-finite inner loss, episode restarted")
                aborted = True
                break
            losses.append(loss_t)
            updates = compute_updates(cfg, params, _as_checkpoint(net, theta), state, pe)
            theta = _apply_updates(net, theta, updates)
        if aborted:
            segment_in_episode = segments_per_episode
            continue
        outer_loss = losses[0] if len(losses) == 1 else _mean_losses(losses)
        params.zero_grad()
        ad.backward(outer_loss)
        adam_step(
            params.tensors,
            {k: t.grad for k, t in params.tensors.items() if t.grad is not None},
            opt_state,
            lr=outer_lr,
        )
        report["outer_losses"].append(float(outer_loss.data))
        theta = {k: Tensor(t.data.copy()) for k, t in theta.items()}  # truncate the tape
        segment_in_episode += 1
    return params, report


def _mean_losses(losses: list[Tensor]) -> Tensor:
    total = losses[0]
    for l in losses[1:]:
        total = ad.add(total, l)
    return ad.mul(total, Tensor(1.0 / len(losses)))


def _as_checkpoint(net: Checkpoint, theta: dict[str, Tensor]) -> Checkpoint:
    out = net.copy()
    for i, prm in enumerate(out.params):
        for k in prm:
            prm[k] = theta[f"{i}.{k}"].data
    return out


def _apply_updates(
    net: Checkpoint, theta: dict[str, Tensor], updates: list[dict[str, Tensor]]
) -> dict[str, Tensor]:
    out = dict(theta)
    for i, upd in enumerate(updates):
        for k, delta in upd.items():
            out[f"{i}.{k}"] = ad.add(theta[f"{i}.{k}"], delta)
    return out


# -- applying trained or fixed optimizers ----------------------------------------------------


def run_optimizer(
    cfg: L2OConfig | None,
    params: md.ModelParams | None,
    seed: int,
    steps: int = 150,
    sgd_lr: float | None = None,
    optimizee_channels=(4, 8),
    record_every: int = 10,
) -> dict:
    """Apply an update rule (learned, or SGD when sgd_lr is given) to a fresh
    optimizee; returns the training-loss curve on the fixed pool."""
    rng = Rng(seed)
    net = make_optimizee(rng.derive(0), channels=optimizee_channels)
    task = InnerTask.create(seed * 977 + 13)
    theta = _theta_init(net)
    state = L2OState.init(net)
    pe = _fixed_pe(cfg, net) if cfg is not None and cfg.kind != "ff" else None
    curve = []

    def pool_loss():
        return float(inner_loss(net, theta, task.x, task.y).data)

    for step in range(steps):
        if step % record_every == 0:
            curve.append(pool_loss())
        x, y = task.next_batch()
        grads = inner_gradients(net, theta, x, y)
        state.update(grads)
        if sgd_lr is not None:
            theta = {
                f"{i}.{k}": Tensor(theta[f"{i}.{k}"].data - sgd_lr * grads[i][k])
                for i, prm in enumerate(net.params)
                for k in prm
            }
        else:
            updates = compute_updates(cfg, params, _as_checkpoint(net, theta), state, pe)
            new_theta = _apply_updates(net, theta, updates)
            theta = {k: Tensor(t.data.copy()) for k, t in new_theta.items()}
        if not np.isfinite(pool_loss()):
            break
    final = pool_loss()
    curve.append(final)
    return {"curve": curve, "final_loss": final, "record_every": record_every}


def tune_sgd_lr(seed: int, steps: int = 150, candidates=(0.3, 0.1, 0.03, 0.01)) -> float:
    """Pick the fixed SGD rate with the best final loss on the tuning seed."""
    best_lr, best = candidates[0], np.inf
    for lr in candidates:
        res = run_optimizer(None, None, seed, steps=steps, sgd_lr=lr)
        if np.isfinite(res["final_loss"]) and res["final_loss"] < best:
            best, best_lr = res["final_loss"], lr
    return best_lr
