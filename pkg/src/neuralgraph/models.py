"""The two neural-graph processors and their readout heads.

The message-passing model updates edge states from incident nodes and gates
messages with feature-wise scale/shift terms computed from the edge state; node
states aggregate incoming messages with concatenated sum/mean/max (in-degree is
constant within a layer band, so degree scalers would add nothing). The
transformer variant attends over all node pairs of a dense edge tensor whose
missing pairs are zeros behind a mask channel, modulates per-pair values by
edge states, and adds edge terms to the attention logits.

Both models assemble their input features from the graph's named channel
blocks; probe channels can be recomputed from model-owned trainable probe
points, so they are learned jointly with the rest of the parameters.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import graphbuild as gbuild
from .autodiff import Rng, Tensor
from .graphbuild import EDGE_KINDS, ROLE_OUTPUT, NeuralGraph

READOUTS = ("invariant", "per-node", "per-edge", "per-edge+per-node")
AGGREGATORS = ("sum", "mean", "max")


@dataclass
class GNNConfig:
    layers: int = 3
    node_width: int = 32
    edge_width: int = 32
    message_width: int = 32
    head_hidden: int = 32
    out_dim: int = 1
    readout: str = "invariant"
    dropout: float = 0.0
    probe_points: np.ndarray | None = None  # trainable probe inits, (M, d0)
    exclude_node_blocks: tuple[str, ...] = ()

    kind: str = field(default="gnn", init=False)

    def __post_init__(self):
        if self.layers < 1 or self.node_width < 1 or self.edge_width < 1:
            raise ValueError("layers and widths must be at least 1")
        if self.readout not in READOUTS:
            raise ValueError(f"unknown readout mode {self.readout!r}")


@dataclass
class NGTConfig:
    layers: int = 2
    width: int = 32
    edge_width: int = 16
    heads: int = 4
    head_hidden: int = 32
    out_dim: int = 1
    readout: str = "invariant"
    dropout: float = 0.0
    probe_points: np.ndarray | None = None
    exclude_node_blocks: tuple[str, ...] = ()

    kind: str = field(default="ngt", init=False)

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.readout not in READOUTS:
            raise ValueError(f"unknown readout mode {self.readout!r}")


@dataclass
class ModelParams:
    """Flat registry of named trainable tensors."""

    tensors: dict[str, Tensor]

    def trainable(self) -> dict[str, Tensor]:
        return self.tensors

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.tensors.items()}
        )

    def save(self, path: str):
        doc = {
            "version": 1,
            "tensors": {
                k: {
                    "shape": list(v.data.shape),
                    "data": base64.b64encode(
                        np.ascontiguousarray(v.data, dtype="<f8").tobytes()
                    ).decode("ascii"),
                }
                for k, v in self.tensors.items()
            },
        }
        with open(path, "w", encoding="ascii") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path: str) -> "ModelParams":
        with open(path, "r", encoding="ascii") as fh:
            doc = json.load(fh)
        if doc.get("version") != 1:
            raise ValueError("expected a version-1 parameter file")
        tensors = {}
        for k, obj in doc["tensors"].items():
            raw = base64.b64decode(obj["data"].encode("ascii"))
            arr = np.frombuffer(raw, dtype="<f8").reshape([int(s) for s in obj["shape"]])
            tensors[k] = Tensor(arr.copy(), requires_grad=True)
        return cls(tensors)


def _linear_init(rng: Rng, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)


def _add_linear(tensors, rng, name, fan_in, fan_out, bias: bool = True):
    w, b = _linear_init(rng, fan_in, fan_out)
    tensors[f"{name}.w"] = Tensor(w, requires_grad=True)
    if bias:
        tensors[f"{name}.b"] = Tensor(b, requires_grad=True)


def _add_layer_norm(tensors, name, width):
    tensors[f"{name}.g"] = Tensor(np.ones(width), requires_grad=True)
    tensors[f"{name}.b"] = Tensor(np.zeros(width), requires_grad=True)


def _lin(params: ModelParams, name: str, x: Tensor) -> Tensor:
    w = params.tensors[f"{name}.w"]
    b = params.tensors.get(f"{name}.b")
    if x.data.ndim == 2:
        out = ad.matmul(x, w)
        return out if b is None else ad.add(out, b)
    flat = ad.reshape(x, (-1, x.data.shape[-1]))
    out = ad.matmul(flat, w)
    if b is not None:
        out = ad.add(out, b)
    return ad.reshape(out, x.data.shape[:-1] + (w.data.shape[1],))


def _mlp2(params: ModelParams, name: str, x: Tensor) -> Tensor:
    return _lin(params, f"{name}.1", ad.relu(_lin(params, f"{name}.0", x)))


def _ln(params: ModelParams, name: str, x: Tensor) -> Tensor:
    return ad.layer_norm(x, params.tensors[f"{name}.g"], params.tensors[f"{name}.b"])


# -- feature assembly -------------------------------------------------------------------


def node_input_width(g: NeuralGraph, cfg) -> int:
    width = sum(w for name, w in g.node_layout if name not in cfg.exclude_node_blocks)
    if cfg.probe_points is not None:
        if g.has_node_block("probe"):
            raise ValueError("graph carries static probe channels; drop them or the trainable probes")
        width += cfg.probe_points.shape[0]
    return width


def edge_input_width(g: NeuralGraph) -> int:
    return g.edge_features.shape[1] + len(EDGE_KINDS)


def _members(g: NeuralGraph) -> list[NeuralGraph]:
    return g.metadata.get("members", [g])


def assemble_node_features(g: NeuralGraph, cfg, params: ModelParams | None) -> Tensor:
    """Concatenate the kept static channel blocks and, when the model owns
    trainable probes, their freshly computed activation channels."""
    blocks = []
    off = 0
    for name, width in g.node_layout:
        if name not in cfg.exclude_node_blocks:
            blocks.append(Tensor(g.node_features[:, off : off + width]))
        off += width
    if cfg.probe_points is not None:
        probes = params.tensors["probes"]
        chans = [gbuild.node_activations(m, ad.transpose(probes)) for m in _members(g)]
        blocks.append(chans[0] if len(chans) == 1 else ad.concat(chans, axis=0))
    return blocks[0] if len(blocks) == 1 else ad.concat(blocks, axis=1)


def assemble_edge_features(g: NeuralGraph) -> np.ndarray:
    onehot = np.zeros((g.num_edges, len(EDGE_KINDS)))
    onehot[np.arange(g.num_edges), g.edge_kind] = 1.0
    return np.concatenate([g.edge_features, onehot], axis=1)


# -- initialization ---------------------------------------------------------------------


def init_params(cfg, g: NeuralGraph, rng: Rng) -> ModelParams:
    """Create all trainable tensors for a config, sized from a sample graph."""
    tensors: dict[str, Tensor] = {}
    if cfg.probe_points is not None:
        tensors["probes"] = Tensor(np.asarray(cfg.probe_points, dtype=np.float64).copy(), requires_grad=True)
    params = ModelParams(tensors)
    d_node_in = node_input_width(g, cfg)
    d_edge_in = edge_input_width(g)
    if cfg.kind == "gnn":
        _add_linear(tensors, rng, "enc.node", d_node_in, cfg.node_width)
        _add_linear(tensors, rng, "enc.edge", d_edge_in, cfg.edge_width)
        nw, ew, mw = cfg.node_width, cfg.edge_width, cfg.message_width
        for k in range(cfg.layers):
            _add_linear(tensors, rng, f"l{k}.scale", ew, mw)
            _add_linear(tensors, rng, f"l{k}.shift", ew, mw)
            _add_linear(tensors, rng, f"l{k}.msg.0", 2 * nw, mw)
            _add_linear(tensors, rng, f"l{k}.msg.1", mw, mw)
            _add_linear(tensors, rng, f"l{k}.upd.0", nw + len(AGGREGATORS) * mw, nw)
            _add_linear(tensors, rng, f"l{k}.upd.1", nw, nw)
            _add_linear(tensors, rng, f"l{k}.edge.0", 2 * nw + ew, ew)
            _add_linear(tensors, rng, f"l{k}.edge.1", ew, ew)
        _init_heads(tensors, rng, cfg, cfg.node_width, cfg.edge_width, g)
    elif cfg.kind == "ngt":
        d, de = cfg.width, cfg.edge_width
        _add_linear(tensors, rng, "enc.node", d_node_in, d)
        _add_linear(tensors, rng, "enc.edge", d_edge_in + 1, de)  # +1 mask channel
        for k in range(cfg.layers):
            _add_linear(tensors, rng, f"l{k}.q", d, d)
            # key and logit-bias projections carry no bias: softmax is invariant
            # to per-row constant shifts, which makes those biases dead weight
            _add_linear(tensors, rng, f"l{k}.k", d, d, bias=False)
            _add_linear(tensors, rng, f"l{k}.vn", d, d)
            _add_linear(tensors, rng, f"l{k}.vscale", de, d)
            _add_linear(tensors, rng, f"l{k}.vshift", de, d)
            _add_linear(tensors, rng, f"l{k}.ebias", de, cfg.heads, bias=False)
            _add_linear(tensors, rng, f"l{k}.out", d, d)
            _add_layer_norm(tensors, f"l{k}.ln1", d)
            _add_layer_norm(tensors, f"l{k}.ln2", d)
            _add_linear(tensors, rng, f"l{k}.ff.0", d, 2 * d)
            _add_linear(tensors, rng, f"l{k}.ff.1", 2 * d, d)
            _add_linear(tensors, rng, f"l{k}.eupd.i", d, de)
            _add_linear(tensors, rng, f"l{k}.eupd.j", d, de)
            _add_linear(tensors, rng, f"l{k}.eupd.e", de, de)
            _add_linear(tensors, rng, f"l{k}.eupd.1", de, de)
            _add_layer_norm(tensors, f"l{k}.lne", de)
        _init_heads(tensors, rng, cfg, cfg.width, cfg.edge_width, g)
    else:  # pragma: no cover
        raise ValueError(f"unknown model kind {cfg.kind!r}")
    return params


def _init_heads(tensors, rng, cfg, node_w, edge_w, g: NeuralGraph):
    if cfg.readout == "invariant":
        n_out = int(np.sum(g.io_role == ROLE_OUTPUT))
        if g.graph_id is not None:
            n_out = int(np.sum((g.io_role == ROLE_OUTPUT) & (g.graph_id == 0)))
        _add_linear(tensors, rng, "head.0", n_out * node_w, cfg.head_hidden)
        _add_linear(tensors, rng, "head.1", cfg.head_hidden, cfg.out_dim)
    if cfg.readout in ("per-node", "per-edge+per-node"):
        _add_linear(tensors, rng, "nodehead.0", node_w, cfg.head_hidden)
        _add_linear(tensors, rng, "nodehead.1", cfg.head_hidden, cfg.out_dim)
    if cfg.readout in ("per-edge", "per-edge+per-node"):
        _add_linear(tensors, rng, "edgehead.0", 2 * node_w + edge_w, cfg.head_hidden)
        _add_linear(tensors, rng, "edgehead.1", cfg.head_hidden, cfg.out_dim)


# -- NG-GNN -------------------------------------------------------------------------------


def encode(g: NeuralGraph, cfg, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Lift raw node and edge channels to the hidden widths. The dense model
    encodes the full pair tensor; the sparse model encodes the edge list."""
    if cfg.kind == "ngt":
        return ngt_encode(g, cfg, params)
    v = ad.relu(_lin(params, "enc.node", assemble_node_features(g, cfg, params)))
    e = ad.relu(_lin(params, "enc.edge", Tensor(assemble_edge_features(g))))
    return v, e


def gnn_layer(
    g: NeuralGraph,
    v: Tensor,
    e: Tensor,
    cfg: GNNConfig,
    params: ModelParams,
    k: int,
    training: bool = False,
    rng: Rng | None = None,
) -> tuple[Tensor, Tensor]:
    """One message-passing step with edge-conditioned scale/shift gating and an
    edge-state update from incident node states."""
    n = v.data.shape[0]
    src, dst = g.src, g.dst
    vs = ad.gather_rows(v, src)
    vd = ad.gather_rows(v, dst)
    raw = _mlp2(params, f"l{k}.msg", ad.concat([vs, vd], axis=1))
    scale = _lin(params, f"l{k}.scale", e)
    shift = _lin(params, f"l{k}.shift", e)
    msg = ad.add(ad.mul(scale, raw), shift)
    agg = ad.concat(
        [
            ad.segment_sum(msg, dst, n),
            ad.segment_mean(msg, dst, n),
            ad.segment_max(msg, dst, n),
        ],
        axis=1,
    )
    # the update functions are residual MLPs of their stated inputs, so states
    # keep an identity path through depth
    v_upd = _mlp2(params, f"l{k}.upd", ad.concat([v, agg], axis=1))
    e_upd = _mlp2(params, f"l{k}.edge", ad.concat([vs, e, vd], axis=1))
    if training and cfg.dropout > 0.0:
        v_upd = ad.dropout(v_upd, cfg.dropout, rng)
        e_upd = ad.dropout(e_upd, cfg.dropout, rng)
    return ad.add(v, v_upd), ad.add(e, e_upd)


# -- NG-T ----------------------------------------------------------------------------------


def ngt_dense_input(g: NeuralGraph) -> tuple[np.ndarray, np.ndarray]:
    """Dense (n, n, channels) raw edge tensor plus the pair-existence mask.

    Every stored edge, forward or reversed, writes its full feature vector at
    its (source, destination) slot; absent pairs stay zero.
    """
    n = g.n
    feats = assemble_edge_features(g)
    dense = np.zeros((n, n, feats.shape[1] + 1))
    dense[g.src, g.dst, : feats.shape[1]] = feats
    mask = np.zeros((n, n))
    mask[g.src, g.dst] = 1.0
    dense[:, :, -1] = mask
    return dense, mask


def ngt_encode(g: NeuralGraph, cfg: NGTConfig, params: ModelParams) -> tuple[Tensor, Tensor]:
    v = ad.relu(_lin(params, "enc.node", assemble_node_features(g, cfg, params)))
    dense, _ = ngt_dense_input(g)
    e = ad.relu(_lin(params, "enc.edge", Tensor(dense)))
    return v, e


def ngt_layer(
    v: Tensor,
    e: Tensor,
    cfg: NGTConfig,
    params: ModelParams,
    k: int,
    training: bool = False,
    rng: Rng | None = None,
) -> tuple[Tensor, Tensor]:
    """Relational attention with value modulation: per-pair values are the node
    value term gated by an edge scale plus an edge shift; logits take an additive
    per-head edge bias. Residual connections and layer normalization wrap the
    attention and feed-forward sub-blocks, and the edge states get the same
    treatment around their incident-node update."""
    n, d = v.data.shape
    H = cfg.heads
    dh = d // H
    q = _lin(params, f"l{k}.q", v)
    kk = _lin(params, f"l{k}.k", v)
    vn = _lin(params, f"l{k}.vn", v)
    vscale = _lin(params, f"l{k}.vscale", e)  # (n, n, d)
    vshift = _lin(params, f"l{k}.vshift", e)
    pair_vals = ad.add(ad.mul(vscale, vn), vshift)  # broadcast over source axis j
    ebias = _lin(params, f"l{k}.ebias", e)  # (n, n, H)
    head_outs = []
    for h in range(H):
        sl = slice(h * dh, (h + 1) * dh)
        logits = ad.mul(
            ad.matmul(q[:, sl], ad.transpose(kk[:, sl])), Tensor(1.0 / np.sqrt(dh))
        )
        logits = ad.add(logits, ad.reshape(ebias[:, :, h], (n, n)))
        att = ad.softmax(logits, axis=1)  # (n, n) over sources j
        weighted = ad.mul(ad.reshape(att, (n, n, 1)), pair_vals[:, :, sl])
        head_outs.append(ad.rsum(weighted, axis=1))  # (n, dh)
    att_out = _lin(params, f"l{k}.out", ad.concat(head_outs, axis=1))
    if training and cfg.dropout > 0.0:
        att_out = ad.dropout(att_out, cfg.dropout, rng)
    v = _ln(params, f"l{k}.ln1", ad.add(v, att_out))
    ff = _lin(params, f"l{k}.ff.1", ad.relu(_lin(params, f"l{k}.ff.0", v)))
    if training and cfg.dropout > 0.0:
        ff = ad.dropout(ff, cfg.dropout, rng)
    v = _ln(params, f"l{k}.ln2", ad.add(v, ff))

    # edge update mirrors the sparse model's form on the dense tensor
    ei = ad.reshape(_lin(params, f"l{k}.eupd.i", v), (n, 1, cfg.edge_width))
    ej = ad.reshape(_lin(params, f"l{k}.eupd.j", v), (1, n, cfg.edge_width))
    ee = _lin(params, f"l{k}.eupd.e", e)
    upd = _lin(params, f"l{k}.eupd.1", ad.relu(ad.add(ad.add(ei, ej), ee)))
    if training and cfg.dropout > 0.0:
        upd = ad.dropout(upd, cfg.dropout, rng)
    e = _ln(params, f"l{k}.lne", ad.add(e, upd))
    return v, e


# -- readout --------------------------------------------------------------------------------


def readout(
    g: NeuralGraph,
    v: Tensor,
    e: Tensor | None,
    cfg,
    params: ModelParams,
    mode: str | None = None,
):
    """Map final states to predictions.

    invariant: concatenate output-band states in output-index order, apply the
    head; per-node: one output per node; per-edge: one output per forward edge
    from [v_src, e, v_dst]."""
    mode = mode or cfg.readout
    if mode == "invariant":
        out_mask = g.io_role == ROLE_OUTPUT
        order = np.argsort(g.index_in_band[out_mask], kind="stable")
        if g.graph_id is not None:
            gid = g.graph_id[out_mask]
            order = np.lexsort((g.index_in_band[out_mask], gid))
            num_g = int(gid.max()) + 1
        else:
            num_g = 1
        idx = np.flatnonzero(out_mask)[order]
        states = ad.gather_rows(v, idx)
        flat = ad.reshape(states, (num_g, -1))
        return _lin(params, "head.1", ad.relu(_lin(params, "head.0", flat)))
    if mode == "per-node":
        return _node_head(params, v)
    if mode == "per-edge":
        return _edge_head(g, params, v, e)
    if mode == "per-edge+per-node":
        return {"edge": _edge_head(g, params, v, e), "node": _node_head(params, v)}
    raise ValueError(f"unknown readout mode {mode!r}")


def _node_head(params, v):
    return _lin(params, "nodehead.1", ad.relu(_lin(params, "nodehead.0", v)))


def _edge_head(g, params, v, e):
    fwd = np.flatnonzero(g.direction == 0)
    vs = ad.gather_rows(v, g.src[fwd])
    vd = ad.gather_rows(v, g.dst[fwd])
    if e.data.ndim == 3:  # dense transformer states: gather the forward pairs
        es = ad.reshape(e, (-1, e.data.shape[-1]))
        estates = ad.gather_rows(es, g.src[fwd] * g.n + g.dst[fwd])
    else:
        estates = ad.gather_rows(e, fwd)
    return _lin(
        params, "edgehead.1", ad.relu(_lin(params, "edgehead.0", ad.concat([vs, estates, vd], axis=1)))
    )


def forward_edge_index(g: NeuralGraph) -> np.ndarray:
    """Edge-list positions of forward edges, the rows per-edge outputs refer to."""
    return np.flatnonzero(g.direction == 0)


# -- full forward -----------------------------------------------------------------------------


def forward(
    g: NeuralGraph,
    cfg,
    params: ModelParams,
    training: bool = False,
    rng: Rng | None = None,
    mode: str | None = None,
):
    """encode, run the configured number of layers, then read out."""
    if training and cfg.dropout > 0.0 and rng is None:
        raise ValueError("training with dropout needs an explicit rng")
    if cfg.kind == "gnn":
        v, e = encode(g, cfg, params)
        for k in range(cfg.layers):
            v, e = gnn_layer(g, v, e, cfg, params, k, training=training, rng=rng)
        return readout(g, v, e, cfg, params, mode)
    # dense attention runs per member graph; a batch is their disjoint union
    members = _members(g)
    if len(members) == 1:
        v, e = ngt_encode(g, cfg, params)
        for k in range(cfg.layers):
            v, e = ngt_layer(v, e, cfg, params, k, training=training, rng=rng)
        return readout(g, v, e, cfg, params, mode)
    outs = [forward(m, cfg, params, training=training, rng=rng, mode=mode) for m in members]
    if isinstance(outs[0], dict):
        return {key: ad.concat([o[key] for o in outs], axis=0) for key in outs[0]}
    return ad.concat(outs, axis=0)
