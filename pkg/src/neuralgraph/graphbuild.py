"""Checkpoints to neural graphs and back, plus feature attachment and the
graph-level forward pass.

Nodes are neurons (biases as features), edges are weights. Edge features share
one geometry across layer kinds: kernels are zero-padded to the conversion's
maximum kernel size, centered, and flattened row-major; scalar weights sit in
the center slot under the 1x1-convolution view, or in slot 0 when linear
layers keep their own representation. Edges are kept sorted by (destination,
source, direction) so reductions are reproducible.
"""

from __future__ import annotations

import base64
import copy
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import netzoo
from .autodiff import Rng, Tensor
from .netzoo import ACTIVATIONS, Checkpoint, LayerSpec, NeuronPermutation

ROLE_INPUT, ROLE_HIDDEN, ROLE_OUTPUT = 0, 1, 2

EK_LINEAR, EK_CONV, EK_NORM, EK_RESIDUAL, EK_QKV, EK_ATTN_OUT, EK_VIRTUAL = range(7)
EDGE_KINDS = ("linear", "conv", "norm", "residual", "qkv", "attn-out", "virtual")

LINEAR_MODES = ("as-mlp", "as-1x1-conv")
FLATTEN_MODES = ("adaptive", "repeat-nodes", "virtual-layer")

_ACT_INDEX = {name: i for i, name in enumerate(ACTIVATIONS)}


@dataclass
class BandInfo:
    """Per-band description of where the band's nodes came from."""

    kind: str  # input | linear | conv2d | norm | attention-head | attention-out | virtual
    size: int
    activation: str = "identity"
    kernel: tuple[int, int] | None = None  # incoming weight kernel extent
    residual_source: int | None = None
    heads: int | None = None
    head_dim: int | None = None
    copies: int = 1  # spatial copies folded into the band (flattening strategies)
    spatial: tuple[int, int] | None = None  # feature-map size behind those copies

    @property
    def has_bias(self) -> bool:
        return self.kind in ("linear", "conv2d", "norm")


@dataclass
class NeuralGraph:
    node_band: np.ndarray
    index_in_band: np.ndarray
    spatial_pos: np.ndarray
    io_role: np.ndarray
    activation: np.ndarray
    node_features: np.ndarray
    node_layout: list[tuple[str, int]]
    src: np.ndarray
    dst: np.ndarray
    edge_features: np.ndarray
    edge_layout: list[tuple[str, int]]
    edge_kind: np.ndarray
    direction: np.ndarray
    kernel_w: np.ndarray
    kernel_h: np.ndarray
    bands: list[BandInfo]
    max_kernel: tuple[int, int]
    linear_mode: str = "as-1x1-conv"
    flatten_mode: str = "adaptive"
    metadata: dict = field(default_factory=dict)
    graph_id: np.ndarray | None = None
    # the encoded computation's raw scalars; feature channels may be normalized
    # or replaced, but execution (probes, forward pass) always uses these
    exec_weight: np.ndarray | None = None
    exec_bias: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.node_band)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    @property
    def d_v(self) -> int:
        return self.node_features.shape[1]

    @property
    def d_e(self) -> int:
        """Width of one directed weight block."""
        return dict(self.edge_layout)["weight"]

    @property
    def d_e_total(self) -> int:
        return self.edge_features.shape[1]

    def band_offsets(self) -> np.ndarray:
        sizes = [b.size for b in self.bands]
        return np.concatenate([[0], np.cumsum(sizes)])

    def node_block(self, name: str) -> np.ndarray:
        off = 0
        for block, width in self.node_layout:
            if block == name:
                return self.node_features[:, off : off + width]
            off += width
        raise KeyError(f"no node feature block named {name!r}")

    def edge_block(self, name: str) -> np.ndarray:
        off = 0
        for block, width in self.edge_layout:
            if block == name:
                return self.edge_features[:, off : off + width]
            off += width
        raise KeyError(f"no edge feature block named {name!r}")

    def has_node_block(self, name: str) -> bool:
        return any(b == name for b, _ in self.node_layout)

    def has_edge_block(self, name: str) -> bool:
        return any(b == name for b, _ in self.edge_layout)

    def copy(self) -> "NeuralGraph":
        g = NeuralGraph(
            node_band=self.node_band.copy(),
            index_in_band=self.index_in_band.copy(),
            spatial_pos=self.spatial_pos.copy(),
            io_role=self.io_role.copy(),
            activation=self.activation.copy(),
            node_features=self.node_features.copy(),
            node_layout=list(self.node_layout),
            src=self.src.copy(),
            dst=self.dst.copy(),
            edge_features=self.edge_features.copy(),
            edge_layout=list(self.edge_layout),
            edge_kind=self.edge_kind.copy(),
            direction=self.direction.copy(),
            kernel_w=self.kernel_w.copy(),
            kernel_h=self.kernel_h.copy(),
            bands=copy.deepcopy(self.bands),
            max_kernel=tuple(self.max_kernel),
            linear_mode=self.linear_mode,
            flatten_mode=self.flatten_mode,
            metadata=dict(self.metadata),
            graph_id=None if self.graph_id is None else self.graph_id.copy(),
            exec_weight=None if self.exec_weight is None else self.exec_weight.copy(),
            exec_bias=None if self.exec_bias is None else self.exec_bias.copy(),
        )
        return g

    def scalar_slot(self, kind: int) -> int:
        """Which feature slot holds a scalar weight for the given edge kind."""
        w, h = self.max_kernel
        center = (w // 2) * h + h // 2
        if kind == EK_LINEAR and self.linear_mode == "as-mlp":
            return 0
        if kind in (EK_QKV, EK_ATTN_OUT):
            return 0
        return center

    def dense_edge_tensor(self, block: str = "weight") -> np.ndarray:
        """The (n, n, d) dense edge tensor implied by the edge list (forward edges)."""
        feats = self.edge_block(block)
        out = np.zeros((self.n, self.n, feats.shape[1]))
        fwd = self.direction == 0
        out[self.src[fwd], self.dst[fwd]] = feats[fwd]
        return out

    def sort_canonical(self):
        order = np.lexsort((self.direction, self.src, self.dst))
        self.src = self.src[order]
        self.dst = self.dst[order]
        self.edge_features = np.ascontiguousarray(self.edge_features[order])
        self.edge_kind = self.edge_kind[order]
        self.direction = self.direction[order]
        self.kernel_w = self.kernel_w[order]
        self.kernel_h = self.kernel_h[order]
        if self.exec_weight is not None:
            self.exec_weight = self.exec_weight[order]

    def refresh_exec_arrays(self):
        """Capture the current weight/bias channels as the executable scalars."""
        weights = self.edge_block("weight")
        scalar = np.zeros(self.num_edges)
        for kind in np.unique(self.edge_kind):
            sel = self.edge_kind == kind
            scalar[sel] = weights[sel, self.scalar_slot(int(kind))]
        self.exec_weight = scalar
        self.exec_bias = self.node_block("bias")[:, 0].copy()


# -- construction -----------------------------------------------------------------------


def _padded_slots(max_kernel, kw: int, kh: int) -> np.ndarray:
    """Flat slot indices of a centered (kw, kh) window inside the padded window."""
    wmax, hmax = max_kernel
    a0 = (wmax - kw) // 2
    b0 = (hmax - kh) // 2
    rows = np.arange(a0, a0 + kw)
    cols = np.arange(b0, b0 + kh)
    return (rows[:, None] * hmax + cols[None, :]).reshape(-1)


def _pack_kernel(values: np.ndarray, max_kernel) -> np.ndarray:
    """(m, kw, kh) kernels -> (m, wmax*hmax) padded, centered, row-major."""
    m, kw, kh = values.shape
    out = np.zeros((m, max_kernel[0] * max_kernel[1]))
    out[:, _padded_slots(max_kernel, kw, kh)] = values.reshape(m, kw * kh)
    return out


class _Builder:
    def __init__(self, max_kernel, linear_mode, flatten_mode):
        self.bands: list[BandInfo] = []
        self.node_bias: list[np.ndarray] = []
        self.spatial_pos: list[np.ndarray] = []
        self.edges = []  # (src, dst, feat_vec, kind, kw, kh)
        self.max_kernel = tuple(max_kernel)
        self.linear_mode = linear_mode
        self.flatten_mode = flatten_mode
        self.d_e = max_kernel[0] * max_kernel[1]

    def add_band(self, info: BandInfo, bias: np.ndarray | None, spatial=None) -> int:
        self.bands.append(info)
        self.node_bias.append(np.zeros(info.size) if bias is None else np.asarray(bias, dtype=np.float64))
        self.spatial_pos.append(
            np.full(info.size, -1, dtype=np.int64) if spatial is None else np.asarray(spatial, dtype=np.int64)
        )
        return len(self.bands) - 1

    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([b.size for b in self.bands])])

    def add_edges(self, src_band, dst_band, src_idx, dst_idx, feats, kind, kw, kh):
        off = self.offsets()
        self.edges.append(
            (
                off[src_band] + np.asarray(src_idx, dtype=np.int64),
                off[dst_band] + np.asarray(dst_idx, dtype=np.int64),
                np.asarray(feats, dtype=np.float64),
                kind,
                kw,
                kh,
            )
        )

    def finish(self, metadata) -> NeuralGraph:
        sizes = [b.size for b in self.bands]
        n = int(np.sum(sizes))
        node_band = np.repeat(np.arange(len(sizes)), sizes)
        index_in_band = np.concatenate([np.arange(s) for s in sizes])
        io_role = np.full(n, ROLE_HIDDEN, dtype=np.int64)
        io_role[node_band == 0] = ROLE_INPUT
        io_role[node_band == len(sizes) - 1] = ROLE_OUTPUT
        activation = np.concatenate(
            [np.full(b.size, _ACT_INDEX[b.activation], dtype=np.int64) for b in self.bands]
        )
        node_features = np.concatenate(self.node_bias).reshape(n, 1)
        if self.edges:
            src = np.concatenate([e[0] for e in self.edges])
            dst = np.concatenate([e[1] for e in self.edges])
            feats = np.concatenate([e[2] for e in self.edges])
            kind = np.concatenate([np.full(len(e[0]), e[3], dtype=np.int64) for e in self.edges])
            kw = np.concatenate([np.full(len(e[0]), e[4], dtype=np.int64) for e in self.edges])
            kh = np.concatenate([np.full(len(e[0]), e[5], dtype=np.int64) for e in self.edges])
        else:
            src = dst = kind = kw = kh = np.zeros(0, dtype=np.int64)
            feats = np.zeros((0, self.d_e))
        g = NeuralGraph(
            node_band=node_band,
            index_in_band=index_in_band,
            spatial_pos=np.concatenate(self.spatial_pos),
            io_role=io_role,
            activation=activation,
            node_features=node_features,
            node_layout=[("bias", 1)],
            src=src,
            dst=dst,
            edge_features=feats,
            edge_layout=[("weight", self.d_e)],
            edge_kind=kind,
            direction=np.zeros(len(src), dtype=np.int64),
            kernel_w=kw,
            kernel_h=kh,
            bands=self.bands,
            max_kernel=self.max_kernel,
            linear_mode=self.linear_mode,
            flatten_mode=self.flatten_mode,
            metadata=dict(metadata),
        )
        g.refresh_exec_arrays()
        g.sort_canonical()
        return g


def _full_bipartite(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray]:
    """(src_idx, dst_idx) for all (j -> i) pairs, emitted dst-major."""
    dst = np.repeat(np.arange(n_out), n_in)
    src = np.tile(np.arange(n_in), n_out)
    return src, dst


def network_to_graph(
    net: Checkpoint,
    max_kernel: tuple[int, int] = (1, 1),
    linear_mode: str = "as-1x1-conv",
    flatten_mode: str = "adaptive",
    residual_edges: bool = True,
) -> NeuralGraph:
    """Generic converter covering linear, conv2d, norm, attention-block, and
    flatten layers; the family-specific constructors wrap this."""
    if linear_mode not in LINEAR_MODES:
        raise ValueError(f"unknown linear mode {linear_mode!r}")
    if flatten_mode not in FLATTEN_MODES:
        raise ValueError(f"unknown flatten mode {flatten_mode!r}")
    net.validate()
    for i, layer in enumerate(net.spec):
        if layer.kind == "conv2d":
            if layer.kernel[0] > max_kernel[0] or layer.kernel[1] > max_kernel[1]:
                raise ValueError(
                    f"spec[{i}]: kernel {layer.kernel} exceeds maximum {max_kernel}"
                )
    flats = [i for i, l in enumerate(net.spec) if l.kind == "flatten"]
    if flatten_mode == "adaptive":
        if flats:
            raise ValueError("adaptive flattening cannot represent an explicit flatten layer")
    else:
        if len(flats) != 1 or flats[0] + 1 >= len(net.spec) or net.spec[flats[0] + 1].kind != "linear":
            raise ValueError(
                f"{flatten_mode} flattening needs exactly one flatten layer followed by a linear head"
            )

    if any(l.residual_source is not None for l in net.spec) and any(
        l.kind == "attention-block" for l in net.spec
    ):
        raise ValueError("residual connections alongside attention blocks are not supported")

    b = _Builder(max_kernel, linear_mode, flatten_mode)
    b.add_band(BandInfo("input", net.spec[0].in_dim), None)
    prev_band = 0

    for i, layer in enumerate(net.spec):
        prm = net.params[i]
        if layer.kind == "linear":
            w = prm["weight"]
            if w.shape[1] != b.bands[prev_band].size:
                raise ValueError(
                    f"spec[{i}]: linear expects {w.shape[1]} inputs, band has {b.bands[prev_band].size}"
                )
            band = b.add_band(
                BandInfo(
                    "linear",
                    layer.out_dim,
                    activation=layer.activation,
                    kernel=(1, 1),
                    residual_source=layer.residual_source,
                ),
                prm["bias"],
            )
            sidx, didx = _full_bipartite(layer.out_dim, w.shape[1])
            if linear_mode == "as-mlp":
                feats = np.zeros((len(sidx), b.d_e))
                feats[:, 0] = w[didx, sidx]
            else:
                feats = _pack_kernel(w[didx, sidx].reshape(-1, 1, 1), max_kernel)
            b.add_edges(prev_band, band, sidx, didx, feats, EK_LINEAR, 1, 1)
            prev_band = band
        elif layer.kind == "conv2d":
            band = b.add_band(
                BandInfo(
                    "conv2d",
                    layer.out_dim,
                    activation=layer.activation,
                    kernel=tuple(layer.kernel),
                    residual_source=layer.residual_source,
                ),
                prm["bias"],
            )
            w = prm["weight"]  # (out, in, kw, kh)
            sidx, didx = _full_bipartite(layer.out_dim, layer.in_dim)
            feats = _pack_kernel(w[didx, sidx], max_kernel)
            b.add_edges(prev_band, band, sidx, didx, feats, EK_CONV, layer.kernel[0], layer.kernel[1])
            prev_band = band
        elif layer.kind == "norm":
            band = b.add_band(
                BandInfo("norm", layer.out_dim, activation=layer.activation, kernel=(1, 1)),
                prm["shift"],
            )
            idx = np.arange(layer.out_dim)
            feats = _pack_kernel(prm["scale"].reshape(-1, 1, 1), max_kernel)
            b.add_edges(prev_band, band, idx, idx, feats, EK_NORM, 1, 1)
            prev_band = band
        elif layer.kind == "attention-block":
            heads, dh = layer.heads, layer.head_dim
            hband = b.add_band(
                BandInfo("attention-head", heads * dh, heads=heads, head_dim=dh), None
            )
            oband = b.add_band(
                BandInfo("attention-out", layer.out_dim, activation=layer.activation), None
            )
            d_in = layer.in_dim
            sidx, didx = _full_bipartite(heads * dh, d_in)
            feats = np.zeros((len(sidx), b.d_e))
            if b.d_e < 3:
                raise ValueError("attention graphs need d_E >= 3 for (Q, K, V) channels")
            feats[:, 0] = prm["wq"][sidx, didx]
            feats[:, 1] = prm["wk"][sidx, didx]
            feats[:, 2] = prm["wv"][sidx, didx]
            b.add_edges(prev_band, hband, sidx, didx, feats, EK_QKV, 1, 1)
            sidx, didx = _full_bipartite(layer.out_dim, heads * dh)
            feats = np.zeros((len(sidx), b.d_e))
            feats[:, 0] = prm["wo"][sidx, didx]
            b.add_edges(hband, oband, sidx, didx, feats, EK_ATTN_OUT, 1, 1)
            prev_band = oband
        elif layer.kind == "flatten":
            if flatten_mode == "adaptive":
                continue
            s = layer.spatial[0] * layer.spatial[1]
            conv_band = b.bands[prev_band]
            c = conv_band.size
            if flatten_mode == "repeat-nodes":
                # expand the previous band in place: node (ch, loc) in channel-major order
                off = b.offsets()
                lo, hi = off[prev_band], off[prev_band + 1]
                for e_i, (esrc, edst, efeat, ekind, ekw, ekh) in enumerate(b.edges):
                    if not np.any((edst >= lo) & (edst < hi)):
                        continue
                    reps = np.repeat(np.arange(s), len(edst))
                    new_dst = lo + np.tile(edst - lo, s) * s + reps
                    new_src = np.tile(esrc, s)
                    new_feat = np.tile(efeat, (s, 1))
                    b.edges[e_i] = (new_src, new_dst, new_feat, ekind, ekw, ekh)
                conv_band.size = c * s
                conv_band.copies = s
                conv_band.spatial = tuple(layer.spatial)
                b.node_bias[prev_band] = np.repeat(b.node_bias[prev_band], s)
                b.spatial_pos[prev_band] = np.tile(np.arange(s), c)
            else:  # virtual-layer
                vband = b.add_band(
                    BandInfo("virtual", c * s, copies=s, spatial=tuple(layer.spatial)),
                    None,
                    spatial=np.tile(np.arange(s), c),
                )
                ones = _pack_kernel(np.ones((c * s, 1, 1)), max_kernel)
                sidx = np.repeat(np.arange(c), s)
                didx = np.arange(c * s)
                b.add_edges(prev_band, vband, sidx, didx, ones, EK_VIRTUAL, 1, 1)
                prev_band = vband
        else:  # pragma: no cover
            raise ValueError(f"spec[{i}]: unsupported layer kind {layer.kind!r}")

    g = b.finish({"checkpoint_metadata": dict(net.metadata)})
    if residual_edges:
        g = add_residual_edges(g)
    return g


def mlp_to_graph(net: Checkpoint) -> NeuralGraph:
    """Plain-MLP conversion: one scalar edge per weight entry, biases as node
    features, zeros on the input band; d_V = d_E = 1."""
    for i, layer in enumerate(net.spec):
        if layer.kind == "conv2d":
            raise ValueError(f"spec[{i}] is a convolution; use cnn_to_graph for CNNs")
        if layer.kind != "linear":
            raise ValueError(f"spec[{i}]: mlp_to_graph supports linear layers only")
    return network_to_graph(net, max_kernel=(1, 1), linear_mode="as-mlp", residual_edges=False)


def cnn_to_graph(
    net: Checkpoint,
    max_kernel: tuple[int, int] = (5, 5),
    linear_mode: str = "as-1x1-conv",
    flatten_mode: str = "adaptive",
) -> NeuralGraph:
    """Channels-as-nodes CNN conversion with kernel padding and flattening."""
    if not any(l.kind == "conv2d" for l in net.spec):
        raise ValueError("cnn_to_graph expects at least one convolutional layer")
    return network_to_graph(
        net,
        max_kernel=max_kernel,
        linear_mode=linear_mode,
        flatten_mode=flatten_mode,
        residual_edges=False,
    )


def norm_to_graph(scale: np.ndarray, shift: np.ndarray, max_kernel=(1, 1)) -> NeuralGraph:
    """A standalone normalization fragment: d input nodes, d output nodes,
    and exactly d diagonal edges carrying the multiplicative terms."""
    scale = np.asarray(scale, dtype=np.float64)
    shift = np.asarray(shift, dtype=np.float64)
    if scale.shape != shift.shape or scale.ndim != 1:
        raise ValueError(
            f"norm_to_graph: scale {scale.shape} and shift {shift.shape} must be equal-length vectors"
        )
    d = len(scale)
    net = Checkpoint(
        spec=[LayerSpec("norm", d, d)],
        params=[{"scale": scale, "shift": shift}],
    )
    return network_to_graph(net, max_kernel=max_kernel, linear_mode="as-mlp")


def transformer_to_graph(net: Checkpoint, max_kernel=(1, 3)) -> NeuralGraph:
    """Multi-head self-attention conversion: input nodes, one node per head
    dimension, output nodes; input-to-head edges carry 3-channel (Q, K, V)
    features and head-to-output edges carry the output projection in channel 0.
    Dot-product attention itself is parameter-free and is not encoded."""
    if net.spec[0].kind != "attention-block":
        raise ValueError("transformer_to_graph expects an attention block first")
    for i, layer in enumerate(net.spec[1:], start=1):
        if layer.kind not in ("linear", "norm"):
            raise ValueError(f"spec[{i}]: only linear/norm layers may follow the block")
    if max_kernel[0] * max_kernel[1] < 3:
        max_kernel = (1, 3)
    return network_to_graph(net, max_kernel=max_kernel, linear_mode="as-mlp")


def add_residual_edges(g: NeuralGraph) -> NeuralGraph:
    """Identity edges for each band with a residual source: node k of the source
    band to node k of the destination band for k below the smaller width, carrying
    1 in the scalar slot."""
    targets = [
        (bi, info.residual_source)
        for bi, info in enumerate(g.bands)
        if info.residual_source is not None
    ]
    if not targets:
        return g.copy()
    if np.any(g.edge_kind == EK_RESIDUAL):
        raise ValueError("residual edges already attached")
    g = g.copy()
    off = g.band_offsets()
    slot = g.scalar_slot(EK_RESIDUAL)
    new_src, new_dst = [], []
    for dst_band, src_band in targets:
        k = min(g.bands[src_band].size, g.bands[dst_band].size)
        new_src.append(off[src_band] + np.arange(k))
        new_dst.append(off[dst_band] + np.arange(k))
    add_n = sum(len(s) for s in new_src)
    feats = np.zeros((add_n, g.d_e_total))
    feats[:, slot] = 1.0
    g.src = np.concatenate([g.src] + new_src)
    g.dst = np.concatenate([g.dst] + new_dst)
    g.edge_features = np.concatenate([g.edge_features, feats])
    g.edge_kind = np.concatenate([g.edge_kind, np.full(add_n, EK_RESIDUAL, dtype=np.int64)])
    g.direction = np.concatenate([g.direction, np.zeros(add_n, dtype=np.int64)])
    g.kernel_w = np.concatenate([g.kernel_w, np.ones(add_n, dtype=np.int64)])
    g.kernel_h = np.concatenate([g.kernel_h, np.ones(add_n, dtype=np.int64)])
    if g.exec_weight is not None:
        g.exec_weight = np.concatenate([g.exec_weight, np.ones(add_n)])
    g.sort_canonical()
    return g


# -- feature attachment --------------------------------------------------------------------


@dataclass
class ActivationEmbeddingTable:
    """Fixed per-activation code vectors; a full-rank random table followed by the
    models' learned encoders spans the same functions as a learned table."""

    vectors: np.ndarray  # (len(ACTIVATIONS), d_act)

    @classmethod
    def create(cls, rng: Rng, d_act: int = 8) -> "ActivationEmbeddingTable":
        return cls(rng.normal(size=(len(ACTIVATIONS), d_act)))


def attach_activation_embeddings(g: NeuralGraph, table: ActivationEmbeddingTable) -> NeuralGraph:
    """Append one embedding per node according to its activation; input nodes
    carry the identity-activation embedding."""
    if g.has_node_block("activation"):
        raise ValueError("activation embeddings already attached")
    g = g.copy()
    emb = table.vectors[g.activation]
    g.node_features = np.concatenate([g.node_features, emb], axis=1)
    g.node_layout.append(("activation", table.vectors.shape[1]))
    return g


@dataclass
class ProbeSet:
    """Learned input points whose activations become extra node channels."""

    points: np.ndarray  # (M, d0)
    trainable: bool = True

    @classmethod
    def create(
        cls, rng: Rng, count: int, in_dim: int, trainable: bool = True, init: str = "uniform"
    ) -> "ProbeSet":
        """Points start uniform in [-1, 1]^d0, or (for 2-d inputs) on a jittered
        grid covering the square, which avoids coverage holes at small counts."""
        if init == "grid" and in_dim == 2:
            side = int(np.ceil(np.sqrt(count)))
            ax = np.linspace(-0.92, 0.92, side)
            pts = np.stack(np.meshgrid(ax, ax), -1).reshape(-1, 2)[:count]
            pts = pts + rng.uniform(-0.12, 0.12, size=pts.shape)
            return cls(pts, trainable)
        return cls(rng.uniform(-1.0, 1.0, size=(count, in_dim)), trainable)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.size and not np.all(np.isfinite(self.points)):
            raise ValueError("probe points must be finite")


def attach_probe_features(g: NeuralGraph, net: Checkpoint | None, probes: ProbeSet) -> NeuralGraph:
    """Record each probe's forward activations as node channels: its coordinates
    on input nodes, post-activation values on hidden nodes, outputs on output
    nodes. Runs the graph's own encoded computation."""
    if probes.points.shape[0] == 0:
        return g.copy()
    if net is not None and probes.points.shape[1] != net.in_dim:
        raise ValueError(
            f"probe dimension {probes.points.shape[1]} does not match input dimension {net.in_dim}"
        )
    if probes.points.shape[1] != g.bands[0].size:
        raise ValueError(
            f"probe dimension {probes.points.shape[1]} does not match input band {g.bands[0].size}"
        )
    if g.has_node_block("probe"):
        raise ValueError("probe features already attached")
    vals = node_activations(g, Tensor(probes.points.T)).data  # (n, M)
    g = g.copy()
    g.node_features = np.concatenate([g.node_features, vals], axis=1)
    g.node_layout.append(("probe", probes.points.shape[0]))
    return g


@dataclass
class PositionalEmbeddings:
    """Shared vectors per hidden band, unique vectors per input and per output
    node, and per-location vectors for spatially expanded bands."""

    band_vectors: np.ndarray  # (num_bands, d_pos)
    input_vectors: np.ndarray  # (d_in, d_pos)
    output_vectors: np.ndarray  # (d_out, d_pos)
    location_vectors: np.ndarray  # (max_copies, d_pos)

    @property
    def width(self) -> int:
        return self.band_vectors.shape[1]

    @classmethod
    def for_graph(cls, g: NeuralGraph, rng: Rng, d_pos: int = 16) -> "PositionalEmbeddings":
        max_copies = max(b.copies for b in g.bands)
        return cls(
            band_vectors=rng.normal(size=(len(g.bands), d_pos)),
            input_vectors=rng.normal(size=(g.bands[0].size, d_pos)),
            output_vectors=rng.normal(size=(g.bands[-1].size, d_pos)),
            location_vectors=rng.normal(size=(max_copies, d_pos)),
        )


def positional_channels(g: NeuralGraph, pe: PositionalEmbeddings) -> np.ndarray:
    out = pe.band_vectors[g.node_band].copy()
    inp = g.io_role == ROLE_INPUT
    outp = g.io_role == ROLE_OUTPUT
    out[inp] = pe.input_vectors[g.index_in_band[inp]]
    out[outp] = pe.output_vectors[g.index_in_band[outp]]
    copies = g.spatial_pos >= 0
    if np.any(copies):
        out[copies] += pe.location_vectors[g.spatial_pos[copies]]
    return out


def attach_positional_embeddings(g: NeuralGraph, pe: PositionalEmbeddings) -> NeuralGraph:
    if g.has_node_block("position"):
        raise ValueError("positional embeddings already attached")
    chans = positional_channels(g, pe)
    g = g.copy()
    g.node_features = np.concatenate([g.node_features, chans], axis=1)
    g.node_layout.append(("position", pe.width))
    return g


def attach_direction_features(g: NeuralGraph, undirected: bool = False) -> NeuralGraph:
    """Add a reversed copy of every forward edge carrying its features in a
    second channel block; optionally a third block with the symmetrized features."""
    if g.has_edge_block("backward"):
        raise ValueError("direction features already attached")
    g2 = g.copy()
    E = g.num_edges
    d = g.d_e_total
    fwd_feats = np.concatenate([g.edge_features, np.zeros((E, d))], axis=1)
    bwd_feats = np.concatenate([np.zeros((E, d)), g.edge_features], axis=1)
    layout = list(g.edge_layout) + [("backward", d)]
    if undirected:
        # symmetrized features: reciprocal forward pairs sum, otherwise a copy
        pair = {}
        for i in range(E):
            pair[(int(g.src[i]), int(g.dst[i]))] = i
        sym = g.edge_features.copy()
        for i in range(E):
            j = pair.get((int(g.dst[i]), int(g.src[i])))
            if j is not None:
                sym[i] = g.edge_features[i] + g.edge_features[j]
        fwd_feats = np.concatenate([fwd_feats, sym], axis=1)
        bwd_feats = np.concatenate([bwd_feats, sym], axis=1)
        layout.append(("undirected", d))
    g2.src = np.concatenate([g.src, g.dst])
    g2.dst = np.concatenate([g.dst, g.src])
    g2.edge_features = np.concatenate([fwd_feats, bwd_feats])
    g2.edge_kind = np.concatenate([g.edge_kind, g.edge_kind])
    g2.direction = np.concatenate([g.direction, np.ones(E, dtype=np.int64)])
    g2.kernel_w = np.concatenate([g.kernel_w, g.kernel_w])
    g2.kernel_h = np.concatenate([g.kernel_h, g.kernel_h])
    if g.exec_weight is not None:
        g2.exec_weight = np.concatenate([g.exec_weight, g.exec_weight])
    g2.edge_layout = layout
    g2.sort_canonical()
    return g2


# -- layerwise normalization ------------------------------------------------------------------


_PARAM_EDGE_KINDS = (EK_LINEAR, EK_CONV, EK_NORM, EK_QKV, EK_ATTN_OUT)


def _valid_slot_mask(g: NeuralGraph) -> np.ndarray:
    """(E, d_e) mask of slots that hold actual parameters."""
    mask = np.zeros((g.num_edges, g.d_e), dtype=bool)
    for kind in _PARAM_EDGE_KINDS:
        sel = g.edge_kind == kind
        if not np.any(sel):
            continue
        if kind == EK_QKV:
            mask[sel, 0:3] = True
        elif kind == EK_ATTN_OUT:
            mask[sel, 0] = True
        else:
            for kw, kh in {(int(a), int(b)) for a, b in zip(g.kernel_w[sel], g.kernel_h[sel])}:
                slots = _padded_slots(g.max_kernel, kw, kh)
                sub = sel & (g.kernel_w == kw) & (g.kernel_h == kh)
                if kind == EK_LINEAR and g.linear_mode == "as-mlp":
                    slots = np.array([0])
                mask[np.ix_(sub, slots)] = True
    return mask


def normalize_layerwise(graphs: list[NeuralGraph]) -> tuple[list[NeuralGraph], dict]:
    """Standardize weight and bias values with one mean/std per layer band,
    computed across the whole batch; returns the stats for reuse on held-out data."""
    if not graphs:
        raise ValueError("normalize_layerwise: empty batch")
    if any(g.has_edge_block("backward") for g in graphs):
        raise ValueError("normalize before attaching direction features")
    stats: dict[int, dict[str, float]] = {}
    w_acc: dict[int, list[np.ndarray]] = {}
    b_acc: dict[int, list[np.ndarray]] = {}
    for g in graphs:
        mask = _valid_slot_mask(g)
        dst_band = g.node_band[g.dst]
        weights = g.edge_block("weight")
        for band in np.unique(dst_band):
            sel = dst_band == band
            vals = weights[sel][mask[sel]]
            if vals.size:
                w_acc.setdefault(int(band), []).append(vals)
        bias = g.node_block("bias")[:, 0]
        for band, info in enumerate(g.bands):
            if info.has_bias:
                b_acc.setdefault(band, []).append(bias[g.node_band == band])
    for band in sorted(set(w_acc) | set(b_acc)):
        ws = np.concatenate(w_acc.get(band, [np.zeros(0)]))
        bs = np.concatenate(b_acc.get(band, [np.zeros(0)]))
        stats[band] = {
            "w_mean": float(ws.mean()) if ws.size else 0.0,
            "w_std": max(float(ws.std()) if ws.size else 1.0, 1e-6),
            "b_mean": float(bs.mean()) if bs.size else 0.0,
            "b_std": max(float(bs.std()) if bs.size else 1.0, 1e-6),
        }
    return [apply_normalization(g, stats) for g in graphs], stats


def apply_normalization(g: NeuralGraph, stats: dict) -> NeuralGraph:
    g = g.copy()
    mask = _valid_slot_mask(g)
    weights = g.edge_block("weight")
    dst_band = g.node_band[g.dst]
    bias = g.node_block("bias")
    for band, st in stats.items():
        if band >= len(g.bands):
            continue
        sel = dst_band == band
        m = mask & sel[:, None]
        weights[m] = (weights[m] - st["w_mean"]) / st["w_std"]
        if g.bands[band].has_bias:
            nsel = g.node_band == band
            bias[nsel, 0] = (bias[nsel, 0] - st["b_mean"]) / st["b_std"]
    return g


# -- permutation action on graphs ----------------------------------------------------------


def _expand_band_perms(g: NeuralGraph, p: NeuronPermutation) -> list[np.ndarray]:
    """Align checkpoint-band permutations with graph bands: spatially expanded
    bands inherit the induced per-copy permutation of their channel band."""
    sizes = [b.size for b in g.bands]
    if len(p.perms) == len(sizes) and all(len(q) == s for q, s in zip(p.perms, sizes)):
        return list(p.perms)
    out: list[np.ndarray] = []
    cursor = 0

    def take(expect: int) -> np.ndarray:
        nonlocal cursor
        if cursor >= len(p.perms) or len(p.perms[cursor]) != expect:
            raise ValueError(
                f"permutation bands {[len(q) for q in p.perms]} do not match graph bands {sizes}"
            )
        q = p.perms[cursor]
        cursor += 1
        return q

    for info in g.bands:
        if info.copies == 1:
            out.append(take(info.size))
            continue
        s = info.copies
        c = info.size // s
        if info.kind == "virtual":
            q = out[-1]  # inherit the channel band's permutation
        else:
            q = take(c)
        out.append((q[:, None] * s + np.arange(s)[None, :]).reshape(-1))
    if cursor != len(p.perms):
        raise ValueError(
            f"permutation bands {[len(q) for q in p.perms]} do not match graph bands {sizes}"
        )
    return out


def node_permutation_vector(g: NeuralGraph, p: NeuronPermutation) -> np.ndarray:
    """Flatten a per-band permutation to node ids: out[i] = old node at new slot i."""
    perms = _expand_band_perms(g, p)
    off = g.band_offsets()
    return np.concatenate([off[b] + perm for b, perm in enumerate(perms)])


def apply_node_permutation(g: NeuralGraph, p: NeuronPermutation) -> NeuralGraph:
    """The group action on the graph: permute node rows and relabel edge endpoints,
    then restore canonical edge order."""
    node_perm = node_permutation_vector(g, p)
    inv = np.argsort(node_perm)
    g2 = g.copy()
    g2.node_features = np.ascontiguousarray(g.node_features[node_perm])
    g2.activation = g.activation[node_perm]
    g2.spatial_pos = g.spatial_pos[node_perm]
    if g.exec_bias is not None:
        g2.exec_bias = g.exec_bias[node_perm]
    # band, role, and within-band index are positional and re-derived
    g2.src = inv[g.src]
    g2.dst = inv[g.dst]
    g2.sort_canonical()
    return g2


def graphs_equal(a: NeuralGraph, b: NeuralGraph, exact: bool = True) -> bool:
    if a.n != b.n or a.num_edges != b.num_edges:
        return False
    checks = [
        np.array_equal(a.node_band, b.node_band),
        np.array_equal(a.io_role, b.io_role),
        np.array_equal(a.activation, b.activation),
        np.array_equal(a.src, b.src),
        np.array_equal(a.dst, b.dst),
        np.array_equal(a.edge_kind, b.edge_kind),
        np.array_equal(a.direction, b.direction),
    ]
    if exact:
        checks.append(np.array_equal(a.node_features, b.node_features))
        checks.append(np.array_equal(a.edge_features, b.edge_features))
    else:
        checks.append(np.allclose(a.node_features, b.node_features, atol=1e-9))
        checks.append(np.allclose(a.edge_features, b.edge_features, atol=1e-9))
    return all(checks)


# -- graph-level forward pass ---------------------------------------------------------------


def _check_executable(g: NeuralGraph):
    for info in g.bands:
        if info.kind in ("attention-head", "attention-out"):
            raise ValueError(
                "cannot execute attention graphs: dot-product attention is not encoded"
            )
        if info.copies != 1 or info.kind == "virtual":
            raise ValueError("cannot execute graphs bound to a spatial resolution")
    if np.any((g.kernel_w > 1) | (g.kernel_h > 1)):
        raise ValueError("cannot execute spatial kernels on the channel graph")


def node_activations(g: NeuralGraph, x: Tensor) -> Tensor:
    """Run the encoded computation and return every node's value, (n, B).

    Edges multiply their scalar weight with the tail node's value; each node
    adds its bias over incoming contributions and applies its activation.
    """
    _check_executable(g)
    arr = x.data
    if arr.ndim == 1:
        x = ad.reshape(x, (len(arr), 1))
    if x.data.shape[0] != g.bands[0].size:
        raise ValueError(
            f"input dimension {x.data.shape[0]} does not match input band {g.bands[0].size}"
        )
    off = g.band_offsets()
    fwd = g.direction == 0
    if g.exec_weight is not None and g.exec_bias is not None:
        scalar = g.exec_weight
        bias = g.exec_bias
    else:
        weights = g.edge_block("weight")
        scalar = np.zeros(g.num_edges)
        for kind in np.unique(g.edge_kind):
            sel = g.edge_kind == kind
            scalar[sel] = weights[sel, g.scalar_slot(int(kind))]
        bias = g.node_block("bias")[:, 0]

    act_fns = [netzoo.activation_fn(b.activation) for b in g.bands]
    all_vals = x
    for band in range(1, len(g.bands)):
        lo, hi = off[band], off[band + 1]
        sel = fwd & (g.dst >= lo) & (g.dst < hi)
        esrc, edst = g.src[sel], g.dst[sel] - lo
        ew = Tensor(scalar[sel].reshape(-1, 1))
        contrib = ad.mul(ew, ad.gather_rows(all_vals, esrc))
        pre = ad.segment_sum(contrib, edst, hi - lo)
        pre = ad.add(pre, Tensor(bias[lo:hi].reshape(-1, 1)))
        vals = act_fns[band](pre)
        all_vals = ad.concat([all_vals, vals], axis=0)
    return all_vals


def forward_on_graph(g: NeuralGraph, x) -> np.ndarray:
    """Execute the encoded network on an input; equals evaluate() on the source
    checkpoint for MLP-family graphs. x: (d0,) or (B, d0)."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None]
    vals = node_activations(g, Tensor(arr.T)).data
    out_band = len(g.bands) - 1
    off = g.band_offsets()
    out = vals[off[out_band] : off[out_band + 1]].T
    return out[0] if single else out


# -- reconstruction ---------------------------------------------------------------------------


def graph_to_network(g: NeuralGraph) -> Checkpoint:
    """Exact inverse of construction for the supported families."""
    off = g.band_offsets()
    weights = g.edge_block("weight")
    bias = g.node_block("bias")[:, 0]
    fwd = g.direction == 0
    spec: list[LayerSpec] = []
    params: list[dict[str, np.ndarray]] = []
    band = 1

    def incoming(b, kinds):
        lo, hi = off[b], off[b + 1]
        sel = fwd & (g.dst >= lo) & (g.dst < hi) & np.isin(g.edge_kind, kinds)
        return sel, lo

    while band < len(g.bands):
        info = g.bands[band]
        if info.kind in ("linear", "conv2d"):
            prev = g.bands[band - 1]
            kw, kh = info.kernel
            sel, lo = incoming(band, [EK_LINEAR, EK_CONV])
            n_out = info.size // info.copies
            if prev.copies != 1 and prev.kind != "virtual" and info.kind == "linear":
                # linear fed by an expanded (repeat-nodes) band: restore the flatten
                s = prev.copies
                c = prev.size // s
                spec.append(LayerSpec("flatten", c, c * s, spatial=prev.spatial))
                params.append({})
            if info.kind == "linear":
                in_width = prev.size
                w = np.zeros((n_out, in_width))
                srcs = g.src[sel]
                dsts = g.dst[sel] - lo
                prev_lo = off[band - 1]
                w[dsts, srcs - prev_lo] = weights[sel][:, g.scalar_slot(EK_LINEAR)]
                spec.append(
                    LayerSpec(
                        "linear",
                        in_width,
                        n_out,
                        activation=info.activation,
                        residual_source=info.residual_source,
                    )
                )
                params.append({"weight": w, "bias": bias[lo : lo + n_out].copy()})
            else:
                slots = _padded_slots(g.max_kernel, kw, kh)
                n_in = prev.size // prev.copies
                w = np.zeros((n_out, n_in, kw, kh))
                srcs = g.src[sel]
                dsts = g.dst[sel] - lo
                prev_lo = off[band - 1]
                if info.copies != 1:
                    keep = (dsts % info.copies) == 0  # all copies carry the same edges
                    srcs, dsts = srcs[keep], dsts[keep] // info.copies
                    featsel = weights[sel][keep][:, slots]
                else:
                    featsel = weights[sel][:, slots]
                w[dsts, srcs - prev_lo] = featsel.reshape(-1, kw, kh)
                spec.append(
                    LayerSpec(
                        "conv2d",
                        n_in,
                        n_out,
                        kernel=(kw, kh),
                        activation=info.activation,
                        residual_source=info.residual_source,
                    )
                )
                params.append(
                    {"weight": w, "bias": bias[lo : lo + info.size : info.copies].copy()}
                )
            band += 1
        elif info.kind == "norm":
            sel, lo = incoming(band, [EK_NORM])
            d = info.size
            scale = np.zeros(d)
            scale[g.dst[sel] - lo] = weights[sel][:, g.scalar_slot(EK_NORM)]
            spec.append(LayerSpec("norm", d, d, activation=info.activation))
            params.append({"scale": scale, "shift": bias[lo : lo + d].copy()})
            band += 1
        elif info.kind == "attention-head":
            out_info = g.bands[band + 1]
            heads, dh = info.heads, info.head_dim
            d_in = g.bands[band - 1].size
            sel, lo = incoming(band, [EK_QKV])
            srcs = g.src[sel] - off[band - 1]
            dsts = g.dst[sel] - lo
            wq = np.zeros((d_in, heads * dh))
            wk = np.zeros_like(wq)
            wv = np.zeros_like(wq)
            wq[srcs, dsts] = weights[sel][:, 0]
            wk[srcs, dsts] = weights[sel][:, 1]
            wv[srcs, dsts] = weights[sel][:, 2]
            sel2, lo2 = incoming(band + 1, [EK_ATTN_OUT])
            wo = np.zeros((heads * dh, out_info.size))
            wo[g.src[sel2] - lo, g.dst[sel2] - lo2] = weights[sel2][:, 0]
            spec.append(
                LayerSpec(
                    "attention-block",
                    d_in,
                    out_info.size,
                    activation=out_info.activation,
                    heads=heads,
                    head_dim=dh,
                )
            )
            params.append({"wq": wq, "wk": wk, "wv": wv, "wo": wo})
            band += 2
        elif info.kind == "virtual":
            s = info.copies
            c = g.bands[band - 1].size
            spec.append(LayerSpec("flatten", c, c * s, spatial=info.spatial))
            params.append({})
            band += 1
        else:
            raise ValueError(f"band {band}: cannot reconstruct kind {info.kind!r}")
    net = Checkpoint(
        spec=spec, params=params, metadata=dict(g.metadata.get("checkpoint_metadata", {}))
    )
    net.validate()
    return net


# -- serialization -----------------------------------------------------------------------------


def _b64(a: np.ndarray, dtype: str) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype=dtype).tobytes()).decode("ascii")


def _unb64(s: str, dtype: str, shape) -> np.ndarray:
    raw = base64.b64decode(s.encode("ascii"))
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def save_graph(g: NeuralGraph, path: str):
    doc = {
        "version": 1,
        "n": g.n,
        "num_edges": g.num_edges,
        "d_v": g.d_v,
        "d_e": g.d_e_total,
        "bands": [
            {
                "kind": b.kind,
                "size": b.size,
                "activation": b.activation,
                "kernel": list(b.kernel) if b.kernel else None,
                "residual_source": b.residual_source,
                "heads": b.heads,
                "head_dim": b.head_dim,
                "copies": b.copies,
                "spatial": list(b.spatial) if b.spatial else None,
            }
            for b in g.bands
        ],
        "io_roles": _b64(g.io_role, "<i8"),
        "activation_ids": _b64(g.activation, "<i8"),
        "node_layout": [list(x) for x in g.node_layout],
        "edge_layout": [list(x) for x in g.edge_layout],
        "max_kernel": list(g.max_kernel),
        "linear_mode": g.linear_mode,
        "flatten_mode": g.flatten_mode,
        "metadata": g.metadata,
        "blobs": {
            "node_band": _b64(g.node_band, "<i8"),
            "index_in_band": _b64(g.index_in_band, "<i8"),
            "spatial_pos": _b64(g.spatial_pos, "<i8"),
            "node_features": _b64(g.node_features, "<f8"),
            "src": _b64(g.src, "<i8"),
            "dst": _b64(g.dst, "<i8"),
            "edge_features": _b64(g.edge_features, "<f8"),
            "edge_kind": _b64(g.edge_kind, "<i8"),
            "direction": _b64(g.direction, "<i8"),
            "kernel_w": _b64(g.kernel_w, "<i8"),
            "kernel_h": _b64(g.kernel_h, "<i8"),
            "exec_weight": None if g.exec_weight is None else _b64(g.exec_weight, "<f8"),
            "exec_bias": None if g.exec_bias is None else _b64(g.exec_bias, "<f8"),
        },
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh)


def load_graph(path: str) -> NeuralGraph:
    with open(path, "r", encoding="ascii") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValueError(f"invalid graph file at byte {e.pos}: {e.msg}") from None
    if doc.get("version") != 1:
        raise ValueError("expected a version-1 graph file")
    n, E = int(doc["n"]), int(doc["num_edges"])
    blobs = doc["blobs"]
    bands = [
        BandInfo(
            kind=b["kind"],
            size=int(b["size"]),
            activation=b["activation"],
            kernel=tuple(b["kernel"]) if b.get("kernel") else None,
            residual_source=b.get("residual_source"),
            heads=b.get("heads"),
            head_dim=b.get("head_dim"),
            copies=int(b.get("copies", 1)),
            spatial=tuple(b["spatial"]) if b.get("spatial") else None,
        )
        for b in doc["bands"]
    ]
    return NeuralGraph(
        node_band=_unb64(blobs["node_band"], "<i8", (n,)),
        index_in_band=_unb64(blobs["index_in_band"], "<i8", (n,)),
        spatial_pos=_unb64(blobs["spatial_pos"], "<i8", (n,)),
        io_role=_unb64(doc["io_roles"], "<i8", (n,)),
        activation=_unb64(doc["activation_ids"], "<i8", (n,)),
        node_features=_unb64(blobs["node_features"], "<f8", (n, int(doc["d_v"]))),
        node_layout=[(str(a), int(b)) for a, b in doc["node_layout"]],
        src=_unb64(blobs["src"], "<i8", (E,)),
        dst=_unb64(blobs["dst"], "<i8", (E,)),
        edge_features=_unb64(blobs["edge_features"], "<f8", (E, int(doc["d_e"]))),
        edge_layout=[(str(a), int(b)) for a, b in doc["edge_layout"]],
        edge_kind=_unb64(blobs["edge_kind"], "<i8", (E,)),
        direction=_unb64(blobs["direction"], "<i8", (E,)),
        kernel_w=_unb64(blobs["kernel_w"], "<i8", (E,)),
        kernel_h=_unb64(blobs["kernel_h"], "<i8", (E,)),
        bands=bands,
        max_kernel=tuple(doc["max_kernel"]),
        linear_mode=doc["linear_mode"],
        flatten_mode=doc["flatten_mode"],
        metadata=doc.get("metadata", {}),
        exec_weight=(
            None if blobs.get("exec_weight") is None else _unb64(blobs["exec_weight"], "<f8", (E,))
        ),
        exec_bias=(
            None if blobs.get("exec_bias") is None else _unb64(blobs["exec_bias"], "<f8", (n,))
        ),
    )
