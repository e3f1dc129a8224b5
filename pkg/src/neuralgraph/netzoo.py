"""Input networks: represent, evaluate, permute, serialize, and generate them.

A Checkpoint is an architecture description (list of LayerSpec) plus per-layer
parameter arrays. Neuron bands are the permutable units: band 0 is the network
input, and every layer appends one band (attention blocks append two, the head
band and the output band; flatten appends none). NeuronPermutation acts on
those bands.
"""

from __future__ import annotations

import base64
import binascii
import copy
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor

LAYER_KINDS = ("linear", "conv2d", "norm", "attention-block", "flatten")
ACTIVATIONS = ("relu", "gelu", "tanh", "sigmoid", "leaky_relu", "identity", "sine")

_ACT_FNS = {
    "relu": ad.relu,
    "gelu": ad.gelu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "leaky_relu": ad.leaky_relu,
    "identity": lambda t: t,
    "sine": ad.sin,
}


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint file cannot be parsed or validated."""


def activation_fn(name: str):
    try:
        return _ACT_FNS[name]
    except KeyError:
        raise ValueError(f"unknown activation id {name!r}") from None


@dataclass
class LayerSpec:
    """One layer of an input network.

    residual_source points at the band whose output is added to this layer's
    pre-activation (0 is the network input); it must be at least 2 positions
    earlier and each layer takes at most one incoming skip.
    """

    kind: str
    in_dim: int
    out_dim: int
    kernel: tuple[int, int] | None = None
    activation: str = "identity"
    residual_source: int | None = None
    heads: int | None = None
    head_dim: int | None = None
    spatial: tuple[int, int] | None = None  # flatten layers: bound feature-map size

    def validate(self, index: int):
        where = f"spec[{index}]"
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"{where}: unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"{where}: unknown activation id {self.activation!r}")
        if self.kind == "conv2d" and self.kernel is None:
            raise ValueError(f"{where}: conv2d requires a kernel size")
        if self.kind == "linear" and self.kernel is not None:
            raise ValueError(f"{where}: linear layers take no kernel")
        if self.kind == "norm" and self.in_dim != self.out_dim:
            raise ValueError(f"{where}: norm layers preserve width")
        if self.kind == "attention-block":
            if not self.heads or not self.head_dim:
                raise ValueError(f"{where}: attention block needs heads and head_dim")
        if self.kind == "flatten" and self.spatial is None:
            raise ValueError(f"{where}: flatten layers record their spatial size")


@dataclass
class Checkpoint:
    """Architecture plus parameter values of one input network."""

    spec: list[LayerSpec]
    params: list[dict[str, np.ndarray]]
    metadata: dict[str, str] = field(default_factory=dict)

    def validate(self):
        if len(self.spec) != len(self.params):
            raise ValueError("spec and params length mismatch")
        for i, (layer, p) in enumerate(zip(self.spec, self.params)):
            layer.validate(i)
            want = _param_shapes(layer)
            if set(p.keys()) != set(want.keys()):
                raise ValueError(
                    f"params[{i}]: expected keys {sorted(want)}, got {sorted(p.keys())}"
                )
            for name, shape in want.items():
                if p[name].shape != shape:
                    raise ValueError(
                        f"params[{i}].{name}: expected shape {shape}, got {p[name].shape}"
                    )
        for k, v in self.metadata.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise ValueError("metadata must map strings to strings")
        for i, layer in enumerate(self.spec):
            if layer.residual_source is not None:
                if layer.residual_source > i - 1:
                    raise ValueError(
                        f"spec[{i}]: residual source {layer.residual_source} is not "
                        "at least 2 positions earlier"
                    )

    def copy(self) -> "Checkpoint":
        return Checkpoint(
            spec=copy.deepcopy(self.spec),
            params=[{k: v.copy() for k, v in p.items()} for p in self.params],
            metadata=dict(self.metadata),
        )

    @property
    def in_dim(self) -> int:
        return self.spec[0].in_dim

    def num_parameters(self) -> int:
        return sum(int(v.size) for p in self.params for v in p.values())

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([v.reshape(-1) for p in self.params for _, v in sorted(p.items())] or [np.zeros(0)])


def _param_shapes(layer: LayerSpec) -> dict[str, tuple]:
    if layer.kind == "linear":
        return {"weight": (layer.out_dim, layer.in_dim), "bias": (layer.out_dim,)}
    if layer.kind == "conv2d":
        w, h = layer.kernel
        return {"weight": (layer.out_dim, layer.in_dim, w, h), "bias": (layer.out_dim,)}
    if layer.kind == "norm":
        return {"scale": (layer.out_dim,), "shift": (layer.out_dim,)}
    if layer.kind == "attention-block":
        hd = layer.heads * layer.head_dim
        return {
            "wq": (layer.in_dim, hd),
            "wk": (layer.in_dim, hd),
            "wv": (layer.in_dim, hd),
            "wo": (hd, layer.out_dim),
        }
    return {}


# -- band structure ---------------------------------------------------------------


def band_sizes(net: Checkpoint) -> list[int]:
    """Neuron counts per band: input, then one band per layer (two for attention)."""
    sizes = [net.spec[0].in_dim]
    for layer in net.spec:
        if layer.kind == "attention-block":
            sizes.append(layer.heads * layer.head_dim)
            sizes.append(layer.out_dim)
        elif layer.kind == "flatten":
            continue
        else:
            sizes.append(layer.out_dim)
    return sizes


def layer_bands(net: Checkpoint) -> list[tuple[int, int]]:
    """Per layer, the (input band, output band) indices; attention reports
    (input band, head band) with its output band one past the head band;
    flatten reports its surrounding band twice."""
    out = []
    band = 0
    for layer in net.spec:
        if layer.kind == "attention-block":
            out.append((band, band + 1))
            band += 2
        elif layer.kind == "flatten":
            out.append((band, band))
        else:
            out.append((band, band + 1))
            band += 1
    return out


@dataclass
class NeuronPermutation:
    """One permutation per band; perms[b][i] is the old index stored at new slot i."""

    perms: list[np.ndarray]

    def __post_init__(self):
        self.perms = [np.asarray(p, dtype=np.int64) for p in self.perms]
        for b, p in enumerate(self.perms):
            if sorted(p.tolist()) != list(range(len(p))):
                raise ValueError(f"band {b}: not a permutation")

    @classmethod
    def identity(cls, sizes: list[int]) -> "NeuronPermutation":
        return cls([np.arange(s) for s in sizes])

    def inverse(self) -> "NeuronPermutation":
        return NeuronPermutation([np.argsort(p) for p in self.perms])

    def then(self, other: "NeuronPermutation") -> "NeuronPermutation":
        """The composite action: apply self first, then other."""
        if len(self.perms) != len(other.perms):
            raise ValueError("band count mismatch")
        return NeuronPermutation([p[q] for p, q in zip(self.perms, other.perms)])

    def is_identity(self) -> bool:
        return all(np.array_equal(p, np.arange(len(p))) for p in self.perms)


def _skip_constraints(net: Checkpoint) -> list[tuple[int, int, int]]:
    """Residual ties as (source band, destination band, shared prefix length)."""
    bands = layer_bands(net)
    ties = []
    sizes = band_sizes(net)
    for i, layer in enumerate(net.spec):
        if layer.residual_source is None:
            continue
        src_band = layer.residual_source
        dst_band = bands[i][1]
        k = min(sizes[src_band], sizes[dst_band])
        ties.append((src_band, dst_band, k))
    return ties


def random_symmetry_permutation(net: Checkpoint, rng: Rng) -> NeuronPermutation:
    """A random element of the network's neuron-symmetry group.

    Input and output bands stay fixed; norm bands copy the previous band;
    attention head bands permute within heads; residual-linked bands share
    their min-channel prefix (and keep that prefix closed, so the structural
    skip still pairs the same neurons).
    """
    sizes = band_sizes(net)
    bands = layer_bands(net)
    n_bands = len(sizes)
    # blocks[b] holds prefix lengths that band b must map onto themselves
    blocks: dict[int, set[int]] = {b: set() for b in range(n_bands)}
    for src, dst, k in _skip_constraints(net):
        blocks[src].add(k)
        blocks[dst].add(k)

    perms: list[np.ndarray | None] = [None] * n_bands
    perms[0] = np.arange(sizes[0])
    perms[-1] = np.arange(sizes[-1])

    def block_perm(size: int, cuts: set[int]) -> np.ndarray:
        edges = sorted({0, size} | {c for c in cuts if c < size})
        out = np.arange(size)
        for a, b in zip(edges[:-1], edges[1:]):
            out[a:b] = a + rng.permutation(b - a)
        return out

    for i, layer in enumerate(net.spec):
        out_band = bands[i][1]
        if layer.kind == "flatten":
            continue
        if layer.kind == "attention-block":
            head_band = out_band
            if perms[head_band] is None:
                hp = np.arange(sizes[head_band])
                dh = layer.head_dim
                for h in range(layer.heads):
                    hp[h * dh : (h + 1) * dh] = h * dh + rng.permutation(dh)
                perms[head_band] = hp
            if perms[head_band + 1] is None:
                perms[head_band + 1] = block_perm(sizes[head_band + 1], blocks[head_band + 1])
            continue
        if perms[out_band] is not None:
            continue
        if layer.kind == "norm":
            perms[out_band] = perms[bands[i][0]].copy()
            continue
        perms[out_band] = block_perm(sizes[out_band], blocks[out_band])

    # ties where one side is pinned (input/output band) force the other side
    fixed = {0, n_bands - 1}
    for src, dst, k in _skip_constraints(net):
        if dst in fixed and src not in fixed:
            perms[src][:k] = np.arange(k)
        elif src in fixed and dst not in fixed:
            perms[dst][:k] = np.arange(k)
    for src, dst, k in _skip_constraints(net):
        if dst not in fixed:
            perms[dst][:k] = perms[src][:k]
    return NeuronPermutation([p for p in perms])


def permute(net: Checkpoint, p: NeuronPermutation) -> Checkpoint:
    """Relabel neurons band by band: rows/columns of weights and bias entries move
    together, filter and channel axes move for convolutions.

    Norm bands must copy their input band and residual-linked bands must agree
    on the skip prefix; other pairings are not representable in this format.
    """
    sizes = band_sizes(net)
    if len(p.perms) != len(sizes) or any(len(q) != s for q, s in zip(p.perms, sizes)):
        raise ValueError(
            f"permutation bands {[len(q) for q in p.perms]} do not match network bands {sizes}"
        )
    bands = layer_bands(net)
    for i, layer in enumerate(net.spec):
        in_b, out_b = bands[i]
        if layer.kind == "norm" and not np.array_equal(p.perms[in_b], p.perms[out_b]):
            raise ValueError(
                f"spec[{i}]: norm band must share its input band's permutation"
            )
    for src, dst, k in _skip_constraints(net):
        ps, pd = p.perms[src], p.perms[dst]
        if not np.array_equal(ps[:k], pd[:k]):
            raise ValueError(
                f"residual tie between bands {src} and {dst} requires a shared prefix of {k}"
            )

    out = net.copy()
    for i, layer in enumerate(net.spec):
        in_b, out_b = bands[i]
        pin, pout = p.perms[in_b], p.perms[out_b]
        prm = out.params[i]
        if layer.kind == "linear":
            prev = net.spec[i - 1] if i > 0 else None
            if prev is not None and prev.kind == "flatten":
                # columns come in channel-major blocks of the flattened spatial size
                s = prev.spatial[0] * prev.spatial[1]
                w = prm["weight"].reshape(layer.out_dim, len(pin), s)
                prm["weight"] = np.ascontiguousarray(w[pout][:, pin].reshape(layer.out_dim, -1))
            else:
                prm["weight"] = np.ascontiguousarray(prm["weight"][np.ix_(pout, pin)])
            prm["bias"] = prm["bias"][pout].copy()
        elif layer.kind == "conv2d":
            prm["weight"] = np.ascontiguousarray(prm["weight"][pout][:, pin])
            prm["bias"] = prm["bias"][pout].copy()
        elif layer.kind == "norm":
            prm["scale"] = prm["scale"][pout].copy()
            prm["shift"] = prm["shift"][pout].copy()
        elif layer.kind == "attention-block":
            phead = p.perms[out_b]
            pout2 = p.perms[out_b + 1]
            for key in ("wq", "wk", "wv"):
                prm[key] = np.ascontiguousarray(prm[key][np.ix_(pin, phead)])
            prm["wo"] = np.ascontiguousarray(prm["wo"][np.ix_(phead, pout2)])
    return out


# -- forward evaluation --------------------------------------------------------------


def _linearize(x, layer_index):
    if x.data.ndim == 4:
        return ad.reshape(ad.adaptive_avg_pool2d(x, (1, 1)), (x.data.shape[0], x.data.shape[1]))
    if x.data.ndim != 2:
        raise ValueError(f"spec[{layer_index}]: expected a feature vector input")
    return x


def _fit_skip(skip: Tensor, like: Tensor) -> Tensor:
    """Shape a residual tap to the destination: match spatial size by average
    pooling and pad or truncate channels to min-channel width."""
    if like.data.ndim == 4 and skip.data.ndim == 4:
        if skip.data.shape[2:] != like.data.shape[2:]:
            skip = ad.adaptive_avg_pool2d(skip, like.data.shape[2:])
    elif like.data.ndim == 2 and skip.data.ndim == 4:
        skip = _linearize(skip, -1)
    if skip.data.shape[1] == like.data.shape[1]:
        return skip
    k = min(skip.data.shape[1], like.data.shape[1])
    shape = list(like.data.shape)
    return ad.concat(
        [skip[:, :k], Tensor(np.zeros([shape[0], shape[1] - k] + shape[2:]))], axis=1
    )


def forward(net: Checkpoint, x: Tensor, params: list[dict[str, Tensor]] | None = None) -> Tensor:
    """Differentiable forward pass; `params` overrides the stored arrays."""
    if params is None:
        params = [{k: Tensor(v) for k, v in p.items()} for p in net.params]
    h = x
    outputs = {0: h}  # band outputs for residual taps
    band = 0
    for i, layer in enumerate(net.spec):
        if layer.kind == "flatten":
            B, C, H, W = h.data.shape
            if (H, W) != tuple(layer.spatial):
                raise ValueError(
                    f"spec[{i}]: flatten bound to {layer.spatial}, feature map is {(H, W)}"
                )
            h = ad.reshape(h, (B, C * H * W))
            continue
        prm = params[i]
        if layer.kind == "linear":
            prev = net.spec[i - 1] if i > 0 else None
            if h.data.ndim == 4 and (prev is None or prev.kind != "flatten"):
                h = _linearize(h, i)
            if h.data.shape[1] != layer.in_dim:
                raise ValueError(
                    f"spec[{i}]: expected {layer.in_dim} input features, got {h.data.shape[1]}"
                )
            pre = ad.add(ad.matmul(h, ad.transpose(prm["weight"])), prm["bias"])
        elif layer.kind == "conv2d":
            if h.data.ndim != 4:
                raise ValueError(f"spec[{i}]: conv2d needs (B, C, H, W) input")
            if h.data.shape[1] != layer.in_dim:
                raise ValueError(
                    f"spec[{i}]: expected {layer.in_dim} channels, got {h.data.shape[1]}"
                )
            pre = ad.conv2d(h, prm["weight"], prm["bias"])
        elif layer.kind == "norm":
            if h.data.ndim == 4:
                g = ad.reshape(prm["scale"], (1, layer.out_dim, 1, 1))
                b = ad.reshape(prm["shift"], (1, layer.out_dim, 1, 1))
            else:
                g, b = prm["scale"], prm["shift"]
            pre = ad.add(ad.mul(h, g), b)
        elif layer.kind == "attention-block":
            if h.data.ndim != 2:
                raise ValueError(f"spec[{i}]: attention expects (tokens, width) input")
            heads, dh = layer.heads, layer.head_dim
            q = ad.matmul(h, prm["wq"])
            k = ad.matmul(h, prm["wk"])
            v = ad.matmul(h, prm["wv"])
            outs = []
            for hh in range(heads):
                sl = slice(hh * dh, (hh + 1) * dh)
                att = ad.softmax(ad.matmul(q[:, sl], ad.transpose(k[:, sl])), axis=-1)
                outs.append(ad.matmul(att, v[:, sl]))
            pre = ad.matmul(ad.concat(outs, axis=1), prm["wo"])
        else:  # pragma: no cover - validate() rejects unknown kinds
            raise ValueError(f"spec[{i}]: unsupported kind {layer.kind!r}")

        if layer.residual_source is not None:
            pre = ad.add(pre, _fit_skip(outputs[layer.residual_source], pre))
        h = activation_fn(layer.activation)(pre)
        if layer.kind == "conv2d":
            h = ad.avg_pool2d(h, 2)
        band += 2 if layer.kind == "attention-block" else 1
        outputs[band] = h
    return h


def evaluate(net: Checkpoint, x) -> np.ndarray:
    """Reference forward pass on raw arrays; the oracle for everything else."""
    arr = np.asarray(x, dtype=np.float64)
    first = net.spec[0].kind
    squeeze = False
    if first == "conv2d" and arr.ndim == 3:
        arr, squeeze = arr[None], True
    elif first in ("linear", "norm") and arr.ndim == 1:
        arr, squeeze = arr[None], True
    out = forward(net, Tensor(arr)).data
    return out[0] if squeeze else out


# -- serialization ---------------------------------------------------------------------


def _encode_array(a: np.ndarray) -> dict:
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii"),
    }


def _decode_array(obj, path: str) -> np.ndarray:
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise CheckpointFormatError(f"{path}: expected an object with shape and data")
    try:
        raw = base64.b64decode(obj["data"].encode("ascii"), validate=True)
    except (binascii.Error, AttributeError) as e:
        raise CheckpointFormatError(f"{path}: invalid base64 payload ({e})") from None
    shape = tuple(int(s) for s in obj["shape"])
    want = int(np.prod(shape)) * 8 if shape else 8
    if len(raw) != want:
        raise CheckpointFormatError(
            f"{path}: payload holds {len(raw)} bytes, shape {shape} needs {want}"
        )
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def _spec_to_json(layer: LayerSpec) -> dict:
    return {
        "kind": layer.kind,
        "in_dim": layer.in_dim,
        "out_dim": layer.out_dim,
        "kernel": list(layer.kernel) if layer.kernel else None,
        "activation": layer.activation,
        "residual_source": layer.residual_source,
        "heads": layer.heads,
        "head_dim": layer.head_dim,
        "spatial": list(layer.spatial) if layer.spatial else None,
    }


def _spec_from_json(obj: dict, index: int) -> LayerSpec:
    path = f"spec[{index}]"
    if not isinstance(obj, dict):
        raise CheckpointFormatError(f"{path}: expected an object")
    kind = obj.get("kind")
    if kind not in LAYER_KINDS:
        raise CheckpointFormatError(f"{path}: unknown layer kind {kind!r}")
    act = obj.get("activation", "identity")
    if act not in ACTIVATIONS:
        raise CheckpointFormatError(f"{path}: unknown activation id {act!r}")
    try:
        layer = LayerSpec(
            kind=kind,
            in_dim=int(obj["in_dim"]),
            out_dim=int(obj["out_dim"]),
            kernel=tuple(obj["kernel"]) if obj.get("kernel") else None,
            activation=act,
            residual_source=obj.get("residual_source"),
            heads=obj.get("heads"),
            head_dim=obj.get("head_dim"),
            spatial=tuple(obj["spatial"]) if obj.get("spatial") else None,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointFormatError(f"{path}: {e}") from None
    return layer


def save(net: Checkpoint, path: str):
    net.validate()
    doc = {
        "version": 1,
        "spec": [_spec_to_json(layer) for layer in net.spec],
        "params": [
            {name: _encode_array(arr) for name, arr in sorted(p.items())}
            for p in net.params
        ],
        "metadata": dict(net.metadata),
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh)


def load(path: str) -> Checkpoint:
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointFormatError(f"invalid JSON at byte {e.pos}: {e.msg}") from None
    if not isinstance(doc, dict) or doc.get("version") != 1:
        raise CheckpointFormatError("version: expected a version-1 checkpoint file")
    spec_json = doc.get("spec")
    params_json = doc.get("params")
    if not isinstance(spec_json, list) or not isinstance(params_json, list):
        raise CheckpointFormatError("spec/params: expected lists")
    if len(spec_json) != len(params_json):
        raise CheckpointFormatError("spec/params: length mismatch")
    spec = [_spec_from_json(obj, i) for i, obj in enumerate(spec_json)]
    params = []
    for i, (layer, pobj) in enumerate(zip(spec, params_json)):
        if not isinstance(pobj, dict):
            raise CheckpointFormatError(f"params[{i}]: expected an object")
        params.append(
            {name: _decode_array(val, f"params[{i}].{name}") for name, val in pobj.items()}
        )
    meta = doc.get("metadata", {})
    if not isinstance(meta, dict):
        raise CheckpointFormatError("metadata: expected an object")
    net = Checkpoint(spec=spec, params=params, metadata={str(k): str(v) for k, v in meta.items()})
    try:
        net.validate()
    except ValueError as e:
        raise CheckpointFormatError(str(e)) from None
    return net


# -- random generators -----------------------------------------------------------------


def _init_linear(rng: Rng, out_dim: int, in_dim: int) -> dict[str, np.ndarray]:
    bound = np.sqrt(1.0 / in_dim)
    return {
        "weight": rng.uniform(-bound, bound, size=(out_dim, in_dim)),
        "bias": rng.uniform(-bound, bound, size=(out_dim,)),
    }


def _init_conv(rng: Rng, out_ch: int, in_ch: int, kernel) -> dict[str, np.ndarray]:
    w, h = kernel
    bound = np.sqrt(1.0 / (in_ch * w * h))
    return {
        "weight": rng.uniform(-bound, bound, size=(out_ch, in_ch, w, h)),
        "bias": rng.uniform(-bound, bound, size=(out_ch,)),
    }


def random_mlp(rng: Rng, dims=(3, 5, 4, 2), activation: str = "relu") -> Checkpoint:
    spec, params = [], []
    for i in range(len(dims) - 1):
        act = activation if i < len(dims) - 2 else "identity"
        spec.append(LayerSpec("linear", dims[i], dims[i + 1], activation=act))
        params.append(_init_linear(rng, dims[i + 1], dims[i]))
    return Checkpoint(spec, params)


def random_cnn(
    rng: Rng,
    channels=(2, 4, 3),
    kernels=((3, 3), (3, 3)),
    classes: int = 2,
    activation: str = "relu",
) -> Checkpoint:
    spec, params = [], []
    for i in range(len(channels) - 1):
        spec.append(
            LayerSpec("conv2d", channels[i], channels[i + 1], kernel=kernels[i], activation=activation)
        )
        params.append(_init_conv(rng, channels[i + 1], channels[i], kernels[i]))
    spec.append(LayerSpec("linear", channels[-1], classes))
    params.append(_init_linear(rng, classes, channels[-1]))
    return Checkpoint(spec, params)


def random_norm_mlp(rng: Rng, dims=(3, 5, 2)) -> Checkpoint:
    """An MLP with an affine normalization layer after the first hidden layer."""
    net = random_mlp(rng, dims)
    d = dims[1]
    norm = LayerSpec("norm", d, d, activation="identity")
    prm = {"scale": rng.uniform(0.5, 1.5, size=(d,)), "shift": rng.normal(0.3, size=(d,))}
    net.spec.insert(1, norm)
    net.params.insert(1, prm)
    return net


def random_residual_mlp(rng: Rng, dims=(3, 5, 4, 2)) -> Checkpoint:
    """An MLP whose third layer takes a skip from the first hidden band."""
    net = random_mlp(rng, dims)
    if len(net.spec) >= 3:
        net.spec[2].residual_source = 1
    return net


def random_attention_block(rng: Rng, dim: int = 3, heads: int = 2, head_dim: int = 2) -> Checkpoint:
    hd = heads * head_dim
    bound = np.sqrt(1.0 / dim)
    spec = [LayerSpec("attention-block", dim, dim, heads=heads, head_dim=head_dim)]
    params = [
        {
            "wq": rng.uniform(-bound, bound, size=(dim, hd)),
            "wk": rng.uniform(-bound, bound, size=(dim, hd)),
            "wv": rng.uniform(-bound, bound, size=(dim, hd)),
            "wo": rng.uniform(-bound, bound, size=(hd, dim)),
        }
    ]
    return Checkpoint(spec, params)


# -- INR fitting -------------------------------------------------------------------------


def coordinate_grid(h: int, w: int) -> np.ndarray:
    """Pixel-center coordinates on [-1, 1]^2, row-major, as (h*w, 2) of (x, y)."""
    ys = np.linspace(-1.0, 1.0, h)
    xs = np.linspace(-1.0, 1.0, w)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)


def siren_checkpoint(rng: Rng, hidden: int = 16, depth: int = 2, omega: float = 30.0) -> Checkpoint:
    """A sine-activated coordinate MLP, 2 -> hidden^depth -> 1, frequency folded
    into the weights so every hidden activation is a plain sine."""
    dims = [2] + [hidden] * depth + [1]
    spec, params = [], []
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        last = i == len(dims) - 2
        act = "identity" if last else "sine"
        spec.append(LayerSpec("linear", dims[i], dims[i + 1], activation=act))
        if i == 0:
            bound = omega / fan_in
        elif last:
            bound = np.sqrt(6.0 / fan_in) / omega
        else:
            bound = np.sqrt(6.0 / fan_in)
        params.append(
            {
                "weight": rng.uniform(-bound, bound, size=(dims[i + 1], fan_in)),
                "bias": np.zeros(dims[i + 1]) if i else rng.uniform(-np.pi, np.pi, size=(dims[i + 1],)),
            }
        )
    return Checkpoint(spec, params)


def fit_inr(
    image: np.ndarray,
    rng: Rng,
    hidden: int = 16,
    depth: int = 2,
    steps: int = 600,
    lr: float = 5e-3,
) -> Checkpoint:
    """Fit a sine-activated MLP mapping [-1,1]^2 coordinates to pixel intensity."""
    image = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(image)):
        raise ValueError("fit_inr: image has non-finite pixel values")
    if image.ndim != 2:
        raise ValueError("fit_inr: expected a 2-d grayscale image")
    from .trainer import adam_step, init_adam_state  # local import: trainer uses graphs

    net = siren_checkpoint(rng, hidden=hidden, depth=depth)
    coords = Tensor(coordinate_grid(*image.shape))
    target = Tensor(image.reshape(-1, 1))
    params = {
        f"{i}.{name}": Tensor(arr.copy(), requires_grad=True)
        for i, prm in enumerate(net.params)
        for name, arr in prm.items()
    }
    state = init_adam_state(params)
    mse = np.inf
    for _ in range(steps):
        layered = [
            {name: params[f"{i}.{name}"] for name in prm}
            for i, prm in enumerate(net.params)
        ]
        pred = forward(net, coords, layered)
        err = ad.sub(pred, target)
        loss = ad.rmean(ad.mul(err, err))
        mse = float(loss.data)
        if mse < 1e-7:
            break
        for t in params.values():
            t.zero_grad()
        ad.backward(loss)
        adam_step(params, {k: t.grad for k, t in params.items()}, state, lr=lr)
    for i, prm in enumerate(net.params):
        for name in prm:
            prm[name] = params[f"{i}.{name}"].data.copy()
    net.metadata["reconstruction_mse"] = repr(mse)
    return net


def inr_render(net: Checkpoint, h: int, w: int) -> np.ndarray:
    return evaluate(net, coordinate_grid(h, w)).reshape(h, w)


# -- mini Wild Park ------------------------------------------------------------------------


WILD_PARK_LAYERS = (2, 3, 4, 5)
WILD_PARK_CHANNELS = (4, 8, 16, 32)
WILD_PARK_KERNELS = (3, 5, 7)
WILD_PARK_ACTIVATIONS = ("relu", "gelu", "tanh", "sigmoid", "leaky_relu", "identity")


def random_wild_park_architecture(rng: Rng, classes: int = 3, in_channels: int = 1) -> Checkpoint:
    """Sample a heterogeneous CNN: 2-5 conv layers, channels in {4,8,16,32},
    kernels in {3,5,7}, six activations, optional skips with at most one
    incoming connection per layer and at least one layer in between."""
    n_layers = int(rng.choice(WILD_PARK_LAYERS))
    spec, params = [], []
    ch = [in_channels] + [int(rng.choice(WILD_PARK_CHANNELS)) for _ in range(n_layers)]
    for i in range(n_layers):
        k = int(rng.choice(WILD_PARK_KERNELS))
        act = str(rng.choice(WILD_PARK_ACTIVATIONS))
        residual = None
        if i >= 1 and rng.uniform() < 0.4:
            # destination band is i+1; any band up to i-1 keeps one layer in between
            residual = int(rng.integers(0, i))
        spec.append(
            LayerSpec(
                "conv2d", ch[i], ch[i + 1], kernel=(k, k), activation=act, residual_source=residual
            )
        )
        params.append(_init_conv(rng, ch[i + 1], ch[i], (k, k)))
    spec.append(LayerSpec("linear", ch[-1], classes))
    params.append(_init_linear(rng, classes, ch[-1]))
    return Checkpoint(spec, params)


def _toy_pools(rng: Rng):
    from .images import labeled_image_batch

    train_x, train_y = labeled_image_batch(rng.derive(1), 192)
    test_x, test_y = labeled_image_batch(rng.derive(2), 96)
    return train_x, train_y, test_x, test_y


def _net_accuracy(net: Checkpoint, x: np.ndarray, y: np.ndarray) -> float:
    logits = evaluate(net, x)
    return float((logits.argmax(axis=1) == y).mean())


def train_on_toy_task(
    net: Checkpoint,
    rng: Rng,
    steps: int,
    lr: float = 1e-2,
    batch: int = 16,
    pools=None,
) -> tuple[Checkpoint, float]:
    """Train a checkpoint in place on the built-in 3-class shape task; returns
    the trained checkpoint and its held-out accuracy."""
    from .trainer import adam_step, init_adam_state

    train_x, train_y, test_x, test_y = pools if pools is not None else _toy_pools(rng.derive(77))
    params = {
        f"{i}.{name}": Tensor(arr.copy(), requires_grad=True)
        for i, prm in enumerate(net.params)
        for name, arr in prm.items()
    }
    state = init_adam_state(params)
    order_rng = rng.derive(3)
    for step in range(steps):
        idx = order_rng.integers(0, len(train_x), size=batch)
        layered = [
            {name: params[f"{i}.{name}"] for name in prm} for i, prm in enumerate(net.params)
        ]
        logits = forward(net, Tensor(train_x[idx]), layered)
        from .trainer import cross_entropy

        loss = cross_entropy(logits, train_y[idx])
        for t in params.values():
            t.zero_grad()
        ad.backward(loss)
        adam_step(params, {k: t.grad for k, t in params.items()}, state, lr=lr)
    trained = net.copy()
    for i, prm in enumerate(trained.params):
        for name in prm:
            prm[name] = params[f"{i}.{name}"].data.copy()
    acc = _net_accuracy(trained, test_x, test_y)
    return trained, acc


def generate_wild_park_mini(
    rng: Rng, count: int, snapshots_per_run: int = 3, classes: int = 3
) -> list[Checkpoint]:
    """Random small CNNs trained on the toy image task; one checkpoint per
    snapshot, held-out accuracy recorded in metadata, lineage in run_id."""
    if count <= 0:
        return []
    out: list[Checkpoint] = []
    pools = _toy_pools(rng.derive(99))
    run = 0
    while len(out) < count:
        run_rng = rng.derive(1000 + run)
        net = random_wild_park_architecture(run_rng.derive(0), classes=classes)
        total_steps = int(run_rng.derive(1).integers(20, 140))
        lr = float(run_rng.derive(2).choice([3e-3, 1e-2, 3e-2]))
        marks = sorted(
            {max(1, round(total_steps * (s + 1) / snapshots_per_run)) for s in range(snapshots_per_run)}
        )
        done = 0
        current = net
        for snap, mark in enumerate(marks):
            current, acc = train_on_toy_task(
                current, run_rng.derive(10 + snap), steps=mark - done, lr=lr, pools=pools
            )
            done = mark
            ck = current.copy()
            ck.metadata.update(
                {
                    "test_accuracy": repr(acc),
                    "run_id": str(run),
                    "train_steps": str(mark),
                    "lr": repr(lr),
                }
            )
            out.append(ck)
            if len(out) >= count:
                break
        run += 1
    return out
