"""Desk-scale datasets, targets, and metrics for the four prediction tasks:
coordinate-network classification, function-negation weight editing,
generalization prediction on a mini heterogeneous CNN zoo, and learning
to optimize (whose machinery lives in the l2o module and is re-exported here).
"""

from __future__ import annotations

import base64
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import graphbuild as gbuild
from . import netzoo
from .autodiff import Rng
from .graphbuild import (
    ActivationEmbeddingTable,
    NeuralGraph,
    PositionalEmbeddings,
    ProbeSet,
)
from .images import FAMILIES, INR_FAMILIES, family_image
from .l2o import (  # noqa: F401  (task-surface re-exports)
    L2O_CHANNELS,
    LOG_CLAMP,
    MOMENTUM_SCALES,
    L2OState,
    extract_l2o_features,
    l2o_train,
    log_sign,
    run_optimizer,
    tune_sgd_lr,
)
from .netzoo import Checkpoint

TARGET_KINDS = ("class", "scalar", "delta")


@dataclass
class TaskDataset:
    """Graphs with targets and disjoint splits; lineage never spans splits."""

    records: list  # (NeuralGraph, target)
    splits: dict[str, list[int]]
    target_kind: str
    seed: int
    metadata: dict = field(default_factory=dict)
    lineage: list[str] | None = None

    def __post_init__(self):
        if self.target_kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.target_kind!r}")
        seen: set[int] = set()
        for name, idx in self.splits.items():
            dup = seen.intersection(idx)
            if dup:
                raise ValueError(f"split {name!r} overlaps another split: {sorted(dup)[:4]}")
            seen.update(idx)
        if self.lineage is not None:
            train_runs = {self.lineage[i] for i in self.splits.get("train", [])}
            test_runs = {self.lineage[i] for i in self.splits.get("test", [])}
            shared = train_runs & test_runs
            if shared:
                raise ValueError(f"lineage spans train and test: {sorted(shared)[:4]}")

    def graphs(self, split: str) -> list[NeuralGraph]:
        return [self.records[i][0] for i in self.splits[split]]

    def targets(self, split: str):
        tgts = [self.records[i][1] for i in self.splits[split]]
        if self.target_kind == "delta":
            return [t[0] for t in tgts], [t[1] for t in tgts]
        return tgts


def _attach_standard(graphs, rng, d_act=8, d_pos=16):
    """Activation embeddings and positional embeddings, shared across a dataset."""
    table = ActivationEmbeddingTable.create(rng.derive(0), d_act)
    pe = PositionalEmbeddings.for_graph(graphs[0], rng.derive(1), d_pos)
    out = []
    for g in graphs:
        g = gbuild.attach_activation_embeddings(g, table)
        g = gbuild.attach_positional_embeddings(g, pe)
        out.append(g)
    return out, table, pe


def _split_indices(n: int, rng: Rng, counts: tuple[int, int, int] | None):
    order = rng.permutation(n).tolist()
    if counts is None:
        n_val = max(2, round(0.05 * n))
        n_test = max(2, round(0.25 * n))
        counts = (n - n_val - n_test, n_val, n_test)
    n_train, n_val, n_test = counts
    if n_train + n_val + n_test > n:
        raise ValueError(f"split counts {counts} exceed {n} records")
    return {
        "train": order[:n_train],
        "val": order[n_train : n_train + n_val],
        "test": order[n_train + n_val : n_train + n_val + n_test],
    }


# -- coordinate-network classification --------------------------------------------------


def build_inr_classification(
    rng: Rng,
    classes: int = 3,
    per_class: int = 70,
    image_size: int = 16,
    probes: int = 36,
    split_counts: tuple[int, int, int] | None = None,
    fit_steps: int = 500,
    families: tuple[str, ...] = INR_FAMILIES,
) -> TaskDataset:
    """One coordinate network per synthetic image, labeled by image family.

    Graphs are layer-normalized with training-split statistics; probe points
    are stored for the models to attach (and train) themselves. The default
    families include both bar orientations, so class identity depends on which
    input coordinate is which.
    """
    if classes < 1 or classes > len(families):
        raise ValueError(f"classes must be in 1..{len(families)}")
    count = classes * per_class
    if count == 0:
        return TaskDataset(
            records=[],
            splits={"train": [], "val": [], "test": []},
            target_kind="class",
            seed=rng.seed,
            metadata={"classes": classes, "probe_points": None, "checkpoints": []},
        )
    nets, labels = [], []
    for i in range(count):
        fam = i % classes
        img = family_image(families[fam], rng.derive(2 * i), image_size)
        nets.append(netzoo.fit_inr(img, rng.derive(2 * i + 1), steps=fit_steps))
        labels.append(fam)
    graphs = [gbuild.mlp_to_graph(net) for net in nets]
    splits = _split_indices(count, rng.derive(10_001), split_counts)
    train_graphs = [graphs[i] for i in splits["train"]]
    _, stats = gbuild.normalize_layerwise(train_graphs)
    graphs = [gbuild.apply_normalization(g, stats) for g in graphs]
    graphs, table, pe = _attach_standard(graphs, rng.derive(10_002))
    probe_set = ProbeSet.create(rng.derive(10_003), probes, 2, init="grid")
    return TaskDataset(
        records=[(g, y) for g, y in zip(graphs, labels)],
        splits=splits,
        target_kind="class",
        seed=rng.seed,
        metadata={
            "classes": classes,
            "probe_points": probe_set.points,
            "checkpoints": nets,
        },
    )


# -- weight editing: predict the delta that negates the function -------------------------


def negation_delta_targets(net: Checkpoint, g: NeuralGraph) -> tuple[np.ndarray, np.ndarray]:
    """Per-edge and per-node parameter deltas turning f into -f: the final
    layer's weights and biases flip sign (delta -2w, -2b), everything else 0."""
    off = g.band_offsets()
    fwd = np.flatnonzero(g.direction == 0)
    last = len(g.bands) - 1
    lo, hi = off[last], off[last + 1]
    edge_t = np.zeros((len(fwd), 1))
    into_last = (g.dst[fwd] >= lo) & (g.dst[fwd] < hi)
    w = g.edge_block("weight")[fwd][:, g.scalar_slot(gbuild.EK_LINEAR)]
    edge_t[into_last, 0] = -2.0 * w[into_last]
    node_t = np.zeros((g.n, 1))
    node_t[lo:hi, 0] = -2.0 * g.node_block("bias")[lo:hi, 0]
    return edge_t, node_t


def apply_delta_to_checkpoint(
    net: Checkpoint, g: NeuralGraph, edge_delta: np.ndarray, node_delta: np.ndarray
) -> Checkpoint:
    """Add per-edge weight deltas and per-node bias deltas back onto a
    linear-layer checkpoint, using the graph's edge indexing."""
    out = net.copy()
    off = g.band_offsets()
    fwd = np.flatnonzero(g.direction == 0)
    src, dst = g.src[fwd], g.dst[fwd]
    for band in range(1, len(g.bands)):
        lo, hi = off[band], off[band + 1]
        sel = (dst >= lo) & (dst < hi) & (g.edge_kind[fwd] == gbuild.EK_LINEAR)
        layer = band - 1
        w = out.params[layer]["weight"]
        w[dst[sel] - lo, src[sel] - off[band - 1]] += edge_delta[sel, 0]
        out.params[layer]["bias"] += node_delta[lo:hi, 0]
    return out


def build_editing_task(
    rng: Rng,
    count: int = 150,
    image_size: int = 16,
    split_counts: tuple[int, int, int] | None = None,
    fit_steps: int = 500,
) -> TaskDataset:
    """Coordinate networks with sign-negation deltas as per-parameter targets."""
    nets, raw_graphs = [], []
    for i in range(count):
        fam = FAMILIES[i % len(FAMILIES)]
        img = family_image(fam, rng.derive(2 * i), image_size)
        net = netzoo.fit_inr(img, rng.derive(2 * i + 1), steps=fit_steps)
        nets.append(net)
        raw_graphs.append(gbuild.mlp_to_graph(net))
    targets = [negation_delta_targets(net, g) for net, g in zip(nets, raw_graphs)]
    splits = _split_indices(count, rng.derive(10_001), split_counts)
    train_graphs = [raw_graphs[i] for i in splits["train"]]
    _, stats = gbuild.normalize_layerwise(train_graphs)
    graphs = [gbuild.apply_normalization(g, stats) for g in raw_graphs]
    graphs, _, _ = _attach_standard(graphs, rng.derive(10_002))
    graphs = [gbuild.attach_direction_features(g) for g in graphs]
    return TaskDataset(
        records=list(zip(graphs, targets)),
        splits=splits,
        target_kind="delta",
        seed=rng.seed,
        metadata={"checkpoints": nets, "raw_graphs": raw_graphs},
    )


# -- generalization prediction on the mini zoo --------------------------------------------


def build_generalization_task(
    rng: Rng,
    count: int = 210,
    max_kernel: tuple[int, int] = (7, 7),
    snapshots_per_run: int = 3,
) -> TaskDataset:
    """Heterogeneous trained CNN checkpoints with held-out accuracy targets;
    splits are disjoint at the training-run level."""
    zoo = netzoo.generate_wild_park_mini(rng.derive(1), count, snapshots_per_run=snapshots_per_run)
    graphs = [
        gbuild.network_to_graph(net, max_kernel=max_kernel, linear_mode="as-1x1-conv")
        for net in zoo
    ]
    targets = [float(net.metadata["test_accuracy"]) for net in zoo]
    lineage = [net.metadata["run_id"] for net in zoo]
    runs = sorted(set(lineage), key=int)
    order = rng.derive(2).permutation(len(runs))
    runs = [runs[i] for i in order]
    n_test_runs = max(1, round(0.22 * len(runs)))
    n_val_runs = max(1, round(0.1 * len(runs)))
    test_runs = set(runs[:n_test_runs])
    val_runs = set(runs[n_test_runs : n_test_runs + n_val_runs])
    splits = {"train": [], "val": [], "test": []}
    for i, run in enumerate(lineage):
        split = "test" if run in test_runs else "val" if run in val_runs else "train"
        splits[split].append(i)
    train_graphs = [graphs[i] for i in splits["train"]]
    _, stats = gbuild.normalize_layerwise(train_graphs)
    graphs = [gbuild.apply_normalization(g, stats) for g in graphs]
    graphs, _, _ = _attach_standard(graphs, rng.derive(3))
    return TaskDataset(
        records=list(zip(graphs, targets)),
        splits=splits,
        target_kind="scalar",
        seed=rng.seed,
        metadata={"checkpoints": zoo, "normalization": stats},
        lineage=lineage,
    )


# -- rank correlation ----------------------------------------------------------------------


def kendall_tau(pred, true) -> float:
    """Tie-corrected (tau-b) Kendall rank correlation over all pairs."""
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(true, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"kendall_tau: mismatched inputs {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ValueError("kendall_tau: need at least two observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ValueError("kendall_tau: undefined when either input is constant")
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(len(x), k=1)
    concordant_minus_discordant = float((dx[iu] * dy[iu]).sum())
    untied_x = float((dx[iu] != 0).sum())
    untied_y = float((dy[iu] != 0).sum())
    return concordant_minus_discordant / np.sqrt(untied_x * untied_y)


# -- dataset archive -------------------------------------------------------------------------


def save_dataset(ds: TaskDataset, out_dir: str):
    """Directory of graph files plus a manifest with targets, splits, and seed."""
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for i, (g, _) in enumerate(ds.records):
        name = f"graph_{i:05d}.ng"
        gbuild.save_graph(g, os.path.join(out_dir, name))
        names.append(name)
    if ds.target_kind == "delta":
        targets = [
            {
                "edge": base64.b64encode(np.ascontiguousarray(t[0], dtype="<f8").tobytes()).decode(),
                "edge_len": len(t[0]),
                "node": base64.b64encode(np.ascontiguousarray(t[1], dtype="<f8").tobytes()).decode(),
                "node_len": len(t[1]),
            }
            for _, t in ds.records
        ]
    else:
        targets = [t for _, t in ds.records]
    manifest = {
        "version": 1,
        "records": names,
        "targets": targets,
        "target_kind": ds.target_kind,
        "splits": ds.splits,
        "seed": ds.seed,
        "lineage": ds.lineage,
        "probe_points": (
            None
            if ds.metadata.get("probe_points") is None
            else np.asarray(ds.metadata["probe_points"]).tolist()
        ),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh)


def load_dataset(path: str) -> TaskDataset:
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    graphs = [gbuild.load_graph(os.path.join(path, name)) for name in manifest["records"]]
    kind = manifest["target_kind"]
    if kind == "delta":
        targets = [
            (
                np.frombuffer(base64.b64decode(t["edge"]), dtype="<f8").reshape(t["edge_len"], 1).copy(),
                np.frombuffer(base64.b64decode(t["node"]), dtype="<f8").reshape(t["node_len"], 1).copy(),
            )
            for t in manifest["targets"]
        ]
    elif kind == "class":
        targets = [int(t) for t in manifest["targets"]]
    else:
        targets = [float(t) for t in manifest["targets"]]
    probe_points = manifest.get("probe_points")
    return TaskDataset(
        records=list(zip(graphs, targets)),
        splits={k: list(v) for k, v in manifest["splits"].items()},
        target_kind=kind,
        seed=int(manifest["seed"]),
        metadata={
            "probe_points": None if probe_points is None else np.asarray(probe_points, dtype=np.float64)
        },
        lineage=manifest.get("lineage"),
    )
