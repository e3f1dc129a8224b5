"""Command-line interface: one executable, subcommand per workflow.

Exit codes: 0 success, 1 usage error, 2 data or validation error. Reporting
commands write machine-readable CSV/JSON and render the matching figures
next to them.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import graphbuild, l2o, models, netzoo, report, tasks, trainer
from .autodiff import Rng


class CliDataError(Exception):
    """Input data failed validation; maps to exit code 2."""


def _parse_kernel(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise CliDataError(f"malformed kernel size {text!r}, expected WxH") from None


def _load_image(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise CliDataError(f"image not found: {path}")
    if path.endswith(".npy"):
        img = np.load(path)
    elif path.endswith(".csv"):
        img = np.loadtxt(path, delimiter=",")
    else:
        import matplotlib.image as mpimg

        img = mpimg.imread(path)
        if img.ndim == 3:
            img = img[..., :3].mean(axis=2)
    img = np.asarray(img, dtype=np.float64)
    if img.max() > 1.0:
        img = img / 255.0
    return img


# -- model configuration -----------------------------------------------------------------


def default_model_config(task: str, model: str, out_dim: int, probe_points=None):
    """Desk-scale hyperparameters per task and model family."""
    if model == "gnn":
        if task == "inr-cls":
            return models.GNNConfig(
                layers=3, node_width=48, edge_width=24, message_width=48,
                head_hidden=48, out_dim=out_dim, readout="invariant",
                probe_points=probe_points,
            )
        if task == "gen-pred":
            return models.GNNConfig(
                layers=3, node_width=32, edge_width=32, message_width=32,
                head_hidden=32, out_dim=out_dim, readout="invariant",
            )
        if task == "edit":
            return models.GNNConfig(
                layers=3, node_width=48, edge_width=32, message_width=48,
                head_hidden=48, out_dim=1, readout="per-edge+per-node",
                probe_points=probe_points,
            )
    elif model == "transformer":
        if task == "inr-cls":
            return models.NGTConfig(
                layers=3, width=48, edge_width=16, heads=4, head_hidden=48,
                out_dim=out_dim, readout="invariant", probe_points=probe_points,
            )
        if task == "gen-pred":
            return models.NGTConfig(
                layers=2, width=16, edge_width=8, heads=2, head_hidden=32,
                out_dim=out_dim, readout="invariant",
            )
        if task == "edit":
            return models.NGTConfig(
                layers=3, width=48, edge_width=16, heads=4, head_hidden=48,
                out_dim=1, readout="per-edge+per-node", probe_points=probe_points,
            )
    raise CliDataError(f"no model configuration for task {task!r} and model {model!r}")


def config_to_json(cfg) -> dict:
    doc = asdict(cfg)
    doc["kind"] = cfg.kind
    if doc.get("probe_points") is not None:
        doc["probe_points"] = np.asarray(doc["probe_points"]).tolist()
    doc["exclude_node_blocks"] = list(doc.get("exclude_node_blocks", ()))
    return doc


def config_from_json(doc: dict):
    doc = dict(doc)
    kind = doc.pop("kind")
    if doc.get("probe_points") is not None:
        doc["probe_points"] = np.asarray(doc["probe_points"], dtype=np.float64)
    doc["exclude_node_blocks"] = tuple(doc.get("exclude_node_blocks", ()))
    cls = models.GNNConfig if kind == "gnn" else models.NGTConfig
    return cls(**doc)


def default_train_config(task: str, seed: int, epochs: int | None) -> trainer.TrainConfig:
    if task == "inr-cls":
        return trainer.TrainConfig(
            epochs=epochs or 100, batch_size=16, lr=2e-3, seed=seed, patience=15,
            loss="cross-entropy",
        )
    if task == "gen-pred":
        return trainer.TrainConfig(
            epochs=epochs or 30, batch_size=16, lr=2e-3, seed=seed, patience=8, loss="mse"
        )
    return trainer.TrainConfig(
        epochs=epochs or 60, batch_size=16, lr=2e-3, seed=seed, patience=12, loss="mse"
    )


def _build_dataset(task: str, seed: int, count: int | None):
    rng = Rng(seed)
    if task == "inr-cls":
        per_class = (count or 210) // 3
        return tasks.build_inr_classification(rng, classes=3, per_class=per_class)
    if task == "edit":
        return tasks.build_editing_task(rng, count=count or 150)
    if task == "gen-pred":
        return tasks.build_generalization_task(rng, count=count or 210)
    raise CliDataError(f"unknown task {task!r}")


def _task_metric(task: str, ds, model_cfg, params) -> tuple[str, float, list[tuple]]:
    """(metric name, value, per-record rows of (index, true, pred))."""
    test_graphs = ds.graphs("test")
    rows = []
    if ds.target_kind == "class":
        out = trainer.predict(model_cfg, params, test_graphs)
        true = np.asarray(ds.targets("test"))
        pred = out.argmax(axis=1)
        for i, (t, p) in enumerate(zip(true, pred)):
            rows.append((i, int(t), int(p)))
        return "accuracy", float((pred == true).mean()), rows
    if ds.target_kind == "scalar":
        out = trainer.predict(model_cfg, params, test_graphs).reshape(-1)
        true = np.asarray(ds.targets("test"), dtype=np.float64)
        tau = tasks.kendall_tau(out, true)
        for i, (t, p) in enumerate(zip(true, out)):
            rows.append((i, float(t), float(p)))
        return "kendall_tau", float(tau), rows
    # parameter-delta targets: report mean squared error over edges and nodes
    edge_t, node_t = ds.targets("test")
    total, count = 0.0, 0
    for i, g in enumerate(test_graphs):
        out = models.forward(trainer.batch([g]), model_cfg, params)
        te, tn = edge_t[i], node_t[i]
        se = float(((out["edge"].data - te) ** 2).sum())
        sn = float(((out["node"].data - tn) ** 2).sum())
        total += se + sn
        count += te.size + tn.size
        rows.append((i, float(np.abs(te).mean() + np.abs(tn).mean()), float(se + sn) / (te.size + tn.size)))
    return "delta_mse", total / max(count, 1), rows


# -- subcommand implementations ------------------------------------------------------------


def cmd_convert(args) -> int:
    net = netzoo.load(args.input)
    max_kernel = _parse_kernel(args.max_kernel)
    g = graphbuild.network_to_graph(
        net, max_kernel=max_kernel, linear_mode=args.linear_mode, flatten_mode=args.flatten_mode
    )
    rng = Rng(args.seed)
    if args.probes:
        g = graphbuild.attach_probe_features(
            g, net, graphbuild.ProbeSet.create(rng.derive(1), args.probes, net.in_dim)
        )
    if args.direction:
        g = graphbuild.attach_direction_features(g)
    graphbuild.save_graph(g, args.out)
    print(f"wrote {args.out}: {g.n} nodes, {g.num_edges} edges, d_E {g.d_e}")
    return 0


def cmd_check_sym(args) -> int:
    net = netzoo.load(args.input)
    rng = Rng(args.seed)
    x_dim = net.in_dim
    is_cnn = any(l.kind == "conv2d" for l in net.spec)
    dev_fn, commute_ok = 0.0, True
    for t in range(args.trials):
        p = netzoo.random_symmetry_permutation(net, rng.derive(t))
        if is_cnn:
            x = rng.derive(1000 + t).normal(size=(2, x_dim, 8, 8))
        else:
            x = rng.derive(1000 + t).normal(size=(16, x_dim))
        dev_fn = max(dev_fn, float(np.abs(netzoo.evaluate(netzoo.permute(net, p), x) - netzoo.evaluate(net, x)).max()))
        kernel = (7, 7) if is_cnn else (1, 1)
        g1 = graphbuild.network_to_graph(netzoo.permute(net, p), max_kernel=kernel)
        g2 = graphbuild.apply_node_permutation(graphbuild.network_to_graph(net, max_kernel=kernel), p)
        commute_ok = commute_ok and graphbuild.graphs_equal(g1, g2)
    g = graphbuild.network_to_graph(net, max_kernel=(7, 7) if is_cnn else (1, 1))
    g = tasks._attach_standard([g], rng.derive(5))[0][0]
    cfg = models.GNNConfig(layers=2, node_width=16, edge_width=16, message_width=16, out_dim=2)
    params = models.init_params(cfg, g, rng.derive(6))
    base = models.forward(g, cfg, params).data
    dev_model = 0.0
    for t in range(args.trials):
        p = netzoo.random_symmetry_permutation(net, rng.derive(7000 + t))
        out = models.forward(graphbuild.apply_node_permutation(g, p), cfg, params).data
        dev_model = max(dev_model, float(np.abs(out - base).max()))
    print(f"function preservation: max deviation {dev_fn:.3e}")
    print(f"graph-action commutation: {'exact' if commute_ok else 'FAILED'}")
    print(f"invariant readout: max deviation {dev_model:.3e}")
    if dev_fn > 1e-9 or not commute_ok or dev_model > 1e-9:
        print("symmetry checks FAILED", file=sys.stderr)
        return 2
    return 0


def cmd_gen_zoo(args) -> int:
    rng = Rng(args.seed)
    zoo = netzoo.generate_wild_park_mini(rng, args.count)
    os.makedirs(args.out, exist_ok=True)
    index_rows = []
    for i, net in enumerate(zoo):
        name = f"zoo_{i:05d}.json"
        netzoo.save(net, os.path.join(args.out, name))
        index_rows.append(
            (name, net.metadata["test_accuracy"], net.metadata["run_id"], net.metadata["train_steps"])
        )
    with open(os.path.join(args.out, "zoo_index.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "test_accuracy", "run_id", "train_steps"])
        w.writerows(index_rows)
    print(f"wrote {len(zoo)} checkpoints to {args.out}")
    return 0


def cmd_fit_inr(args) -> int:
    img = _load_image(args.image)
    rng = Rng(args.seed)
    net = netzoo.fit_inr(img, rng, steps=args.steps)
    netzoo.save(net, args.out)
    mse_val = float(net.metadata["reconstruction_mse"])
    print(f"wrote {args.out}: reconstruction mse {mse_val:.3e}")
    if args.render:
        recon = netzoo.inr_render(net, *img.shape)
        report.save_image_pair(img, recon, args.render)
        print(f"rendered {args.render}")
    return 0


def cmd_gen_task(args) -> int:
    if args.task == "l2o":
        os.makedirs(args.out, exist_ok=True)
        manifest = {
            "task": "l2o",
            "seed": args.seed,
            "optimizee_channels": [4, 8],
            "unroll": 15,
            "outer_steps": args.count or 60,
        }
        with open(os.path.join(args.out, "l2o_task.json"), "w") as fh:
            json.dump(manifest, fh)
        print(f"wrote l2o task manifest to {args.out}")
        return 0
    ds = _build_dataset(args.task, args.seed, args.count)
    tasks.save_dataset(ds, args.out)
    print(
        f"wrote {len(ds.records)} records to {args.out} "
        f"(train {len(ds.splits['train'])}, val {len(ds.splits['val'])}, test {len(ds.splits['test'])})"
    )
    return 0


def cmd_train(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    if args.data:
        ds = tasks.load_dataset(args.data)
    else:
        ds = _build_dataset(args.task, args.seed, args.count)
    out_dim = {"inr-cls": int(ds.metadata.get("classes", 3)), "gen-pred": 1, "edit": 1}[args.task]
    probe_points = ds.metadata.get("probe_points") if args.task in ("inr-cls", "edit") else None
    model_cfg = default_model_config(args.task, args.model, out_dim, probe_points)
    train_cfg = default_train_config(args.task, args.seed, args.epochs)
    params, log = trainer.fit(model_cfg, ds, train_cfg, verbose=args.verbose)
    params.save(os.path.join(args.out, "params.json"))
    with open(os.path.join(args.out, "model.json"), "w") as fh:
        json.dump(config_to_json(model_cfg), fh)
    log.write_csv(os.path.join(args.out, "metrics.csv"))
    report.save_training_curves(log, os.path.join(args.out, "metrics.png"), title=f"{args.task} / {args.model}")
    name, value, _ = _task_metric(args.task, ds, model_cfg, params)
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump({"task": args.task, "model": args.model, "metric": name, "value": value}, fh)
    print(f"test {name}: {value:.4f}")
    return 0


def cmd_eval(args) -> int:
    ds = tasks.load_dataset(args.data)
    with open(os.path.join(args.run, "model.json")) as fh:
        model_cfg = config_from_json(json.load(fh))
    params = models.ModelParams.load(os.path.join(args.run, "params.json"))
    name, value, rows = _task_metric(args.task, ds, model_cfg, params)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "eval.csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["record", "true", "pred"])
        w.writerows(rows)
    if ds.target_kind == "scalar":
        true = [r[1] for r in rows]
        pred = [r[2] for r in rows]
        report.save_scatter(pred, true, os.path.join(args.out, "eval.png"), title=f"{name} {value:.3f}")
    else:
        true = [r[1] for r in rows]
        pred = [r[2] for r in rows]
        report.save_scatter(pred, true, os.path.join(args.out, "eval.png"), title=f"{name} {value:.3f}")
    print(f"{name}: {value:.4f}")
    print(f"wrote {csv_path}")
    return 0


def cmd_l2o(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    rng = Rng(args.seed)
    ff_cfg = l2o.L2OConfig(kind="ff", hidden=32)
    gnn_cfg = l2o.L2OConfig(kind="gnn-ff", hidden=32, graph_layers=2, graph_width=16)
    print("training ff update rule...")
    ff_params, _ = l2o.l2o_train(ff_cfg, rng.derive(1), unroll=args.unroll, outer_steps=args.outer_steps)
    print("training graph-fed update rule...")
    gnn_params, _ = l2o.l2o_train(gnn_cfg, rng.derive(2), unroll=args.unroll, outer_steps=args.outer_steps)
    sgd_lr = l2o.tune_sgd_lr(args.seed * 31 + 1, steps=args.eval_steps)
    print(f"tuned sgd lr: {sgd_lr}")
    curves: dict[str, tuple[list, list]] = {}
    rows = []
    finals = {"sgd": [], "ff": [], "gnn-ff": []}
    for s in range(args.eval_seeds):
        seed = args.seed * 1009 + 17 + s
        for nm, res in (
            ("sgd", l2o.run_optimizer(None, None, seed, steps=args.eval_steps, sgd_lr=sgd_lr)),
            ("ff", l2o.run_optimizer(ff_cfg, ff_params, seed, steps=args.eval_steps)),
            ("gnn-ff", l2o.run_optimizer(gnn_cfg, gnn_params, seed, steps=args.eval_steps)),
        ):
            finals[nm].append(res["final_loss"])
            xs = [i * res["record_every"] for i in range(len(res["curve"]))]
            for xx, yy in zip(xs, res["curve"]):
                rows.append((nm, s, xx, yy))
            if s == 0:
                curves[nm] = (xs, res["curve"])
    with open(os.path.join(args.out, "l2o_curves.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["optimizer", "seed", "step", "loss"])
        w.writerows(rows)
    report.save_loss_curves(curves, os.path.join(args.out, "l2o.png"))
    summary = {name: float(np.mean(v)) for name, v in finals.items()}
    summary["sgd_lr"] = sgd_lr
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh)
    for name in ("sgd", "ff", "gnn-ff"):
        print(f"{name}: mean final loss {np.mean(finals[name]):.4f}")
    return 0


# -- argument parsing ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neuralgraph",
        description="Convert neural networks into neural graphs and learn on them.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="root random seed")
        p.add_argument("--verbose", action="store_true", help="chatty progress output")

    p = sub.add_parser("convert", help="convert a checkpoint file to a neural graph file")
    common(p)
    p.add_argument("--in", dest="input", required=True, help="checkpoint JSON path")
    p.add_argument("--out", required=True, help="output graph path (.ng)")
    p.add_argument("--max-kernel", default="5x5", help="maximum kernel size WxH")
    p.add_argument("--linear-mode", choices=graphbuild.LINEAR_MODES, default="as-1x1-conv")
    p.add_argument("--flatten-mode", choices=graphbuild.FLATTEN_MODES, default="adaptive")
    p.add_argument("--direction", action="store_true", help="attach reversed-edge features")
    p.add_argument("--probes", type=int, default=0, help="attach this many probe channels")

    p = sub.add_parser("check-sym", help="run the permutation symmetry suite on a checkpoint")
    common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--trials", type=int, default=10)

    p = sub.add_parser("gen-zoo", help="generate a mini zoo of trained heterogeneous CNNs")
    common(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit-inr", help="fit a coordinate network to a grayscale image")
    common(p)
    p.add_argument("--image", required=True, help="input image (.png/.npy/.csv)")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--render", default=None, help="optional reconstruction figure path")

    p = sub.add_parser("gen-task", help="build a task dataset directory")
    common(p)
    p.add_argument("--task", choices=("inr-cls", "edit", "gen-pred", "l2o"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=None)

    p = sub.add_parser("train", help="train a graph model on a task")
    common(p)
    p.add_argument("--task", choices=("inr-cls", "edit", "gen-pred"), required=True)
    p.add_argument("--model", choices=("gnn", "transformer"), default="gnn")
    p.add_argument("--data", default=None, help="dataset directory (generated when omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate a trained run directory on a dataset")
    common(p)
    p.add_argument("--task", choices=("inr-cls", "edit", "gen-pred"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True, help="training output directory")
    p.add_argument("--out", required=True)

    p = sub.add_parser("l2o", help="train and compare learned optimizers")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--unroll", type=int, default=15)
    p.add_argument("--outer-steps", type=int, default=60)
    p.add_argument("--eval-steps", type=int, default=150)
    p.add_argument("--eval-seeds", type=int, default=5)
    return parser


_HANDLERS = {
    "convert": cmd_convert,
    "check-sym": cmd_check_sym,
    "gen-zoo": cmd_gen_zoo,
    "fit-inr": cmd_fit_inr,
    "gen-task": cmd_gen_task,
    "train": cmd_train,
    "eval": cmd_eval,
    "l2o": cmd_l2o,
}


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        return _HANDLERS[args.verb](args)
    except (CliDataError, netzoo.CheckpointFormatError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
