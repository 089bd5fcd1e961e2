"""Command line interface.

Subcommands
    train        grow a tree greedily, finetune it, write model + logs
    eval         hard-routing accuracy and confusion counts of a model
    depth-sweep  grow and finetune across a range of depth caps
    visualize    split coefficient images, leaf table, optional leaf map

Every run writes a manifest.json to the output directory with the argv,
the resolved configuration, and checksums of all artifacts, so a run can
be repeated bit for bit. The wall_time_ms column of training logs is the
only nondeterministic output; manifests therefore also record a stable
checksum with that column stripped.

Numeric or string flag defaults can be overridden with environment
variables named OBTREE_<FLAG> (dashes as underscores), e.g. OBTREE_SEED=7.

Exit codes: 0 success, 2 usage or configuration error, 3 malformed data,
4 numeric failure during training, 5 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    apply_normalization,
    fit_normalization,
    load_idx,
    load_libsvm,
    read_pgm,
    sliding_window_features,
    export_coef_image,
    export_leaf_map,
)
from .em import TrainConfig
from .errors import DataFormatError, NumericError
from .growth import GrowthConfig, finetune, grow_greedy
from .inference import accuracy, predict_classes
from .model_io import ModelMeta, load_model, save_model
from .synthetic import xor_oblique
from .tree import SampleSet, Split

EPOCH_GRID = (20, 35, 50, 65)
TRAIN_LOG_COLUMNS = ("epoch", "gamma", "log_likelihood", "train_accuracy",
                     "wall_time_ms", "strategy", "phase")


def _env(name: str, default, cast):
    value = os.environ.get("OBTREE_" + name)
    if value is None:
        return default
    try:
        return cast(value)
    except ValueError:
        raise SystemExit(f"bad value {value!r} for OBTREE_{name}")


def _parse_image_shape(text: str):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected HxW, e.g. 28x28, got {text!r}"
        ) from None


def _parse_depths(text: str):
    try:
        if ":" in text:
            start, stop, step = (int(v) for v in text.split(":"))
            return list(range(start, stop + 1, step))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected start:stop:step or a comma list, got {text!r}"
        ) from None


def _parse_epoch_grid(text: str):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma list, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obtree",
        description="Oblique decision trees trained end to end with annealed soft routing.",
        epilog="Flag defaults can be overridden via OBTREE_<FLAG> environment variables.",
    )
    parser.add_argument("--version", action="version", version=f"obtree {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=_env("SEED", 0, int))
        p.add_argument("--out", type=Path, default=_env("OUT", Path("obtree-out"), Path),
                       help="output directory (created if missing)")

    def add_train_flags(p):
        p.add_argument("--epochs", type=int, default=_env("EPOCHS", 20, int))
        p.add_argument("--batch-size", type=int, default=_env("BATCH_SIZE", 1000, int))
        p.add_argument("--gamma0", type=float, default=_env("GAMMA0", 1.0, float))
        p.add_argument("--gamma-step", type=float, default=_env("GAMMA_STEP", 0.1, float))
        p.add_argument("--lambda", dest="spatial_reg", type=float,
                       default=_env("LAMBDA", 0.0, float),
                       help="spatial smoothness penalty weight")
        p.add_argument("--image-shape", type=_parse_image_shape,
                       default=_env("IMAGE_SHAPE", None, _parse_image_shape),
                       help="feature grid as HxW, required when --lambda > 0")
        p.add_argument("--strategy", choices=("em", "alternating"),
                       default=_env("STRATEGY", "em", str))
        p.add_argument("--adam-alpha", type=float, default=_env("ADAM_ALPHA", 0.001, float))
        p.add_argument("--adam-beta1", type=float, default=_env("ADAM_BETA1", 0.9, float))
        p.add_argument("--adam-beta2", type=float, default=_env("ADAM_BETA2", 0.999, float))
        p.add_argument("--adam-eps", type=float, default=_env("ADAM_EPS", 1e-8, float))
        p.add_argument("--max-depth", type=int, default=_env("MAX_DEPTH", None, int))
        p.add_argument("--max-leaves", type=int, default=_env("MAX_LEAVES", None, int))
        p.add_argument("--min-samples", type=int, default=_env("MIN_SAMPLES", 2, int))
        p.add_argument("--min-purity", type=float, default=_env("MIN_PURITY", None, float))
        p.add_argument("--expansion", choices=("depth-first", "best-first"),
                       default=_env("EXPANSION", "depth-first", str))
        p.add_argument("--no-finetune", action="store_true",
                       help="skip whole-tree finetuning after growth")
        p.add_argument("--no-normalize", action="store_true",
                       help="skip feature normalization")

    def add_data_flags(p, test=False):
        p.add_argument("--data", required=True,
                       help="libsvm text, idx image file, or synthetic:xor-oblique")
        p.add_argument("--data-labels", default=None,
                       help="idx label file matching --data")
        p.add_argument("--synthetic-n", type=int, default=_env("SYNTHETIC_N", 2000, int))
        if test:
            p.add_argument("--test", default=None)
            p.add_argument("--test-labels", default=None)

    p_train = sub.add_parser("train", help="grow, finetune, and save a tree")
    add_common(p_train)
    add_data_flags(p_train)
    add_train_flags(p_train)
    p_train.add_argument("--epochs-sweep", type=_parse_epoch_grid, nargs="?",
                         const=",".join(str(e) for e in EPOCH_GRID), default=None,
                         help="grid search epochs on a validation split "
                              f"(default grid {','.join(str(e) for e in EPOCH_GRID)})")
    p_train.add_argument("--val-ratio", type=float, default=_env("VAL_RATIO", 0.8, float),
                         help="train share of the validation split for --epochs-sweep")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a saved model")
    add_common(p_eval)
    add_data_flags(p_eval)
    p_eval.add_argument("--model", required=True, type=Path)
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("depth-sweep", help="accuracy across depth caps")
    add_common(p_sweep)
    add_data_flags(p_sweep, test=True)
    add_train_flags(p_sweep)
    p_sweep.add_argument("--depths", type=_parse_depths,
                         default=_env("DEPTHS", list(range(2, 19, 2)), _parse_depths),
                         help="start:stop:step or comma list (default 2:18:2)")
    p_sweep.set_defaults(func=cmd_depth_sweep)

    p_vis = sub.add_parser("visualize", help="export split images and leaf table")
    add_common(p_vis)
    p_vis.add_argument("--model", required=True, type=Path)
    p_vis.add_argument("--image-shape", type=_parse_image_shape, required=True,
                       help="feature grid as HxW")
    p_vis.add_argument("--leaf-map-image", type=Path, default=None,
                       help="PGM image to route pixel windows through the tree")
    p_vis.add_argument("--window", type=int, default=_env("WINDOW", 31, int),
                       help="window side for --leaf-map-image features")
    p_vis.set_defaults(func=cmd_visualize)
    return parser


# -- dataset plumbing ------------------------------------------------------

def _detect_idx(path: str) -> bool:
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
    except OSError:
        return False
    return head == b"\x00\x00\x08\x03"


def _load_dataset(source: str, labels_path, seed: int, synthetic_n: int):
    """Returns (SampleSet, label_tokens)."""
    if source.startswith("synthetic:"):
        name = source.split(":", 1)[1]
        if name != "xor-oblique":
            raise DataFormatError(f"unknown synthetic dataset {name!r}")
        return xor_oblique(synthetic_n, seed), ["1", "2"]
    if _detect_idx(source):
        if labels_path is None:
            raise DataFormatError(f"{source} is an idx image file; pass its label file")
        return load_idx(source, labels_path)
    return load_libsvm(source)


def _relabel(data: SampleSet, tokens, model_tokens) -> SampleSet:
    """Re-index labels from the dataset's token order to the model's."""
    if tokens == model_tokens:
        if data.num_classes == len(model_tokens):
            return data
        return SampleSet(data.features, data.labels, len(model_tokens))
    lookup = {tok: k for k, tok in enumerate(model_tokens)}
    try:
        mapping = np.array([lookup[tok] for tok in tokens], dtype=np.int64)
    except KeyError as exc:
        raise DataFormatError(
            f"dataset label {exc.args[0]!r} is unknown to the model"
        ) from None
    return SampleSet(data.features, mapping[data.labels], len(model_tokens))


# -- artifact plumbing -----------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _stable_sha256(path: Path) -> str:
    """Checksum with the wall_time_ms column stripped from training logs."""
    if path.name.startswith("train_log") and path.suffix == ".csv":
        lines = path.read_text().splitlines()
        if lines:
            header = lines[0].split(",")
            if "wall_time_ms" in header:
                drop = header.index("wall_time_ms")
                lines = [",".join(v for i, v in enumerate(row.split(","))
                                  if i != drop)
                         for row in lines]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()
    return _sha256(path)


def _write_manifest(out: Path, command: str, args, config: dict, artifacts):
    manifest = {
        "package": "obtree",
        "version": __version__,
        "command": command,
        "argv": list(sys.argv[1:]) if args.argv is None else args.argv,
        "config": config,
        "artifacts": {name: _sha256(out / name) for name in artifacts},
        "stable_artifacts": {name: _stable_sha256(out / name) for name in artifacts},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _log_rows(log, strategy: str, phase: str):
    return [
        (st.epoch, repr(st.gamma), repr(st.log_likelihood),
         repr(st.train_accuracy), repr(st.wall_time_ms), strategy, phase)
        for st in log
    ]


def _train_config(args, epochs=None) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs if epochs is None else epochs,
        batch_size=args.batch_size,
        gamma0=args.gamma0,
        gamma_step=args.gamma_step,
        spatial_reg=args.spatial_reg,
        image_shape=args.image_shape,
        alpha=args.adam_alpha,
        beta1=args.adam_beta1,
        beta2=args.adam_beta2,
        eps=args.adam_eps,
        seed=args.seed,
    )


def _growth_config(args, stump: TrainConfig) -> GrowthConfig:
    max_depth, max_leaves = args.max_depth, args.max_leaves
    if max_depth is None and max_leaves is None:
        max_depth = 4
    return GrowthConfig(
        stump=stump,
        max_depth=max_depth,
        max_leaves=max_leaves,
        min_purity=args.min_purity,
        min_samples=args.min_samples,
        expansion=args.expansion.replace("-", "_"),
    )


def _config_dict(config: TrainConfig, growth: GrowthConfig | None = None) -> dict:
    out = {"train": dataclasses.asdict(config)}
    if growth is not None:
        g = dataclasses.asdict(growth)
        g["stump"] = None  # stump config equals "train" with per-leaf seeds
        out["growth"] = {k: v for k, v in g.items() if k != "stump"}
        out["growth"]["expansion"] = growth.expansion
    return out


def _grow_and_finetune(data: SampleSet, args, epochs: int):
    config = _train_config(args, epochs)
    growth = _growth_config(args, config)
    tree, trace = grow_greedy(data, growth, args.strategy)
    ft_log = []
    if not args.no_finetune and tree.num_splits > 0:
        ft_log = finetune(tree, data, config, args.strategy)
    return tree, trace, ft_log, config, growth


def _final_gamma(config: TrainConfig, ft_log) -> float | None:
    if ft_log:
        return ft_log[-1].gamma
    if config.epochs > 0:
        return config.gamma0 + config.gamma_step * (config.epochs - 1)
    return None


# -- commands --------------------------------------------------------------

def cmd_train(args) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    data, tokens = _load_dataset(args.data, args.data_labels, args.seed,
                                 args.synthetic_n)
    stats = None
    if not args.no_normalize:
        stats = fit_normalization(data)
        data = apply_normalization(data, stats)

    sweep_rows = []
    if args.epochs_sweep:
        from .data import split_train_val

        sub_train, val = split_train_val(data, args.val_ratio, args.seed)
        best = None
        for epochs in args.epochs_sweep:
            tree, trace, ft_log, config, growth = _grow_and_finetune(
                sub_train, args, epochs
            )
            val_acc = accuracy(tree, val)
            sweep_rows.append((epochs, repr(val_acc)))
            if best is None or val_acc > best[0]:
                best = (val_acc, epochs, tree, trace, ft_log, config, growth)
        _, chosen_epochs, tree, trace, ft_log, config, growth = best
        print(f"epoch sweep chose {chosen_epochs} epochs "
              f"(validation accuracy {best[0]:.4f})")
    else:
        tree, trace, ft_log, config, growth = _grow_and_finetune(
            data, args, args.epochs
        )

    meta = ModelMeta(tokens, _final_gamma(config, ft_log), stats)
    save_model(tree, out / "model.txt", meta)
    _write_csv(out / "train_log.csv", TRAIN_LOG_COLUMNS,
               _log_rows(ft_log, args.strategy, "finetune"))
    _write_csv(out / "growth_trace.csv",
               ("step", "leaf_id", "subset_size", "gain", "frozen"),
               [(r.step, r.leaf_id, r.subset_size, repr(r.gain), r.frozen)
                for r in trace])
    artifacts = ["model.txt", "train_log.csv", "growth_trace.csv"]
    if sweep_rows:
        _write_csv(out / "epochs_sweep.csv", ("epochs", "val_accuracy"), sweep_rows)
        artifacts.append("epochs_sweep.csv")
    _write_manifest(out, "train", args, _config_dict(config, growth), artifacts)
    train_acc = accuracy(tree, data)
    print(f"trained on {data.n} samples, {data.dim} features, "
          f"{data.num_classes} classes")
    print(f"tree: {tree.num_splits} splits, {tree.num_leaves} leaves, "
          f"depth {tree.depth()}")
    print(f"training accuracy {train_acc:.4f}")
    print(f"artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    tree, meta = load_model(args.model)
    data, tokens = _load_dataset(args.data, args.data_labels, args.seed,
                                 args.synthetic_n)
    data = _relabel(data, tokens, meta.label_tokens)
    if meta.normalization is not None:
        data = apply_normalization(data, meta.normalization)
    if data.dim != tree.feature_dim:
        raise DataFormatError(
            f"model expects {tree.feature_dim} features, data has {data.dim}"
        )
    predicted = predict_classes(tree, data.features)
    acc = float(np.mean(predicted == data.labels))
    confusion = np.zeros((tree.num_classes, tree.num_classes), dtype=np.int64)
    np.add.at(confusion, (data.labels, predicted), 1)
    print(f"accuracy {acc:.6f} on {data.n} samples")
    for k, tok in enumerate(meta.label_tokens):
        row = " ".join(str(v) for v in confusion[k])
        print(f"class {tok}: {row}")
    rows = [("accuracy", "", "", repr(acc))]
    for i, tok_true in enumerate(meta.label_tokens):
        for j, tok_pred in enumerate(meta.label_tokens):
            rows.append(("confusion", tok_true, tok_pred, str(confusion[i, j])))
    _write_csv(out / "eval.csv", ("kind", "true_label", "predicted_label", "value"),
               rows)
    _write_manifest(out, "eval", args, {"model": str(args.model)}, ["eval.csv"])
    return 0


def cmd_depth_sweep(args) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    data, tokens = _load_dataset(args.data, args.data_labels, args.seed,
                                 args.synthetic_n)
    if args.test is None:
        raise DataFormatError("depth-sweep needs --test data")
    test, test_tokens = _load_dataset(args.test, args.test_labels, args.seed + 1,
                                      args.synthetic_n)
    test = _relabel(test, test_tokens, tokens)
    if not args.no_normalize:
        stats = fit_normalization(data)
        data = apply_normalization(data, stats)
        test = apply_normalization(test, stats)
    rows = []
    config = None
    for depth in args.depths:
        try:
            sweep_args = argparse.Namespace(**vars(args))
            sweep_args.max_depth = depth
            sweep_args.max_leaves = args.max_leaves
            config = _train_config(sweep_args, args.epochs)
            growth = _growth_config(sweep_args, config)
            tree, _ = grow_greedy(data, growth, args.strategy)
            greedy_train = accuracy(tree, data)
            greedy_test = accuracy(tree, test)
            if not args.no_finetune and tree.num_splits > 0:
                finetune(tree, data, config, args.strategy)
            ft_train = accuracy(tree, data)
            ft_test = accuracy(tree, test)
            rows.append((depth, repr(greedy_train), repr(greedy_test),
                         repr(ft_train), repr(ft_test), ""))
            print(f"depth {depth}: greedy test {greedy_test:.4f}, "
                  f"finetuned test {ft_test:.4f}")
        except Exception as exc:  # record the failure, keep sweeping
            rows.append((depth, "", "", "", "", f"{type(exc).__name__}: {exc}"))
            print(f"depth {depth}: failed ({type(exc).__name__}: {exc})")
    _write_csv(out / "depth_sweep.csv",
               ("depth", "greedy_train_accuracy", "greedy_test_accuracy",
                "finetuned_train_accuracy", "finetuned_test_accuracy", "error"),
               rows)
    cfg = _config_dict(config) if config is not None else {}
    cfg["depths"] = list(args.depths)
    _write_manifest(out, "depth-sweep", args, cfg, ["depth_sweep.csv"])
    return 0


def cmd_visualize(args) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    tree, meta = load_model(args.model)
    height, width = args.image_shape
    if height * width != tree.feature_dim:
        raise DataFormatError(
            f"--image-shape {height}x{width} does not cover "
            f"{tree.feature_dim} features"
        )
    depths = tree.node_depths()
    artifacts = []
    for sid in tree.split_ids():
        node = tree.nodes[sid]
        assert isinstance(node, Split)
        name = f"split_{sid:03d}_depth{depths[sid]}.pgm"
        export_coef_image(node.coef, height, width, out / name)
        artifacts.append(name)
    probs = tree.probs_matrix()
    leaf_ids = tree.leaf_ids()
    rows = []
    for pos, leaf_id in enumerate(leaf_ids):
        rows.append((leaf_id, pos, depths[leaf_id],
                     *(repr(v) for v in probs[pos])))
    header = ("leaf_id", "position", "depth",
              *(f"prob_{tok}" for tok in meta.label_tokens))
    _write_csv(out / "leaves.csv", header, rows)
    artifacts.append("leaves.csv")
    if args.leaf_map_image is not None:
        image = read_pgm(args.leaf_map_image).astype(np.float64) / 255.0
        windows = sliding_window_features(image, args.window)
        if windows.dim != tree.feature_dim:
            raise DataFormatError(
                f"window {args.window} gives {windows.dim} features, "
                f"model expects {tree.feature_dim}"
            )
        feats = windows.features
        if meta.normalization is not None:
            windows = apply_normalization(windows, meta.normalization)
            feats = windows.features
        export_leaf_map(tree, feats, image.shape[0], image.shape[1],
                        out / "leaf_map.pgm")
        artifacts.append("leaf_map.pgm")
    _write_manifest(out, "visualize", args, {"model": str(args.model)}, artifacts)
    print(f"wrote {len(artifacts)} artifacts to {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = list(argv) if argv is not None else None
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 5
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
