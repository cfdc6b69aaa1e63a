"""Command-line surface: configuration, the two training stages, and the
evaluation suites, each writing artifacts into a timestamped run directory.

Tasks: train-gen, train-clf, eval-ood, eval-adv, eval-anomaly,
eval-boundary, reproduce-toy.  Flags override an optional plain-text
key=value config file (lines like `trainer.batch_size=128`; the section
prefix is ignored).  Every run directory receives a manifest that fully
reproduces the run; identical config and seed give byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, fields
from datetime import datetime, timezone

import numpy as np
import scipy

from . import __version__, evaluate, nets, oodgen, trainer
from .data import TOY_BOUNDS, Dataset, apply_split, load_idx, make_grid, make_toy
from .pgm import write_pgm

TASKS = ("train-gen", "train-clf", "eval-ood", "eval-adv", "eval-anomaly",
         "eval-boundary", "reproduce-toy")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


@dataclass
class RunConfig:
    task: str
    seed: int = 0
    out: str = "runs"
    preset: str = "toy"
    dataset_images: str = ""
    dataset_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    stack_ckpt: str = ""
    classifier_ckpt: str = ""
    epochs: int = 200
    iterations: int = 2000
    batch_size: int = 0           # 0 = preset default
    learning_rate: float = 1e-3
    latent_dim: int = 0           # 0 = preset default
    weight_decay: float = 0.005
    clamp_max: float = 10.0
    kl_mode: str = "attenuated"
    n_per_class: int = 100
    subset: int = 0               # 0 = use the full training set
    epsilon_grid: str = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    resolution: int = 120
    in_classes: str = ""
    out_classes: str = ""
    snapshot_every: int = 500

    def epsilons(self):
        return np.array([float(v) for v in self.epsilon_grid.split(",") if v.strip() != ""])

    def class_list(self, text):
        return [int(v) for v in text.split(",") if v.strip() != ""]


class ConfigError(ValueError):
    pass


def _parse_config_file(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.split(".")[-1].replace("-", "_")
            values[key] = value
    return values


def build_config(argv):
    parser = argparse.ArgumentParser(
        prog="evidgen",
        description="Evidential classifier with generated out-of-distribution "
                    "training samples, plus its evaluation harness.",
    )
    parser.add_argument("task", choices=TASKS)
    parser.add_argument("--config", default=None, help="plain-text key=value config file")
    for f in fields(RunConfig):
        if f.name == "task":
            continue
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, type=type(f.default), default=None)
    args = parser.parse_args(argv)

    merged = {}
    if args.config:
        file_values = _parse_config_file(args.config)
        valid = {f.name for f in fields(RunConfig)}
        for key, value in file_values.items():
            if key == "task":
                continue
            if key not in valid:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = value
    for f in fields(RunConfig):
        if f.name == "task":
            continue
        flag_value = getattr(args, f.name)
        if flag_value is not None:
            merged[f.name] = flag_value

    config = RunConfig(task=args.task)
    for key, value in merged.items():
        want = type(getattr(config, key))
        try:
            setattr(config, key, want(value))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})")
    return config


def _validate(config):
    if config.preset not in ("toy", "mnist", "cifar-like"):
        raise ConfigError(f"unknown preset {config.preset!r}")
    needs_data = config.task in ("train-gen", "train-clf", "eval-ood", "eval-adv",
                                 "eval-anomaly")
    if needs_data and config.preset != "toy":
        for attr in ("dataset_images", "dataset_labels"):
            path = getattr(config, attr)
            if not path:
                raise ConfigError(f"{config.task} with preset {config.preset!r} requires --"
                                  + attr.replace("_", "-"))
            if not os.path.exists(path):
                raise ConfigError(f"dataset path does not exist: {path}")
    for attr in ("test_images", "test_labels", "stack_ckpt", "classifier_ckpt"):
        path = getattr(config, attr)
        if path and not os.path.exists(path):
            raise ConfigError(f"path does not exist: {path}")
    if config.task == "train-clf" and not config.stack_ckpt:
        raise ConfigError("train-clf requires --stack-ckpt (trained generative stack)")
    if config.task.startswith("eval-") and not config.classifier_ckpt:
        raise ConfigError(f"{config.task} requires --classifier-ckpt")
    if config.task == "eval-anomaly" and not (config.in_classes and config.out_classes):
        raise ConfigError("eval-anomaly requires --in-classes and --out-classes")
    if config.task == "eval-boundary" and config.preset != "toy":
        raise ConfigError("eval-boundary only applies to the 2D toy preset")
    eps = config.epsilons()
    if len(eps) and (eps.min() < 0 or eps.max() > 1 or np.any(np.diff(eps) < 0)):
        raise ConfigError("epsilon grid must be ascending within [0, 1]")


def _default_batch(config):
    if config.batch_size:
        return config.batch_size
    return 100 if config.preset == "toy" else 128


def _make_run_dir(config):
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    base = os.path.join(config.out, f"{config.task}-{stamp}-{config.seed}")
    run_dir = base
    counter = 1
    while os.path.exists(run_dir):
        counter += 1
        run_dir = f"{base}-{counter}"
    os.makedirs(run_dir)
    return run_dir


def _write_manifest(config, run_dir):
    lines = {f.name: getattr(config, f.name) for f in fields(RunConfig)}
    lines.update({
        "version.evidgen": __version__,
        "version.numpy": np.__version__,
        "version.scipy": scipy.__version__,
        "version.python": ".".join(map(str, sys.version_info[:3])),
    })
    with open(os.path.join(run_dir, "manifest.txt"), "w", newline="\n") as f:
        for key in sorted(lines):
            f.write(f"{key}={lines[key]}\n")


def _load_train_data(config):
    if config.preset == "toy":
        data = make_toy(config.n_per_class, config.seed)
    else:
        data = load_idx(config.dataset_images, config.dataset_labels)
    if config.in_classes:
        data, _ = apply_split(data, config.class_list(config.in_classes),
                              config.class_list(config.out_classes))
    if config.subset and config.subset < len(data):
        data = data.subset(np.arange(config.subset))
    return data


def _load_test_data(config):
    if config.preset == "toy":
        return make_toy(config.n_per_class, config.seed + 1000, split="test")
    if config.test_images:
        return load_idx(config.test_images, config.test_labels)
    return None


def _load_eval_data(config):
    """Evaluation set for eval-* tasks: the --dataset-* pair, or the derived
    toy test set."""
    if config.preset == "toy":
        return make_toy(config.n_per_class, config.seed + 1000, split="test")
    return load_idx(config.dataset_images, config.dataset_labels)


def _latent_dim(config):
    return config.latent_dim or nets.default_latent_dim(config.preset)


def _load_classifier(config):
    params, _, _ = nets.load_checkpoint(config.classifier_ckpt)
    dense = sorted(name for name in params if name.endswith("dense.w"))
    n_classes = params[dense[-1]].shape[1]
    net = nets.build_classifier(config.preset, n_classes, seed=0)
    nets.load_into(net, config.classifier_ckpt)
    return net


def _load_stack(config):
    stack = nets.build_generative_stack(config.preset, seed=0, latent_dim=_latent_dim(config))
    nets.load_into(stack, config.stack_ckpt)
    return stack


def _metrics_csv(path, rows):
    with open(path, "w", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for name, value in rows:
            writer.writerow([name, f"{value:.10g}"])


# -- task bodies -------------------------------------------------------------


def _run_train_gen(config, run_dir):
    data = _load_train_data(config)
    stack = nets.build_generative_stack(config.preset, seed=config.seed,
                                        latent_dim=_latent_dim(config))
    gen_config = oodgen.GenTrainConfig(
        iterations=config.iterations, batch_size=_default_batch(config),
        learning_rate=config.learning_rate, seed=config.seed,
        snapshot_every=config.snapshot_every)
    log = oodgen.train_generative_stack(data, stack, gen_config, out_dir=run_dir)
    oodgen.write_objective_log(log, os.path.join(run_dir, "objectives.csv"))
    nets.save_checkpoint(os.path.join(run_dir, "stack.ckpt"), stack.named_params(),
                         seed=config.seed, step=config.iterations)
    return stack


def _run_train_clf(config, run_dir, stack=None, data=None, test=None):
    data = data if data is not None else _load_train_data(config)
    test = test if test is not None else _load_test_data(config)
    stack = stack if stack is not None else _load_stack(config)
    net = nets.build_classifier(config.preset, data.n_classes, seed=config.seed)
    source = oodgen.ood_batch_source(stack, data, np.random.default_rng(config.seed))
    train_config = trainer.TrainConfig(
        epochs=config.epochs, batch_size=min(_default_batch(config), max(2, len(data))),
        learning_rate=config.learning_rate, weight_decay=config.weight_decay,
        clamp_max=config.clamp_max, kl_mode=config.kl_mode, seed=config.seed)
    log = trainer.train_classifier(data, source, net, train_config, test_data=test)
    trainer.write_epoch_log(log, os.path.join(run_dir, "epochs.csv"))
    nets.save_checkpoint(os.path.join(run_dir, "classifier.ckpt"), net.params,
                         seed=config.seed, step=config.epochs)
    return net, log


def _run_eval_ood(config, run_dir, net=None, data=None):
    net = net if net is not None else _load_classifier(config)
    data = data if data is not None else _load_eval_data(config)
    if config.out_classes:
        out_list = config.class_list(config.out_classes)
        in_list = config.class_list(config.in_classes) or sorted(
            set(data.labels.tolist()) - set(out_list))
        in_data, out_data = apply_split(data, in_list, out_list)
    else:
        in_data, out_data = data, None

    metrics = []
    pred = trainer.predict(net, in_data.inputs, config.clamp_max)
    curve, area = evaluate.entropy_ecdf(pred)
    evaluate.write_ecdf_csv(curve, os.path.join(run_dir, "ecdf.csv"))
    metrics.append(("ecdf_area", area))
    metrics.append(("median_entropy", float(np.median(pred.entropy))))
    success, fail = evaluate.success_fail_split(pred, in_data.labels)
    if not success.empty:
        evaluate.write_ecdf_csv(success, os.path.join(run_dir, "succ_ecdf.csv"))
        metrics.append(("succ_ecdf_area", success.area()))
    if not fail.empty:
        evaluate.write_ecdf_csv(fail, os.path.join(run_dir, "fail_ecdf.csv"))
        metrics.append(("fail_ecdf_area", fail.area()))
    metrics.append(("accuracy", float((pred.predicted == in_data.labels).mean())))

    if out_data is not None and len(out_data):
        pred_out = trainer.predict(net, out_data.inputs, config.clamp_max)
        ood_curve, ood_area = evaluate.entropy_ecdf(pred_out)
        evaluate.write_ecdf_csv(ood_curve, os.path.join(run_dir, "ood_ecdf.csv"))
        metrics.append(("ood_ecdf_area", ood_area))
        metrics.append(("ood_median_entropy", float(np.median(pred_out.entropy))))
    _metrics_csv(os.path.join(run_dir, "metrics.csv"), metrics)
    return metrics


def _run_eval_adv(config, run_dir, net=None, data=None):
    net = net if net is not None else _load_classifier(config)
    data = data if data is not None else _load_eval_data(config)
    sweep = evaluate.epsilon_sweep(net, data, config.epsilons(), config.clamp_max)
    evaluate.write_sweep_csv(sweep, os.path.join(run_dir, "sweep.csv"))
    return sweep


def _run_eval_anomaly(config, run_dir, net=None, data=None):
    net = net if net is not None else _load_classifier(config)
    data = data if data is not None else _load_eval_data(config)
    in_data, out_data = apply_split(data, config.class_list(config.in_classes),
                                    config.class_list(config.out_classes))
    pred_in = trainer.predict(net, in_data.inputs, config.clamp_max)
    pred_out = trainer.predict(net, out_data.inputs, config.clamp_max)
    value = evaluate.auroc(pred_in.entropy, pred_out.entropy)
    evaluate.write_auroc_csv(value, os.path.join(run_dir, "auroc.csv"), extra=[
        ("n_in", float(len(in_data))), ("n_out", float(len(out_data)))])
    return value


def _run_eval_boundary(config, run_dir, net=None):
    if config.preset != "toy":
        raise ConfigError("eval-boundary only applies to the 2D toy preset")
    net = net if net is not None else _load_classifier(config)
    grid = make_grid(TOY_BOUNDS, config.resolution)
    confidence = evaluate.boundary_map(net, grid, config.clamp_max)
    evaluate.write_boundary_csv(grid, confidence, os.path.join(run_dir, "boundary.csv"))
    raster = confidence.reshape(config.resolution, config.resolution)
    write_pgm(os.path.join(run_dir, "boundary.pgm"), raster)
    return confidence


def _run_reproduce_toy(config, run_dir):
    stack = _run_train_gen(config, run_dir)
    train = _load_train_data(config)
    test = _load_test_data(config)
    net, _ = _run_train_clf(config, run_dir, stack=stack, data=train, test=test)

    pred = trainer.predict(net, test.inputs, config.clamp_max)
    accuracy = float((pred.predicted == test.labels).mean())
    grid = make_grid(TOY_BOUNDS, config.resolution)
    confidence = evaluate.boundary_map(net, grid, config.clamp_max)
    evaluate.write_boundary_csv(grid, confidence, os.path.join(run_dir, "boundary.csv"))
    write_pgm(os.path.join(run_dir, "boundary.pgm"),
              confidence.reshape(config.resolution, config.resolution))

    rng = np.random.default_rng(config.seed + 2000)
    samples = oodgen.sample_ood(stack, train.inputs, rng, bounds=train.bounds)
    with open(os.path.join(run_dir, "generated.csv"), "w", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["x", "y"])
        for s in samples:
            writer.writerow([f"{s.x[0]:.10g}", f"{s.x[1]:.10g}"])

    centers = np.array([[-1.5, 0.0], [1.5, 0.0]])
    d_center = np.linalg.norm(grid[:, None, :] - centers[None], axis=2).min(axis=1)
    d_train = np.linalg.norm(grid[:, None, :] - train.inputs[None], axis=2).min(axis=1)
    near = confidence[d_center <= 0.5]
    far = confidence[d_train >= 1.5]
    metrics = [("test_accuracy", accuracy),
               ("confidence_near_centers", float(near.mean()) if near.size else float("nan")),
               ("confidence_far_field", float(far.mean()) if far.size else float("nan"))]

    success, fail = evaluate.success_fail_split(pred, test.labels)
    if not success.empty:
        evaluate.write_ecdf_csv(success, os.path.join(run_dir, "succ_ecdf.csv"))
        metrics.append(("succ_ecdf_area", success.area()))
    if not fail.empty:
        evaluate.write_ecdf_csv(fail, os.path.join(run_dir, "fail_ecdf.csv"))
        metrics.append(("fail_ecdf_area", fail.area()))
    _metrics_csv(os.path.join(run_dir, "metrics.csv"), metrics)
    return metrics


def run(config):
    """Execute a validated config; returns the process exit status."""
    try:
        _validate(config)
    except (ConfigError, ValueError) as exc:
        print(f"evidgen: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    run_dir = _make_run_dir(config)
    _write_manifest(config, run_dir)
    try:
        if config.task == "train-gen":
            _run_train_gen(config, run_dir)
        elif config.task == "train-clf":
            _run_train_clf(config, run_dir)
        elif config.task == "eval-ood":
            _run_eval_ood(config, run_dir)
        elif config.task == "eval-adv":
            _run_eval_adv(config, run_dir)
        elif config.task == "eval-anomaly":
            _run_eval_anomaly(config, run_dir)
        elif config.task == "eval-boundary":
            _run_eval_boundary(config, run_dir)
        elif config.task == "reproduce-toy":
            _run_reproduce_toy(config, run_dir)
    except (ConfigError,) as exc:
        print(f"evidgen: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failure: report and signal exit 1
        print(f"evidgen: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(run_dir)
    return EXIT_OK


def main(argv=None):
    try:
        config = build_config(sys.argv[1:] if argv is None else argv)
    except ConfigError as exc:
        print(f"evidgen: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
