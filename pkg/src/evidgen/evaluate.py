"""Uncertainty measurements: entropy ECDFs, adversarial sweeps, AUROC,
and decision-boundary confidence maps.

All measurements are pure functions over frozen networks and fixed
inputs, independent of evaluation order.  CSV schemas: ecdf.csv
(value, F), sweep.csv (epsilon, accuracy, mean_entropy), auroc.csv
(metric, value), boundary.csv (x, y, confidence).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import losses
from .autodiff import Tensor, backward, take_column
from .trainer import predict

__all__ = [
    "EcdfCurve",
    "SweepResult",
    "EvalReport",
    "entropy_ecdf",
    "success_fail_split",
    "fgsm_attack",
    "epsilon_sweep",
    "auroc",
    "boundary_map",
]

PAIR_COUNT_LIMIT = 10_000


@dataclass
class EcdfCurve:
    """Empirical CDF of per-sample values over the domain [0, upper]."""

    values: np.ndarray          # sorted ascending
    upper: float                # right edge of the domain (ln K for entropies)

    @classmethod
    def from_samples(cls, samples, upper):
        return cls(np.sort(np.asarray(samples, dtype=np.float64)), float(upper))

    @property
    def empty(self):
        return self.values.size == 0

    def __call__(self, t):
        """F(t) = fraction of values <= t."""
        if self.empty:
            raise ValueError("empty ECDF has no distribution function")
        return np.searchsorted(self.values, t, side="right") / self.values.size

    def area(self):
        """Exact step integral of F over [0, upper].

        Equals upper - mean(min(value, upper)): each sample contributes
        the width of the region where it keeps F below 1.
        """
        if self.empty:
            raise ValueError("empty ECDF has no area")
        return float(self.upper - np.minimum(self.values, self.upper).mean())


def entropy_ecdf(prediction):
    """ECDF of per-sample predictive entropies plus its area."""
    if prediction.entropy.size == 0:
        raise ValueError("need at least one prediction")
    curve = EcdfCurve.from_samples(prediction.entropy, np.log(prediction.n_classes))
    return curve, curve.area()


def success_fail_split(prediction, labels):
    """Entropy ECDFs of correctly and incorrectly predicted samples.

    An empty partition yields an empty curve (its `empty` flag set), not
    an error.
    """
    labels = np.asarray(labels)
    if labels.shape != prediction.predicted.shape:
        raise ValueError(
            f"labels shape {labels.shape} does not match predictions {prediction.predicted.shape}"
        )
    upper = np.log(prediction.n_classes)
    correct = prediction.predicted == labels
    success = EcdfCurve.from_samples(prediction.entropy[correct], upper)
    fail = EcdfCurve.from_samples(prediction.entropy[~correct], upper)
    return success, fail


def write_ecdf_csv(curve, path):
    with open(path, "w", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["value", "F"])
        n = curve.values.size
        for i, v in enumerate(curve.values):
            writer.writerow([f"{v:.10g}", f"{(i + 1) / n:.10g}"])


def fgsm_attack(net, x, labels, epsilon, bounds, clamp_max=10.0):
    """One-step sign-gradient perturbation of the inputs.

    Ascends the true-class discrimination loss -log sigmoid(logit_y),
    moving each input coordinate by epsilon times the sign of its
    gradient (sign(0) = 0), then clips to the input domain.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    x = np.asarray(x, dtype=net.dtype)
    labels = np.asarray(labels)
    if epsilon == 0.0:
        return x.copy()
    x_leaf = Tensor(x.copy(), requires_grad=True)
    logits = net.forward(x_leaf)
    true_logit = take_column(logits, labels)
    loss = (-losses.log_sigmoid(true_logit)).mean()
    backward(loss)
    grad = x_leaf.grad if x_leaf.grad is not None else np.zeros_like(x)
    adv = x + epsilon * np.sign(grad)
    return np.clip(adv, bounds[0], bounds[1]).astype(net.dtype)


@dataclass
class SweepResult:
    """Accuracy and mean predictive entropy per perturbation magnitude."""

    epsilons: np.ndarray
    accuracy: np.ndarray
    mean_entropy: np.ndarray

    def row_count(self):
        return len(self.epsilons)


def epsilon_sweep(net, dataset, epsilons, clamp_max=10.0):
    """Adversarial sweep over an ascending epsilon grid in [0, 1]."""
    epsilons = np.asarray(epsilons, dtype=np.float64)
    if np.any(np.diff(epsilons) < 0) or epsilons.min() < 0 or epsilons.max() > 1:
        raise ValueError("epsilon grid must be ascending within [0, 1]")
    accs, ents = [], []
    for eps in epsilons:
        adv = fgsm_attack(net, dataset.inputs, dataset.labels, float(eps),
                          dataset.bounds, clamp_max)
        pred = predict(net, adv, clamp_max)
        accs.append(float((pred.predicted == dataset.labels).mean()))
        ents.append(float(pred.entropy.mean()))
    return SweepResult(epsilons, np.array(accs), np.array(ents))


def write_sweep_csv(sweep, path):
    with open(path, "w", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epsilon", "accuracy", "mean_entropy"])
        for eps, acc, ent in zip(sweep.epsilons, sweep.accuracy, sweep.mean_entropy):
            writer.writerow([f"{eps:.10g}", f"{acc:.10g}", f"{ent:.10g}"])


def _auroc_pair_count(a, b):
    wins = (b[:, None] > a[None, :]).sum() + 0.5 * (b[:, None] == a[None, :]).sum()
    return float(wins / (a.size * b.size))


def _auroc_rank_statistic(a, b):
    ranks = rankdata(np.concatenate([a, b]))
    rank_sum = ranks[a.size :].sum()
    u = rank_sum - b.size * (b.size + 1) / 2.0
    return float(u / (a.size * b.size))


def auroc(scores_in, scores_out):
    """Probability a random out-of-distribution score exceeds a random
    in-distribution score, ties counted as one half.

    Exact pair counting up to 10^4 pairs, the equivalent rank-statistic
    form beyond that.
    """
    a = np.asarray(scores_in, dtype=np.float64)
    b = np.asarray(scores_out, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both score sets must be non-empty")
    if a.size * b.size <= PAIR_COUNT_LIMIT:
        return _auroc_pair_count(a, b)
    return _auroc_rank_statistic(a, b)


def write_auroc_csv(value, path, extra=()):
    with open(path, "w", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerow(["auroc", f"{value:.10g}"])
        for name, v in extra:
            writer.writerow([name, f"{v:.10g}"])


def boundary_map(net, grid, clamp_max=10.0):
    """Confidence field 1 - H(mean)/ln K over a 2D grid of inputs."""
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.shape[1] != 2:
        raise ValueError(f"boundary map needs (M, 2) grid points, got {grid.shape}")
    pred = predict(net, grid, clamp_max)
    return 1.0 - pred.entropy / np.log(pred.n_classes)


def write_boundary_csv(grid, confidence, path):
    with open(path, "w", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["x", "y", "confidence"])
        for (px, py), c in zip(grid, confidence):
            writer.writerow([f"{px:.10g}", f"{py:.10g}", f"{c:.10g}"])


@dataclass
class EvalReport:
    """Named metric tables plus provenance, serialized as CSV files."""

    provenance: dict
    tables: dict = field(default_factory=dict)   # name -> (header, rows)

    def add(self, name, header, rows):
        rows = list(rows)
        if not rows:
            raise ValueError(f"table {name!r} must be non-empty")
        self.tables[name] = (tuple(header), rows)

    def write(self, out_dir):
        import os

        for name, (header, rows) in sorted(self.tables.items()):
            with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="\n") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(header)
                for row in rows:
                    writer.writerow([v if isinstance(v, str) else f"{v:.10g}" for v in row])
        with open(os.path.join(out_dir, "provenance.csv"), "w", newline="\n") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["key", "value"])
            for key in sorted(self.provenance):
                writer.writerow([key, str(self.provenance[key])])
