"""Classifier training against generated samples, and prediction.

Every minibatch pairs real labeled samples with an equal number of
freshly generated ones from a frozen generative stack.  The loss is the
evidential objective plus L2 weight decay on the fully connected layers'
weights.  Predictions expose the full evidential readout: logits,
evidence, Dirichlet parameters, predictive mean, entropy, and total
uncertainty.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import dirichlet, losses
from .autodiff import Tensor, backward, no_grad
from .optim import Adam

__all__ = ["TrainConfig", "Prediction", "train_classifier", "predict", "accuracy"]


@dataclass(frozen=True)
class TrainConfig:
    """Classifier training knobs."""

    epochs: int = 5
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 0.005     # applied to dense-layer weights only
    clamp_max: float = 10.0
    kl_mode: str = "attenuated"
    seed: int = 0

    def __post_init__(self):
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @property
    def loss_config(self):
        return losses.LossConfig(clamp_max=self.clamp_max, kl_mode=self.kl_mode)


@dataclass
class Prediction:
    """Batched evidential readout; all fields are mutually consistent."""

    logits: np.ndarray        # (N, K) raw network outputs
    evidence: np.ndarray      # exp of clamped logits
    alpha: np.ndarray         # evidence + 1
    mean: np.ndarray          # alpha / S, the predictive distribution
    predicted: np.ndarray     # argmax of the mean
    entropy: np.ndarray       # Shannon entropy of the mean, nats
    uncertainty: np.ndarray   # K / S

    @property
    def n_classes(self):
        return self.alpha.shape[-1]


def _decay_term(net, coefficient):
    term = None
    for name in net.dense_weight_names():
        w = net.params[name]
        contribution = (w * w).sum() * coefficient
        term = contribution if term is None else term + contribution
    return term


def train_classifier(train_data, ood_source, net, config, test_data=None):
    """Minimize the evidential loss plus weight decay; returns the epoch log.

    `ood_source(n)` must yield n generated samples shaped like the inputs.
    The log holds one row per epoch: (epoch, mean batch loss, train
    accuracy, test accuracy or nan).  Training aborts on a non-finite
    loss.
    """
    if len(train_data) == 0:
        raise ValueError("empty training dataset")
    rng = np.random.default_rng(config.seed)
    optimizer = Adam(net.params, lr=config.learning_rate)
    loss_config = config.loss_config
    log = []

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_data))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            if len(idx) < 2:
                continue   # a 1-sample tail batch is not a usable pairing
            x = Tensor(np.asarray(train_data.inputs[idx], dtype=net.dtype))
            labels = train_data.labels[idx]
            x_out = Tensor(np.asarray(ood_source(len(idx)), dtype=net.dtype))

            optimizer.zero_grad()
            loss = losses.evidential_loss(net.forward(x), labels,
                                          net.forward(x_out), loss_config)
            if config.weight_decay > 0:
                loss = loss + _decay_term(net, config.weight_decay)
            value = float(loss.data)
            if not np.isfinite(value):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch start {start}")
            backward(loss)
            optimizer.step()
            batch_losses.append(value)

        train_acc = accuracy(net, train_data, config.clamp_max)
        test_acc = accuracy(net, test_data, config.clamp_max) if test_data is not None else float("nan")
        log.append((epoch, float(np.mean(batch_losses)), train_acc, test_acc))
    return log


def write_epoch_log(log, path):
    with open(path, "w", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "loss", "train_acc", "test_acc"])
        for epoch, loss, train_acc, test_acc in log:
            writer.writerow([epoch, f"{loss:.10g}", f"{train_acc:.10g}", f"{test_acc:.10g}"])


def predict(net, x, clamp_max=10.0, batch_size=512):
    """Evidential readout for a batch of inputs (pure function of net, x)."""
    x = np.asarray(x, dtype=net.dtype)
    chunks = []
    with no_grad():
        for start in range(0, len(x), batch_size):
            chunks.append(net.forward(Tensor(x[start : start + batch_size])).data)
    logits = np.concatenate(chunks).astype(np.float64)
    evidence = np.exp(np.minimum(logits, clamp_max))
    alpha = dirichlet.evidence_to_alpha(evidence)
    mean, _ = dirichlet.mean_and_variance(alpha)
    return Prediction(
        logits=logits,
        evidence=evidence,
        alpha=alpha,
        mean=mean,
        predicted=mean.argmax(axis=-1),
        entropy=dirichlet.categorical_entropy(mean),
        uncertainty=dirichlet.total_uncertainty(alpha),
    )


def accuracy(net, dataset, clamp_max=10.0):
    if dataset is None or len(dataset) == 0:
        return float("nan")
    pred = predict(net, dataset.inputs, clamp_max)
    return float((pred.predicted == dataset.labels).mean())
