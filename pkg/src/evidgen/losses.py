"""Training objectives.

Classifier side: per-class evidence is exp of the (clamped) logit, read
as a density ratio against generated out-of-distribution samples.  The
K-binary Bernoulli loss trains each logit to discriminate its class from
the generated samples; a KL regularizer drives the off-true-class
Dirichlet toward uniform, weighted by the expected misclassification
probability (treated as a constant, so no gradient flows through it).

Generative side: the VAE evidence lower bound, the latent perturbation
generator's objective, and the two discriminator objectives.  All
objectives are batch means and all sigmoid-log terms use the fused
softplus form, finite for logits far beyond +-80.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .autodiff import Tensor, drop_column, take_column

__all__ = [
    "LossConfig",
    "log_sigmoid",
    "log_one_minus_sigmoid",
    "evidence_from_logits",
    "nce_bernoulli_loss",
    "misclassification_kl",
    "evidential_loss",
    "gaussian_kl",
    "bernoulli_loglik",
    "gaussian_loglik",
    "sample_latent",
    "vae_elbo",
    "perturb_latent",
    "generator_objective",
    "latent_discriminator_objective",
    "input_discriminator_objective",
]


@dataclass(frozen=True)
class LossConfig:
    """Shared classifier-loss knobs.

    clamp_max bounds the logits before exponentiation so evidence cannot
    overflow; sample_ratio is the generated-to-real batch size ratio
    (kept at 1); kl_mode picks the regularizer weight: "attenuated" uses
    1 - p_hat of the true class, "fixed" uses 1.
    """

    clamp_max: float = 10.0
    sample_ratio: float = 1.0
    kl_mode: str = "attenuated"

    def __post_init__(self):
        if self.clamp_max <= 0:
            raise ValueError("clamp_max must be positive")
        if self.sample_ratio <= 0:
            raise ValueError("sample_ratio must be positive")
        if self.kl_mode not in ("attenuated", "fixed"):
            raise ValueError(f"unknown kl_mode {self.kl_mode!r}")


def log_sigmoid(x):
    """log(sigmoid(x)) = -softplus(-x), finite for any logit."""
    return -(-x).softplus()


def log_one_minus_sigmoid(x):
    """log(1 - sigmoid(x)) = -softplus(x), finite for any logit."""
    return -x.softplus()



def evidence_from_logits(logits, clamp_max=10.0):
    """Per-class evidence e = exp(min(logit, clamp_max)); gradient flows
    only through the unclamped region."""
    return logits.clamp_max(clamp_max).exp()


def nce_bernoulli_loss(logits_in, labels, logits_out):
    """K-binary-classifier Bernoulli loss against generated samples.

    For each class k: minus the mean log sigmoid of logit k over the real
    samples labeled k, minus the mean log(1 - sigmoid) of logit k over
    all generated samples; summed over classes.  A class absent from the
    real batch contributes only its generated-sample term.
    """
    n, k = logits_in.data.shape
    m = logits_out.data.shape[0]
    if n == 0:
        raise ValueError("empty in-distribution batch")
    if m == 0:
        raise ValueError("empty generated batch")
    labels = np.asarray(labels)
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must be (N,) ints in [0, {k}), got shape {labels.shape}")

    onehot = np.zeros((n, k), dtype=logits_in.data.dtype)
    onehot[np.arange(n), labels] = 1.0
    counts = onehot.sum(axis=0)
    inv_counts = 1.0 / np.maximum(counts, 1.0)

    in_means = (log_sigmoid(logits_in) * onehot).sum(axis=0) * inv_counts
    out_means = log_one_minus_sigmoid(logits_out).mean(axis=0)
    return -(in_means + out_means).sum()


def misclassification_kl(alpha, labels, kl_mode="attenuated"):
    """Per-sample weighted KL of the off-true-class Dirichlet to uniform.

    Removes the true-class component of alpha and computes
    KL(Dirichlet(alpha_rest) || Dirichlet(1)) in closed form, scaled by
    beta = 1 - alpha_y/S (detached) in "attenuated" mode or 1.0 in
    "fixed" mode.  Returns a length-N tensor.
    """
    n, k = alpha.data.shape
    if k < 2:
        raise ValueError("need at least two classes")
    labels = np.asarray(labels)
    rest = drop_column(alpha, labels)                       # (N, K-1)
    s_rest = rest.sum(axis=-1, keepdims=True)               # (N, 1)
    kl = (
        s_rest.log_gamma().sum(axis=-1)
        - rest.log_gamma().sum(axis=-1)
        - float(gammaln(k - 1))
        + ((rest - 1.0) * (rest.digamma() - s_rest.digamma())).sum(axis=-1)
    )
    if kl_mode == "attenuated":
        p_true = take_column(alpha, labels) / alpha.sum(axis=-1)
        beta = (1.0 - p_true).detach()
        return beta * kl
    if kl_mode == "fixed":
        return kl
    raise ValueError(f"unknown kl_mode {kl_mode!r}")


def evidential_loss(logits_in, labels, logits_out, config=LossConfig()):
    """Bernoulli loss plus the mean misclassification regularizer.

    The regularizer is evaluated on real samples only; generated samples
    enter solely through the Bernoulli term.
    """
    n = logits_in.data.shape[0]
    m = logits_out.data.shape[0]
    if n and m != int(round(n * config.sample_ratio)):
        raise ValueError(
            f"generated batch of {m} does not match {n} real samples at ratio {config.sample_ratio}"
        )
    discrimination = nce_bernoulli_loss(logits_in, labels, logits_out)
    evidence = evidence_from_logits(logits_in, config.clamp_max)
    alpha = evidence + 1.0
    regularizer = misclassification_kl(alpha, labels, config.kl_mode).mean()
    return discrimination + regularizer


# -- generative-side objectives ---------------------------------------------


def gaussian_kl(mu, logvar):
    """Per-sample KL( N(mu, diag exp(logvar)) || N(0, I) ), shape (N,)."""
    return (0.5 * (mu * mu + logvar.exp() - logvar - 1.0)).sum(axis=-1)


def bernoulli_loglik(logits, targets):
    """Per-sample Bernoulli log likelihood from decoder logits, shape (N,)."""
    t = np.asarray(targets, dtype=logits.data.dtype).reshape(logits.data.shape)
    n = logits.data.shape[0]
    per_pixel = log_sigmoid(logits) * t + log_one_minus_sigmoid(logits) * (1.0 - t)
    return per_pixel.reshape(n, -1).sum(axis=-1)


def gaussian_loglik(mean, targets, variance=1.0):
    """Per-sample isotropic Gaussian log likelihood (constant dropped)."""
    t = np.asarray(targets, dtype=mean.data.dtype).reshape(mean.data.shape)
    n = mean.data.shape[0]
    diff = mean - t
    return (diff * diff).reshape(n, -1).sum(axis=-1) * (-0.5 / variance)


def sample_latent(mu, logvar, noise):
    """Reparameterized draw z = mu + exp(logvar / 2) * noise."""
    return mu + (logvar * 0.5).exp() * noise


def vae_elbo(x, encoder, decoder, likelihood, noise, likelihood_variance=1.0):
    """Mean evidence lower bound with one reparameterized sample per datum.

    Returns (elbo, z).  `noise` is a fixed standard-normal array of shape
    (N, latent_dim) so the graph is deterministic given its inputs;
    `likelihood` selects the decoder output model ("bernoulli" for [0,1]
    images behind a sigmoid, "gaussian" with the given variance
    otherwise).
    """
    mu, logvar = encoder.encode(x)
    if not (np.all(np.isfinite(mu.data)) and np.all(np.isfinite(logvar.data))):
        raise ValueError("encoder produced non-finite outputs")
    z = sample_latent(mu, logvar, Tensor(np.asarray(noise, dtype=mu.data.dtype)))
    if likelihood == "bernoulli":
        loglik = bernoulli_loglik(decoder.forward_logits(z), _as_array(x))
    elif likelihood == "gaussian":
        loglik = gaussian_loglik(decoder.forward(z), _as_array(x), likelihood_variance)
    else:
        raise ValueError(f"unknown likelihood {likelihood!r}")
    return (loglik - gaussian_kl(mu, logvar)).mean(), z


def _as_array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def perturb_latent(perturber, z, noise):
    """Latent displacement eps = G(z) * noise with G's softplus output read
    as a per-dimension standard deviation; returns (eps, z + eps)."""
    sigma = perturber.forward(z)
    eps = sigma * Tensor(np.asarray(noise, dtype=sigma.data.dtype))
    return eps, z + eps


def generator_objective(z_perturbed, x_decoded, disc_input, disc_latent):
    """Mean of log D'(z + eps) + log(1 - D(x_bar)); maximized over the
    perturbation net, which the inputs must be differentiable against."""
    latent_term = log_sigmoid(disc_latent.forward_logits(z_perturbed)).mean()
    input_term = log_one_minus_sigmoid(disc_input.forward_logits(x_decoded)).mean()
    return latent_term + input_term


def latent_discriminator_objective(disc_latent, z_real, z_fake):
    """Mean of log D'(z) + log(1 - D'(z + eps)); maximized over D'."""
    real = log_sigmoid(disc_latent.forward_logits(z_real)).mean()
    fake = log_one_minus_sigmoid(disc_latent.forward_logits(z_fake)).mean()
    return real + fake


def input_discriminator_objective(disc_input, x_real, x_fake):
    """Mean of log D(x) + log(1 - D(x_bar)); maximized over D."""
    real = log_sigmoid(disc_input.forward_logits(x_real)).mean()
    fake = log_one_minus_sigmoid(disc_input.forward_logits(x_fake)).mean()
    return real + fake
