"""Training loop for the generative stack and the out-of-distribution sampler.

Each iteration takes one optimizer step per phase, in order: VAE (ELBO
plus the latent discriminator's fake term, which adapts the latent space
to the perturbations), latent discriminator, input discriminator, then
the perturbation generator.  A frozen trained stack then serves as the
source of generated samples for classifier training.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .autodiff import Tensor, backward, no_grad
from .data import Dataset
from .optim import Adam
from .pgm import tile_images, write_pgm

__all__ = ["GenTrainConfig", "OodSample", "train_generative_stack", "sample_ood", "ood_batch_source"]


@dataclass(frozen=True)
class GenTrainConfig:
    """Budget and cadence for generative-stack training."""

    iterations: int = 2000
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    snapshot_every: int = 0          # 0 disables snapshots
    vae_steps: int = 1
    dprime_steps: int = 1
    d_steps: int = 1
    g_steps: int = 1

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if min(self.vae_steps, self.dprime_steps, self.d_steps, self.g_steps) < 1:
            raise ValueError("per-phase step counts must be >= 1")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("batch_size must be >= 1 and learning_rate > 0")


@dataclass
class OodSample:
    """A generated out-of-distribution exemplar."""

    x: np.ndarray               # decoded sample, within the input domain
    source_index: int           # index of the perturbed training sample
    z_perturbed: np.ndarray     # its displaced latent code


def _encode_sample(stack, x, rng):
    """Draw z ~ q(z|x) as a graph node (gradients reach the encoder)."""
    mu, logvar = stack.encoder.encode(x)
    noise = rng.standard_normal(mu.data.shape).astype(mu.data.dtype)
    return losses.sample_latent(mu, logvar, noise)


def _decode_sample(stack, z, rng):
    """Draw x_bar from the decoder's output distribution at z.

    Gaussian likelihood: mean plus reparameterized noise at the
    likelihood's standard deviation (gradients pass to the mean).
    Bernoulli likelihood: the sigmoid mean itself, which keeps the sample
    in [0, 1] and differentiable.
    """
    mean = stack.decoder.forward(z)
    if stack.likelihood == "gaussian":
        noise = rng.standard_normal(mean.data.shape).astype(mean.data.dtype)
        return mean + Tensor(noise * np.sqrt(stack.likelihood_variance))
    return mean


def train_generative_stack(dataset, stack, config, out_dir=None):
    """Alternating maximization of the four objectives; returns the log.

    The log holds one row per iteration: (iteration, elbo, latent
    discriminator objective, input discriminator objective, generator
    objective).  Any non-finite objective aborts with the iteration index.
    Snapshots of generated samples are written to `out_dir` at the
    configured cadence (PGM grids for images, CSV points for 2D data).
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    train_ss, snap_ss = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(train_ss)
    snap_rng = np.random.default_rng(snap_ss)   # keeps snapshots off the training stream
    dtype = stack.decoder.dtype

    opt_vae = Adam({**{f"enc.{k}": v for k, v in stack.encoder.params.items()},
                    **{f"dec.{k}": v for k, v in stack.decoder.params.items()}},
                   lr=config.learning_rate)
    opt_dprime = Adam(stack.disc_latent.params, lr=config.learning_rate)
    opt_d = Adam(stack.disc_input.params, lr=config.learning_rate)
    opt_g = Adam(stack.perturber.params, lr=config.learning_rate)

    log = []
    for iteration in range(config.iterations):
        idx = rng.choice(len(dataset), size=min(config.batch_size, len(dataset)), replace=False)
        x = Tensor(np.asarray(dataset.inputs[idx], dtype=dtype))

        # VAE phase: ELBO plus the latent discriminator's fake-side term.
        for _ in range(config.vae_steps):
            opt_vae.zero_grad()
            noise = rng.standard_normal((len(idx), stack.latent_dim)).astype(dtype)
            elbo, z = losses.vae_elbo(x, stack.encoder, stack.decoder, stack.likelihood,
                                      noise, stack.likelihood_variance)
            g_noise = rng.standard_normal((len(idx), stack.latent_dim)).astype(dtype)
            _, z_perturbed = losses.perturb_latent(stack.perturber, z, g_noise)
            fake_term = losses.log_one_minus_sigmoid(
                stack.disc_latent.forward_logits(z_perturbed)).mean()
            vae_value = elbo + fake_term
            backward(-vae_value)
            opt_vae.step()

        # Latent discriminator phase.
        for _ in range(config.dprime_steps):
            opt_dprime.zero_grad()
            g_noise = rng.standard_normal((len(idx), stack.latent_dim)).astype(dtype)
            with no_grad():
                z = _encode_sample(stack, x, rng)
                _, z_fake = losses.perturb_latent(stack.perturber, z, g_noise)
            dprime_value = losses.latent_discriminator_objective(
                stack.disc_latent, Tensor(z.data), Tensor(z_fake.data))
            backward(-dprime_value)
            opt_dprime.step()

        # Input discriminator phase.
        for _ in range(config.d_steps):
            opt_d.zero_grad()
            with no_grad():
                z = _encode_sample(stack, x, rng)
                g_noise = rng.standard_normal((len(idx), stack.latent_dim)).astype(dtype)
                _, z_fake = losses.perturb_latent(stack.perturber, z, g_noise)
                x_fake = _decode_sample(stack, z_fake, rng)
            d_value = losses.input_discriminator_objective(
                stack.disc_input, x, Tensor(x_fake.data))
            backward(-d_value)
            opt_d.step()

        # Generator phase: gradients reach the perturbation net through
        # the reparameterized displacement and the decoder.
        for _ in range(config.g_steps):
            opt_g.zero_grad()
            with no_grad():
                z_const = _encode_sample(stack, x, rng)
            g_noise = rng.standard_normal((len(idx), stack.latent_dim)).astype(dtype)
            _, z_perturbed = losses.perturb_latent(stack.perturber, Tensor(z_const.data), g_noise)
            x_decoded = _decode_sample(stack, z_perturbed, rng)
            g_value = losses.generator_objective(z_perturbed, x_decoded,
                                                 stack.disc_input, stack.disc_latent)
            backward(-g_value)
            opt_g.step()

        row = (iteration, float(vae_value.data), float(dprime_value.data),
               float(d_value.data), float(g_value.data))
        if not all(np.isfinite(v) for v in row[1:]):
            raise RuntimeError(f"non-finite objective at iteration {iteration}: {row[1:]}")
        log.append(row)

        if out_dir and config.snapshot_every and (iteration + 1) % config.snapshot_every == 0:
            _write_snapshot(stack, dataset, snap_rng, out_dir, iteration + 1)

    return log


def write_objective_log(log, path):
    with open(path, "w", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["iteration", "vae", "disc_latent", "disc_input", "generator"])
        for row in log:
            writer.writerow([row[0]] + [f"{v:.10g}" for v in row[1:]])


def _write_snapshot(stack, dataset, rng, out_dir, iteration):
    n = min(64, len(dataset))
    idx = rng.choice(len(dataset), size=n, replace=False)
    samples = sample_ood(stack, dataset.inputs[idx], rng, bounds=dataset.bounds)
    xbar = np.stack([s.x for s in samples])
    if xbar.ndim == 4:
        write_pgm(os.path.join(out_dir, f"generated-{iteration:06d}.pgm"), tile_images(xbar))
    else:
        with open(os.path.join(out_dir, f"generated-{iteration:06d}.csv"), "w", newline="\n") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["x", "y"])
            for p in xbar:
                writer.writerow([f"{p[0]:.10g}", f"{p[1]:.10g}"])


def sample_ood(stack, x, rng, bounds=None):
    """Generate one out-of-distribution sample per input.

    z ~ q(z|x), eps ~ N(0, diag(G(z)^2)), x_bar drawn from the decoder's
    output distribution at z + eps.  Results are clipped to `bounds` when
    given (the sigmoid decoder is already in [0, 1]).
    """
    x = np.asarray(x, dtype=stack.decoder.dtype)
    with no_grad():
        mu, logvar = stack.encoder.encode(x)
        noise = rng.standard_normal(mu.data.shape).astype(mu.data.dtype)
        z = losses.sample_latent(mu, logvar, noise)
        g_noise = rng.standard_normal((x.shape[0], stack.latent_dim)).astype(mu.data.dtype)
        _, z_perturbed = losses.perturb_latent(stack.perturber, z, g_noise)
        xbar = _decode_sample(stack, z_perturbed, rng).data
    if bounds is not None:
        xbar = np.clip(xbar, bounds[0], bounds[1])
    return [OodSample(xbar[i], int(i), z_perturbed.data[i]) for i in range(len(xbar))]


def ood_batch_source(stack, dataset, rng):
    """Callable n -> (n, ...) array of freshly generated samples, drawn by
    perturbing random training inputs through the frozen stack."""

    def source(n):
        idx = rng.choice(len(dataset), size=min(n, len(dataset)), replace=n > len(dataset))
        samples = sample_ood(stack, dataset.inputs[idx], rng, bounds=dataset.bounds)
        return np.stack([s.x for s in samples])

    return source
