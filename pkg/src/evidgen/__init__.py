"""Evidential classification with generated out-of-distribution training data.

Pipeline: a VAE + perturbation-generator + dual-discriminator stack
synthesizes out-of-distribution samples; a classifier trained against them
outputs per-class evidence parameterizing a Dirichlet posterior, whose
entropy / total uncertainty drive the evaluation harness (entropy ECDFs,
adversarial sweeps, anomaly AUROC, decision-boundary maps).
"""

__version__ = "0.1.0"
