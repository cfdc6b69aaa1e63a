"""Network construction, initialization, persistence, and presets.

Networks are declared as ordered layer specs (conv / maxpool / dense /
deconv with an activation each), validated by shape inference at build
time, and initialized Glorot-uniform from a single seeded generator.
Checkpoints are a binary format with named float32 parameter blocks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

__all__ = [
    "LayerSpec",
    "Network",
    "Encoder",
    "GenerativeStack",
    "build_network",
    "build_classifier",
    "build_generative_stack",
    "classifier_spec",
    "save_checkpoint",
    "load_checkpoint",
    "load_into",
    "CheckpointError",
]

CHECKPOINT_MAGIC = b"GENCKPT1"

ACTIVATIONS = ("relu", "sigmoid", "softplus", "none")


@dataclass(frozen=True)
class LayerSpec:
    """One layer: kind in (conv, maxpool, dense, deconv) plus its geometry."""

    kind: str
    width: int = 0          # filters (conv/deconv) or neurons (dense)
    patch: int = 0          # square kernel size
    stride: int = 1
    activation: str = "none"

    def __post_init__(self):
        if self.kind not in ("conv", "maxpool", "dense", "deconv"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def _apply_activation(x, activation):
    if activation == "relu":
        return x.relu()
    if activation == "sigmoid":
        return x.sigmoid()
    if activation == "softplus":
        return x.softplus()
    return x


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Network:
    """A feed-forward stack of layers built from a spec.

    Parameters live in `params` (name -> Tensor, requires_grad=True).
    `forward` applies every layer; `forward_logits` skips the final
    layer's activation (used where a pre-sigmoid logit is needed for
    numerically stable losses).
    """

    def __init__(self, spec, input_shape, rng, dtype=np.float32):
        self.spec = list(spec)
        self.input_shape = tuple(input_shape)
        self.dtype = dtype
        self.params = {}
        self._layers = []  # (spec, weight name or None)

        shape = tuple(input_shape)
        for i, layer in enumerate(self.spec):
            if layer.kind == "dense":
                fan_in = int(np.prod(shape))
                w = _glorot(rng, (fan_in, layer.width), fan_in, layer.width, dtype)
                b = np.zeros(layer.width, dtype=dtype)
                self.params[f"layer{i}.dense.w"] = Tensor(w, requires_grad=True)
                self.params[f"layer{i}.dense.b"] = Tensor(b, requires_grad=True)
                shape = (layer.width,)
            elif layer.kind == "conv":
                if len(shape) != 3:
                    raise ShapeError(f"layer {i} (conv): needs H,W,C input, have {shape}")
                h, wd, c = shape
                k = layer.patch
                if h < k or wd < k:
                    raise ShapeError(f"layer {i} (conv): {k}x{k} kernel exceeds input {shape}")
                fan_in, fan_out = k * k * c, k * k * layer.width
                w = _glorot(rng, (k, k, c, layer.width), fan_in, fan_out, dtype)
                b = np.zeros(layer.width, dtype=dtype)
                self.params[f"layer{i}.conv.w"] = Tensor(w, requires_grad=True)
                self.params[f"layer{i}.conv.b"] = Tensor(b, requires_grad=True)
                shape = ((h - k) // layer.stride + 1, (wd - k) // layer.stride + 1, layer.width)
            elif layer.kind == "deconv":
                if len(shape) != 3:
                    raise ShapeError(f"layer {i} (deconv): needs H,W,C input, have {shape}")
                h, wd, c = shape
                k = layer.patch
                fan_in, fan_out = k * k * c, k * k * layer.width
                w = _glorot(rng, (k, k, layer.width, c), fan_in, fan_out, dtype)
                b = np.zeros(layer.width, dtype=dtype)
                self.params[f"layer{i}.deconv.w"] = Tensor(w, requires_grad=True)
                self.params[f"layer{i}.deconv.b"] = Tensor(b, requires_grad=True)
                shape = ((h - 1) * layer.stride + k, (wd - 1) * layer.stride + k, layer.width)
            elif layer.kind == "maxpool":
                if len(shape) != 3:
                    raise ShapeError(f"layer {i} (maxpool): needs H,W,C input, have {shape}")
                h, wd, c = shape
                if h % 2 or wd % 2:
                    raise ShapeError(f"layer {i} (maxpool): odd spatial dims {shape}")
                shape = (h // 2, wd // 2, c)
            self._layers.append((layer, i))
        self.output_shape = shape

    def _run(self, x, skip_last_activation):
        n = x.data.shape[0]
        last = len(self.spec) - 1
        for layer, i in self._layers:
            if layer.kind == "dense":
                if x.data.ndim > 2:
                    x = x.reshape(n, -1)
                x = x @ self.params[f"layer{i}.dense.w"] + self.params[f"layer{i}.dense.b"]
            elif layer.kind == "conv":
                x = ad.conv2d(x, self.params[f"layer{i}.conv.w"], stride=layer.stride)
                x = x + self.params[f"layer{i}.conv.b"]
            elif layer.kind == "deconv":
                x = ad.conv_transpose2d(x, self.params[f"layer{i}.deconv.w"], stride=layer.stride)
                x = x + self.params[f"layer{i}.deconv.b"]
            elif layer.kind == "maxpool":
                x = ad.maxpool2x2(x)
            if not (skip_last_activation and i == last):
                x = _apply_activation(x, layer.activation)
        return x

    def forward(self, x):
        x = self._as_input(x)
        return self._run(x, skip_last_activation=False)

    def forward_logits(self, x):
        """Forward pass that leaves the final layer's activation off."""
        x = self._as_input(x)
        return self._run(x, skip_last_activation=True)

    def _as_input(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if tuple(x.data.shape[1:]) != self.input_shape:
            # dense-first networks accept flattened input too
            if not (self.spec[0].kind == "dense"
                    and int(np.prod(x.data.shape[1:])) == int(np.prod(self.input_shape))):
                raise ShapeError(
                    f"input shape {x.data.shape[1:]} does not match network input {self.input_shape}"
                )
        return x

    def dense_weight_names(self):
        return [name for name in self.params if name.endswith("dense.w")]

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def set_params(self, values):
        for name, arr in values.items():
            if name not in self.params:
                raise CheckpointError(f"unknown parameter {name!r}")
            p = self.params[name]
            if tuple(arr.shape) != tuple(p.data.shape):
                raise CheckpointError(
                    f"shape mismatch for {name!r}: checkpoint {arr.shape} vs model {p.data.shape}"
                )
            p.data = arr.astype(self.dtype)


@dataclass
class Encoder:
    """Gaussian recognition network: shared trunk with mean / log-variance heads."""

    trunk: Network
    head_mu: Network
    head_logvar: Network

    def encode(self, x):
        h = self.trunk.forward(x)
        return self.head_mu.forward(h), self.head_logvar.forward(h)

    @property
    def params(self):
        out = {}
        for prefix, net in (("trunk", self.trunk), ("mu", self.head_mu), ("logvar", self.head_logvar)):
            for name, p in net.params.items():
                out[f"{prefix}.{name}"] = p
        return out


@dataclass
class GenerativeStack:
    """VAE encoder/decoder, perturbation net, and the two discriminators.

    The perturbation net maps a latent code z to a strictly positive
    vector (softplus output) read as the per-dimension standard deviation
    of the latent displacement noise.  Both discriminators end in a
    sigmoid, so their `forward` outputs lie in (0, 1).
    """

    encoder: Encoder
    decoder: Network
    perturber: Network
    disc_input: Network
    disc_latent: Network
    latent_dim: int
    input_shape: tuple
    likelihood: str = "bernoulli"       # decoder output model: bernoulli | gaussian
    likelihood_variance: float = 1.0    # gaussian likelihood only

    def named_params(self):
        out = {}
        groups = (
            ("encoder", self.encoder.params),
            ("decoder", self.decoder.params),
            ("perturber", self.perturber.params),
            ("disc_input", self.disc_input.params),
            ("disc_latent", self.disc_latent.params),
        )
        for prefix, params in groups:
            for name, p in params.items():
                out[f"{prefix}.{name}"] = p
        return out


# -- presets ---------------------------------------------------------------


def classifier_spec(preset, n_classes):
    """Layer stack of the classifier for a named preset."""
    if preset == "toy":
        return [
            LayerSpec("dense", 64, activation="relu"),
            LayerSpec("dense", 64, activation="relu"),
            LayerSpec("dense", n_classes, activation="none"),
        ]
    if preset == "mnist":
        return [
            LayerSpec("conv", 20, patch=5, activation="relu"),
            LayerSpec("maxpool", patch=2, stride=2),
            LayerSpec("conv", 50, patch=5, activation="relu"),
            LayerSpec("maxpool", patch=2, stride=2),
            LayerSpec("dense", 500, activation="relu"),
            LayerSpec("dense", n_classes, activation="none"),
        ]
    if preset == "cifar-like":
        return [
            LayerSpec("conv", 192, patch=5, activation="relu"),
            LayerSpec("maxpool", patch=2, stride=2),
            LayerSpec("conv", 192, patch=5, activation="relu"),
            LayerSpec("maxpool", patch=2, stride=2),
            LayerSpec("dense", 1000, activation="relu"),
            LayerSpec("dense", n_classes, activation="none"),
        ]
    raise ValueError(f"unknown preset {preset!r}")


def preset_input_shape(preset):
    return {"toy": (2,), "mnist": (28, 28, 1), "cifar-like": (32, 32, 3)}[preset]


def default_latent_dim(preset):
    return 2 if preset == "toy" else 50


def build_network(spec, input_shape, seed, dtype=np.float32):
    """Build from a spec; `seed` is an int or an existing Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Network(spec, input_shape, rng, dtype=dtype)


def build_classifier(preset, n_classes, seed, dtype=np.float32):
    """Classifier network for the preset; outputs K raw logits."""
    spec = classifier_spec(preset, n_classes)
    if spec[-1].activation != "none":
        raise ValueError("classifier head must emit raw logits")
    return build_network(spec, preset_input_shape(preset), seed, dtype=dtype)


def _perturber_spec(latent_dim):
    return [
        LayerSpec("dense", 32, activation="relu"),
        LayerSpec("dense", 32, activation="relu"),
        LayerSpec("dense", 32, activation="relu"),
        LayerSpec("dense", latent_dim, activation="softplus"),
    ]


def _latent_disc_spec():
    return [
        LayerSpec("dense", 32, activation="relu"),
        LayerSpec("dense", 32, activation="relu"),
        LayerSpec("dense", 32, activation="relu"),
        LayerSpec("dense", 1, activation="sigmoid"),
    ]


def build_generative_stack(preset, seed, latent_dim=None, dtype=np.float32):
    """All five generative-side networks with independent parameters.

    The encoder trunk mirrors the classifier trunk; the input-space
    discriminator repeats the classifier trunk with a 1-unit sigmoid head;
    the latent discriminator repeats the perturbation net's trunk.
    """
    if latent_dim is None:
        latent_dim = default_latent_dim(preset)
    if latent_dim < 1:
        raise ValueError("latent_dim must be >= 1")
    rng = np.random.default_rng(seed)
    input_shape = preset_input_shape(preset)

    if preset == "toy":
        trunk_spec = [LayerSpec("dense", 64, activation="relu"),
                      LayerSpec("dense", 64, activation="relu")]
        decoder_spec = [LayerSpec("dense", 64, activation="relu"),
                        LayerSpec("dense", 64, activation="relu"),
                        LayerSpec("dense", 2, activation="none")]
        likelihood = "gaussian"
        # Broad decoder noise: the contrastive reference must blanket the
        # neighborhood of the data, not just retrace reconstructions.
        likelihood_variance = 8.0
    elif preset == "mnist":
        trunk_spec = [
            LayerSpec("conv", 20, patch=5, activation="relu"),
            LayerSpec("maxpool", patch=2, stride=2),
            LayerSpec("conv", 50, patch=5, activation="relu"),
            LayerSpec("maxpool", patch=2, stride=2),
            LayerSpec("dense", 500, activation="relu"),
        ]
        decoder_spec = [
            LayerSpec("dense", 500, activation="relu"),
            LayerSpec("dense", 800, activation="relu"),
            # reshaped to 4x4x50 before the transposed convolutions
            LayerSpec("deconv", 20, patch=6, stride=2, activation="relu"),
            LayerSpec("deconv", 1, patch=6, stride=2, activation="sigmoid"),
        ]
        likelihood = "bernoulli"
        likelihood_variance = 1.0
    elif preset == "cifar-like":
        trunk_spec = [
            LayerSpec("conv", 192, patch=5, activation="relu"),
            LayerSpec("maxpool", patch=2, stride=2),
            LayerSpec("conv", 192, patch=5, activation="relu"),
            LayerSpec("maxpool", patch=2, stride=2),
            LayerSpec("dense", 1000, activation="relu"),
        ]
        decoder_spec = [
            LayerSpec("dense", 1000, activation="relu"),
            LayerSpec("dense", 4800, activation="relu"),
            LayerSpec("deconv", 64, patch=4, stride=2, activation="relu"),
            LayerSpec("deconv", 3, patch=10, stride=2, activation="sigmoid"),
        ]
        likelihood = "bernoulli"
        likelihood_variance = 1.0
    else:
        raise ValueError(f"unknown preset {preset!r}")

    trunk = Network(trunk_spec, input_shape, rng, dtype=dtype)
    feat = trunk.output_shape
    head_mu = Network([LayerSpec("dense", latent_dim)], feat, rng, dtype=dtype)
    head_logvar = Network([LayerSpec("dense", latent_dim)], feat, rng, dtype=dtype)
    encoder = Encoder(trunk, head_mu, head_logvar)

    decoder = _build_decoder(preset, decoder_spec, latent_dim, rng, dtype)
    perturber = Network(_perturber_spec(latent_dim), (latent_dim,), rng, dtype=dtype)
    disc_input = Network(trunk_spec + [LayerSpec("dense", 1, activation="sigmoid")],
                         input_shape, rng, dtype=dtype)
    disc_latent = Network(_latent_disc_spec(), (latent_dim,), rng, dtype=dtype)

    return GenerativeStack(encoder, decoder, perturber, disc_input, disc_latent,
                           latent_dim, input_shape, likelihood, likelihood_variance)


class _DecoderNet(Network):
    """Decoder whose dense part is reshaped to a feature map before deconvs."""

    def __init__(self, spec, latent_dim, reshape_to, rng, dtype):
        self._reshape_to = reshape_to
        dense_part = [l for l in spec if l.kind == "dense"]
        deconv_part = [l for l in spec if l.kind == "deconv"]
        self._front = Network(dense_part, (latent_dim,), rng, dtype=dtype)
        self._back = Network(deconv_part, reshape_to, rng, dtype=dtype) if deconv_part else None
        self.spec = list(spec)
        self.input_shape = (latent_dim,)
        self.dtype = dtype
        self.output_shape = self._back.output_shape if self._back else self._front.output_shape

    @property
    def params(self):
        out = {f"front.{k}": v for k, v in self._front.params.items()}
        if self._back:
            out.update({f"back.{k}": v for k, v in self._back.params.items()})
        return out

    def _run_parts(self, x, skip_last_activation):
        n = x.data.shape[0]
        if self._back is None:
            return self._front._run(x, skip_last_activation)
        h = self._front._run(x, False)
        h = h.reshape((n,) + self._reshape_to)
        return self._back._run(h, skip_last_activation)

    def forward(self, x):
        return self._run_parts(self._as_input(x), False)

    def forward_logits(self, x):
        return self._run_parts(self._as_input(x), True)

    def dense_weight_names(self):
        return [f"front.{n}" for n in self._front.dense_weight_names()]

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def set_params(self, values):
        for name, arr in values.items():
            if name not in self.params:
                raise CheckpointError(f"unknown parameter {name!r}")
            p = self.params[name]
            if tuple(arr.shape) != tuple(p.data.shape):
                raise CheckpointError(
                    f"shape mismatch for {name!r}: checkpoint {arr.shape} vs model {p.data.shape}"
                )
            p.data = arr.astype(self.dtype)


def _build_decoder(preset, decoder_spec, latent_dim, rng, dtype):
    if preset == "toy":
        return Network(decoder_spec, (latent_dim,), rng, dtype=dtype)
    reshape_to = (4, 4, 50) if preset == "mnist" else (5, 5, 192)
    return _DecoderNet(decoder_spec, latent_dim, reshape_to, rng, dtype)


# -- checkpoint I/O ----------------------------------------------------------


class CheckpointError(ValueError):
    """Raised for malformed checkpoint files or model/shape mismatches."""


def save_checkpoint(path, params, seed=0, step=0):
    """Write named parameter blocks as float32 little-endian.

    Layout: 8-byte magic, u64 seed, u64 step, u32 block count, then per
    block: u32 name length, name bytes, u32 rank, rank u32 extents, raw
    float32 payload.
    """
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<QQI", seed, step, len(params)))
        for name in sorted(params):
            arr = params[name]
            data = (arr.data if isinstance(arr, Tensor) else np.asarray(arr)).astype("<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (params dict of float32 arrays, seed, step)."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        header = f.read(20)
        if len(header) != 20:
            raise CheckpointError(f"{path}: truncated header at offset {f.tell()}")
        seed, step, count = struct.unpack("<QQI", header)
        params = {}
        for _ in range(count):
            raw = f.read(4)
            if len(raw) != 4:
                raise CheckpointError(f"{path}: truncated block header at offset {f.tell()}")
            (name_len,) = struct.unpack("<I", raw)
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
            n_bytes = int(np.prod(shape, dtype=np.int64)) * 4
            payload = f.read(n_bytes)
            if len(payload) != n_bytes:
                raise CheckpointError(
                    f"{path}: truncated payload for {name!r} at offset {f.tell()}"
                )
            params[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return params, seed, step


def load_into(target, path):
    """Load a checkpoint into a Network, Encoder, or GenerativeStack."""
    params, seed, step = load_checkpoint(path)
    if isinstance(target, GenerativeStack):
        model_params = target.named_params()
    elif isinstance(target, Encoder):
        model_params = target.params
    else:
        model_params = target.params
    if set(params) != set(model_params):
        missing = sorted(set(model_params) - set(params))
        extra = sorted(set(params) - set(model_params))
        raise CheckpointError(
            f"{path}: parameter names disagree with the model "
            f"(missing {missing[:3]}..., unexpected {extra[:3]}...)"
            if missing or extra else f"{path}: parameter names disagree"
        )
    for name, arr in params.items():
        p = model_params[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise CheckpointError(
                f"{path}: shape mismatch for {name!r}: checkpoint {arr.shape} vs model {tuple(p.data.shape)}"
            )
        p.data = arr.astype(p.data.dtype)
    return seed, step
