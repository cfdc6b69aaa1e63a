import numpy as np
import pytest

from evidgen import nets
from evidgen.autodiff import ShapeError, Tensor
from evidgen.nets import LayerSpec


def test_mnist_classifier_shapes_layer_by_layer():
    spec = nets.classifier_spec("mnist", 10)
    # walk prefixes of the spec and check every intermediate shape
    expected = [
        (24, 24, 20),   # conv 5x5, 20 filters
        (12, 12, 20),   # pool
        (8, 8, 50),     # conv 5x5, 50 filters
        (4, 4, 50),     # pool -> 800 flat
        (500,),
        (10,),
    ]
    for i, want in enumerate(expected):
        net = nets.build_network(spec[: i + 1], (28, 28, 1), seed=0)
        assert net.output_shape == want

    full = nets.build_classifier("mnist", 10, seed=0)
    fc1 = full.params["layer4.dense.w"]
    assert fc1.data.shape[0] == 800


def test_toy_classifier_forward_shape_and_finiteness():
    net = nets.build_classifier("toy", 2, seed=1)
    for n in (1, 7, 33):
        out = net.forward(np.random.default_rng(n).normal(size=(n, 2))).data
        assert out.shape == (n, 2)
        assert np.all(np.isfinite(out))


def test_cifar_like_classifier_dimensions():
    net = nets.build_classifier("cifar-like", 10, seed=0)
    assert net.params["layer0.conv.w"].data.shape == (5, 5, 3, 192)
    assert net.params["layer4.dense.w"].data.shape == (4800, 1000)


def test_same_seed_same_params_different_seed_differs():
    a = nets.build_classifier("toy", 2, seed=42)
    b = nets.build_classifier("toy", 2, seed=42)
    c = nets.build_classifier("toy", 2, seed=43)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
    assert any(
        not np.array_equal(a.params[name].data, c.params[name].data) for name in a.params
    )


def test_non_composing_spec_names_offending_layer():
    bad = [LayerSpec("conv", 8, patch=5, activation="relu")]
    with pytest.raises(ShapeError, match="layer 0"):
        nets.build_network(bad, (4, 4, 1), seed=0)

    odd_pool = [LayerSpec("conv", 4, patch=4, activation="relu"), LayerSpec("maxpool")]
    with pytest.raises(ShapeError, match="layer 1"):
        nets.build_network(odd_pool, (8, 8, 1), seed=0)


def test_generative_stack_structure_mnist():
    stack = nets.build_generative_stack("mnist", seed=0)
    assert stack.latent_dim == 50
    # perturbation net: 50 -> 32 -> 32 -> 32 -> 50 with softplus output
    widths = [l.width for l in stack.perturber.spec]
    assert widths == [32, 32, 32, 50]
    assert stack.perturber.spec[-1].activation == "softplus"
    assert stack.decoder.output_shape == (28, 28, 1)

    rng = np.random.default_rng(0)
    mu, logvar = stack.encoder.encode(rng.normal(size=(3, 28, 28, 1)).astype(np.float32))
    assert mu.data.shape == (3, 50)
    assert logvar.data.shape == (3, 50)


def test_perturber_output_strictly_positive():
    stack = nets.build_generative_stack("toy", seed=3)
    rng = np.random.default_rng(0)
    z = rng.normal(size=(10_000, stack.latent_dim)).astype(np.float32)
    out = stack.perturber.forward(z).data
    assert out.min() > 0.0


def test_discriminator_outputs_in_unit_interval():
    stack = nets.build_generative_stack("toy", seed=4)
    rng = np.random.default_rng(1)
    dz = stack.disc_latent.forward(rng.normal(size=(256, 2)).astype(np.float32)).data
    dx = stack.disc_input.forward(rng.normal(size=(256, 2)).astype(np.float32)).data
    for out in (dz, dx):
        assert np.all(out > 0.0) and np.all(out < 1.0)


def test_stack_subnets_have_independent_parameters():
    stack = nets.build_generative_stack("toy", seed=5)
    # encoder trunk and input discriminator share the architecture, not weights
    enc_w = stack.encoder.trunk.params["layer0.dense.w"].data
    disc_w = stack.disc_input.params["layer0.dense.w"].data
    assert enc_w.shape == disc_w.shape
    assert not np.array_equal(enc_w, disc_w)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    net = nets.build_classifier("toy", 2, seed=7)
    x = np.random.default_rng(0).normal(size=(5, 2)).astype(np.float32)
    before = net.forward(x).data.copy()

    path = tmp_path / "net.ckpt"
    nets.save_checkpoint(path, net.params, seed=7, step=123)

    other = nets.build_classifier("toy", 2, seed=99)
    seed, step = nets.load_into(other, path)
    assert (seed, step) == (7, 123)
    after = other.forward(x).data
    np.testing.assert_array_equal(before, after)


def test_checkpoint_roundtrip_stack(tmp_path):
    stack = nets.build_generative_stack("toy", seed=8)
    path = tmp_path / "stack.ckpt"
    nets.save_checkpoint(path, stack.named_params(), seed=8, step=0)
    other = nets.build_generative_stack("toy", seed=1234)
    nets.load_into(other, path)
    for name, p in stack.named_params().items():
        np.testing.assert_array_equal(p.data, other.named_params()[name].data)


def test_checkpoint_bad_magic_names_file(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTCKPT0" + b"\x00" * 32)
    with pytest.raises(nets.CheckpointError, match="bad.ckpt"):
        nets.load_checkpoint(path)


def test_checkpoint_truncation_detected(tmp_path):
    net = nets.build_classifier("toy", 2, seed=0)
    path = tmp_path / "net.ckpt"
    nets.save_checkpoint(path, net.params)
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(nets.CheckpointError, match="truncated"):
        nets.load_checkpoint(path)


def test_checkpoint_class_count_mismatch_is_shape_error(tmp_path):
    ten = nets.build_classifier("toy", 10, seed=0)
    path = tmp_path / "k10.ckpt"
    nets.save_checkpoint(path, ten.params)
    five = nets.build_classifier("toy", 5, seed=0)
    with pytest.raises(nets.CheckpointError, match="shape mismatch"):
        nets.load_into(five, path)


def test_input_shape_mismatch_rejected():
    net = nets.build_classifier("mnist", 10, seed=0)
    with pytest.raises(ShapeError, match="input shape"):
        net.forward(np.zeros((2, 27, 27, 1), dtype=np.float32))


def test_decoder_spatial_path_mnist():
    stack = nets.build_generative_stack("mnist", seed=0)
    z = np.random.default_rng(0).normal(size=(2, 50)).astype(np.float32)
    out = stack.decoder.forward(z).data
    assert out.shape == (2, 28, 28, 1)
    assert out.min() >= 0.0 and out.max() <= 1.0
