"""Shared fixtures: the trained toy pipeline, a real-handwritten-digits
image pipeline (sklearn digits upscaled to 28x28), and MNIST IDX paths
when the files are available locally.

MNIST is looked up under $GEN_MNIST_DIR or ./data/mnist; tests that need
it skip with an explicit message otherwise.
"""

import os

import numpy as np
import pytest

from evidgen import nets, oodgen, trainer
from evidgen.data import Dataset, apply_split, load_idx, make_toy

TOY_SEED = 7

MNIST_FILES = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


def _find_mnist():
    root = os.environ.get("GEN_MNIST_DIR", os.path.join(os.getcwd(), "data", "mnist"))
    found = {}
    for key, names in MNIST_FILES.items():
        for name in names:
            for candidate in (os.path.join(root, name), os.path.join(root, name + ".gz")):
                if os.path.exists(candidate):
                    found[key] = candidate
                    break
            if key in found:
                break
        if key not in found:
            return None
    return found


@pytest.fixture(scope="session")
def mnist_paths():
    paths = _find_mnist()
    if paths is None:
        pytest.skip(
            "MNIST IDX files not found (set GEN_MNIST_DIR or place the four "
            "canonical files under ./data/mnist); this environment has no way "
            "to download them"
        )
    return paths


@pytest.fixture(scope="session")
def toy_pipeline():
    """The full toy run used by the acceptance gate: 2000 generative
    iterations plus 200 classifier epochs at seed 7."""
    train = make_toy(100, seed=TOY_SEED)
    test = make_toy(100, seed=TOY_SEED + 1000, split="test")

    stack = nets.build_generative_stack("toy", seed=TOY_SEED)
    gen_config = oodgen.GenTrainConfig(iterations=2000, batch_size=100,
                                       learning_rate=1e-3, seed=TOY_SEED)
    gen_log = oodgen.train_generative_stack(train, stack, gen_config)

    net = nets.build_classifier("toy", 2, seed=TOY_SEED)
    source = oodgen.ood_batch_source(stack, train, np.random.default_rng(TOY_SEED))
    train_config = trainer.TrainConfig(epochs=200, batch_size=64, seed=TOY_SEED)
    clf_log = trainer.train_classifier(train, source, net, train_config, test_data=test)

    return {
        "train": train,
        "test": test,
        "stack": stack,
        "net": net,
        "gen_log": gen_log,
        "clf_log": clf_log,
        "gen_config": gen_config,
        "train_config": train_config,
    }


def _upscaled_digits():
    from scipy import ndimage
    from sklearn.datasets import load_digits

    digits = load_digits()
    imgs = ndimage.zoom(digits.images / 16.0, (1, 3.5, 3.5), order=1).clip(0.0, 1.0)
    imgs = imgs[..., None].astype(np.float32)
    rng = np.random.default_rng(0)
    order = rng.permutation(len(imgs))
    split = 1437
    train = Dataset(imgs[order[:split]], digits.target[order[:split]], bounds=(0.0, 1.0))
    test = Dataset(imgs[order[split:]], digits.target[order[split:]], bounds=(0.0, 1.0),
                   split="test")
    return train, test


@pytest.fixture(scope="session")
def digits_pipeline():
    """Image-scale pipeline on real handwritten digits (8x8 upscaled to
    28x28): first five classes in-distribution, last five held out.

    Exercises the exact architecture and training path that the MNIST
    profiles use, at a budget the test suite can afford.
    """
    full_train, full_test = _upscaled_digits()
    train_in, _ = apply_split(full_train, range(5), range(5, 10))
    test_in, test_out = apply_split(full_test, range(5), range(5, 10))

    stack = nets.build_generative_stack("mnist", seed=1)
    gen_config = oodgen.GenTrainConfig(iterations=600, batch_size=64, seed=1)
    oodgen.train_generative_stack(train_in, stack, gen_config)

    net = nets.build_classifier("mnist", 5, seed=1)
    source = oodgen.ood_batch_source(stack, train_in, np.random.default_rng(1))
    clf_log = trainer.train_classifier(
        train_in, source, net, trainer.TrainConfig(epochs=4, batch_size=64, seed=1),
        test_data=test_in)

    return {
        "train_in": train_in,
        "test_in": test_in,
        "test_out": test_out,
        "stack": stack,
        "net": net,
        "clf_log": clf_log,
    }
