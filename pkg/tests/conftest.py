import time
from pathlib import Path

import numpy as np
import pytest

from diaa.data import load_idx
from diaa.layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU
from diaa.network import Network, mlp, mnist_convnet
from diaa.tensor import forward
from diaa.training import TrainConfig, adversarial_train, train

DATA = Path(__file__).resolve().parent.parent / "data" / "mnist-desk"
TRAIN_IMAGES = DATA / "train-images-idx3-ubyte.gz"
TEST_IMAGES = DATA / "test-images-idx3-ubyte.gz"

DESK_TRAIN = TrainConfig(epochs=20, batch_size=32, lr=1e-3, seed=0)
DESK_CONV = TrainConfig(epochs=2, batch_size=32, lr=1e-3, seed=0)
DESK_ROBUST = TrainConfig(epochs=20, batch_size=32, lr=1e-3, seed=0, adversarial=True, eps_ball=0.1, adv_steps=10)

# seconds spent building session models, read by the acceptance runtime checks
TIMINGS = {}
# (criterion, passed, detail) lines echoed in the terminal summary
ACCEPTANCE = []


def central_differences(f, x, h=1e-4):
    """Independent oracle: (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate."""
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        e = e.reshape(x.shape)
        grad.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


def winning_input(rng, net, tries=100):
    """Random input whose top logit is positive, so the decomposition applies; None if none found."""
    for _ in range(tries):
        x = rng.random(net.input_shape)
        logits = forward(net, x).logits
        if logits.max() > 0:
            return x, int(np.argmax(logits))
    return None


def random_dense(rng, sizes, bias=True, scale=1.0):
    """Dense/ReLU stack with the given layer widths (no trailing ReLU)."""
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.normal(0.0, scale / np.sqrt(a), size=(b, a))
        layers.append(Dense(w, rng.normal(0.0, 0.1, size=b) if bias else np.zeros(b)))
        if i < len(sizes) - 2:
            layers.append(ReLU())
    return Network((sizes[0],), sizes[-1], layers)


def random_mixed(rng, bias=True, classes=3):
    """1-4 weighted layers mixing conv2d, relu, maxpool and dense on small images."""
    c = int(rng.integers(1, 3))
    hw = int(rng.integers(6, 9))
    shape = (c, hw, hw)
    layers = []
    n_conv = int(rng.integers(0, 3))
    for _ in range(n_conv):
        out = int(rng.integers(2, 4))
        k = int(rng.integers(2, 4))
        if shape[1] < k + 1:
            break
        w = rng.normal(0.0, 1.0 / np.sqrt(shape[0] * k * k), size=(out, shape[0], k, k))
        layers += [Conv2D(w, rng.normal(0.0, 0.1, size=out) if bias else np.zeros(out)), ReLU()]
        shape = (out, shape[1] - k + 1, shape[2] - k + 1)
        if rng.random() < 0.5 and shape[1] >= 2:
            layers.append(MaxPool2D(2))
            shape = (out, shape[1] // 2, shape[2] // 2)
    layers.append(Flatten())
    n = int(np.prod(shape))
    n_dense = int(rng.integers(1, 5 - len([l for l in layers if l.weighted])))
    for i in range(n_dense):
        out = classes if i == n_dense - 1 else int(rng.integers(3, 7))
        w = rng.normal(0.0, 1.0 / np.sqrt(n), size=(out, n))
        layers.append(Dense(w, rng.normal(0.0, 0.1, size=out) if bias else np.zeros(out)))
        if i < n_dense - 1:
            layers.append(ReLU())
        n = out
    return Network((c, hw, hw), classes, layers)


@pytest.fixture(scope="session")
def desk_train():
    return load_idx(TRAIN_IMAGES)


@pytest.fixture(scope="session")
def desk_test_full():
    return load_idx(TEST_IMAGES)


@pytest.fixture(scope="session")
def desk_test(desk_test_full):
    """The 1000 held-out test digits."""
    return desk_test_full.head(1000)


def _timed(key, build):
    start = time.perf_counter()
    out = build()
    TIMINGS[key] = time.perf_counter() - start
    return out


@pytest.fixture(scope="session")
def desk_model(desk_train):
    return _timed("desk_model", lambda: train(mlp((1, 28, 28), 10, seed=0), desk_train, DESK_TRAIN))


@pytest.fixture(scope="session")
def desk_model_b(desk_train):
    """Independently seeded twin for transfer tests."""
    cfg = TrainConfig(**{**DESK_TRAIN.__dict__, "seed": 1})
    return train(mlp((1, 28, 28), 10, seed=1), desk_train, cfg)


@pytest.fixture(scope="session")
def robust_model(desk_train):
    return _timed("robust_model", lambda: adversarial_train(mlp((1, 28, 28), 10, seed=0), desk_train, DESK_ROBUST))


@pytest.fixture(scope="session")
def desk_convnet(desk_train):
    """Conv/BN/dropout stack of the MNIST architecture, briefly trained."""
    return train(mnist_convnet(seed=0), desk_train, DESK_CONV)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number, passed, detail in sorted(ACCEPTANCE):
            terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")
