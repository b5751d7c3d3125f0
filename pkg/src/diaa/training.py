"""Minibatch training with softmax cross-entropy, plus a PGD adversarial-training variant."""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .layers import Dropout
from .tensor import backward_batch, forward, forward_batch

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    adversarial: bool = False
    eps_ball: float = 0.1
    adv_steps: int = 10
    adv_step_size: float | None = None  # None: 2.5 * eps_ball / adv_steps
    clip_min: float = 0.0
    clip_max: float = 1.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("batch_size and lr must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.eps_ball < 0 or self.adv_steps < 1:
            raise ConfigError("eps_ball must be >= 0 and adv_steps >= 1")

    @property
    def step_size(self):
        if self.adv_step_size is not None:
            return self.adv_step_size
        return 2.5 * self.eps_ball / self.adv_steps


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        for key, p in params.items():
            g = grads[key]
            m = self.m.get(key, 0.0) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(key, 0.0) * self.beta2 + (1 - self.beta2) * g * g
            self.m[key], self.v[key] = m, v
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for key, p in params.items():
            p -= self.lr * grads[key]


def softmax_xent(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(len(labels))
    loss = -log_probs[rows, labels].mean()
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, grad / len(labels)


def batch_input_gradient(network, xb, yb):
    """d(summed cross-entropy)/dx for a batch, inference mode."""
    acts = forward_batch(network, xb)
    _, grad = softmax_xent(acts[-1], yb)
    return backward_batch(network, acts, grad * len(yb))


def pgd_batch(network, xb, yb, eps_ball, steps, step_size, rng, clip_min=0.0, clip_max=1.0):
    """L-inf PGD with a uniform random start, applied to a whole minibatch."""
    lo, hi = xb - eps_ball, xb + eps_ball
    x_adv = np.clip(xb + rng.uniform(-eps_ball, eps_ball, size=xb.shape), lo, hi)
    x_adv = np.clip(x_adv, clip_min, clip_max)
    for _ in range(steps):
        x_adv = x_adv + step_size * np.sign(batch_input_gradient(network, x_adv, yb))
        x_adv = np.clip(np.clip(x_adv, lo, hi), clip_min, clip_max)
    return x_adv


def _train_step(network, xb, yb, optimizer, rng):
    acts = [xb]
    masks = {}
    for i, layer in enumerate(network.layers):
        a = layer.forward(acts[-1])
        if isinstance(layer, Dropout) and layer.rate > 0:
            masks[i] = (rng.random(a.shape) >= layer.rate) / (1.0 - layer.rate)
            a = a * masks[i]
        acts.append(a)
    loss, grad = softmax_xent(acts[-1], yb)
    for i in range(len(network.layers) - 1, -1, -1):
        layer = network.layers[i]
        params = layer.params()
        if params:
            grads = layer.param_grads(acts[i], grad)
            if i > 0:
                grad = layer.backward(acts[i], acts[i + 1], grad)
            optimizer.step({f"{i}.{k}": v for k, v in params.items()}, {f"{i}.{k}": v for k, v in grads.items()})
        elif i > 0:
            if i in masks:
                grad = grad * masks[i]
            grad = layer.backward(acts[i], acts[i + 1], grad)
    return loss


def train(network, dataset, cfg):
    """Return a trained copy of ``network``; the argument is left untouched."""
    if len(dataset) == 0:
        raise DomainError("cannot train on an empty dataset")
    if tuple(dataset.shape) != network.input_shape:
        dataset = dataset.reshaped(network.input_shape)
    net = network.copy()
    rng = np.random.default_rng(cfg.seed)
    # separate stream so an eps_ball of 0 leaves the training stream untouched
    adv_rng = np.random.default_rng([cfg.seed, 1])
    optimizer = Adam(cfg.lr) if cfg.optimizer == "adam" else SGD(cfg.lr)
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = dataset.examples[idx], dataset.labels[idx]
            if cfg.adversarial:
                xb = pgd_batch(net, xb, yb, cfg.eps_ball, cfg.adv_steps, cfg.step_size, adv_rng, cfg.clip_min, cfg.clip_max)
            losses.append(_train_step(net, xb, yb, optimizer, rng))
        log.info("epoch %d/%d loss %.4f", epoch + 1, cfg.epochs, float(np.mean(losses)))
    return net


def adversarial_train(network, dataset, cfg):
    """PGD adversarial training: every minibatch is replaced by its PGD perturbation."""
    if not cfg.adversarial:
        cfg = TrainConfig(**{**cfg.__dict__, "adversarial": True})
    return train(network, dataset, cfg)


def evaluate_accuracy(network, dataset):
    """Fraction of examples whose argmax logit equals the label."""
    if len(dataset) == 0:
        raise DomainError("cannot evaluate on an empty dataset")
    if tuple(dataset.shape) != network.input_shape:
        dataset = dataset.reshaped(network.input_shape)
    correct = sum(forward(network, x).predicted == y for x, y in zip(dataset.examples, dataset.labels))
    return float(correct / len(dataset))
