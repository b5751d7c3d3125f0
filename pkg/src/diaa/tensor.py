"""Forward evaluation with cached activations and reverse-mode input gradients.

Tensors are plain float64 ``numpy`` arrays.  Public entry points take a single
example shaped like ``network.input_shape``; the batched helpers
(:func:`forward_batch`, :func:`backward_batch`) are shared with the trainer.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ClassIndexError, DomainError, ShapeError


def as_tensor(x, shape=None):
    """Coerce to a finite float64 array, optionally checking its shape."""
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None and arr.shape != tuple(shape):
        raise ShapeError(f"expected shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("tensor contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class ForwardTrace:
    """Per-layer inputs and outputs of one forward pass (no batch axis)."""

    inputs: tuple
    outputs: tuple

    @property
    def logits(self):
        return self.outputs[-1]

    @property
    def predicted(self):
        return int(np.argmax(self.outputs[-1]))

    def __len__(self):
        return len(self.outputs)


def forward_batch(network, batch):
    """Run a batch through the network; returns the list of activations (input first)."""
    acts = [batch]
    for layer in network.layers:
        acts.append(layer.forward(acts[-1]))
    return acts


def backward_batch(network, acts, grad_out, param_grads=False, input_grad=True):
    """Backpropagate ``grad_out`` (gradient w.r.t. the logits) to the input.

    With ``param_grads`` set, returns ``(input_grad, per-layer param grads)``;
    the input gradient is None when ``input_grad`` is False.
    """
    grad = grad_out
    pgrads = [None] * len(network.layers)
    for i in range(len(network.layers) - 1, -1, -1):
        layer = network.layers[i]
        if param_grads and layer.params():
            pgrads[i] = layer.param_grads(acts[i], grad)
        if i == 0 and not input_grad:
            grad = None
            break
        grad = layer.backward(acts[i], acts[i + 1], grad)
    return (grad, pgrads) if param_grads else grad


def forward(network, x):
    """Evaluate ``network`` on one example and keep every intermediate activation."""
    x = as_tensor(x, network.input_shape)
    acts = forward_batch(network, x[None])
    acts = [a[0] for a in acts]
    if not np.all(np.isfinite(acts[-1])):
        raise DomainError("forward pass produced non-finite logits")
    return ForwardTrace(tuple(acts[:-1]), tuple(acts[1:]))


def predict(network, x):
    return forward(network, x).predicted


def softmax_probs(logits):
    """Max-subtracted softmax.  Reporting only; attacks work on raw logits."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise DomainError("softmax of empty logits")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _check_class(index, m):
    if not 0 <= int(index) < m:
        raise ClassIndexError(f"class index {index} outside [0, {m})")


class Objective:
    """A scalar function of the logits, optionally plus a term depending directly on x.

    Subclasses implement ``logit_term(logits) -> (value, d value / d logits)``
    and may override ``input_term(x) -> (value, d value / d x)``.
    """

    def check(self, m):
        pass

    def logit_term(self, logits):
        raise NotImplementedError

    def input_term(self, x):
        return 0.0, None


class ClassLogit(Objective):
    """``sign * Z(x)[index]``."""

    def __init__(self, index, sign=1.0):
        self.index = int(index)
        self.sign = float(sign)

    def check(self, m):
        _check_class(self.index, m)

    def logit_term(self, logits):
        grad = np.zeros_like(logits)
        grad[self.index] = self.sign
        return self.sign * logits[self.index], grad


class CrossEntropy(Objective):
    """Cross-entropy of ``softmax(Z(x))`` against ``index``."""

    def __init__(self, index):
        self.index = int(index)

    def check(self, m):
        _check_class(self.index, m)

    def logit_term(self, logits):
        shifted = logits - logits.max()
        log_norm = np.log(np.exp(shifted).sum())
        probs = np.exp(shifted - log_norm)
        grad = probs.copy()
        grad[self.index] -= 1.0
        return log_norm - shifted[self.index], grad


class PerturbationObjective(Objective):
    """Logit term plus ``c * ||reference - x||_2``.

    Untargeted: ``Z(x)[index] + c * ||reference - x||``.
    Targeted:   ``c * ||reference - x|| - Z(x)[index]``.
    At ``x == reference`` the norm term contributes the zero subgradient.
    """

    def __init__(self, index, reference, c, targeted=False):
        self.logit = ClassLogit(index, -1.0 if targeted else 1.0)
        self.reference = np.asarray(reference, dtype=np.float64)
        self.c = float(c)

    def check(self, m):
        self.logit.check(m)

    def logit_term(self, logits):
        return self.logit.logit_term(logits)

    def input_term(self, x):
        diff = x - self.reference
        norm = float(np.sqrt(np.sum(diff * diff)))
        if norm == 0.0:
            return 0.0, np.zeros_like(x)
        return self.c * norm, (self.c / norm) * diff


def value_and_gradient(network, x, objective, trace=None):
    """Objective value and its exact gradient with respect to the input.

    A precomputed ``trace`` for the same ``x`` may be supplied to skip the
    forward pass.
    """
    objective.check(network.classes)
    if trace is None:
        trace = forward(network, x)
    x = trace.inputs[0]
    value, dlogits = objective.logit_term(trace.logits)
    acts = [a[None] for a in trace.inputs] + [trace.logits[None]]
    grad = backward_batch(network, acts, dlogits[None])[0]
    extra, dx = objective.input_term(x)
    if dx is not None:
        grad = grad + dx
    return float(value + extra), grad


def input_gradient(network, x, objective):
    """``d objective / d x`` by one reverse pass, same shape as ``x``."""
    return value_and_gradient(network, x, objective)[1]
