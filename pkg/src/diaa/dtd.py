"""Deep Taylor decomposition saliency.

Relevance starts as the class logit and is pushed back to the input layer by
layer.  The first weighted layer uses the box rule (zB) for inputs bounded by
``[low, high]``; deeper weighted layers use the z+ rule; ReLU and dropout pass
relevance through unchanged, max-pooling sends it to the window's argmax and
flatten reshapes.  Biases never receive relevance, so on bias-free ReLU
networks the input scores sum to the logit.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ClassIndexError
from .layers import BatchNormAffine, Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU
from .network import fold_batchnorm, has_batchnorm
from .tensor import ClassLogit, forward, value_and_gradient

ZERO_DENOMINATOR = 1e-12


@dataclass
class RelevanceMap:
    scores: np.ndarray
    class_index: int
    start_relevance: float
    conservative: bool = True
    # total relevance after each propagation step, output side first
    layer_totals: list = field(default_factory=list)

    @property
    def total(self):
        return float(self.scores.sum())


def _shares(relevance, z):
    """``relevance / z`` where ``|z|`` is usable, 0 where the share is dropped."""
    keep = np.abs(z) >= ZERO_DENOMINATOR
    return np.where(keep, relevance / np.where(keep, z, 1.0), 0.0)


def _linear(layer, a, weight):
    return layer.linear(a, weight)


def _transpose(layer, s, weight, a):
    if isinstance(layer, Conv2D):
        return layer.linear_transpose(s, weight, a.shape[2:])
    return layer.linear_transpose(s, weight)


def zplus_rule(layer, a, relevance):
    """``R_i = sum_j a_i w+_ij / (sum_i' a_i' w+_i'j) * R_j``."""
    wp = np.maximum(layer.weight, 0.0)
    s = _shares(relevance, _linear(layer, a, wp))
    return a * _transpose(layer, s, wp, a)


def zbox_rule(layer, a, relevance, low=0.0, high=1.0):
    """``z_ij = a_i w_ij - l_i w+_ij - h_i w-_ij`` for inputs constrained to ``[low, high]``."""
    w = layer.weight
    wp = np.maximum(w, 0.0)
    wn = np.minimum(w, 0.0)
    lo = np.full_like(a, low)
    hi = np.full_like(a, high)
    z = _linear(layer, a, w) - _linear(layer, lo, wp) - _linear(layer, hi, wn)
    s = _shares(relevance, z)
    return a * _transpose(layer, s, w, a) - lo * _transpose(layer, s, wp, a) - hi * _transpose(layer, s, wn, a)


def dtd_relevance(network, x, class_index, low=0.0, high=1.0):
    """Relevance of every input feature for the logit of ``class_index``.

    If that logit is not positive the decomposition has nothing to conserve;
    the map then falls back to ``|dZ/dx * x|`` and is flagged
    ``conservative=False``.
    """
    if not 0 <= int(class_index) < network.classes:
        raise ClassIndexError(f"class index {class_index} outside [0, {network.classes})")
    class_index = int(class_index)
    if has_batchnorm(network):
        network = fold_batchnorm(network)
    trace = forward(network, x)
    start = float(trace.logits[class_index])

    if start <= 0.0:
        _, grad = value_and_gradient(network, x, ClassLogit(class_index), trace=trace)
        return RelevanceMap(np.abs(grad * trace.inputs[0]), class_index, start, conservative=False)

    first_weighted = next(i for i, layer in enumerate(network.layers) if layer.weighted)
    relevance = np.zeros((1, network.classes))
    relevance[0, class_index] = start
    totals = [start]
    for i in range(len(network.layers) - 1, -1, -1):
        layer = network.layers[i]
        a = trace.inputs[i][None]
        if isinstance(layer, (Dense, Conv2D)):
            if i == first_weighted:
                relevance = zbox_rule(layer, a, relevance, low, high)
            else:
                relevance = zplus_rule(layer, a, relevance)
        elif isinstance(layer, MaxPool2D):
            relevance = layer.route(a, relevance)
        elif isinstance(layer, Flatten):
            relevance = relevance.reshape(a.shape)
        elif isinstance(layer, (ReLU, Dropout)):
            pass
        elif isinstance(layer, BatchNormAffine):  # pragma: no cover - folded above
            raise AssertionError("unfolded batchnorm")
        else:
            raise TypeError(f"no relevance rule for {layer!r}")
        totals.append(float(relevance.sum()))
    return RelevanceMap(relevance[0], class_index, start, conservative=True, layer_totals=totals)


def sort_saliency(relevance):
    """Flat feature indices by descending score; ties go to the lower index."""
    scores = relevance.scores if isinstance(relevance, RelevanceMap) else np.asarray(relevance)
    flat = scores.ravel()
    # lexsort keys: last is primary
    return np.lexsort((np.arange(flat.size), -flat))
