"""Network container, JSON model files, batchnorm folding and stock architectures."""

import copy
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ModelFormatError, ShapeError, StructureError, ValidationError
from .layers import BatchNormAffine, Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU


class Network:
    """An ordered layer stack mapping ``input_shape`` to ``classes`` logits."""

    def __init__(self, input_shape, classes, layers):
        self.input_shape = tuple(int(d) for d in input_shape)
        self.classes = int(classes)
        self.layers = list(layers)
        if not self.input_shape or any(d < 1 for d in self.input_shape):
            raise ValidationError(f"input shape must have positive dimensions, got {self.input_shape}")
        if self.classes < 1:
            raise ValidationError(f"class count must be >= 1, got {self.classes}")
        self.shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                self.shapes.append(layer.output_shape(self.shapes[-1]))
            except ShapeError as exc:
                raise ValidationError(f"layer {i} ({layer!r}): {exc}") from exc
        if self.shapes[-1] != (self.classes,):
            raise ValidationError(f"final layer outputs {self.shapes[-1]}, expected ({self.classes},)")

    @property
    def n_features(self):
        return int(np.prod(self.input_shape))

    def copy(self):
        return copy.deepcopy(self)

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "classes": self.classes,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    def digest(self):
        """SHA-256 of the serialized model (what ``save_model`` writes)."""
        return hashlib.sha256(dumps(self).encode()).hexdigest()

    def __repr__(self):
        body = ", ".join(repr(layer) for layer in self.layers)
        return f"Network({self.input_shape} -> {self.classes}: {body})"


def dumps(network):
    # json writes floats with repr(), the shortest string that round-trips exactly
    return json.dumps(network.to_dict())


def save_model(network, path):
    Path(path).write_text(dumps(network))


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not valid JSON: {exc}") from exc
    return from_dict(doc)


def _floats(entry, key, count, index):
    values = entry.get(key)
    if not isinstance(values, list):
        raise ModelFormatError(f"missing list field {key!r}", index)
    try:
        arr = np.array(values, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"field {key!r} is not numeric", index) from exc
    if arr.ndim != 1:
        raise ModelFormatError(f"field {key!r} must be a flat list", index)
    if arr.size != count:
        raise ValidationError(f"layer {index}: {key!r} has {arr.size} values, expected {count}")
    if not np.all(np.isfinite(arr)):
        raise ModelFormatError(f"field {key!r} has non-finite values", index)
    return arr


def _layer_from_dict(entry, index):
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ModelFormatError("layer entry must be an object with a 'kind'", index)
    kind = entry["kind"]
    try:
        if kind == "dense":
            n_in, n_out = int(entry["in"]), int(entry["out"])
            w = _floats(entry, "weights", n_in * n_out, index).reshape(n_out, n_in)
            return Dense(w, _floats(entry, "bias", n_out, index))
        if kind == "conv2d":
            c, o = int(entry["in_channels"]), int(entry["out_channels"])
            kh, kw = (int(k) for k in entry["kernel"])
            w = _floats(entry, "weights", o * c * kh * kw, index).reshape(o, c, kh, kw)
            return Conv2D(w, _floats(entry, "bias", o, index), stride=int(entry.get("stride", 1)))
        if kind == "relu":
            return ReLU()
        if kind == "maxpool2d":
            return MaxPool2D(int(entry["window"]), int(entry.get("stride", entry["window"])))
        if kind == "flatten":
            return Flatten()
        if kind == "dropout":
            return Dropout(float(entry["rate"]))
        if kind == "batchnorm-affine":
            ch = int(entry["channels"])
            return BatchNormAffine(_floats(entry, "scale", ch, index), _floats(entry, "shift", ch, index))
    except KeyError as exc:
        raise ModelFormatError(f"{kind} layer missing field {exc}", index) from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (ValidationError, ModelFormatError)):
            raise
        raise ModelFormatError(f"bad {kind} layer: {exc}", index) from exc
    raise ModelFormatError(f"unknown layer kind {kind!r}", index)


def from_dict(doc):
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    for key in ("input_shape", "classes", "layers"):
        if key not in doc:
            raise ModelFormatError(f"model document missing {key!r}")
    layers = [_layer_from_dict(entry, i) for i, entry in enumerate(doc["layers"])]
    return Network(doc["input_shape"], doc["classes"], layers)


def fold_batchnorm(network):
    """Return an equivalent network with every batchnorm merged into the preceding dense/conv."""
    layers = []
    for i, layer in enumerate(network.layers):
        if isinstance(layer, BatchNormAffine):
            prev = layers[-1] if layers else None
            if not isinstance(prev, (Dense, Conv2D)):
                raise StructureError(f"batchnorm at layer {i} does not follow a dense or conv2d layer")
            shape = (-1,) + (1,) * (prev.weight.ndim - 1)
            weight = prev.weight * layer.scale.reshape(shape)
            bias = prev.bias * layer.scale + layer.shift
            layers[-1] = (
                Dense(weight, bias) if isinstance(prev, Dense) else Conv2D(weight, bias, prev.stride)
            )
        else:
            layers.append(copy.deepcopy(layer))
    return Network(network.input_shape, network.classes, layers)


def has_batchnorm(network):
    return any(isinstance(layer, BatchNormAffine) for layer in network.layers)


def _uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def dense_layer(rng, n_in, n_out):
    return Dense(_uniform(rng, (n_out, n_in), n_in, n_out), np.zeros(n_out))


def conv_layer(rng, c_in, c_out, kh, kw, stride=1):
    w = _uniform(rng, (c_out, c_in, kh, kw), c_in * kh * kw, c_out * kh * kw)
    return Conv2D(w, np.zeros(c_out), stride)


def mlp(input_shape, classes, hidden=(128,), seed=0):
    """Flatten followed by dense/ReLU blocks; ``mlp((1, 28, 28), 10)`` is the 784-128-10 desk model."""
    rng = np.random.default_rng(seed)
    n = int(np.prod(input_shape))
    layers = [Flatten()]
    for h in hidden:
        layers += [dense_layer(rng, n, h), ReLU()]
        n = h
    layers.append(dense_layer(rng, n, classes))
    return Network(input_shape, classes, layers)


def mnist_convnet(classes=10, seed=0, dropout=0.3):
    """Two conv-conv-pool stages, dropout, FC 1024x512, FC 512x10, on 1x28x28 inputs."""
    rng = np.random.default_rng(seed)
    layers = [
        conv_layer(rng, 1, 32, 3, 3), ReLU(),
        conv_layer(rng, 32, 32, 3, 3), BatchNormAffine(np.ones(32)), ReLU(),
        MaxPool2D(2),
        conv_layer(rng, 32, 64, 3, 3), ReLU(),
        conv_layer(rng, 64, 64, 3, 3), BatchNormAffine(np.ones(64)), ReLU(),
        MaxPool2D(2),
        Dropout(dropout),
        Flatten(),
        dense_layer(rng, 1024, 512), ReLU(),
        dense_layer(rng, 512, classes),
    ]  # fmt: skip
    return Network((1, 28, 28), classes, layers)


def kdd_convnet(n_features, classes=5, seed=0, dropout=0.3):
    """1-D convolutional stack for tabular rows shaped ``(1, 1, n_features)``.

    Kernels are 1x4 (16 ch), 1x3 (32 ch), 1x3 (64 ch), each followed by a
    batchnorm and ReLU; stride 1, valid padding.  The first FC input size
    follows from those choices rather than being fixed at 1024.
    """
    rng = np.random.default_rng(seed)
    layers = []
    c = 1
    for c_out, k in ((16, 4), (32, 3), (64, 3)):
        layers += [conv_layer(rng, c, c_out, 1, k), BatchNormAffine(np.ones(c_out)), ReLU()]
        c = c_out
    width = n_features - 3 - 2 - 2
    layers += [
        Dropout(dropout),
        Flatten(),
        dense_layer(rng, 64 * width, 256),
        ReLU(),
        dense_layer(rng, 256, classes),
    ]
    return Network((1, 1, n_features), classes, layers)
