"""Layer kinds supported by the engine.

Every layer works on float64 arrays with a leading batch axis.  ``forward``
maps a batch of inputs to a batch of outputs and ``backward`` maps an output
gradient back to an input gradient.  Weighted layers (dense, conv2d) also
expose their bias-free linear map and its transpose so relevance rules can
re-run them with modified weights.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, ValidationError


class Layer:
    kind = None
    weighted = False

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, a):
        return a

    def backward(self, a, out, grad):
        return grad

    def params(self):
        """Trainable arrays by name (mutated in place by optimizers)."""
        return {}

    def param_grads(self, a, grad):
        return {}

    def to_dict(self):
        return {"kind": self.kind}

    def __repr__(self):
        return f"{type(self).__name__}()"


class Dense(Layer):
    kind = "dense"
    weighted = True

    def __init__(self, weight, bias=None):
        weight = np.asarray(weight, dtype=np.float64)
        if weight.ndim != 2:
            raise ValidationError(f"dense weight must be 2-D (out x in), got shape {weight.shape}")
        out_features = weight.shape[0]
        bias = np.zeros(out_features) if bias is None else np.asarray(bias, dtype=np.float64)
        if bias.shape != (out_features,):
            raise ValidationError(f"dense bias has shape {bias.shape}, expected ({out_features},)")
        self.weight = weight
        self.bias = bias

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.in_features,):
            raise ShapeError(f"dense expects input ({self.in_features},), got {tuple(input_shape)}")
        return (self.out_features,)

    def linear(self, a, weight):
        return a @ weight.T

    def linear_transpose(self, grad, weight):
        return grad @ weight

    def forward(self, a):
        return self.linear(a, self.weight) + self.bias

    def backward(self, a, out, grad):
        return self.linear_transpose(grad, self.weight)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def param_grads(self, a, grad):
        return {"weight": grad.T @ a, "bias": grad.sum(axis=0)}

    def to_dict(self):
        return {
            "kind": self.kind,
            "in": self.in_features,
            "out": self.out_features,
            "weights": self.weight.ravel().tolist(),
            "bias": self.bias.tolist(),
        }

    def __repr__(self):
        return f"Dense({self.in_features}->{self.out_features})"


class Conv2D(Layer):
    """Valid-padding 2-D convolution (cross-correlation) on ``(C, H, W)`` inputs."""

    kind = "conv2d"
    weighted = True

    def __init__(self, weight, bias=None, stride=1):
        weight = np.asarray(weight, dtype=np.float64)
        if weight.ndim != 4:
            raise ValidationError(f"conv2d kernel must be 4-D (out, in, kh, kw), got shape {weight.shape}")
        bias = np.zeros(weight.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
        if bias.shape != (weight.shape[0],):
            raise ValidationError(f"conv2d bias has shape {bias.shape}, expected ({weight.shape[0]},)")
        if int(stride) < 1:
            raise ValidationError(f"conv2d stride must be >= 1, got {stride}")
        self.weight = weight
        self.bias = bias
        self.stride = int(stride)

    @property
    def kernel_size(self):
        return self.weight.shape[2:]

    def output_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[0] != self.weight.shape[1]:
            raise ShapeError(
                f"conv2d expects ({self.weight.shape[1]}, H, W) input, got {tuple(input_shape)}"
            )
        _, h, w = input_shape
        kh, kw = self.kernel_size
        if h < kh or w < kw:
            raise ShapeError(f"conv2d kernel {kh}x{kw} larger than input {h}x{w}")
        s = self.stride
        return (self.weight.shape[0], (h - kh) // s + 1, (w - kw) // s + 1)

    def _windows(self, a):
        kh, kw = self.kernel_size
        win = sliding_window_view(a, (kh, kw), axis=(2, 3))
        return win[:, :, :: self.stride, :: self.stride]

    def linear(self, a, weight):
        return np.einsum("bchwij,ocij->bohw", self._windows(a), weight, optimize=True)

    def linear_transpose(self, grad, weight, input_hw=None):
        b, _, ho, wo = grad.shape
        kh, kw = self.kernel_size
        s = self.stride
        if input_hw is None:
            input_hw = ((ho - 1) * s + kh, (wo - 1) * s + kw)
        out = np.zeros((b, weight.shape[1]) + tuple(input_hw))
        for i in range(kh):
            for j in range(kw):
                out[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += np.einsum(
                    "bohw,oc->bchw", grad, weight[:, :, i, j], optimize=True
                )
        return out

    def forward(self, a):
        return self.linear(a, self.weight) + self.bias[None, :, None, None]

    def backward(self, a, out, grad):
        return self.linear_transpose(grad, self.weight, a.shape[2:])

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def param_grads(self, a, grad):
        return {
            "weight": np.einsum("bchwij,bohw->ocij", self._windows(a), grad, optimize=True),
            "bias": grad.sum(axis=(0, 2, 3)),
        }

    def to_dict(self):
        o, c, kh, kw = self.weight.shape
        return {
            "kind": self.kind,
            "in_channels": c,
            "out_channels": o,
            "kernel": [kh, kw],
            "stride": self.stride,
            "weights": self.weight.ravel().tolist(),
            "bias": self.bias.tolist(),
        }

    def __repr__(self):
        o, c, kh, kw = self.weight.shape
        return f"Conv2D({c}->{o}, {kh}x{kw}, stride={self.stride})"


class ReLU(Layer):
    kind = "relu"

    def forward(self, a):
        return np.maximum(a, 0.0)

    def backward(self, a, out, grad):
        return grad * (a > 0)


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, window=2, stride=None):
        self.window = int(window)
        self.stride = self.window if stride is None else int(stride)
        if self.window < 1 or self.stride < 1:
            raise ValidationError("maxpool2d window and stride must be >= 1")

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"maxpool2d expects (C, H, W) input, got {tuple(input_shape)}")
        c, h, w = input_shape
        k, s = self.window, self.stride
        if h < k or w < k:
            raise ShapeError(f"maxpool2d window {k} larger than input {h}x{w}")
        return (c, (h - k) // s + 1, (w - k) // s + 1)

    def _windows(self, a):
        k, s = self.window, self.stride
        return sliding_window_view(a, (k, k), axis=(2, 3))[:, :, ::s, ::s]

    def forward(self, a):
        return self._windows(a).max(axis=(4, 5))

    def route(self, a, values):
        """Send each output value to the first (lowest-index) maximal input of its window."""
        k, s = self.window, self.stride
        b, c, ho, wo = values.shape
        flat = self._windows(a).reshape(b, c, ho, wo, k * k)
        arg = flat.argmax(axis=4)
        rows = np.arange(ho)[None, None, :, None] * s + arg // k
        cols = np.arange(wo)[None, None, None, :] * s + arg % k
        bi = np.arange(b)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        out = np.zeros_like(a)
        np.add.at(out, (bi, ci, rows, cols), values)
        return out

    def backward(self, a, out, grad):
        return self.route(a, grad)

    def to_dict(self):
        return {"kind": self.kind, "window": self.window, "stride": self.stride}

    def __repr__(self):
        return f"MaxPool2D({self.window}, stride={self.stride})"


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, a):
        return a.reshape(a.shape[0], -1)

    def backward(self, a, out, grad):
        return grad.reshape(a.shape)


class Dropout(Layer):
    """Identity at inference; the trainer applies the random mask."""

    kind = "dropout"

    def __init__(self, rate=0.5):
        rate = float(rate)
        if not 0.0 <= rate < 1.0:
            raise ValidationError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def to_dict(self):
        return {"kind": self.kind, "rate": self.rate}

    def __repr__(self):
        return f"Dropout({self.rate})"


class BatchNormAffine(Layer):
    """Per-channel ``scale * a + shift`` (channel = axis 1 of the batch)."""

    kind = "batchnorm-affine"

    def __init__(self, scale, shift=None):
        scale = np.asarray(scale, dtype=np.float64)
        if scale.ndim != 1:
            raise ValidationError("batchnorm scale must be 1-D")
        shift = np.zeros_like(scale) if shift is None else np.asarray(shift, dtype=np.float64)
        if shift.shape != scale.shape:
            raise ValidationError(f"batchnorm shift shape {shift.shape} != scale shape {scale.shape}")
        self.scale = scale
        self.shift = shift

    @property
    def channels(self):
        return self.scale.shape[0]

    def output_shape(self, input_shape):
        if input_shape[0] != self.channels:
            raise ShapeError(f"batchnorm has {self.channels} channels, input is {tuple(input_shape)}")
        return tuple(input_shape)

    def _bcast(self, v, ndim):
        return v.reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, a):
        return a * self._bcast(self.scale, a.ndim) + self._bcast(self.shift, a.ndim)

    def backward(self, a, out, grad):
        return grad * self._bcast(self.scale, a.ndim)

    def params(self):
        return {"scale": self.scale, "shift": self.shift}

    def param_grads(self, a, grad):
        axes = (0,) + tuple(range(2, a.ndim))
        return {"scale": (grad * a).sum(axis=axes), "shift": grad.sum(axis=axes)}

    def to_dict(self):
        return {
            "kind": self.kind,
            "channels": self.channels,
            "scale": self.scale.tolist(),
            "shift": self.shift.tolist(),
        }

    def __repr__(self):
        return f"BatchNormAffine({self.channels})"
