"""Neural network layers with explicit forward and backward passes.

Layers operate on batched numpy arrays (leading batch axis) and preserve
the input dtype, so a float64 copy of a model can be driven through the
same code for finite-difference gradient checks. Parameters are stored
float32; each backward returns the gradient w.r.t. the layer input plus
a dict of parameter gradients keyed like ``params``.
"""

import numpy as np

from .tensor import (
    ShapeError,
    col2im,
    conv2d_batch,
    maxpool2d_backward,
    maxpool2d_batch,
)


class BackwardBeforeForwardError(RuntimeError):
    """backward() was called without a preceding forward()."""


class Layer:
    kind = "Layer"

    def __init__(self):
        self.params = {}
        self._cache = None

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def out_shape(self, in_shape):
        """Per-sample output shape for a per-sample input shape."""
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise BackwardBeforeForwardError(f"{self.kind}: backward before forward")
        cache = self._cache
        self._cache = None
        return cache

    def param_arrays(self, shadow=None):
        """Parameter dict, or its float64 shadow if one is installed."""
        return self.params if shadow is None else shadow


class Dense(Layer):
    """Fully connected layer: x @ W + b, W shape [n_in, n_out]."""

    kind = "Dense"
    regularized = True

    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out
        self.params = {
            "weight": rng.glorot_uniform(n_in, n_out, (n_in, n_out)),
            "bias": np.zeros(n_out, dtype=np.float32),
        }

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"Dense expects (N,{self.n_in}), got {x.shape}")
        w = self.params["weight"].astype(x.dtype, copy=False)
        b = self.params["bias"].astype(x.dtype, copy=False)
        self._cache = x
        return x @ w + b

    def backward(self, grad):
        x = self._take_cache()
        w = self.params["weight"].astype(grad.dtype, copy=False)
        dw = x.T @ grad
        db = grad.sum(axis=0)
        dx = grad @ w.T
        return dx, {"weight": dw, "bias": db}

    def out_shape(self, in_shape):
        return (self.n_out,)


class Conv2D(Layer):
    """Valid cross-correlation over N,H,W,C inputs."""

    kind = "Conv2D"
    regularized = True

    def __init__(self, kernel, in_channels, filters, stride, rng):
        super().__init__()
        self.kernel = kernel
        self.in_channels = in_channels
        self.filters = filters
        self.stride = stride
        fan_in = kernel * kernel * in_channels
        self.params = {
            "weight": rng.glorot_uniform(
                fan_in, filters, (kernel, kernel, in_channels, filters)
            ),
            "bias": np.zeros(filters, dtype=np.float32),
        }

    def forward(self, x):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(
                f"Conv2D expects (N,H,W,{self.in_channels}), got {x.shape}"
            )
        w = self.params["weight"].astype(x.dtype, copy=False)
        b = self.params["bias"].astype(x.dtype, copy=False)
        out, cols = conv2d_batch(x, w, self.stride)
        self._cache = (x.shape, cols)
        return out + b

    def backward(self, grad):
        x_shape, cols = self._take_cache()
        k, c, f = self.kernel, self.in_channels, self.filters
        w = self.params["weight"].astype(grad.dtype, copy=False)
        flat_cols = cols.reshape(-1, k * k * c)
        flat_grad = grad.reshape(-1, f)
        dw = (flat_cols.T @ flat_grad).reshape(k, k, c, f)
        db = flat_grad.sum(axis=0)
        dcols = flat_grad @ w.reshape(k * k * c, f).T
        dx = col2im(dcols.reshape(grad.shape[:3] + (k * k * c,)), x_shape, k, self.stride)
        return dx, {"weight": dw, "bias": db}

    def out_shape(self, in_shape):
        h, w, c = in_shape
        if self.kernel > h or self.kernel > w:
            raise ShapeError(f"kernel {self.kernel} larger than input {h}x{w}")
        ho = (h - self.kernel) // self.stride + 1
        wo = (w - self.kernel) // self.stride + 1
        return (ho, wo, self.filters)


class MaxPool2D(Layer):
    kind = "MaxPool2D"

    def __init__(self, window, stride):
        super().__init__()
        self.window = window
        self.stride = stride

    def forward(self, x):
        pooled, arg = maxpool2d_batch(x, self.window, self.stride)
        self._cache = (x.shape, arg)
        return pooled

    def backward(self, grad):
        x_shape, arg = self._take_cache()
        dx = maxpool2d_backward(grad, arg, x_shape, self.window, self.stride)
        return dx, {}

    def out_shape(self, in_shape):
        h, w, c = in_shape
        if self.window > h or self.window > w:
            raise ShapeError(f"pool window {self.window} larger than input {h}x{w}")
        ho = (h - self.window) // self.stride + 1
        wo = (w - self.window) // self.stride + 1
        return (ho, wo, c)


class Flatten(Layer):
    kind = "Flatten"

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        shape = self._take_cache()
        return grad.reshape(shape), {}

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Reshape(Layer):
    """Reshape each sample, optionally zero-padding a rank-1 input first."""

    kind = "Reshape"

    def __init__(self, target_shape, pad_to=None):
        super().__init__()
        self.target_shape = tuple(target_shape)
        self.pad_to = pad_to

    def forward(self, x):
        self._cache = x.shape
        if self.pad_to is not None:
            if x.ndim != 2 or x.shape[1] > self.pad_to:
                raise ShapeError(
                    f"Reshape pad expects (N,<= {self.pad_to}), got {x.shape}"
                )
            padded = np.zeros((x.shape[0], self.pad_to), dtype=x.dtype)
            padded[:, : x.shape[1]] = x
            x = padded
        return x.reshape((x.shape[0],) + self.target_shape)

    def backward(self, grad):
        in_shape = self._take_cache()
        flat = grad.reshape(grad.shape[0], -1)
        if self.pad_to is not None:
            flat = flat[:, : in_shape[1]]
        return flat.reshape(in_shape), {}

    def out_shape(self, in_shape):
        return self.target_shape


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, np.zeros((), dtype=x.dtype))

    def backward(self, grad):
        mask = self._take_cache()
        return grad * mask, {}

    def out_shape(self, in_shape):
        return in_shape


class Softmax(Layer):
    """Row-wise softmax over the last axis."""

    kind = "Softmax"

    def forward(self, x):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=-1, keepdims=True)
        self._cache = probs
        return probs

    def backward(self, grad):
        probs = self._take_cache()
        inner = (grad * probs).sum(axis=-1, keepdims=True)
        return probs * (grad - inner), {}

    def out_shape(self, in_shape):
        return in_shape


class Concat(Layer):
    """Fusion node: concatenates branch outputs along the feature axis."""

    kind = "Concat"

    def forward(self, parts):
        if not parts:
            raise ShapeError("Concat of an empty part list")
        self._cache = [p.shape[1] for p in parts]
        return np.concatenate(parts, axis=1)

    def backward(self, grad):
        widths = self._take_cache()
        splits = np.cumsum(widths)[:-1]
        return np.split(grad, splits, axis=1), {}

    def out_shape(self, part_shapes):
        return (sum(s[0] for s in part_shapes),)


def run_layers(layers, x):
    for layer in layers:
        x = layer.forward(x)
    return x


def backprop_layers(layers, grad, grads_out):
    """Backward through a layer list, appending (layer, param grads) pairs."""
    for layer in reversed(layers):
        grad, pgrads = layer.backward(grad)
        if pgrads:
            grads_out.append((layer, pgrads))
    return grad
