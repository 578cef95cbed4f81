"""Dense n-dimensional arrays and the primitive ops the models are built on.

Values are stored as 32-bit floats in row-major order; reductions inside
matmul and conv2d accumulate in 64-bit before casting back, which keeps
results within 1e-6 of a naive-loop reference.

The module also owns the PFT1 binary tensor format used for weights,
embeddings and image stacks: magic ``PFT1``, little-endian u32 rank,
rank u32 dims, then the row-major float32 payload.
"""

import struct

import numpy as np

PFT1_MAGIC = b"PFT1"


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """Immutable dense array of float32 values."""

    __slots__ = ("array",)

    def __init__(self, data, shape=None):
        arr = np.asarray(data, dtype=np.float32)
        if shape is not None:
            if int(np.prod(shape)) != arr.size:
                raise ShapeError(
                    f"cannot view {arr.size} elements as shape {tuple(shape)}"
                )
            arr = arr.reshape(shape)
        self.array = np.ascontiguousarray(arr)
        self.array.flags.writeable = False

    @property
    def shape(self):
        return tuple(self.array.shape)

    @property
    def rank(self):
        return self.array.ndim

    @property
    def data(self):
        """Flat row-major view of the values."""
        return self.array.reshape(-1)

    def reshape(self, shape):
        return Tensor(self.array, shape=shape)

    def flatten(self):
        return Tensor(self.array.reshape(-1))

    def __eq__(self, other):
        return (
            isinstance(other, Tensor)
            and self.shape == other.shape
            and np.array_equal(self.array, other.array)
        )

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def matmul(a, b):
    """Matrix product of two rank-2 tensors, 64-bit accumulation."""
    if a.rank != 2 or b.rank != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a.array.astype(np.float64) @ b.array.astype(np.float64)
    return Tensor(out.astype(np.float32))


def im2col(x, k, stride):
    """Extract sliding KxK windows from a batched N,H,W,C array.

    Returns an array of shape (N, H', W', K*K*C) in the input's dtype.
    """
    n, h, w, c = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    sn, sh, sw, sc = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, ho, wo, k, k, c),
        strides=(sn, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )
    return np.ascontiguousarray(windows).reshape(n, ho, wo, k * k * c)


def conv2d_batch(x, kernels, stride, accumulate64=False):
    """Valid cross-correlation of N,H,W,C inputs with K,K,C,F kernels."""
    n, h, w, c = x.shape
    k = kernels.shape[0]
    f = kernels.shape[3]
    if k > h or k > w:
        raise ShapeError(f"kernel {k}x{k} larger than input {h}x{w}")
    if kernels.shape[2] != c:
        raise ShapeError(f"kernel channels {kernels.shape[2]} != input channels {c}")
    cols = im2col(x, k, stride)
    flat_k = kernels.reshape(k * k * c, f)
    if accumulate64:
        out = cols.astype(np.float64) @ flat_k.astype(np.float64)
        out = out.astype(x.dtype)
    else:
        out = cols @ flat_k
    return out, cols


def col2im(dcols, x_shape, k, stride):
    """Scatter-add window gradients back onto the input grid."""
    n, h, w, c = x_shape
    ho, wo = dcols.shape[1], dcols.shape[2]
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    dwin = dcols.reshape(n, ho, wo, k, k, c)
    for i in range(k):
        for j in range(k):
            dx[:, i : i + ho * stride : stride, j : j + wo * stride : stride, :] += dwin[
                :, :, :, i, j, :
            ]
    return dx


def maxpool2d_batch(x, window, stride):
    """Per-channel window maximum over N,H,W,C; first occurrence wins ties.

    Returns (pooled, argmax) where argmax holds each maximum's flat index
    within its window, for routing gradients in the backward pass.
    """
    n, h, w, c = x.shape
    if window > h or window > w:
        raise ShapeError(f"pool window {window} larger than input {h}x{w}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    sn, sh, sw, sc = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, ho, wo, window, window, c),
        strides=(sn, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )
    flat = windows.reshape(n, ho, wo, window * window, c)
    arg = flat.argmax(axis=3)
    pooled = np.take_along_axis(flat, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return pooled, arg


def maxpool2d_backward(grad, arg, x_shape, window, stride):
    """Route each pooled-cell gradient to its argmax source position."""
    n, h, w, c = x_shape
    ho, wo = grad.shape[1], grad.shape[2]
    dx = np.zeros(x_shape, dtype=grad.dtype)
    wi, wj = np.divmod(arg, window)
    oi = np.arange(ho)[None, :, None, None] * stride
    oj = np.arange(wo)[None, None, :, None] * stride
    rows = (oi + wi).reshape(-1)
    cols = (oj + wj).reshape(-1)
    ns = np.broadcast_to(np.arange(n)[:, None, None, None], arg.shape).reshape(-1)
    cs = np.broadcast_to(np.arange(c)[None, None, None, :], arg.shape).reshape(-1)
    np.add.at(dx, (ns, rows, cols, cs), grad.reshape(-1))
    return dx


def conv2d(x, kernels, stride=1):
    """Valid convolution of one H,W,C tensor with K,K,C,F kernels."""
    if x.rank != 3 or kernels.rank != 4:
        raise ShapeError(
            f"conv2d needs H,W,C input and K,K,C,F kernels, got {x.shape} and {kernels.shape}"
        )
    out, _ = conv2d_batch(x.array[None], kernels.array, stride, accumulate64=True)
    return Tensor(out[0])


def maxpool2d(x, window, stride):
    """Max pooling of one H,W,C tensor; returns (pooled, argmax indices)."""
    if x.rank != 3:
        raise ShapeError(f"maxpool2d needs an H,W,C input, got {x.shape}")
    pooled, arg = maxpool2d_batch(x.array[None], window, stride)
    return Tensor(pooled[0]), arg[0]


def concat(parts):
    """Concatenate rank-1 tensors in argument order."""
    if not parts:
        raise ShapeError("concat of an empty list")
    for p in parts:
        if p.rank != 1:
            raise ShapeError(f"concat needs rank-1 parts, got {p.shape}")
    return Tensor(np.concatenate([p.array for p in parts]))


def add(a, b):
    _require_same_shape(a, b, "add")
    return Tensor(a.array + b.array)


def mul(a, b):
    _require_same_shape(a, b, "mul")
    return Tensor(a.array * b.array)


def scalar_add(a, s):
    return Tensor(a.array + np.float32(s))


def scalar_mul(a, s):
    return Tensor(a.array * np.float32(s))


def transpose(a):
    if a.rank != 2:
        raise ShapeError(f"transpose needs a rank-2 tensor, got {a.shape}")
    return Tensor(a.array.T)


def argmax_last(a):
    """Index of the maximum along the last axis (first occurrence on ties)."""
    return a.array.argmax(axis=-1)


def row_sum(a):
    if a.rank != 2:
        raise ShapeError(f"row_sum needs a rank-2 tensor, got {a.shape}")
    return Tensor(a.array.sum(axis=1))


def row_mean(a):
    if a.rank != 2:
        raise ShapeError(f"row_mean needs a rank-2 tensor, got {a.shape}")
    return Tensor(a.array.mean(axis=1))


def _require_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def save_pft(path, array):
    """Write an array to a PFT1 file; round-trip is bit-exact."""
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    with open(path, "wb") as fh:
        fh.write(PFT1_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_pft(path):
    """Read a PFT1 file back into a float32 ndarray."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != PFT1_MAGIC:
            raise ValueError(f"{path}: not a PFT1 file (magic {magic!r})")
        (rank,) = struct.unpack("<I", fh.read(4))
        dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise ValueError(f"{path}: truncated payload")
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return arr.astype(np.float32)
