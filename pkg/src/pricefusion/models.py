"""Builders for the five price-classification architectures.

Every builder returns a ModelGraph: a tabular branch, an optional image
branch, a concatenation fusion point and a classification head ending in
a 4-way softmax. Model 1 is unimodal (no image branch, degenerate
fusion); Model 2 consumes precomputed external image embeddings; Models
3-5 run their own convolutional image branch.

Conv hyperparameters default to kernel 3x3, image filters 16/32/64,
tabular filters 8/16, 2x2 stride-2 pooling and a 128-wide branch dense
layer; all of them are echoed into checkpoint manifests.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .layers import (
    Concat,
    Conv2D,
    Dense,
    Flatten,
    MaxPool2D,
    ReLU,
    Reshape,
    Softmax,
    backprop_layers,
    run_layers,
)
from .rng import Rng
from .tensor import ShapeError, load_pft, save_pft

NUM_CLASSES = 4


@dataclass
class ConvSpec:
    """Convolutional hyperparameters shared by models 3-5."""

    kernel: int = 3
    image_filters: tuple = (16, 32, 64)
    tabular_filters: tuple = (8, 16)
    pool_window: int = 2
    pool_stride: int = 2
    branch_dense: int = 128

    def as_dict(self):
        return {
            "kernel": self.kernel,
            "image_filters": ",".join(str(f) for f in self.image_filters),
            "tabular_filters": ",".join(str(f) for f in self.tabular_filters),
            "pool_window": self.pool_window,
            "pool_stride": self.pool_stride,
            "branch_dense": self.branch_dense,
        }


@dataclass
class ModelGraph:
    builder_id: int
    tabular_branch: list
    image_branch: object  # None (unimodal), [] (external embedding), or layer list
    head: list
    meta: dict = field(default_factory=dict)
    fusion: Concat = field(default_factory=Concat)
    fused: np.ndarray = None

    @property
    def needs_aux(self):
        return self.image_branch is not None

    @property
    def aux_kind(self):
        if self.image_branch is None:
            return None
        return "embeddings" if len(self.image_branch) == 0 else "images"

    def forward(self, tabular, aux=None):
        t = run_layers(self.tabular_branch, tabular)
        if self.image_branch is None:
            parts = [t]
        else:
            if aux is None:
                raise ValueError(f"model {self.builder_id} requires a second input")
            parts = [t, run_layers(self.image_branch, aux)]
        self.fused = self.fusion.forward(parts)
        return run_layers(self.head, self.fused)

    def backward(self, dprobs):
        """Backprop; returns param grads keyed by (id(layer), name)."""
        collected = []
        dfused = backprop_layers(self.head, dprobs, collected)
        parts, _ = self.fusion.backward(dfused)
        backprop_layers(self.tabular_branch, parts[0], collected)
        if self.image_branch is not None:
            backprop_layers(self.image_branch, parts[1], collected)
        grads = {}
        for layer, pgrads in collected:
            for name, g in pgrads.items():
                grads[(id(layer), name)] = g
        return grads

    def parameters(self):
        """Ordered (layer, name, array) triples over all branches."""
        out = []
        for section in (self.tabular_branch, self.image_branch or [], self.head):
            for layer in section:
                for name, arr in layer.params.items():
                    out.append((layer, name, arr))
        return out

    def parameter_count(self):
        return sum(arr.size for _, _, arr in self.parameters())

    def infer_shapes(self, tabular_width, aux_shape=None):
        """Walk per-sample shapes through the graph; returns the trace."""
        trace = {"tabular": [], "image": [], "head": []}
        shape = (tabular_width,)
        for layer in self.tabular_branch:
            shape = layer.out_shape(shape)
            trace["tabular"].append((layer.kind, shape))
        parts = [shape]
        if self.image_branch is not None:
            ishape = tuple(aux_shape)
            for layer in self.image_branch:
                ishape = layer.out_shape(ishape)
                trace["image"].append((layer.kind, ishape))
            parts.append(ishape)
        shape = self.fusion.out_shape(parts)
        trace["fused"] = shape
        for layer in self.head:
            shape = layer.out_shape(shape)
            trace["head"].append((layer.kind, shape))
        return trace

    def predict(self, tabular, aux=None):
        return self.forward(tabular, aux).argmax(axis=1)


def _dense_stack(widths, rng, out=None):
    """Dense+ReLU pairs through widths; no activation after ``out``."""
    layers = []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        layers.append(Dense(n_in, n_out, rng))
        layers.append(ReLU())
    if out is not None:
        layers.append(Dense(widths[-1], out, rng))
    return layers


def _conv_stack(in_shape, filters, spec, rng, where):
    """Conv+ReLU+MaxPool stages; raises if the input runs out of extent."""
    layers = []
    shape = tuple(in_shape)
    for stage, f in enumerate(filters):
        conv = Conv2D(spec.kernel, shape[2], f, 1, rng)
        pool = MaxPool2D(spec.pool_window, spec.pool_stride)
        try:
            shape = conv.out_shape(shape)
            shape = pool.out_shape(shape)
        except ShapeError as exc:
            raise ShapeError(
                f"{where} input {tuple(in_shape)} too small for conv/pool stage {stage + 1}: {exc}"
            ) from exc
        layers.extend([conv, ReLU(), pool])
    return layers, shape


def build_model_1(tabular_width, rng, hidden=(300, 120)):
    """Unimodal MLP: Dense+ReLU through ``hidden``, then a softmax head."""
    if tabular_width < 1:
        raise ValueError(f"tabular width must be >= 1, got {tabular_width}")
    branch = _dense_stack((tabular_width,) + tuple(hidden), rng)
    head = [Dense(hidden[-1], NUM_CLASSES, rng), Softmax()]
    meta = _meta(1, tabular_width, hidden=hidden)
    return ModelGraph(1, branch, None, head, meta)


def build_model_2(tabular_width, embed_width, rng, hidden=(300, 120), head_hidden=120):
    """Dense tabular branch fused with external image embedding rows."""
    if embed_width < 1:
        raise ValueError(f"embedding width must be >= 1, got {embed_width}")
    branch = _dense_stack((tabular_width,) + tuple(hidden), rng)
    head = _head(hidden[-1] + embed_width, head_hidden, rng)
    meta = _meta(2, tabular_width, hidden=hidden, head_hidden=head_hidden,
                 embed_width=embed_width)
    return ModelGraph(2, branch, [], head, meta)


def build_model_3(tabular_width, image_shape, rng, hidden=(300, 120),
                  head_hidden=120, conv=None):
    """Dense tabular branch + 3-stage conv image branch with a dense tail."""
    conv = conv or ConvSpec()
    branch = _dense_stack((tabular_width,) + tuple(hidden), rng)
    image, shape = _conv_stack(image_shape, conv.image_filters, conv, rng, "image")
    image.append(Flatten())
    flat = int(np.prod(shape))
    image.extend([Dense(flat, conv.branch_dense, rng), ReLU()])
    head = _head(hidden[-1] + conv.branch_dense, head_hidden, rng)
    meta = _meta(3, tabular_width, hidden=hidden, head_hidden=head_hidden,
                 image_shape=image_shape, conv=conv)
    return ModelGraph(3, branch, image, head, meta)


def build_model_4(tabular_width, image_shape, rng, head_hidden=120, conv=None,
                  _branch_dense=False):
    """Fully convolutional: conv branches on both the tabular matrix and the image."""
    conv = conv or ConvSpec()
    side = math.isqrt(tabular_width)
    if side * side < tabular_width:
        side += 1
    if side < 4:
        raise ShapeError(
            f"tabular width {tabular_width} pads to a {side}x{side} matrix; "
            "need at least 4x4 for two pool stages"
        )
    tab = [Reshape((side, side, 1), pad_to=side * side)]
    stack, tshape = _conv_stack((side, side, 1), conv.tabular_filters, conv, rng, "tabular")
    tab.extend(stack)
    tab.append(Flatten())
    tab_flat = int(np.prod(tshape))
    image, ishape = _conv_stack(image_shape, conv.image_filters, conv, rng, "image")
    image.append(Flatten())
    img_flat = int(np.prod(ishape))
    if _branch_dense:
        tab.extend([Dense(tab_flat, conv.branch_dense, rng), ReLU()])
        image.extend([Dense(img_flat, conv.branch_dense, rng), ReLU()])
        tab_flat = img_flat = conv.branch_dense
    head = _head(tab_flat + img_flat, head_hidden, rng)
    meta = _meta(5 if _branch_dense else 4, tabular_width, head_hidden=head_hidden,
                 image_shape=image_shape, conv=conv, matrix_side=side)
    return ModelGraph(5 if _branch_dense else 4, tab, image, head, meta)


def build_model_5(tabular_width, image_shape, rng, head_hidden=120, conv=None):
    """Model 4 plus a Dense+ReLU tail on each branch before fusion."""
    return build_model_4(tabular_width, image_shape, rng, head_hidden=head_hidden,
                         conv=conv, _branch_dense=True)


def build_model(builder_id, tabular_width, rng, image_shape=None, embed_width=None,
                hidden=(300, 120), head_hidden=120, conv=None):
    """Dispatch on builder id 1-5."""
    if builder_id == 1:
        return build_model_1(tabular_width, rng, hidden=hidden)
    if builder_id == 2:
        if embed_width is None:
            raise ValueError("model 2 requires an embedding width")
        return build_model_2(tabular_width, embed_width, rng, hidden=hidden,
                             head_hidden=head_hidden)
    if image_shape is None:
        raise ValueError(f"model {builder_id} requires an image shape")
    if builder_id == 3:
        return build_model_3(tabular_width, image_shape, rng, hidden=hidden,
                             head_hidden=head_hidden, conv=conv)
    if builder_id == 4:
        return build_model_4(tabular_width, image_shape, rng, head_hidden=head_hidden,
                             conv=conv)
    if builder_id == 5:
        return build_model_5(tabular_width, image_shape, rng, head_hidden=head_hidden,
                             conv=conv)
    raise ValueError(f"unknown builder id {builder_id}")


def extract_fused(model, features, aux=None, batch_size=256):
    """Per-record activation at the fusion point, one row per record."""
    rows = []
    for start in range(0, len(features), batch_size):
        xb = features[start : start + batch_size]
        ab = aux[start : start + batch_size] if aux is not None else None
        model.forward(xb, ab)
        rows.append(model.fused.copy())
    return np.concatenate(rows, axis=0)


def _head(in_width, head_hidden, rng):
    return [
        Dense(in_width, head_hidden, rng),
        ReLU(),
        Dense(head_hidden, NUM_CLASSES, rng),
        Softmax(),
    ]


def _meta(builder_id, tabular_width, hidden=None, head_hidden=None,
          image_shape=None, embed_width=None, conv=None, matrix_side=None):
    meta = {"builder_id": builder_id, "tabular_width": tabular_width}
    if hidden is not None:
        meta["hidden"] = ",".join(str(h) for h in hidden)
    if head_hidden is not None:
        meta["head_hidden"] = head_hidden
    if image_shape is not None:
        meta["image_shape"] = ",".join(str(d) for d in image_shape)
    if embed_width is not None:
        meta["embed_width"] = embed_width
    if matrix_side is not None:
        meta["matrix_side"] = matrix_side
    if conv is not None:
        for key, val in conv.as_dict().items():
            meta[f"conv_{key}"] = val
    return meta


def save_checkpoint(model, out_dir, config=None):
    """Write a checkpoint: plain-text manifest plus one PFT1 file per tensor."""
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"{k}={v}" for k, v in sorted(model.meta.items())]
    if config is not None:
        lines.extend(f"config.{k}={v}" for k, v in sorted(config.as_dict().items()))
    sections = [
        ("tab", model.tabular_branch),
        ("img", model.image_branch or []),
        ("head", model.head),
    ]
    for sec, layers in sections:
        for i, layer in enumerate(layers):
            lines.append(f"layer.{sec}.{i}={layer.kind}")
            for name, arr in layer.params.items():
                fname = f"{sec}_{i}_{name}.pft"
                save_pft(os.path.join(out_dir, fname), arr)
                lines.append(f"tensor.{sec}.{i}.{name}={fname} {','.join(map(str, arr.shape))}")
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(ckpt_dir):
    """Rebuild the graph named in the manifest and restore its weights."""
    manifest_path = os.path.join(ckpt_dir, "manifest.txt")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    entries = {}
    with open(manifest_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                key, _, val = line.partition("=")
                entries[key] = val
    builder_id = int(entries["builder_id"])
    conv = ConvSpec(
        kernel=int(entries.get("conv_kernel", 3)),
        image_filters=_int_tuple(entries.get("conv_image_filters", "16,32,64")),
        tabular_filters=_int_tuple(entries.get("conv_tabular_filters", "8,16")),
        pool_window=int(entries.get("conv_pool_window", 2)),
        pool_stride=int(entries.get("conv_pool_stride", 2)),
        branch_dense=int(entries.get("conv_branch_dense", 128)),
    )
    model = build_model(
        builder_id,
        int(entries["tabular_width"]),
        Rng(0),
        image_shape=_int_tuple(entries["image_shape"]) if "image_shape" in entries else None,
        embed_width=int(entries["embed_width"]) if "embed_width" in entries else None,
        hidden=_int_tuple(entries.get("hidden", "300,120")),
        head_hidden=int(entries.get("head_hidden", 120)),
        conv=conv,
    )
    sections = {"tab": model.tabular_branch, "img": model.image_branch or [],
                "head": model.head}
    for key, val in entries.items():
        if not key.startswith("tensor."):
            continue
        _, sec, idx, name = key.split(".")
        fname = val.split()[0]
        arr = load_pft(os.path.join(ckpt_dir, fname))
        layer = sections[sec][int(idx)]
        if layer.params[name].shape != arr.shape:
            raise ShapeError(
                f"checkpoint tensor {fname} shape {arr.shape} != expected "
                f"{layer.params[name].shape}"
            )
        layer.params[name] = arr
    return model


def _int_tuple(text):
    return tuple(int(v) for v in text.split(",") if v)
