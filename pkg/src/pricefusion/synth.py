"""Seeded synthetic datasets for desk-scale verification.

Two generators, both with labels balanced across the four classes:

* unimodal: four well-separated Gaussian blobs in tabular feature space.
* multimodal: the class is ``2 * t + (qv XOR qh)`` where ``t`` is carried
  by one tabular column and ``(qv, qh)`` is the quadrant of a bright blob
  in an otherwise dark image. Knowing only the tabular side leaves two
  equally likely classes (50% ceiling); knowing only the image likewise;
  both together determine the class exactly.

The multimodal generator also emits a synthetic external-embedding
matrix (quadrant one-hot plus noise) so the embedding-file model path
can be exercised without any pretrained network.
"""

import os

import numpy as np

from .dataio import Split, save_dataset, stratified_split
from .rng import Rng
from .tensor import save_pft

UNIMODAL_WIDTH = 20
MULTIMODAL_WIDTH = 100
IMAGE_SIDE = 32
BLOB_SIDE = 6
EMBED_WIDTH = 32


def _balanced_labels(rng, n):
    labels = np.arange(n) % 4
    return labels[rng.shuffled_indices(n)]


def synth_unimodal(seed, n):
    """Four separable Gaussian blobs; returns (features, labels)."""
    if n < 40:
        raise ValueError(f"need at least 40 records, got {n}")
    rng = Rng(seed)
    labels = _balanced_labels(rng, n)
    centers = np.zeros((4, UNIMODAL_WIDTH), dtype=np.float32)
    for cls in range(4):
        centers[cls, cls * 4 : cls * 4 + 4] = 1.0
    features = centers[labels] + rng.normal(0.0, 0.08, (n, UNIMODAL_WIDTH))
    return features.astype(np.float32), labels


def synth_multimodal(seed, n):
    """Jointly-determined classes; returns (features, images, embeddings, labels)."""
    if n < 40:
        raise ValueError(f"need at least 40 records, got {n}")
    rng = Rng(seed)
    labels = _balanced_labels(rng, n)
    t = labels >> 1
    low = labels & 1
    features = rng.uniform(0.0, 1.0, (n, MULTIMODAL_WIDTH))
    features[:, 0] = 0.15 + 0.7 * t + rng.normal(0.0, 0.05, n)
    images = rng.uniform(0.0, 0.2, (n, IMAGE_SIDE, IMAGE_SIDE, 1))
    half = IMAGE_SIDE // 2
    quadrant = np.empty(n, dtype=np.int64)
    for i in range(n):
        qv = rng.integer(0, 2)
        qh = qv ^ int(low[i])
        quadrant[i] = 2 * qv + qh
        room = half - BLOB_SIDE
        r = qv * half + rng.integer(0, room + 1)
        c = qh * half + rng.integer(0, room + 1)
        images[i, r : r + BLOB_SIDE, c : c + BLOB_SIDE, 0] = rng.uniform(
            0.8, 1.0, (BLOB_SIDE, BLOB_SIDE)
        )
    embeddings = rng.normal(0.0, 0.1, (n, EMBED_WIDTH))
    embeddings[np.arange(n), quadrant] += 1.0
    return (features.astype(np.float32), images.astype(np.float32),
            embeddings.astype(np.float32), labels)


def tabular_only_ceiling():
    """Best possible accuracy from tabular features alone, by construction."""
    return 0.5


def write_synth_dataset(out_dir, seed, n, mode, split_ratio=0.8):
    """Generate, split and persist a synthetic dataset directory."""
    if mode not in ("unimodal", "multimodal"):
        raise ValueError(f"mode must be unimodal or multimodal, got {mode!r}")
    images = embeddings = None
    if mode == "unimodal":
        features, labels = synth_unimodal(seed, n)
    else:
        features, images, embeddings, labels = synth_multimodal(seed, n)
    split_rng = Rng(seed + 1)
    train_idx, test_idx = stratified_split(labels, split_ratio, split_rng)
    splits = {}
    for name, idx in (("train", train_idx), ("test", test_idx)):
        splits[name] = Split(
            features=features[idx],
            labels=labels[idx],
            indices=idx,
            images=images[idx] if images is not None else None,
        )
    lines = [
        f"mode=synthetic-{mode}",
        f"feature_width={features.shape[1]}",
        f"n_records={n}",
        f"seed={seed}",
        f"split_protocol=stratified holdout {split_ratio:g}",
    ]
    if images is not None:
        lines.append(f"image_shape={IMAGE_SIDE},{IMAGE_SIDE},1")
        lines.append(f"embed_width={EMBED_WIDTH}")
    for cls in range(4):
        lines.append(f"class_count.{cls}={int((labels == cls).sum())}")
    save_dataset(out_dir, splits["train"], splits["test"], lines)
    if embeddings is not None:
        save_pft(os.path.join(out_dir, "embeddings.pft"), embeddings)
    return out_dir
