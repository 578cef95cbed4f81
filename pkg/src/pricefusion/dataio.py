"""On-disk dataset layout and loading.

A dataset directory holds:

    manifest.txt          key=value lines (widths, class counts, protocol)
    train_features.pft    N_train x D feature matrix (PFT1)
    test_features.pft     N_test x D
    train_labels.txt      one class id per line
    test_labels.txt
    train_indices.txt     original record index per line (keys embedding rows)
    test_indices.txt
    train_images.pft      optional N,H,W,C image stack
    test_images.pft
    embeddings.pft        optional full-corpus external embedding matrix

External embedding files are keyed by original record index, so one
matrix covers both splits; the loader selects rows via the index files.
"""

import os
from dataclasses import dataclass

import numpy as np

from .tensor import load_pft, save_pft


@dataclass
class Split:
    features: np.ndarray
    labels: np.ndarray
    indices: np.ndarray
    images: np.ndarray = None
    embeddings: np.ndarray = None

    def __len__(self):
        return len(self.features)

    def aux_for(self, model):
        if model.aux_kind == "images":
            if self.images is None:
                raise ValueError(f"model {model.builder_id} needs images; none loaded")
            return self.images
        if model.aux_kind == "embeddings":
            if self.embeddings is None:
                raise ValueError(
                    f"model {model.builder_id} needs an external embedding file"
                )
            return self.embeddings
        return None


@dataclass
class Dataset:
    train: Split
    test: Split
    manifest: dict
    path: str = ""

    @property
    def feature_width(self):
        return self.train.features.shape[1]

    @property
    def image_shape(self):
        if self.train.images is None:
            return None
        return tuple(self.train.images.shape[1:])


def stratified_split(labels, ratio, rng):
    """Seeded per-class split; returns (train_idx, test_idx) sorted ascending."""
    labels = np.asarray(labels)
    train, test = [], []
    for cls in sorted(set(labels.tolist())):
        members = np.flatnonzero(labels == cls)
        perm = members[rng.shuffled_indices(len(members))]
        cut = int(round(len(members) * ratio))
        train.extend(perm[:cut].tolist())
        test.extend(perm[cut:].tolist())
    return np.array(sorted(train)), np.array(sorted(test))


def _write_ints(path, values):
    with open(path, "w") as fh:
        fh.write("\n".join(str(int(v)) for v in values) + "\n")


def _read_ints(path):
    with open(path) as fh:
        return np.array([int(line) for line in fh if line.strip()])


def save_dataset(out_dir, train, test, manifest_lines):
    os.makedirs(out_dir, exist_ok=True)
    for name, split in (("train", train), ("test", test)):
        save_pft(os.path.join(out_dir, f"{name}_features.pft"), split.features)
        _write_ints(os.path.join(out_dir, f"{name}_labels.txt"), split.labels)
        _write_ints(os.path.join(out_dir, f"{name}_indices.txt"), split.indices)
        if split.images is not None:
            save_pft(os.path.join(out_dir, f"{name}_images.pft"), split.images)
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(manifest_lines) + "\n")


def read_manifest(path):
    entries = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                key, _, val = line.partition("=")
                entries[key] = val
    return entries


def load_dataset(data_dir, embedding_path=None):
    """Load a dataset directory; optionally attach external embeddings."""
    manifest_path = os.path.join(data_dir, "manifest.txt")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
    manifest = read_manifest(manifest_path)
    splits = {}
    for name in ("train", "test"):
        features = load_pft(os.path.join(data_dir, f"{name}_features.pft"))
        labels = _read_ints(os.path.join(data_dir, f"{name}_labels.txt"))
        indices = _read_ints(os.path.join(data_dir, f"{name}_indices.txt"))
        if not (len(features) == len(labels) == len(indices)):
            raise ValueError(f"{data_dir}: {name} split row counts disagree")
        images = None
        image_file = os.path.join(data_dir, f"{name}_images.pft")
        if os.path.exists(image_file):
            images = load_pft(image_file)
            if len(images) != len(features):
                raise ValueError(f"{data_dir}: {name} image count != record count")
        splits[name] = Split(features, labels, indices, images=images)
    if embedding_path is None:
        default = os.path.join(data_dir, "embeddings.pft")
        embedding_path = default if os.path.exists(default) else None
    if embedding_path is not None:
        if not os.path.exists(embedding_path):
            raise FileNotFoundError(f"embedding file not found: {embedding_path}")
        matrix = load_pft(embedding_path)
        n_records = len(splits["train"]) + len(splits["test"])
        if len(matrix) != n_records:
            raise ValueError(
                f"{embedding_path}: {len(matrix)} embedding rows for "
                f"{n_records} dataset records"
            )
        for split in splits.values():
            split.embeddings = matrix[split.indices]
    return Dataset(train=splits["train"], test=splits["test"],
                   manifest=manifest, path=data_dir)
