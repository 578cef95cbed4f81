"""Confusion-matrix metrics and PCA projection for embedding exports.

Per-class precision, recall and F1 come from one-vs-rest TP/FP/FN/TN
counts; the headline aggregate is the macro (unweighted) mean over
classes with nonzero support, with the weighted mean emitted alongside.
Zero-denominator cells are defined as 0 and counted as warnings.

PCA uses power iteration with deflation on the column-centered
covariance matrix (tolerance 1e-9, at most 10,000 iterations, seeded
start vectors) and sign-fixes each component so its largest-magnitude
coordinate is positive.
"""

import json

import numpy as np

from .rng import Rng

NUM_CLASSES = 4

POWER_TOL = 1e-9
POWER_MAX_ITER = 10_000

METRIC_NAMES = ("precision", "recall", "f1")


def confusion_matrix(y_true, y_pred):
    """4x4 count matrix, rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) != len(y_pred):
        raise ValueError("label and prediction lengths differ")
    cm = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def metrics(cm):
    """Full evaluation report from a confusion matrix."""
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total == 0:
        raise ValueError("empty confusion matrix")
    report = {
        "averaging": "macro (unweighted over classes with support); "
                     "weighted averages also reported",
        "per_class": [],
        "zero_denominator_warnings": 0,
    }
    support = cm.sum(axis=1)
    per = {name: np.zeros(NUM_CLASSES) for name in METRIC_NAMES}
    for cls in range(NUM_CLASSES):
        tp = int(cm[cls, cls])
        fp = int(cm[:, cls].sum() - tp)
        fn = int(cm[cls, :].sum() - tp)
        precision = _safe_div(tp, tp + fp, report)
        recall = _safe_div(tp, tp + fn, report)
        f1 = _safe_div(2 * precision * recall, precision + recall, report)
        per["precision"][cls] = precision
        per["recall"][cls] = recall
        per["f1"][cls] = f1
        report["per_class"].append(
            {"class": cls, "support": int(support[cls]), "precision": precision,
             "recall": recall, "f1": f1}
        )
    present = support > 0
    for name in METRIC_NAMES:
        report[f"macro_{name}"] = float(per[name][present].mean()) if present.any() else 0.0
        report[f"weighted_{name}"] = (
            float((per[name] * support).sum() / total) if total else 0.0
        )
    report["accuracy"] = float(np.trace(cm)) / total
    report["total"] = total
    report["confusion_matrix"] = cm.tolist()
    return report


def _safe_div(num, den, report):
    if den == 0:
        report["zero_denominator_warnings"] += 1
        return 0.0
    return float(num) / float(den)


def report_json(report, extra=None):
    payload = dict(report)
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def report_text(report, title="evaluation"):
    """Aligned-column plain-text rendering of a report."""
    lines = [title, f"averaging: {report['averaging']}",
             f"samples: {report['total']}  accuracy: {report['accuracy']:.4f}"]
    header = f"{'class':>6} {'support':>8} {'precision':>10} {'recall':>8} {'f1':>8}"
    lines.append(header)
    for row in report["per_class"]:
        lines.append(
            f"{row['class']:>6} {row['support']:>8} {row['precision']:>10.4f} "
            f"{row['recall']:>8.4f} {row['f1']:>8.4f}"
        )
    lines.append(
        f"{'macro':>6} {'':>8} {report['macro_precision']:>10.4f} "
        f"{report['macro_recall']:>8.4f} {report['macro_f1']:>8.4f}"
    )
    lines.append(
        f"{'wtd':>6} {'':>8} {report['weighted_precision']:>10.4f} "
        f"{report['weighted_recall']:>8.4f} {report['weighted_f1']:>8.4f}"
    )
    if report["zero_denominator_warnings"]:
        lines.append(f"zero-denominator cells: {report['zero_denominator_warnings']}")
    return "\n".join(lines) + "\n"


def _power_iteration(cov, rng):
    v = rng.normal(0.0, 1.0, cov.shape[0], dtype=np.float64)
    v /= np.linalg.norm(v)
    for _ in range(POWER_MAX_ITER):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return v, 0.0
        w /= norm
        if np.linalg.norm(w - v) < POWER_TOL:
            v = w
            break
        v = w
    eigenvalue = float(v @ cov @ v)
    return v, eigenvalue


def pca_project(X, dims=2, seed=0):
    """Top-``dims`` principal projection via power iteration with deflation.

    Returns (projected N x dims, explained variance ratios, components).
    """
    X = np.asarray(X, dtype=np.float64)
    n, f = X.shape
    if n < 3 or f < 2:
        raise ValueError(f"need at least 3 samples and 2 features, got {X.shape}")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    total_var = float(np.trace(cov))
    if total_var == 0:
        return (np.zeros((n, dims), dtype=np.float32),
                np.zeros(dims, dtype=np.float32),
                np.zeros((f, dims), dtype=np.float32))
    rng = Rng(seed)
    components = np.zeros((f, dims))
    explained = np.zeros(dims)
    deflated = cov.copy()
    for d in range(dims):
        v, eigenvalue = _power_iteration(deflated, rng)
        # re-orthogonalize against earlier components before sign fixing
        for prev in range(d):
            v -= (v @ components[:, prev]) * components[:, prev]
        norm = np.linalg.norm(v)
        if norm > 0:
            v /= norm
        if v[np.abs(v).argmax()] < 0:
            v = -v
        components[:, d] = v
        explained[d] = max(eigenvalue, 0.0) / total_var
        deflated -= eigenvalue * np.outer(v, v)
    projected = centered @ components
    return (projected.astype(np.float32), explained.astype(np.float32),
            components.astype(np.float32))


def mean_silhouette(points, labels):
    """Mean silhouette coefficient over all points (small-n exact version)."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(points)
    d = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    scores = []
    for i in range(n):
        same = labels == labels[i]
        if same.sum() < 2:
            continue
        a = d[i][same].sum() / (same.sum() - 1)
        b = min(
            d[i][labels == other].mean()
            for other in np.unique(labels)
            if other != labels[i]
        )
        scores.append((b - a) / max(a, b) if max(a, b) > 0 else 0.0)
    return float(np.mean(scores)) if scores else 0.0
