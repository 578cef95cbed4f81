"""Raw cellphone records to fixed-width feature vectors and price classes.

Field-level cleaning follows the dataset's normalization rules: unit
suffixes stripped from weight, resolution split into vertical and
horizontal pixel counts, the trailing "p" removed from video modes, RAM
converted to megabytes, and an OS vocabulary capped at 20 entries and a
processor vocabulary at 26 (most frequent values plus a reserved OTHER
slot for anything unseen). Prices are bucketed into four classes at
250/500/750 euro. Hit and hit-count columns are carried through parsing
but never encoded.

Invalid records are skipped with a logged reason, never imputed.
"""

import csv
import logging
import re
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

OS_VOCAB_SIZE = 20
PROCESSOR_VOCAB_SIZE = 26
OTHER = "<OTHER>"

CSV_FIELDS = [
    "brand", "model", "release_date", "weight", "os", "storage", "hit",
    "hit_count", "display_size", "display_resolution", "camera", "video",
    "processor", "ram", "battery", "battery_type", "image_path", "price_euro",
]

NUMERIC_COLUMNS = [
    "weight_g", "storage_mb", "display_size", "v_resolution", "h_resolution",
    "camera_mp", "video_p", "ram_mb", "battery_mah", "release_year",
]

CATEGORICAL_COLUMNS = ["brand", "os", "processor", "battery_type"]


class InvalidRecordError(ValueError):
    """A raw field cannot be parsed; carries the offending field name."""

    def __init__(self, fieldname, message):
        super().__init__(f"{fieldname}: {message}")
        self.fieldname = fieldname


@dataclass
class RawRecord:
    brand: str = ""
    model: str = ""
    release_date: str = ""
    weight: str = ""
    os: str = ""
    storage: str = ""
    hit: str = ""
    hit_count: str = ""
    display_size: str = ""
    display_resolution: str = ""
    camera: str = ""
    video: str = ""
    processor: str = ""
    ram: str = ""
    battery: str = ""
    battery_type: str = ""
    image_path: str = ""
    price_euro: float = 0.0


_LEADING_NUMBER = re.compile(r"[-+]?\d+(?:\.\d+)?")
_RESOLUTION = re.compile(r"(\d+)\s*[xX×]\s*(\d+)")


def leading_number(s, fieldname):
    """First numeric token in the string; unit suffixes are ignored."""
    m = _LEADING_NUMBER.search(s)
    if not m:
        raise InvalidRecordError(fieldname, f"no digits in {s!r}")
    return float(m.group(0))


def parse_weight(s):
    """Weight in grams with any unit text ("g", "gr", "grams") stripped."""
    return leading_number(s, "weight")


def split_resolution(s):
    """Split "<v> x <h>" into (vertical, horizontal) pixel counts."""
    m = _RESOLUTION.search(s)
    if not m:
        raise InvalidRecordError("display_resolution", f"not of the form AxB: {s!r}")
    return int(m.group(1)), int(m.group(2))


def parse_video(s):
    """Video mode as an integer; the "p" marker and any rate suffix dropped."""
    return int(leading_number(s, "video"))


def parse_ram(s):
    """RAM in megabytes. Explicit GB/MB units are honored; a bare number
    up to 64 is read as gigabytes, larger values as already-megabytes."""
    value = leading_number(s, "ram")
    lowered = s.lower()
    if "gb" in lowered or "gigabyte" in lowered:
        return int(value * 1024)
    if "mb" in lowered or "megabyte" in lowered:
        return int(value)
    return int(value * 1024) if value <= 64 else int(value)


def parse_storage_mb(s):
    """Storage in megabytes, same unit handling as RAM."""
    return parse_ram(s)


def parse_release_year(s):
    m = re.search(r"(19|20)\d{2}", s)
    if not m:
        raise InvalidRecordError("release_date", f"no 4-digit year in {s!r}")
    return int(m.group(0))


def price_class(price_euro):
    """Price bucket: 0 below 250, then 250/500/750 boundaries upward."""
    if price_euro <= 0:
        raise InvalidRecordError("price_euro", f"nonpositive price {price_euro}")
    if price_euro < 250:
        return 0
    if price_euro < 500:
        return 1
    if price_euro < 750:
        return 2
    return 3


def numeric_features(record):
    """Parse every numeric column of one record; raises InvalidRecordError."""
    v_res, h_res = split_resolution(record.display_resolution)
    return {
        "weight_g": parse_weight(record.weight),
        "storage_mb": float(parse_storage_mb(record.storage)),
        "display_size": leading_number(record.display_size, "display_size"),
        "v_resolution": float(v_res),
        "h_resolution": float(h_res),
        "camera_mp": leading_number(record.camera, "camera"),
        "video_p": float(parse_video(record.video)),
        "ram_mb": float(parse_ram(record.ram)),
        "battery_mah": leading_number(record.battery, "battery"),
        "release_year": float(parse_release_year(record.release_date)),
    }


def _normalize_category(value):
    return " ".join(value.strip().lower().split())


def _capped_vocab(values, cap):
    """Most frequent values up to cap-1, plus the reserved OTHER slot."""
    counts = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    ranked = sorted(counts, key=lambda v: (-counts[v], v))
    return ranked[: cap - 1] + [OTHER]


@dataclass
class EncoderSpec:
    """Fitted encoding: category vocabularies and per-column min/max."""

    vocabularies: dict = field(default_factory=dict)
    numeric_range: dict = field(default_factory=dict)

    @property
    def width(self):
        return sum(len(v) for v in self.vocabularies.values()) + len(NUMERIC_COLUMNS)


def fit_encoder(train_records):
    """Fit vocabularies and numeric ranges on the training split only."""
    if not train_records:
        raise ValueError("cannot fit an encoder on an empty training set")
    spec = EncoderSpec()
    for col, cap in (
        ("brand", None),
        ("os", OS_VOCAB_SIZE),
        ("processor", PROCESSOR_VOCAB_SIZE),
        ("battery_type", None),
    ):
        values = [_normalize_category(getattr(r, col)) for r in train_records]
        if cap is None:
            vocab = sorted(set(values)) + [OTHER]
        else:
            vocab = _capped_vocab(values, cap)
        spec.vocabularies[col] = vocab
    columns = {c: [] for c in NUMERIC_COLUMNS}
    for r in train_records:
        for col, val in numeric_features(r).items():
            columns[col].append(val)
    for col, vals in columns.items():
        spec.numeric_range[col] = (min(vals), max(vals))
    return spec


def encode(record, spec):
    """One record to a feature vector and price class; pure in (record, spec)."""
    values = np.zeros(spec.width, dtype=np.float32)
    offset = 0
    for col in CATEGORICAL_COLUMNS:
        vocab = spec.vocabularies[col]
        value = _normalize_category(getattr(record, col))
        try:
            slot = vocab.index(value)
        except ValueError:
            slot = vocab.index(OTHER)
        values[offset + slot] = 1.0
        offset += len(vocab)
    numerics = numeric_features(record)
    for col in NUMERIC_COLUMNS:
        lo, hi = spec.numeric_range[col]
        if hi > lo:
            values[offset] = (numerics[col] - lo) / (hi - lo)
        else:
            values[offset] = 0.0  # constant column on the training split
        offset += 1
    if not np.all(np.isfinite(values)):
        raise InvalidRecordError("features", "non-finite value after scaling")
    return values, price_class(record.price_euro)


def read_csv(path):
    """Read raw records; malformed rows are skipped with a logged reason.

    Returns (records, skipped) where skipped is a list of (row, reason).
    """
    records, skipped = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing CSV columns {sorted(missing)}")
        for rownum, row in enumerate(reader, start=2):
            try:
                price = float(row["price_euro"])
                record = RawRecord(
                    **{f: (row[f] or "").strip() for f in CSV_FIELDS if f != "price_euro"},
                    price_euro=price,
                )
                price_class(price)
                numeric_features(record)
            except (InvalidRecordError, ValueError) as exc:
                log.warning("skipping row %d: %s", rownum, exc)
                skipped.append((rownum, str(exc)))
                continue
            records.append(record)
    return records, skipped


def encoder_manifest_lines(spec, class_counts):
    """Plain-text manifest body: width, vocabularies, ranges, class counts."""
    lines = [f"feature_width={spec.width}"]
    lines.append("note=model column excluded; hit/hit_count carried but never encoded")
    for col in CATEGORICAL_COLUMNS:
        lines.append(f"vocab.{col}={'|'.join(spec.vocabularies[col])}")
    for col in NUMERIC_COLUMNS:
        lo, hi = spec.numeric_range[col]
        lines.append(f"range.{col}={lo!r},{hi!r}")
    for cls in range(4):
        lines.append(f"class_count.{cls}={class_counts.get(cls, 0)}")
    return lines
