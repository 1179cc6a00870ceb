"""Tabular ingestion: schemas, vocabularies, encoding, splits, synthetic data.

Raw records are dicts of column name to raw string (as read from CSV).
Categorical fields use the raw string as the token; numeric fields are
discretized to a token first. Per field, token ids are dense in [0, s_i)
with id 0 reserved for out-of-vocabulary values in every field.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from fcn_ctr.numerics import Rng

OOV_TOKEN = "<OOV>"
OOV_ID = 0

DISCRETIZE_MODES = ("lnsq", "log2")


class DataError(Exception):
    """Malformed input data: missing fields, bad labels, degenerate sets."""


@dataclass
class FieldSpec:
    """One input column: its name, numeric/categorical kind, and the minimum
    occurrence count below which tokens fall back to the OOV id."""

    name: str
    kind: str = "categorical"  # "categorical" | "numeric"
    min_count: int = 1

    def __post_init__(self):
        if self.kind not in ("categorical", "numeric"):
            raise ValueError(f"field {self.name!r}: unknown kind {self.kind!r}")
        if self.min_count < 1:
            raise ValueError(f"field {self.name!r}: min_count must be >= 1")


@dataclass
class FeatureSchema:
    """Ordered field specs plus per-field token-to-id vocabularies.

    ``sizes[i]`` is the vocabulary size of field i including the OOV slot,
    so every encoded id satisfies ``0 <= id < sizes[i]``.
    """

    fields: list[FieldSpec]
    vocabs: list[dict[str, int]]
    sizes: list[int]
    discretize: str = "lnsq"

    @property
    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]

    @property
    def num_fields(self) -> int:
        return len(self.fields)


@dataclass
class EncodedBatch:
    """Integer-encoded rows: ids (n, f) int64 and optional binary labels (n,)."""

    ids: np.ndarray
    labels: np.ndarray | None
    sizes: list[int] = field(default_factory=list)

    @property
    def n(self) -> int:
        return int(self.ids.shape[0])

    def rows(self, index) -> "EncodedBatch":
        labels = None if self.labels is None else self.labels[index]
        return EncodedBatch(self.ids[index], labels, self.sizes)


def discretize_numeric(raw, mode: str = "lnsq") -> str:
    """Bucket one raw numeric value into a token.

    ``lnsq``: floor of the squared natural log for x > 2, else "1".
    ``log2``: floor of the base-2 log for x > 2, else "1".
    Non-finite or unparseable values map to the OOV token.
    """
    if mode not in DISCRETIZE_MODES:
        raise ValueError(f"unknown discretize mode {mode!r}")
    try:
        x = float(raw)
    except (TypeError, ValueError):
        return OOV_TOKEN
    if not math.isfinite(x):
        return OOV_TOKEN
    if x <= 2.0:
        return "1"
    if mode == "lnsq":
        return str(math.floor(math.log(x) ** 2))
    return str(math.floor(math.log2(x)))


def _token_of(record: dict, spec: FieldSpec, discretize: str) -> str:
    raw = record[spec.name]
    if spec.kind == "numeric":
        return discretize_numeric(raw, discretize)
    return raw if raw is not None else OOV_TOKEN


def build_schema(records: list[dict], field_specs: list[FieldSpec],
                 discretize: str = "lnsq") -> FeatureSchema:
    """Count tokens and assign ids per field.

    Tokens occurring at least ``min_count`` times get ids in first-seen order
    starting at 1; everything else (including tokens unseen at encode time)
    maps to id 0. Two fields never share a vocabulary.
    """
    if not records:
        raise DataError("build_schema: no records")
    names = [s.name for s in field_specs]
    if len(set(names)) != len(names):
        raise ValueError("build_schema: duplicate field names")
    if discretize not in DISCRETIZE_MODES:
        raise ValueError(f"unknown discretize mode {discretize!r}")

    counts: list[dict[str, int]] = [{} for _ in field_specs]
    first_seen: list[list[str]] = [[] for _ in field_specs]
    for idx, record in enumerate(records):
        for j, spec in enumerate(field_specs):
            if spec.name not in record:
                raise DataError(f"record {idx}: missing field {spec.name!r}")
            tok = _token_of(record, spec, discretize)
            c = counts[j]
            if tok in c:
                c[tok] += 1
            else:
                c[tok] = 1
                first_seen[j].append(tok)

    vocabs: list[dict[str, int]] = []
    sizes: list[int] = []
    for j, spec in enumerate(field_specs):
        vocab = {OOV_TOKEN: OOV_ID}
        next_id = 1
        for tok in first_seen[j]:
            if tok == OOV_TOKEN:
                continue
            if counts[j][tok] >= spec.min_count:
                vocab[tok] = next_id
                next_id += 1
        vocabs.append(vocab)
        sizes.append(next_id)
    return FeatureSchema(list(field_specs), vocabs, sizes, discretize)


def parse_label(raw, row_number: int) -> int:
    value = (raw or "").strip()
    if value == "1":
        return 1
    if value == "0":
        return 0
    raise DataError(f"row {row_number}: label must be 0 or 1, got {raw!r}")


def encode(records: list[dict], schema: FeatureSchema,
           label_column: str = "label", require_labels: bool = True) -> EncodedBatch:
    """Map raw records to an integer id matrix plus labels.

    Unknown tokens encode to id 0. Row numbers in error messages are
    1-based data rows (the header is row 1).
    """
    n = len(records)
    f = schema.num_fields
    ids = np.zeros((n, f), dtype=np.int64)
    has_labels = require_labels or (n > 0 and label_column in records[0])
    labels = np.zeros(n, dtype=np.int64) if has_labels else None
    for idx, record in enumerate(records):
        for j, spec in enumerate(schema.fields):
            if spec.name not in record:
                raise DataError(f"record {idx}: missing field {spec.name!r}")
            tok = _token_of(record, spec, schema.discretize)
            ids[idx, j] = schema.vocabs[j].get(tok, OOV_ID)
        if labels is not None:
            if label_column not in record:
                raise DataError(f"row {idx + 2}: missing label column {label_column!r}")
            labels[idx] = parse_label(record[label_column], idx + 2)
    return EncodedBatch(ids, labels, list(schema.sizes))


def split(batch: EncodedBatch, fractions, rng: Rng) -> tuple[EncodedBatch, ...]:
    """Shuffle rows under ``rng`` and cut them into disjoint parts.

    Part sizes come from cumulative rounding of the fractions, so they cover
    every row exactly once. Raises if any part would be empty.
    """
    fractions = [float(x) for x in fractions]
    if any(x <= 0 for x in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be positive and sum to 1, got {fractions}")
    n = batch.n
    perm = rng.permutation(n)
    bounds = [0]
    acc = 0.0
    for frac in fractions:
        acc += frac
        bounds.append(int(round(acc * n)))
    bounds[-1] = n
    parts = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi <= lo:
            raise DataError(f"split produced an empty part for fractions {fractions} on {n} rows")
        parts.append(batch.rows(perm[lo:hi]))
    return tuple(parts)


def synth_interaction_data(num_fields: int, cardinality: int, order: int,
                           rows: int, rng: Rng, noise: float = 0.05):
    """Generate a pure interaction-of-order-k classification workload.

    Every category of every field gets a hidden value in {-1, +1}, balanced
    within each field (as evenly as the cardinality allows). A row's clean
    label is 1 iff the product of the hidden values of its first ``order``
    fields is +1; labels are then flipped with probability ``noise``. Balanced
    assignments make every interaction of fewer than ``order`` fields carry
    zero signal by construction.

    Returns ``(records, truth)`` where records are dicts with columns
    ``f0..f{num_fields-1}`` (tokens ``v0..v{cardinality-1}``) plus ``label``,
    and ``truth`` describes the hidden assignment for auditing.
    """
    if order < 1 or order > num_fields:
        raise ValueError(f"order must be in [1, {num_fields}], got {order}")
    if cardinality < 2:
        raise ValueError(f"cardinality must be >= 2, got {cardinality}")

    latents = []
    for _ in range(num_fields):
        vals = [1] * ((cardinality + 1) // 2) + [-1] * (cardinality // 2)
        rng.shuffle(vals)
        latents.append(np.array(vals, dtype=np.int64))

    cats = rng.integers(cardinality, size=(rows, num_fields))
    signs = np.ones(rows, dtype=np.int64)
    for j in range(order):
        signs *= latents[j][cats[:, j]]
    labels = (signs > 0).astype(np.int64)
    flips = rng.random(rows) < noise
    labels = np.where(flips, 1 - labels, labels)

    records = []
    for i in range(rows):
        rec = {f"f{j}": f"v{cats[i, j]}" for j in range(num_fields)}
        rec["label"] = str(int(labels[i]))
        records.append(rec)

    truth = {
        "order": order,
        "noise": noise,
        "latents": {
            f"f{j}": {f"v{c}": int(latents[j][c]) for c in range(cardinality)}
            for j in range(num_fields)
        },
    }
    return records, truth


def read_csv(path) -> tuple[list[str], list[dict]]:
    """Read an RFC 4180 CSV with a header row into (columns, records)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file, expected a header row")
        columns = list(reader.fieldnames)
        records = []
        for row in reader:
            if None in row or any(v is None for v in row.values()):
                raise DataError(f"{path}: row {reader.line_num}: wrong number of columns")
            records.append(row)
    return columns, records


def write_csv(path, columns: list[str], records: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(records)
