"""Tabular datasets with declared schemas.

Attribute domains are declared up front in a JSON schema and never read off
the data, since splits that depend on observed domains would leak
information. Discrete values are stored as integer codes into the declared
domain; continuous values as floats inside the declared bounds.

Schema format::

    {
      "class": {"name": "label", "labels": ["no", "yes"]},
      "attributes": [
        {"name": "age", "kind": "continuous", "bounds": [17, 90]},
        {"name": "sex", "kind": "discrete", "domain": ["F", "M"]}
      ]
    }
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

DEFAULT_BINS = 8


class SchemaError(ValueError):
    """The schema or the data does not conform."""


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str  # "discrete" or "continuous"
    domain: tuple = ()
    bounds: Optional[tuple[float, float]] = None

    def __post_init__(self) -> None:
        if self.kind == "discrete":
            if len(self.domain) == 0:
                raise SchemaError(f"discrete attribute {self.name!r} needs a non-empty domain")
            if len(set(self.domain)) != len(self.domain):
                raise SchemaError(f"attribute {self.name!r} has duplicate domain values")
        elif self.kind == "continuous":
            if self.bounds is None or not self.bounds[0] < self.bounds[1]:
                raise SchemaError(f"continuous attribute {self.name!r} needs bounds lo < hi")
        else:
            raise SchemaError(f"attribute {self.name!r} has unknown kind {self.kind!r}")

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    def to_dict(self) -> dict:
        if self.is_discrete:
            return {"name": self.name, "kind": self.kind, "domain": list(self.domain)}
        return {"name": self.name, "kind": self.kind, "bounds": list(self.bounds)}


@dataclass(frozen=True)
class Schema:
    attributes: tuple[Attribute, ...]
    class_name: str
    labels: tuple

    def __post_init__(self) -> None:
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError("attribute names must be unique")
        if self.class_name in names:
            raise SchemaError("the class column cannot also be an attribute")
        if len(self.labels) == 0:
            raise SchemaError("need at least one class label")

    def attribute(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def to_dict(self) -> dict:
        return {
            "class": {"name": self.class_name, "labels": list(self.labels)},
            "attributes": [a.to_dict() for a in self.attributes],
        }

    @classmethod
    def from_dict(cls, spec: Mapping) -> "Schema":
        try:
            cls_spec = spec["class"]
            attrs = []
            for a in spec["attributes"]:
                if a["kind"] == "discrete":
                    attrs.append(Attribute(a["name"], "discrete", tuple(str(v) for v in a["domain"])))
                else:
                    lo, hi = a["bounds"]
                    attrs.append(Attribute(a["name"], a["kind"], bounds=(float(lo), float(hi))))
            return cls(tuple(attrs), cls_spec["name"], tuple(str(v) for v in cls_spec["labels"]))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class TabularDataset:
    """Column store: ``columns[name]`` holds int codes or floats, ``y`` holds label codes."""

    schema: Schema
    columns: Mapping[str, np.ndarray]
    y: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.y)
        for a in self.schema.attributes:
            col = self.columns.get(a.name)
            if col is None:
                raise SchemaError(f"missing column {a.name!r}")
            if len(col) != n:
                raise SchemaError(f"column {a.name!r} has {len(col)} rows, expected {n}")
            if a.is_discrete:
                if n and (col.min() < 0 or col.max() >= len(a.domain)):
                    raise SchemaError(f"column {a.name!r} has codes outside its domain")
            elif n and (col.min() < a.bounds[0] or col.max() > a.bounds[1]):
                raise SchemaError(f"column {a.name!r} has values outside {a.bounds}")
        if n and (self.y.min() < 0 or self.y.max() >= len(self.schema.labels)):
            raise SchemaError("class codes outside the label set")

    @property
    def n_rows(self) -> int:
        return int(len(self.y))

    def __len__(self) -> int:
        return self.n_rows

    def subset(self, idx) -> "TabularDataset":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.int64)
        return TabularDataset(self.schema, {k: v[idx] for k, v in self.columns.items()}, self.y[idx])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=len(self.schema.labels))

    @classmethod
    def from_rows(cls, schema: Schema, rows: Sequence[Mapping]) -> "TabularDataset":
        columns = {}
        for a in schema.attributes:
            if a.is_discrete:
                lookup = {v: i for i, v in enumerate(a.domain)}
                try:
                    columns[a.name] = np.array([lookup[str(r[a.name])] for r in rows], dtype=np.int64)
                except KeyError as exc:
                    raise SchemaError(f"value {exc} not in the domain of {a.name!r}") from exc
            else:
                columns[a.name] = np.array([float(r[a.name]) for r in rows], dtype=float)
        lookup = {v: i for i, v in enumerate(schema.labels)}
        try:
            y = np.array([lookup[str(r[schema.class_name])] for r in rows], dtype=np.int64)
        except KeyError as exc:
            raise SchemaError(f"label {exc} not in the declared label set") from exc
        return cls(schema, columns, y)


def read_csv(path, schema: Schema) -> TabularDataset:
    """Read a headed CSV file and check it against ``schema``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(schema.names + [schema.class_name]) - set(reader.fieldnames or ())
        if missing:
            raise SchemaError(f"{path}: missing columns {sorted(missing)}")
        rows = list(reader)
    return TabularDataset.from_rows(schema, rows)


def write_csv(path, data: TabularDataset) -> None:
    schema = data.schema
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(schema.names + [schema.class_name])
        for i in range(data.n_rows):
            row = []
            for a in schema.attributes:
                v = data.columns[a.name][i]
                row.append(a.domain[v] if a.is_discrete else repr(float(v)))
            row.append(schema.labels[data.y[i]])
            writer.writerow(row)


def bin_edges(attr: Attribute, bins: int = DEFAULT_BINS) -> np.ndarray:
    return np.linspace(attr.bounds[0], attr.bounds[1], bins + 1)


def discretize(data: TabularDataset, bins: int = DEFAULT_BINS) -> TabularDataset:
    """Replace continuous attributes by equal-width bin codes over their declared bounds."""
    attrs = []
    columns = {}
    for a in data.schema.attributes:
        col = data.columns[a.name]
        if a.is_discrete:
            attrs.append(a)
            columns[a.name] = col
            continue
        edges = bin_edges(a, bins)
        codes = np.clip(np.searchsorted(edges, col, side="right") - 1, 0, bins - 1)
        attrs.append(Attribute(a.name, "discrete", tuple(f"bin{i}" for i in range(bins))))
        columns[a.name] = codes.astype(np.int64)
    schema = Schema(tuple(attrs), data.schema.class_name, data.schema.labels)
    return TabularDataset(schema, columns, data.y)


# synthetic generators -------------------------------------------------------


def make_separable(n: int = 400, seed: int = 0, n_noise: int = 2) -> TabularDataset:
    """Two classes split by ``x0 + x1 > 1`` on the unit square, plus uninformative columns."""
    rng = np.random.default_rng(seed)
    x = rng.random((n, 2 + n_noise))
    y = (x[:, 0] + x[:, 1] > 1.0).astype(np.int64)
    attrs = tuple(Attribute(f"x{i}", "continuous", bounds=(0.0, 1.0)) for i in range(2 + n_noise))
    schema = Schema(attrs, "label", ("neg", "pos"))
    return TabularDataset(schema, {f"x{i}": x[:, i] for i in range(2 + n_noise)}, y)


def make_axis_separable(n: int = 400, seed: int = 0, n_noise: int = 2) -> TabularDataset:
    """Two classes decided by ``x0 > 0.5``; easy for axis-aligned random trees."""
    rng = np.random.default_rng(seed)
    x = rng.random((n, 1 + n_noise))
    y = (x[:, 0] > 0.5).astype(np.int64)
    attrs = tuple(Attribute(f"x{i}", "continuous", bounds=(0.0, 1.0)) for i in range(1 + n_noise))
    schema = Schema(attrs, "label", ("neg", "pos"))
    return TabularDataset(schema, {f"x{i}": x[:, i] for i in range(1 + n_noise)}, y)


def make_categorical(n: int = 300, seed: int = 0, n_attrs: int = 4, arity: int = 3, label_noise: float = 0.1) -> TabularDataset:
    """Discrete attributes where the label follows attribute ``a0`` and, more weakly, ``a1``."""
    rng = np.random.default_rng(seed)
    cols = {f"a{i}": rng.integers(0, arity, n) for i in range(n_attrs)}
    y = (cols["a0"] >= arity // 2).astype(np.int64)
    if n_attrs > 1:
        tweak = (cols["a1"] == 0) & (rng.random(n) < 0.3)
        y = np.where(tweak, 1 - y, y)
    flip = rng.random(n) < label_noise
    y = np.where(flip, 1 - y, y).astype(np.int64)
    attrs = tuple(Attribute(f"a{i}", "discrete", tuple(str(v) for v in range(arity))) for i in range(n_attrs))
    return TabularDataset(Schema(attrs, "label", ("0", "1")), cols, y)


def from_arrays(columns: Mapping[str, Sequence[int]], y: Sequence[int], arity: Mapping[str, int], labels: Sequence[str]) -> TabularDataset:
    """Small discrete dataset from integer codes; handy for hand-built toy cases."""
    attrs = tuple(Attribute(k, "discrete", tuple(str(v) for v in range(arity[k]))) for k in columns)
    schema = Schema(attrs, "label", tuple(labels))
    return TabularDataset(schema, {k: np.asarray(v, dtype=np.int64) for k, v in columns.items()}, np.asarray(y, dtype=np.int64))
