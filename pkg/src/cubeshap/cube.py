"""Record storage and aggregation of cube cells into observation matrices."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    NonAdditiveAggregator,
    TypeMismatch,
    UnknownAttribute,
    ValidationError,
)
from .model import CubePredicate, DrillPartition, ObservationMatrix, partition

if TYPE_CHECKING:
    from .expr import MeasureSpec

AGGREGATORS = ("sum", "count", "count_nonnull", "count_distinct")
_ADDITIVE = {"sum": True, "count": True, "count_nonnull": True, "count_distinct": False}
_AGG_RE = re.compile(r"^\s*([A-Za-z_]\w*)\s*\(\s*([^()]*?)\s*\)\s*$")


@dataclass(frozen=True)
class AggregatorKind:
    """``sum(col)``, ``count(col)``, ``count_distinct(col)``.

    ``count`` counts rows; ``count_nonnull`` (used by ``avg`` rewriting)
    counts non-null values of its column.
    """

    kind: str
    column: str

    def __post_init__(self):
        if self.kind not in AGGREGATORS:
            raise ValidationError(f"unknown aggregator {self.kind!r}; expected one of {AGGREGATORS}")

    @classmethod
    def parse(cls, text: str) -> AggregatorKind:
        m = _AGG_RE.match(text)
        if not m:
            raise ValidationError(f"cannot parse aggregator {text!r}; expected e.g. sum(column)")
        return cls(m.group(1).lower(), m.group(2))

    @property
    def additive(self) -> bool:
        return _ADDITIVE[self.kind]

    def __str__(self):
        return f"{self.kind}({self.column})"


@dataclass(frozen=True, eq=False)
class MeasureColumn:
    """One measurable column.  ``numbers`` holds floats (NaN = null) when the
    column is numeric; ``codes`` factorises values for distinct counting
    (-1 = null)."""

    name: str
    numeric: bool
    numbers: np.ndarray | None
    codes: np.ndarray

    @classmethod
    def build(cls, name: str, raw: Sequence) -> MeasureColumn:
        values = [None if (v is None or v == "" or (isinstance(v, float) and np.isnan(v))) else v for v in raw]
        numbers = np.full(len(values), np.nan)
        numeric = True
        for i, v in enumerate(values):
            if v is None:
                continue
            if isinstance(v, (bool, np.bool_)):
                numbers[i] = float(v)
                continue
            try:
                numbers[i] = float(v)
            except (TypeError, ValueError):
                numeric = False
                break
        if numeric:
            present = ~np.isnan(numbers)
            codes = np.full(len(values), -1, dtype=np.int64)
            if present.any():
                _, inv = np.unique(numbers[present], return_inverse=True)
                codes[present] = inv
            return cls._frozen(name, True, numbers, codes)
        keys = np.array(["" if v is None else str(v) for v in values], dtype=object)
        present = np.array([v is not None for v in values], dtype=bool)
        codes = np.full(len(values), -1, dtype=np.int64)
        if present.any():
            _, inv = np.unique(keys[present].astype(str), return_inverse=True)
            codes[present] = inv
        return cls._frozen(name, False, None, codes)

    @classmethod
    def from_codes(cls, name: str, codes: np.ndarray) -> MeasureColumn:
        """Categorical column given directly as non-negative integer codes."""
        return cls._frozen(name, False, None, np.asarray(codes, dtype=np.int64))

    @classmethod
    def from_numbers(cls, name: str, numbers: np.ndarray) -> MeasureColumn:
        numbers = np.asarray(numbers, dtype=float)
        present = ~np.isnan(numbers)
        codes = np.full(len(numbers), -1, dtype=np.int64)
        if present.any():
            codes[present] = np.unique(numbers[present], return_inverse=True)[1]
        return cls._frozen(name, True, numbers, codes)

    @classmethod
    def _frozen(cls, name, numeric, numbers, codes):
        for arr in (numbers, codes):
            if arr is not None:
                arr.setflags(write=False)
        return cls(name, numeric, numbers, codes)

    def __len__(self):
        return len(self.codes)


class RecordStore:
    """Immutable column store of transactional records.

    Attribute values and time-step labels are opaque text.  Measure values
    may be null.
    """

    def __init__(
        self,
        timesteps: Sequence[str] | np.ndarray,
        attributes: Mapping[str, Sequence[str] | np.ndarray],
        measures: Mapping[str, Sequence | MeasureColumn],
        timestep_column: str = "timestep",
    ):
        self.timestep_column = timestep_column
        self.timesteps = self._text_array(timesteps, timestep_column)
        n = len(self.timesteps)
        self.attributes = {}
        for name, values in attributes.items():
            arr = self._text_array(values, name)
            if len(arr) != n:
                raise ValidationError(f"attribute column {name!r} has {len(arr)} values, expected {n}")
            self.attributes[name] = arr
        self.measures = {}
        for name, values in measures.items():
            col = values if isinstance(values, MeasureColumn) else MeasureColumn.build(name, values)
            if len(col) != n:
                raise ValidationError(f"measure column {name!r} has {len(col)} values, expected {n}")
            self.measures[name] = col

    @staticmethod
    def _text_array(values, name) -> np.ndarray:
        if any(v is None for v in values):
            raise ValidationError(f"column {name!r} has missing values")
        arr = np.asarray([str(v) for v in values] if not isinstance(values, np.ndarray) else values.astype(str))
        if arr.dtype.kind != "U":
            arr = arr.astype(str)
        arr.setflags(write=False)
        return arr

    @classmethod
    def from_records(
        cls,
        records: Iterable[Mapping],
        timestep_column: str,
        attributes: Sequence[str],
        measures: Sequence[str],
    ) -> RecordStore:
        records = list(records)
        for i, rec in enumerate(records):
            missing = [a for a in (timestep_column, *attributes) if a not in rec]
            if missing:
                raise ValidationError(f"record {i} lacks attribute column(s) {missing}")
        return cls(
            [r[timestep_column] for r in records],
            {a: [r[a] for r in records] for a in attributes},
            {m: [r.get(m) for r in records] for m in measures},
            timestep_column=timestep_column,
        )

    def __len__(self) -> int:
        return len(self.timesteps)

    @property
    def attribute_names(self) -> tuple[str, ...]:
        return tuple(self.attributes)

    def timestep_labels(self) -> list[str]:
        return sorted(set(self.timesteps.tolist()))

    def column(self, name: str) -> MeasureColumn:
        try:
            return self.measures[name]
        except KeyError:
            raise ValidationError(f"unknown measure column {name!r}") from None

    def mask(self, pred: CubePredicate, timestep: str | None = None) -> np.ndarray:
        keep = np.ones(len(self), dtype=bool)
        for attr, value in pred.bindings:
            if attr not in self.attributes:
                raise UnknownAttribute(f"unknown attribute {attr!r}")
            if value is not None:
                keep &= self.attributes[attr] == value
        if timestep is not None:
            keep &= self.timesteps == timestep
        return keep

    def observed_values(self, attributes: Iterable[str], pred: CubePredicate | None = None,
                        timesteps: Iterable[str] | None = None) -> dict[str, list[str]]:
        keep = self.mask(pred) if pred is not None else np.ones(len(self), dtype=bool)
        if timesteps is not None:
            keep &= np.isin(self.timesteps, list(timesteps))
        out = {}
        for a in attributes:
            if a not in self.attributes:
                raise UnknownAttribute(f"unknown attribute {a!r}")
            out[a] = sorted(set(self.attributes[a][keep].tolist()))
        return out


@dataclass(frozen=True, eq=False)
class RecordSubset:
    """Records of a store addressed by row index; never copies rows."""

    store: RecordStore
    index: np.ndarray

    def __len__(self):
        return len(self.index)

    def __eq__(self, other):
        return (
            isinstance(other, RecordSubset)
            and other.store is self.store
            and np.array_equal(self.index, other.index)
        )

    def union(self, *others: RecordSubset) -> RecordSubset:
        return RecordSubset(self.store, np.concatenate([self.index, *(o.index for o in others)]))


def select(store: RecordStore, pred: CubePredicate, timestep: str | None) -> RecordSubset:
    """Records matching every bound attribute of ``pred`` at ``timestep``."""
    return RecordSubset(store, np.flatnonzero(store.mask(pred, timestep)))


def aggregate_index(store: RecordStore, index: np.ndarray, agg: AggregatorKind) -> float:
    col = store.column(agg.column)
    if agg.kind == "count":
        return float(len(index))
    if agg.kind == "sum":
        if not col.numeric:
            raise TypeMismatch(f"cannot sum non-numeric column {agg.column!r}")
        vals = col.numbers[index]
        return float(vals[~np.isnan(vals)].sum())
    codes = col.codes[index]
    codes = codes[codes >= 0]
    if agg.kind == "count_nonnull":
        return float(len(codes))
    return float(len(np.unique(codes)))


def aggregate_cell(subset: RecordSubset, agg: AggregatorKind) -> float:
    """sum skips nulls; count counts rows; count_distinct counts distinct non-null values."""
    return aggregate_index(subset.store, subset.index, agg)


def partition_store(
    store: RecordStore,
    parent: CubePredicate,
    drill_dims: Iterable[str],
    timesteps: Iterable[str] | None = None,
) -> DrillPartition:
    """Partition using the drill values observed under ``parent`` (optionally
    restricted to some time steps)."""
    dims = list(drill_dims)
    return partition(parent, dims, store.observed_values(dims, parent, timesteps))


def build_observation_matrix(
    store: RecordStore,
    part: DrillPartition,
    spec: MeasureSpec,
    timestep: str,
) -> ObservationMatrix:
    aggs = spec.aggregators
    if any(a is None for a in aggs):
        raise ValidationError("every sub-measure needs an aggregator to aggregate records")
    bad = [str(a) for a in aggs if not a.additive]
    if bad:
        raise NonAdditiveAggregator(
            f"non-additive aggregator(s) {', '.join(bad)}: use the raw-record (non-GAM) attribution"
        )
    values = np.zeros((len(part), spec.q))
    base = store.mask(part.parent, timestep)
    for u, child in enumerate(part.children):
        idx = np.flatnonzero(base & store.mask(child))
        for v, agg in enumerate(aggs):
            values[u, v] = aggregate_index(store, idx, agg)
    return ObservationMatrix(part.labels, spec.submeasures, values, timestep)


@dataclass(frozen=True)
class AdditivityCheck:
    additive: bool
    counterexample: dict | None = None

    def __bool__(self):
        return self.additive


def check_additivity(agg: AggregatorKind) -> AdditivityCheck:
    """Structural answer, with a two-sub-cube counterexample when not additive."""
    if agg.additive:
        return AdditivityCheck(True)
    values = ["u1", "u2", "u2", "u3"]
    store = RecordStore(
        ["t"] * 4, {"part": ["a", "a", "b", "b"]}, {agg.column: values}
    )
    root = CubePredicate.wildcard(["part"])
    children = {
        k: aggregate_cell(select(store, CubePredicate.of(part=k), "t"), agg) for k in ("a", "b")
    }
    parent = aggregate_cell(select(store, root, "t"), agg)
    return AdditivityCheck(
        False,
        {
            "children": {"a": values[:2], "b": values[2:]},
            "child_values": children,
            "parent_value": parent,
            "sum_of_children": sum(children.values()),
        },
    )


def read_csv(
    path,
    timestep_column: str,
    attributes: Sequence[str],
    measures: Sequence[str],
    timestep_prefix: int | None = None,
) -> RecordStore:
    """Load a UTF-8 CSV with a header row.  Empty strings are nulls in measure
    columns.  ``timestep_prefix`` truncates time-step values (e.g. 10 keeps
    the date of an ISO timestamp) to bind them to discrete labels."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in (timestep_column, *attributes, *measures) if c not in header]
        if missing and header:
            raise ValidationError(f"CSV lacks column(s): {', '.join(missing)}")
        rows = list(reader)
    ts = [r[timestep_column] for r in rows]
    if timestep_prefix:
        ts = [t[:timestep_prefix] for t in ts]
    return RecordStore(
        ts,
        {a: [r[a] for r in rows] for a in attributes},
        {m: [r[m] for r in rows] for m in measures},
        timestep_column=timestep_column,
    )
