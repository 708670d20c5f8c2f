"""Core data types shared by the aggregation and attribution modules."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ColumnMismatch, EmptyDomain, NonWildcardDrill, ValidationError

WILDCARD = None
ROW_LABEL_SEP = "|"


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CubePredicate:
    """Ordered ``(attribute, value)`` bindings; a value of ``None`` is the wildcard."""

    bindings: tuple[tuple[str, str | None], ...]

    def __post_init__(self):
        bindings = tuple((str(a), None if v is None else str(v)) for a, v in self.bindings)
        names = [a for a, _ in bindings]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate attribute in predicate: {names}")
        object.__setattr__(self, "bindings", bindings)

    @classmethod
    def of(cls, **bindings: str | None) -> CubePredicate:
        return cls(tuple(bindings.items()))

    @classmethod
    def wildcard(cls, attributes: Iterable[str]) -> CubePredicate:
        return cls(tuple((a, WILDCARD) for a in attributes))

    @classmethod
    def parse(cls, text: str, attributes: Sequence[str] = ()) -> CubePredicate:
        """Parse ``"a=x,b=*"``.  Attributes listed in ``attributes`` but absent
        from the text are added as wildcards, in that order."""
        given: dict[str, str | None] = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            if "=" not in part:
                raise ValidationError(f"predicate term {part!r} is not attr=value")
            name, value = (s.strip() for s in part.split("=", 1))
            given[name] = None if value == "*" else value
        order = list(attributes) + [a for a in given if a not in attributes]
        return cls(tuple((a, given.get(a)) for a in order))

    @property
    def attributes(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.bindings)

    def value(self, attribute: str) -> str | None:
        for a, v in self.bindings:
            if a == attribute:
                return v
        return WILDCARD

    def is_wildcard(self, attribute: str) -> bool:
        return self.value(attribute) is WILDCARD

    def bound(self) -> dict[str, str]:
        return {a: v for a, v in self.bindings if v is not WILDCARD}

    def matches(self, record: Mapping[str, str]) -> bool:
        return all(record.get(a) == v for a, v in self.bindings if v is not WILDCARD)

    def with_values(self, values: Mapping[str, str]) -> CubePredicate:
        return CubePredicate(tuple((a, values.get(a, v)) for a, v in self.bindings))

    def __str__(self) -> str:
        return "(" + ",".join("*" if v is None else v for _, v in self.bindings) + ")"


@dataclass(frozen=True)
class DrillPartition:
    parent: CubePredicate
    drill_dims: tuple[str, ...]
    children: tuple[CubePredicate, ...]

    @property
    def labels(self) -> tuple[str, ...]:
        """Row labels: drilled values joined by ``|``."""
        return tuple(
            ROW_LABEL_SEP.join(c.value(d) for d in self.drill_dims) for c in self.children
        )

    def __len__(self) -> int:
        return len(self.children)


def partition(
    parent: CubePredicate,
    drill_dims: Iterable[str],
    observed_values: Mapping[str, Iterable[str]],
) -> DrillPartition:
    """Split ``parent`` into the cross product of observed drilled values.

    Drill dimensions are taken in the parent's attribute order (unknown ones
    appended in sorted order) and children are sorted lexicographically on
    their drilled values.
    """
    dims = set(drill_dims)
    if not dims:
        raise ValidationError("at least one drill dimension is required")
    ordered = [a for a in parent.attributes if a in dims] + sorted(dims - set(parent.attributes))
    for d in ordered:
        if not parent.is_wildcard(d):
            raise NonWildcardDrill(f"drill dimension {d!r} is already bound to {parent.value(d)!r}")
    domains = []
    for d in ordered:
        values = sorted(set(observed_values.get(d, ())))
        if not values:
            raise EmptyDomain(f"no observed values for drill dimension {d!r}")
        domains.append(values)
    if any(d not in parent.attributes for d in ordered):
        base = CubePredicate(parent.bindings + tuple((d, WILDCARD) for d in ordered if d not in parent.attributes))
    else:
        base = parent
    children = tuple(
        base.with_values(dict(zip(ordered, combo))) for combo in itertools.product(*domains)
    )
    return DrillPartition(parent, tuple(ordered), children)


@dataclass(frozen=True, eq=False)
class ObservationMatrix:
    """p x q sub-measure values per sub-cube at one time step."""

    rows: tuple[str, ...]
    cols: tuple[str, ...]
    values: np.ndarray
    timestep: str = ""

    def __post_init__(self):
        values = _frozen(self.values)
        rows, cols = tuple(map(str, self.rows)), tuple(map(str, self.cols))
        if values.shape != (len(rows), len(cols)):
            raise ValidationError(
                f"values shape {values.shape} does not match {len(rows)} rows x {len(cols)} cols"
            )
        if not np.isfinite(values).all():
            raise ValidationError("observation matrix contains non-finite entries")
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise ValidationError("duplicate row or column label")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column_sums(self) -> np.ndarray:
        return self.values.sum(axis=0)

    def reindex(self, rows: Sequence[str], cols: Sequence[str]) -> ObservationMatrix:
        """Reorder to the given labels; rows absent here are zero-filled."""
        r_index = {r: i for i, r in enumerate(self.rows)}
        c_index = [self.cols.index(c) for c in cols]
        out = np.zeros((len(rows), len(cols)))
        for i, r in enumerate(rows):
            if r in r_index:
                out[i] = self.values[r_index[r], c_index]
        return ObservationMatrix(tuple(rows), tuple(cols), out, self.timestep)

    def __eq__(self, other):
        if not isinstance(other, ObservationMatrix):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and self.timestep == other.timestep
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"ObservationMatrix(rows={self.rows}, cols={self.cols}, timestep={self.timestep!r})"


def validate_pair(xt: ObservationMatrix, xr: ObservationMatrix) -> tuple[ObservationMatrix, ObservationMatrix]:
    """Align reference to explicand labels.

    Row order is the explicand's, followed by reference-only rows.  Missing
    rows are zero-filled on either side, which is only meaningful for
    additive sub-measures.
    """
    if set(xt.cols) != set(xr.cols):
        raise ColumnMismatch(f"sub-measure columns differ: {xt.cols} vs {xr.cols}")
    if xt.rows == xr.rows and xt.cols == xr.cols:
        return xt, xr
    known = set(xt.rows)
    rows = xt.rows + tuple(r for r in xr.rows if r not in known)
    return xt.reindex(rows, xt.cols), xr.reindex(rows, xt.cols)


@dataclass(frozen=True, eq=False)
class ContributionMatrix:
    rows: tuple[str, ...]
    cols: tuple[str, ...]
    values: np.ndarray
    delta_y: float
    method: str
    residual: float = field(default=float("nan"))

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (len(self.rows), len(self.cols)):
            raise ValidationError(
                f"values shape {values.shape} does not match {len(self.rows)} x {len(self.cols)}"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "rows", tuple(map(str, self.rows)))
        object.__setattr__(self, "cols", tuple(map(str, self.cols)))
        object.__setattr__(self, "delta_y", float(self.delta_y))
        if np.isnan(self.residual):
            object.__setattr__(self, "residual", float(values.sum() - self.delta_y))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def total(self) -> float:
        return float(self.values.sum())

    @property
    def row_totals(self) -> np.ndarray:
        return self.values.sum(axis=1)

    @property
    def col_totals(self) -> np.ndarray:
        return self.values.sum(axis=0)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "delta_y": self.delta_y,
            "residual": self.residual,
            "rows": list(self.rows),
            "cols": list(self.cols),
            "values": self.values.tolist(),
            "row_totals": self.row_totals.tolist(),
            "col_totals": self.col_totals.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> ContributionMatrix:
        return cls(
            rows=tuple(data["rows"]),
            cols=tuple(data["cols"]),
            values=np.array(data["values"], dtype=float).reshape(len(data["rows"]), len(data["cols"])),
            delta_y=data["delta_y"],
            method=data["method"],
            residual=data["residual"],
        )

    def __repr__(self):
        return (
            f"ContributionMatrix(method={self.method!r}, shape={self.shape}, "
            f"delta_y={self.delta_y:.6g}, residual={self.residual:.3g})"
        )


def marginalize(c: ContributionMatrix, axis: str) -> list[tuple[str, float]]:
    """Per-sub-cube (``axis="rows"``) or per-sub-measure (``axis="cols"``) totals."""
    if axis == "rows":
        return list(zip(c.rows, c.row_totals.tolist()))
    if axis == "cols":
        return list(zip(c.cols, c.col_totals.tolist()))
    raise ValueError(f"axis must be 'rows' or 'cols', not {axis!r}")


def rank_subcubes(c: ContributionMatrix) -> list[tuple[str, float]]:
    """Sub-cubes by descending absolute row total; ties broken lexicographically."""
    return sorted(marginalize(c, "rows"), key=lambda item: (-abs(item[1]), item[0]))


@dataclass(frozen=True, eq=False)
class CoalitionMask:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, dtype=bool))
        if self.values.ndim != 2:
            raise ValidationError("coalition mask must be two-dimensional")

    @classmethod
    def full(cls, shape: tuple[int, int]) -> CoalitionMask:
        return cls(np.ones(shape, dtype=bool))

    @classmethod
    def empty(cls, shape: tuple[int, int]) -> CoalitionMask:
        return cls(np.zeros(shape, dtype=bool))

    @classmethod
    def of_cells(cls, shape: tuple[int, int], cells: Iterable[tuple[int, int]]) -> CoalitionMask:
        z = np.zeros(shape, dtype=bool)
        for u, v in cells:
            z[u, v] = True
        return cls(z)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def complement(self) -> CoalitionMask:
        return CoalitionMask(~self.values)
