import numpy as np
import pytest
from hypothesis import given, strategies as st

from cubeshap.cube import (
    AggregatorKind,
    RecordStore,
    aggregate_cell,
    build_observation_matrix,
    check_additivity,
    partition_store,
    read_csv,
    select,
)
from cubeshap.errors import NonAdditiveAggregator, TypeMismatch, UnknownAttribute, ValidationError
from cubeshap.expr import MeasureSpec
from cubeshap.model import CubePredicate

RECORDS = [
    {"t": "10:00", "dc": "dc1", "os": "v1", "request_id": "1", "is_success": "1", "delay": "30"},
    {"t": "10:00", "dc": "dc2", "os": "v1", "request_id": "2", "is_success": "1", "delay": "40"},
    {"t": "10:00", "dc": "dc2", "os": "v2", "request_id": "3", "is_success": "0", "delay": ""},
    {"t": "10:01", "dc": "dc1", "os": "v2", "request_id": "4", "is_success": "1", "delay": "10"},
    {"t": "10:01", "dc": "dc1", "os": "v2", "request_id": "4", "is_success": "1", "delay": "20"},
]


@pytest.fixture
def store():
    return RecordStore.from_records(RECORDS, "t", ["dc", "os"], ["request_id", "is_success", "delay"])


def test_aggregator_parse():
    agg = AggregatorKind.parse(" sum( delay ) ")
    assert (agg.kind, agg.column, str(agg)) == ("sum", "delay", "sum(delay)")
    with pytest.raises(ValidationError):
        AggregatorKind.parse("median(delay)")
    with pytest.raises(ValidationError):
        AggregatorKind.parse("sum delay")


def test_aggregation_semantics(store):
    everything = CubePredicate.wildcard(["dc", "os"])
    at_10 = select(store, everything, "10:00")
    assert aggregate_cell(at_10, AggregatorKind("sum", "delay")) == 70.0
    assert aggregate_cell(at_10, AggregatorKind("count", "delay")) == 3.0
    assert aggregate_cell(at_10, AggregatorKind("count_nonnull", "delay")) == 2.0
    at_11 = select(store, everything, "10:01")
    assert aggregate_cell(at_11, AggregatorKind("count_distinct", "request_id")) == 1.0
    dc2 = select(store, CubePredicate.parse("dc=dc2", ["dc", "os"]), None)
    assert len(dc2) == 2


def test_sum_of_text_is_type_mismatch():
    s = RecordStore.from_records([{"t": "a", "g": "x", "u": "alice"}], "t", ["g"], ["u"])
    with pytest.raises(TypeMismatch):
        aggregate_cell(select(s, CubePredicate.wildcard(["g"]), "a"), AggregatorKind("sum", "u"))


def test_unknown_attribute(store):
    with pytest.raises(UnknownAttribute):
        store.mask(CubePredicate.parse("region=eu"))


def test_observation_matrix_and_non_additive_guard(store):
    part = partition_store(store, CubePredicate.wildcard(["dc", "os"]), ["dc"])
    spec = MeasureSpec.from_text("succ / total", {"succ": "sum(is_success)", "total": "count(request_id)"})
    x = build_observation_matrix(store, part, spec, "10:00")
    assert x.rows == ("dc1", "dc2")
    np.testing.assert_array_equal(x.values, [[1, 1], [1, 2]])
    dau = MeasureSpec.from_text("u", {"u": "count_distinct(request_id)"})
    with pytest.raises(NonAdditiveAggregator):
        build_observation_matrix(store, part, dau, "10:00")


def test_additivity_counterexample():
    assert check_additivity(AggregatorKind("sum", "x")).additive
    check = check_additivity(AggregatorKind("count_distinct", "x"))
    assert not check.additive
    ce = check.counterexample
    assert ce["parent_value"] == 3 and ce["sum_of_children"] == 4


@given(
    st.lists(
        st.tuples(st.sampled_from("abc"), st.sampled_from("xy"), st.integers(-50, 50)),
        min_size=1,
        max_size=40,
    )
)
def test_additive_aggregators_sum_over_partition(rows):
    s = RecordStore(
        ["t"] * len(rows),
        {"g": [r[0] for r in rows], "h": [r[1] for r in rows]},
        {"v": [r[2] for r in rows]},
    )
    parent = CubePredicate.wildcard(["g", "h"])
    part = partition_store(s, parent, ["g", "h"])
    for kind in ("sum", "count", "count_nonnull"):
        agg = AggregatorKind(kind, "v")
        total = aggregate_cell(select(s, parent, "t"), agg)
        children = sum(aggregate_cell(select(s, c, "t"), agg) for c in part.children)
        assert children == total


def test_read_csv_with_nulls_and_prefix(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("ts,dc,v\n2025-01-01 10:00:01,a,1\n2025-01-01 10:00:02,a,\n2025-01-01 10:01:00,b,2.5\n")
    s = read_csv(path, "ts", ["dc"], ["v"], timestep_prefix=16)
    assert s.timestep_labels() == ["2025-01-01 10:00", "2025-01-01 10:01"]
    assert np.isnan(s.column("v").numbers[1])
    with pytest.raises(ValidationError):
        read_csv(path, "ts", ["region"], ["v"])
