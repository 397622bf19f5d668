import json

import numpy as np
import pytest

from dpselect.tabular import (
    Attribute,
    Schema,
    SchemaError,
    TabularDataset,
    discretize,
    from_arrays,
    make_axis_separable,
    make_categorical,
    make_separable,
    read_csv,
    write_csv,
)

SCHEMA = {
    "class": {"name": "label", "labels": ["no", "yes"]},
    "attributes": [
        {"name": "age", "kind": "continuous", "bounds": [0, 100]},
        {"name": "sex", "kind": "discrete", "domain": ["F", "M"]},
    ],
}


def test_schema_round_trip(tmp_path):
    p = tmp_path / "schema.json"
    p.write_text(json.dumps(SCHEMA))
    schema = Schema.from_json(p)
    assert schema.names == ["age", "sex"]
    assert schema.to_dict()["class"]["labels"] == ["no", "yes"]


@pytest.mark.parametrize(
    "bad",
    [
        {"attributes": []},
        {"class": {"name": "c", "labels": []}, "attributes": []},
        {"class": {"name": "c", "labels": ["a"]}, "attributes": [{"name": "x", "kind": "discrete", "domain": []}]},
        {"class": {"name": "c", "labels": ["a"]}, "attributes": [{"name": "x", "kind": "continuous", "bounds": [1, 1]}]},
        {"class": {"name": "c", "labels": ["a"]}, "attributes": [{"name": "c", "kind": "discrete", "domain": ["0"]}]},
    ],
)
def test_malformed_schemas(bad):
    with pytest.raises(SchemaError):
        Schema.from_dict(bad)


def test_csv_round_trip(tmp_path):
    schema = Schema.from_dict(SCHEMA)
    rows = [{"age": "30", "sex": "F", "label": "no"}, {"age": "61.5", "sex": "M", "label": "yes"}]
    data = TabularDataset.from_rows(schema, rows)
    path = tmp_path / "d.csv"
    write_csv(path, data)
    back = read_csv(path, schema)
    np.testing.assert_array_equal(back.columns["age"], [30.0, 61.5])
    np.testing.assert_array_equal(back.columns["sex"], [0, 1])
    np.testing.assert_array_equal(back.y, [0, 1])
    assert b"\r\n" not in path.read_bytes()


def test_csv_missing_column(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("age,label\n1,no\n")
    with pytest.raises(SchemaError):
        read_csv(path, Schema.from_dict(SCHEMA))


def test_values_outside_declared_domain():
    schema = Schema.from_dict(SCHEMA)
    with pytest.raises(SchemaError):
        TabularDataset.from_rows(schema, [{"age": "30", "sex": "X", "label": "no"}])
    with pytest.raises(SchemaError):
        TabularDataset.from_rows(schema, [{"age": "130", "sex": "F", "label": "no"}])
    with pytest.raises(SchemaError):
        TabularDataset.from_rows(schema, [{"age": "30", "sex": "F", "label": "maybe"}])


def test_discretize_uses_declared_bounds():
    attr = Attribute("x", "continuous", bounds=(0.0, 8.0))
    schema = Schema((attr,), "c", ("a",))
    data = TabularDataset(schema, {"x": np.array([0.0, 0.99, 1.0, 7.5, 8.0])}, np.zeros(5, dtype=np.int64))
    binned = discretize(data, 8)
    np.testing.assert_array_equal(binned.columns["x"], [0, 0, 1, 7, 7])
    assert len(binned.schema.attribute("x").domain) == 8


def test_subset_and_counts():
    d = from_arrays({"a": [0, 1, 1]}, [1, 0, 1], {"a": 2}, ["p", "q"])
    np.testing.assert_array_equal(d.class_counts(), [1, 2])
    assert d.subset([1, 2]).n_rows == 2


@pytest.mark.parametrize("maker", [make_separable, make_axis_separable, make_categorical])
def test_generators_are_seeded(maker):
    a, b = maker(50, seed=3), maker(50, seed=3)
    np.testing.assert_array_equal(a.y, b.y)
    for name in a.schema.names:
        np.testing.assert_array_equal(a.columns[name], b.columns[name])
    assert set(np.unique(a.y)) <= {0, 1}
