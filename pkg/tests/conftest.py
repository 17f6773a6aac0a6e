import numpy as np
import pytest

from trustaudit.data import DatasetSchema, Origin, TabularDataset


def toy_schema(n_cont=2, n_cat=1, with_id=False):
    columns = [(f"x{i}", "continuous") for i in range(n_cont)]
    columns += [(f"c{i}", "categorical") for i in range(n_cat)]
    columns += [("group", "categorical"), ("label", "categorical")]
    if with_id:
        columns.insert(0, ("row_id", "categorical"))
    return DatasetSchema(
        columns=tuple(columns),
        target="label",
        protected="group",
        privileged_value="priv",
        id_columns=("row_id",) if with_id else (),
    )


def make_dataset(schema, n_rows, seed=0, signal=2.0, origin=None):
    """Mixed dataset whose label depends on x0 and the first categorical."""
    rng = np.random.default_rng(seed)
    cols = {}
    label_logit = np.zeros(n_rows)
    for name, kind in schema.columns:
        if name == "label":
            continue
        if name == "row_id":
            cols[name] = np.array([f"r{i}" for i in range(n_rows)], dtype=object)
        elif kind == "continuous":
            cols[name] = rng.normal(0, 1, n_rows)
            if name == "x0":
                label_logit += signal * cols[name]
        elif name == "group":
            cols[name] = np.where(rng.random(n_rows) < 0.5, "priv", "unpriv").astype(
                object
            )
        else:
            values = rng.choice(["a", "b", "c"], n_rows)
            cols[name] = values.astype(object)
            if name == "c0":
                label_logit += signal * (values == "a")
    p = 1.0 / (1.0 + np.exp(-(label_logit - label_logit.mean())))
    cols["label"] = np.where(rng.random(n_rows) < p, "yes", "no").astype(object)
    return TabularDataset(schema, cols, origin or Origin.real())


@pytest.fixture
def schema():
    return toy_schema()


@pytest.fixture
def real_data(schema):
    return make_dataset(schema, 400, seed=1)
