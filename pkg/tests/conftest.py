import numpy as np
import pytest

from ctxrec.core import ContextSchema, RatingTable
from ctxrec.ingest import transform_compact_to_binary

from _oracles import COMPACT_EXAMPLE, COMPACT_HEADER


@pytest.fixture
def example_table():
    """The four contextual ratings of the binary-format example."""
    return transform_compact_to_binary(COMPACT_EXAMPLE, COMPACT_HEADER)


def random_table(seed, n_users=5, n_items=5, n_rows=40, dims=(("Time", 2), ("Location", 3)), lo=1, hi=5,
                 integer=False):
    """Seeded random contextual table; every dimension gets ``na`` plus ``k`` named conditions."""
    rng = np.random.default_rng(seed)
    schema = ContextSchema(tuple(d for d, _ in dims),
                           tuple(("na",) + tuple(f"{d}{j}" for j in range(k)) for d, k in dims))
    users = rng.integers(0, n_users, n_rows)
    items = rng.integers(0, n_items, n_rows)
    # make every id appear when there are enough rows
    users[:min(n_users, n_rows)] = np.arange(min(n_users, n_rows))
    items[:min(n_items, n_rows)] = np.arange(min(n_items, n_rows))
    ratings = rng.integers(lo, hi + 1, n_rows).astype(float) if integer else rng.uniform(lo, hi, n_rows)
    ctx = np.column_stack([off + rng.integers(0, len(c), n_rows)
                           for off, c in zip(schema.offsets, schema.conditions)]) if dims else np.zeros((n_rows, 0))
    return RatingTable.build(schema, [f"u{k}" for k in range(n_users)], [f"i{k}" for k in range(n_items)],
                             users, items, ratings, ctx)


def sgd_step_gap(model, table, rows, lr=0.05, tweak=None):
    """Largest gap between one compiled SGD epoch over ``rows`` and ``params - lr * grad``.

    With a single row every parameter is updated from the pre-step values, so
    the two must agree to rounding.
    """
    model.schema, model.scale = table.schema, table.scale
    params = model._init_params(table, np.random.default_rng(0))
    if tweak:
        tweak(params)
    data = model._prepare(table).take(np.asarray(rows))
    before = {k: v.copy() for k, v in params.items()}
    model._epoch(params, data, np.arange(len(data)), lr)
    grad = model._gradient(before, data)
    return max(float(np.max(np.abs(params[k] - (before[k] - lr * grad[k])), initial=0.0)) for k in params)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
