"""Small shared builders for the test suite."""

import numpy as np

from fuselab import Dim3, ExpertStack, GridKind, VolumeGrid


def grid(values, kind=GridKind.BINARY, dims=None):
    """Flat values -> VolumeGrid; dims default to (len, 1, 1)."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if dims is None:
        dims = Dim3(values.size, 1, 1)
    return VolumeGrid(dims, values, kind)


def stack_from_rows(rows, kind=GridKind.BINARY, ids=None, dims=None):
    """(m, n) row-per-expert array -> ExpertStack."""
    rows = np.asarray(rows, dtype=np.float64)
    ids = ids or tuple(f"e{i}" for i in range(rows.shape[0]))
    return ExpertStack(
        tuple(grid(row, kind, dims) for row in rows), tuple(ids)
    )


def random_binary_stack(rng, m, n, p=0.35, dims=None):
    rows = (rng.random((m, n)) < p).astype(float)
    return stack_from_rows(rows, GridKind.BINARY, dims=dims)


def assert_monotone(trace, slack=1e-9):
    trace = list(trace)
    for k, (a, b) in enumerate(zip(trace, trace[1:])):
        assert b >= a - slack * abs(a), (
            f"objective decreased at step {k}: {a} -> {b}"
        )
