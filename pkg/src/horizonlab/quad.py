"""Composite Simpson quadrature on sampled, possibly non-uniform grids."""

import numpy as np


def composite_simpson(y, x, axis=0):
    """Integrate samples ``y`` against nodes ``x`` by composite Simpson.

    Handles non-uniform spacing with the three-point quadratic panel rule;
    an odd interval count is absorbed by integrating the first interval under
    the quadratic through the first three nodes.  Exact for quadratics.
    ``y`` may carry extra batch axes; ``axis`` selects the node axis.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or y.shape[axis] != x.size:
        raise ValueError("x must be 1-D and match y along the node axis")
    y = np.moveaxis(y, axis, 0)
    n = x.size
    if n < 2:
        return np.zeros(y.shape[1:]) if y.ndim > 1 else 0.0
    if n == 2:
        return 0.5 * (x[1] - x[0]) * (y[0] + y[1])

    total = 0.0
    start = 0
    if (n - 1) % 2 == 1:
        # quadratic through nodes 0,1,2 integrated over the first interval
        h0 = x[1] - x[0]
        h1 = x[2] - x[1]
        total = (
            h0 * (2 * h0 + 3 * h1) / (6 * (h0 + h1)) * y[0]
            + h0 * (h0 + 3 * h1) / (6 * h1) * y[1]
            - h0**3 / (6 * h1 * (h0 + h1)) * y[2]
        )
        start = 1

    h0 = x[start + 1 : n - 1 : 2] - x[start : n - 2 : 2]
    h1 = x[start + 2 : n : 2] - x[start + 1 : n - 1 : 2]
    hs = h0 + h1
    c0 = hs / 6 * (2 - h1 / h0)
    c1 = hs / 6 * (hs * hs / (h0 * h1))
    c2 = hs / 6 * (2 - h0 / h1)
    shape = (-1,) + (1,) * (y.ndim - 1)
    total = total + (
        c0.reshape(shape) * y[start : n - 2 : 2]
        + c1.reshape(shape) * y[start + 1 : n - 1 : 2]
        + c2.reshape(shape) * y[start + 2 : n : 2]
    ).sum(axis=0)
    return total
