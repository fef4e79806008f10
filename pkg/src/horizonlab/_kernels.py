"""Hot numeric kernels with two interchangeable backends.

The backward value sweep and the lattice reachability step dominate runtime.
Each kernel exists twice: a numba ``@njit`` loop and a vectorized pure-numpy
twin.  The active backend is chosen at import time from the environment
variable ``HORIZONLAB_KERNELS`` ("numba" or "numpy"; default is numba when
importable).  ``benchmarks/bench_kernels.py`` times the two against each
other.
"""

import os

import numpy as np

_REQUESTED = os.environ.get("HORIZONLAB_KERNELS", "").strip().lower()
if _REQUESTED not in ("", "numba", "numpy"):
    raise ImportError(
        f"HORIZONLAB_KERNELS must be 'numba' or 'numpy', got {_REQUESTED!r}"
    )

try:
    import numba

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

if _REQUESTED == "numba" and not HAS_NUMBA:
    raise ImportError("HORIZONLAB_KERNELS=numba but numba is not importable")

USE_NUMBA = HAS_NUMBA and _REQUESTED != "numpy"


def _sweep_min_loops(v_next, stage, idx, wts):
    # v_next: flat (K,) table of the next time layer
    # stage:  (C, N) per-control stage costs
    # idx/wts: (C, N, 2**m) interpolation stencil into v_next
    n_ctrl, n_nodes, n_corner = idx.shape
    out = np.empty(n_nodes)
    for i in range(n_nodes):
        best = np.inf
        for c in range(n_ctrl):
            acc = stage[c, i]
            for k in range(n_corner):
                acc += wts[c, i, k] * v_next[idx[c, i, k]]
            if acc < best:
                best = acc
        out[i] = best
    return out


def sweep_min_numpy(v_next, stage, idx, wts):
    """Vectorized twin of the backward-sweep kernel."""
    vals = stage + (v_next[idx] * wts).sum(axis=2)
    return vals.min(axis=0)


def _reach_step_loops(dest, active):
    # dest: (C, N) flat destination node per control, -1 = leaves the lattice
    n_ctrl, n_nodes = dest.shape
    nxt = np.zeros(n_nodes, dtype=np.bool_)
    escaped = False
    for i in range(n_nodes):
        if active[i]:
            for c in range(n_ctrl):
                j = dest[c, i]
                if j >= 0:
                    nxt[j] = True
                else:
                    escaped = True
    return nxt, escaped


def reach_step_numpy(dest, active):
    """Vectorized twin of the reachability propagation step."""
    hits = dest[:, active]
    nxt = np.zeros(dest.shape[1], dtype=np.bool_)
    good = hits[hits >= 0]
    nxt[good] = True
    return nxt, bool((hits < 0).any())


if HAS_NUMBA:
    sweep_min_numba = numba.njit(cache=True)(_sweep_min_loops)
    reach_step_numba = numba.njit(cache=True)(_reach_step_loops)
else:
    sweep_min_numba = None
    reach_step_numba = None

if USE_NUMBA:
    sweep_min = sweep_min_numba
    reach_step = reach_step_numba
else:
    sweep_min = sweep_min_numpy
    reach_step = reach_step_numpy


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
