"""Time the numba kernels against their pure-numpy twins.

Run:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from horizonlab import _kernels


def _sweep_inputs(n_nodes, n_ctrl, corners, rng):
    v_next = rng.normal(size=n_nodes)
    stage = rng.normal(size=(n_ctrl, n_nodes))
    idx = rng.integers(0, n_nodes, size=(n_ctrl, n_nodes, corners)).astype(np.int64)
    w = rng.random(size=(n_ctrl, n_nodes, corners))
    w /= w.sum(axis=2, keepdims=True)
    return v_next, stage, np.ascontiguousarray(idx), np.ascontiguousarray(w)


def _reach_inputs(n_nodes, n_ctrl, rng):
    dest = rng.integers(-1, n_nodes, size=(n_ctrl, n_nodes)).astype(np.int64)
    active = rng.random(n_nodes) < 0.3
    return np.ascontiguousarray(dest), active


def _time(fn, args, repeats):
    fn(*args)  # warm-up / JIT
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main():
    rng = np.random.default_rng(0)
    cases = [
        ("sweep 1-D (601 nodes, 21 controls)", _sweep_inputs(601, 21, 2, rng), 200),
        ("sweep 2-D (10201 nodes, 21 controls)", _sweep_inputs(10201, 21, 4, rng), 20),
        ("reach (5000 nodes, 21 controls)", _reach_inputs(5000, 21, rng), 200),
    ]
    print(f"{'kernel':<42} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    for name, args, repeats in cases:
        if name.startswith("sweep"):
            np_fn, nb_fn = _kernels.sweep_min_numpy, _kernels.sweep_min_numba
        else:
            np_fn, nb_fn = _kernels.reach_step_numpy, _kernels.reach_step_numba
        t_np = _time(np_fn, args, repeats)
        if nb_fn is None:
            print(f"{name:<42} {t_np*1e3:>10.3f}ms {'n/a':>12} {'n/a':>9}")
            continue
        t_nb = _time(nb_fn, args, repeats)
        print(f"{name:<42} {t_np*1e3:>10.3f}ms {t_nb*1e3:>10.3f}ms {t_np/t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
