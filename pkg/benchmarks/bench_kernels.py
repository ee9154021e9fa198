"""Compare the compiled and pure-Python kernel backends.

Run with ``python benchmarks/bench_kernels.py``. Each kernel is timed on the
same inputs under both backends; the script also checks the outputs agree.
"""
import argparse
import timeit

import numpy as np

from safelane import _kernels_py

try:
    from safelane import _ckernels
except ImportError:  # extension not built
    _ckernels = None

from safelane.drivers import B_HARD, HEADING_TOL, K_PSI, K_Y, LATERAL_TOL
from safelane.road import STEER_MAX, VehicleGeometry
from safelane.scenario import config_b, generate_scenario


def world_args(seed=0):
    w = generate_scenario(config_b(), np.random.default_rng(seed))
    g = VehicleGeometry()
    return w, g


def bench_advance(mod, reps):
    w, g = world_args()

    def run():
        s, y, psi, v, a = (x.copy() for x in (w.s, w.y, w.psi, w.v, w.a))
        tgt = w.target.copy()
        mod.advance_world(s, y, psi, v, a, tgt, w.idm, w.road.lane_width, w.road.lane_count,
                          g.length, g.width, g.l_f, g.l_r, 0.1, 10, K_Y, K_PSI, STEER_MAX,
                          B_HARD, 0, LATERAL_TOL, HEADING_TOL)
        return s, v
    return timeit.timeit(run, number=reps) / reps, run()


def bench_neighbors(mod, reps):
    w, g = world_args()

    def run():
        lo, hi = mod.occupancy(w.y, w.target, w.road.lane_width, w.road.lane_count, g.width)
        return mod.neighbor_table(w.s, lo, hi, w.road.lane_count)
    return timeit.timeit(run, number=reps) / reps, run()


def bench_sumtree(mod, reps):
    cap = 65536
    rng = np.random.default_rng(0)
    leaves = rng.integers(0, cap, 32).astype(np.int64)
    vals = rng.random(32)
    targets = rng.random(32)

    def run():
        tree = np.zeros(2 * cap)
        tree[cap:] = 1.0
        for node in range(cap - 1, 0, -1):
            tree[node] = tree[2 * node] + tree[2 * node + 1]
        mod.sumtree_set(tree, cap, leaves, vals)
        return mod.sumtree_find(tree, cap, targets * tree[1])

    tree = np.zeros(2 * cap)
    tree[cap:] = 1.0
    for node in range(cap - 1, 0, -1):
        tree[node] = tree[2 * node] + tree[2 * node + 1]

    def hot():
        mod.sumtree_set(tree, cap, leaves, vals)
        return mod.sumtree_find(tree, cap, targets * tree[1])
    return timeit.timeit(hot, number=reps) / reps, run()


def bench_projection(mod, reps):
    rng = np.random.default_rng(0)
    p = rng.random((32, 51))
    p /= p.sum(axis=1, keepdims=True)
    r = rng.normal(0, 5, 32)
    g = np.full(32, 0.9801)

    def run():
        return mod.project_categorical(r, g, p, -120.0, 120.0)
    return timeit.timeit(run, number=reps) / reps, run()


CASES = {
    "advance_world (B, 21 vehicles, 10 substeps)": bench_advance,
    "occupancy + neighbor_table (B)": bench_neighbors,
    "sumtree set+find (32 leaves, 2^16 capacity)": bench_sumtree,
    "project_categorical (32 x 51)": bench_projection,
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=50)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled backend not built; only timing the Python fallback")
    print(f"{'kernel':48s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in CASES.items():
        tp, out_p = fn(_kernels_py, max(1, args.reps // 10))
        if _ckernels is None:
            print(f"{name:48s} {tp * 1e3:10.3f} {'-':>10s} {'-':>8s}")
            continue
        tc, out_c = fn(_ckernels, args.reps)
        flat_p = np.concatenate([np.ravel(x) for x in np.atleast_1d(out_p)]) \
            if isinstance(out_p, tuple) else np.ravel(out_p)
        flat_c = np.concatenate([np.ravel(x) for x in np.atleast_1d(out_c)]) \
            if isinstance(out_c, tuple) else np.ravel(out_c)
        agree = np.allclose(flat_p, flat_c, rtol=1e-12, atol=1e-12)
        print(f"{name:48s} {tp * 1e3:10.3f} {tc * 1e3:10.3f} {tp / tc:7.1f}x"
              + ("" if agree else "  OUTPUT MISMATCH"))


if __name__ == "__main__":
    main()
