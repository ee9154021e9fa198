"""Both kernel backends must agree bit for bit."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safelane import _kernels_py, kernels
from safelane.drivers import B_HARD, HEADING_TOL, K_PSI, K_Y, LATERAL_TOL
from safelane.road import STEER_MAX
from safelane.scenario import config_a, config_b, generate_scenario

try:
    from safelane import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None

needs_c = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")
    assert kernels.NO_TARGET == _kernels_py.NO_TARGET
    if _ckernels is not None:
        assert kernels.BACKEND == "cython"


def _advance(mod, w, n_sub=10):
    g = w.geom
    arrs = [x.copy() for x in (w.s, w.y, w.psi, w.v, w.a)]
    tgt = w.target.copy()
    out = mod.advance_world(*arrs, tgt, w.idm, w.road.lane_width, w.road.lane_count, g.length,
                            g.width, g.l_f, g.l_r, 0.1, n_sub, K_Y, K_PSI, STEER_MAX, B_HARD, 0,
                            LATERAL_TOL, HEADING_TOL)
    return out, arrs, tgt


@needs_c
@pytest.mark.parametrize("make", [config_a, config_b])
def test_advance_world_equivalent(make):
    for seed in range(25):
        w = generate_scenario(make(), np.random.default_rng(seed))
        rng = np.random.default_rng(seed + 100)
        # start some lane changes so the lateral branch is exercised
        for i in rng.choice(w.n, size=3, replace=False):
            t = w.lane(i) + int(rng.choice([-1, 1]))
            if w.road.has_lane(t):
                w.target[i] = t
        for _ in range(5):
            out_p, arr_p, tgt_p = _advance(_kernels_py, w)
            out_c, arr_c, tgt_c = _advance(_ckernels, w)
            assert out_p == out_c
            for a, b in zip(arr_p, arr_c):
                np.testing.assert_array_equal(a, b)
            np.testing.assert_array_equal(tgt_p, tgt_c)
            w.s, w.y, w.psi, w.v, w.a = arr_c
            w.target = tgt_c
            if out_c[0]:
                break


@needs_c
def test_neighbor_tables_equivalent():
    for seed in range(50):
        w = generate_scenario(config_b(), np.random.default_rng(seed))
        a = _kernels_py.occupancy(w.y, w.target, 3.75, w.road.lane_count, 2.0)
        b = _ckernels.occupancy(w.y, w.target, 3.75, w.road.lane_count, 2.0)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        ta = _kernels_py.neighbor_table(w.s, a[0], a[1], w.road.lane_count)
        tb = _ckernels.neighbor_table(w.s, b[0], b[1], w.road.lane_count)
        np.testing.assert_array_equal(ta[0], tb[0])
        np.testing.assert_array_equal(ta[1], tb[1])


def test_occupancy_spans_target_lane():
    y = np.array([1.875, 3.75, 5.625])
    tgt = np.array([kernels.NO_TARGET, kernels.NO_TARGET, 0], dtype=np.int64)
    lo, hi = kernels.occupancy(y, tgt, 3.75, 3, 2.0)
    assert list(lo) == [0, 0, 0]
    assert list(hi) == [0, 1, 1]


def test_neighbor_table_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n, lanes = 12, 4
        s = rng.uniform(-100, 100, n)
        lo = rng.integers(0, lanes, n)
        hi = np.minimum(lo + rng.integers(0, 2, n), lanes - 1)
        leader, follower = kernels.neighbor_table(s, lo, hi, lanes)
        for i in range(n):
            for lane in range(lanes):
                occ = [j for j in range(n) if j != i and lo[j] <= lane <= hi[j]]
                ahead = [j for j in occ if s[j] > s[i]]
                behind = [j for j in occ if s[j] < s[i]]
                assert leader[i, lane] == (min(ahead, key=lambda j: s[j]) if ahead else -1)
                assert follower[i, lane] == (max(behind, key=lambda j: s[j]) if behind else -1)


@needs_c
@settings(max_examples=200, deadline=None)
@given(cap_pow=st.integers(0, 8), data=st.data())
def test_sumtree_equivalent(cap_pow, data):
    cap = 2 ** cap_pow
    leaves = np.array(data.draw(st.lists(st.integers(0, cap - 1), min_size=1, max_size=20)),
                      dtype=np.int64)
    vals = np.array(data.draw(st.lists(st.floats(0, 10), min_size=len(leaves),
                                       max_size=len(leaves))))
    ta, tb = np.zeros(2 * cap), np.zeros(2 * cap)
    _kernels_py.sumtree_set(ta, cap, leaves, vals)
    _ckernels.sumtree_set(tb, cap, leaves, vals)
    np.testing.assert_array_equal(ta, tb)
    targets = np.linspace(0, max(ta[1], 1e-12), 7, endpoint=False)
    np.testing.assert_array_equal(_kernels_py.sumtree_find(ta, cap, targets),
                                  _ckernels.sumtree_find(tb, cap, targets))


def test_sumtree_rejects_bad_leaf():
    tree = np.zeros(8)
    with pytest.raises(IndexError):
        kernels.sumtree_set(tree, 4, np.array([4], dtype=np.int64), np.array([1.0]))


@needs_c
def test_projection_equivalent():
    rng = np.random.default_rng(0)
    p = rng.random((64, 51))
    p /= p.sum(axis=1, keepdims=True)
    r = rng.normal(0, 60, 64)
    g = rng.choice([0.0, 0.99, 0.9801], 64)
    np.testing.assert_array_equal(_kernels_py.project_categorical(r, g, p, -120.0, 120.0),
                                  _ckernels.project_categorical(r, g, p, -120.0, 120.0))


@needs_c
def test_idm_batch_equivalent():
    rng = np.random.default_rng(1)
    n = 100
    v = rng.uniform(0, 35, n)
    gap = rng.uniform(0.1, 150, n)
    dv = rng.uniform(-10, 10, n)
    has = rng.integers(0, 2, n).astype(np.uint8)
    w = generate_scenario(config_b(), rng)
    idm = np.tile(w.idm, (5, 1))[:n]
    np.testing.assert_array_equal(_kernels_py.idm_batch(v, gap, dv, has, idm, 9.0),
                                  _ckernels.idm_batch(v, gap, dv, has, idm, 9.0))
