# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Same contracts and arithmetic order as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport atan, tan, sin, cos, sqrt, pow, floor, fabs

cnp.import_array()

BACKEND = "cython"
NO_TARGET = -9
cdef cnp.int64_t _NO_TARGET = -9


cdef inline bint _ahead(const double[:] s, Py_ssize_t j, Py_ssize_t i) noexcept nogil:
    return s[j] > s[i] or (s[j] == s[i] and j > i)


cdef inline Py_ssize_t _clamp_lane(double y, double lane_width, Py_ssize_t top) noexcept nogil:
    cdef Py_ssize_t k = <Py_ssize_t>floor(y / lane_width)
    if k < 0:
        return 0
    if k > top:
        return top
    return k


cdef void _occupancy(const double[:] y, const cnp.int64_t[:] target, double lane_width,
                     Py_ssize_t lane_count, double width, cnp.int64_t[:] lo,
                     cnp.int64_t[:] hi) noexcept nogil:
    cdef Py_ssize_t i, a, b, t, n = y.shape[0]
    cdef double half = 0.5 * width
    cdef Py_ssize_t top = lane_count - 1
    for i in range(n):
        a = _clamp_lane(y[i] - half, lane_width, top)
        b = _clamp_lane(y[i] + half, lane_width, top)
        t = target[i]
        if t != _NO_TARGET:
            if t < a:
                a = t
            if t > b:
                b = t
        lo[i] = a
        hi[i] = b


def occupancy(double[:] y, cnp.int64_t[:] target, double lane_width, Py_ssize_t lane_count,
              double width):
    n = y.shape[0]
    lo = np.empty(n, dtype=np.int64)
    hi = np.empty(n, dtype=np.int64)
    _occupancy(y, target, lane_width, lane_count, width, lo, hi)
    return lo, hi


def neighbor_table(double[:] s, cnp.int64_t[:] lo, cnp.int64_t[:] hi, Py_ssize_t lane_count):
    cdef Py_ssize_t n = s.shape[0]
    leader_arr = np.full((n, lane_count), -1, dtype=np.int64)
    follower_arr = np.full((n, lane_count), -1, dtype=np.int64)
    cdef cnp.int64_t[:, :] leader = leader_arr
    cdef cnp.int64_t[:, :] follower = follower_arr
    cdef Py_ssize_t i, j, lane, best_l, best_f
    for i in range(n):
        for lane in range(lane_count):
            best_l = -1
            best_f = -1
            for j in range(n):
                if j == i or lo[j] > lane or hi[j] < lane:
                    continue
                if _ahead(s, j, i):
                    if best_l < 0 or _ahead(s, best_l, j):
                        best_l = j
                else:
                    if best_f < 0 or _ahead(s, j, best_f):
                        best_f = j
            leader[i, lane] = best_l
            follower[i, lane] = best_f
    return leader_arr, follower_arr


cdef inline double _idm(double v, double gap, double dv, bint has_leader, double v_set,
                        double t_set, double d0, double a_max, double b, double delta,
                        double b_hard) noexcept nogil:
    cdef double acc = 1.0 - pow(v / v_set, delta)
    cdef double d_star, ratio
    if has_leader:
        d_star = d0 + v * t_set + v * dv / (2.0 * sqrt(a_max * b))
        if d_star < 0.0:
            d_star = 0.0
        ratio = d_star / gap
        acc -= ratio * ratio
    acc *= a_max
    if acc < -b_hard:
        acc = -b_hard
    if acc > a_max:
        acc = a_max
    return acc


def idm_batch(double[:] v, double[:] gap, double[:] dv, cnp.uint8_t[:] has_leader,
              double[:, :] idm, double b_hard):
    cdef Py_ssize_t i, n = v.shape[0]
    out_arr = np.empty(n)
    cdef double[:] out = out_arr
    for i in range(n):
        out[i] = _idm(v[i], gap[i], dv[i], has_leader[i], idm[i, 0], idm[i, 1], idm[i, 2],
                      idm[i, 3], idm[i, 4], idm[i, 5], b_hard)
    return out_arr


def advance_world(double[:] s, double[:] y, double[:] psi, double[:] v, double[:] a,
                  cnp.int64_t[:] target, double[:, :] idm, double lane_width,
                  Py_ssize_t lane_count, double length, double width, double l_f, double l_r,
                  double dt, Py_ssize_t n_sub, double k_y, double k_psi, double steer_max,
                  double b_hard, Py_ssize_t ego, double lat_tol, double head_tol,
                  double min_gap=0.01):
    cdef Py_ssize_t n = s.shape[0]
    cdef double half_w = 0.5 * width
    cdef double road_w = lane_count * lane_width
    cdef double wheelbase = l_f + l_r
    cdef Py_ssize_t top = lane_count - 1
    acc_arr = np.zeros(n)
    steer_arr = np.zeros(n)
    lo_arr = np.empty(n, dtype=np.int64)
    hi_arr = np.empty(n, dtype=np.int64)
    cdef double[:] acc = acc_arr
    cdef double[:] steer = steer_arr
    cdef cnp.int64_t[:] lo = lo_arr
    cdef cnp.int64_t[:] hi = hi_arr
    cdef Py_ssize_t step, i, j, lead, ref, t, status, other
    cdef long bg = 0
    cdef double gap, d, beta, vi, vn
    for step in range(n_sub):
        _occupancy(y, target, lane_width, lane_count, width, lo, hi)
        for i in range(n):
            lead = -1
            for j in range(n):
                if j == i or lo[j] > hi[i] or hi[j] < lo[i]:
                    continue
                if _ahead(s, j, i) and (lead < 0 or _ahead(s, lead, j)):
                    lead = j
            if lead >= 0:
                gap = s[lead] - s[i] - length
                if gap < min_gap:
                    gap = min_gap
                acc[i] = _idm(v[i], gap, v[i] - v[lead], True, idm[i, 0], idm[i, 1], idm[i, 2],
                              idm[i, 3], idm[i, 4], idm[i, 5], b_hard)
            else:
                acc[i] = _idm(v[i], 0.0, 0.0, False, idm[i, 0], idm[i, 1], idm[i, 2],
                              idm[i, 3], idm[i, 4], idm[i, 5], b_hard)
            ref = target[i]
            if ref == _NO_TARGET:
                ref = _clamp_lane(y[i], lane_width, top)
            d = -k_y * (y[i] - (ref + 0.5) * lane_width) - k_psi * psi[i]
            if d > steer_max:
                d = steer_max
            elif d < -steer_max:
                d = -steer_max
            steer[i] = d
        for i in range(n):
            beta = atan(l_r * tan(steer[i]) / wheelbase)
            vi = v[i]
            s[i] = s[i] + vi * cos(psi[i] + beta) * dt
            y[i] = y[i] + vi * sin(psi[i] + beta) * dt
            psi[i] = psi[i] + (vi / l_r) * sin(beta) * dt
            vn = vi + acc[i] * dt
            v[i] = vn if vn > 0.0 else 0.0
            a[i] = acc[i]
            t = target[i]
            if t != _NO_TARGET and fabs(y[i] - (t + 0.5) * lane_width) < lat_tol and fabs(psi[i]) < head_tol:
                target[i] = _NO_TARGET
        status = 0
        other = -1
        for j in range(n):
            if j != ego and fabs(s[j] - s[ego]) < length and fabs(y[j] - y[ego]) < width:
                status = 1
                other = j
                break
        if status == 0 and (y[ego] - half_w < 0.0 or y[ego] + half_w > road_w):
            status = 2
        for i in range(n):
            if i == ego:
                continue
            for j in range(i + 1, n):
                if j != ego and fabs(s[j] - s[i]) < length and fabs(y[j] - y[i]) < width:
                    bg += 1
        if status:
            return status, other, bg, step + 1
    return 0, -1, bg, n_sub


def sumtree_set(double[:] tree, Py_ssize_t capacity, cnp.int64_t[:] leaves, double[:] values):
    cdef Py_ssize_t k, idx, node
    for k in range(leaves.shape[0]):
        idx = leaves[k]
        if idx < 0 or idx >= capacity:
            raise IndexError(f"leaf index {idx} out of range")
        node = idx + capacity
        tree[node] = values[k]
        node //= 2
        while node >= 1:
            tree[node] = tree[2 * node] + tree[2 * node + 1]
            node //= 2


def sumtree_find(double[:] tree, Py_ssize_t capacity, double[:] targets):
    cdef Py_ssize_t k, node, left
    cdef double t
    out_arr = np.empty(targets.shape[0], dtype=np.int64)
    cdef cnp.int64_t[:] out = out_arr
    for k in range(targets.shape[0]):
        t = targets[k]
        node = 1
        while node < capacity:
            left = 2 * node
            if t < tree[left] or tree[left + 1] <= 0.0:
                node = left
            else:
                t -= tree[left]
                node = left + 1
        out[k] = node - capacity
    return out_arr


def project_categorical(double[:] rewards, double[:] discounts, double[:, :] next_probs,
                        double v_min, double v_max):
    cdef Py_ssize_t batch = next_probs.shape[0], atoms = next_probs.shape[1]
    cdef double dz = (v_max - v_min) / (atoms - 1)
    out_arr = np.zeros((batch, atoms))
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t bi, j, lower
    cdef double r, g, tz, pos, near, p
    for bi in range(batch):
        r = rewards[bi]
        g = discounts[bi]
        for j in range(atoms):
            tz = r + g * (v_min + j * dz)
            if tz < v_min:
                tz = v_min
            elif tz > v_max:
                tz = v_max
            pos = (tz - v_min) / dz
            near = floor(pos + 0.5)
            if fabs(pos - near) < 1e-9:
                pos = near
            lower = <Py_ssize_t>floor(pos)
            p = next_probs[bi, j]
            if lower >= atoms - 1:
                out[bi, atoms - 1] += p
            elif pos == lower:
                out[bi, lower] += p
            else:
                out[bi, lower] += p * (lower + 1 - pos)
                out[bi, lower + 1] += p * (pos - lower)
    return out_arr
