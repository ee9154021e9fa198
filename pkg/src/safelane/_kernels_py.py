"""Pure-Python kernels. Mirrors ``_ckernels.pyx`` operation for operation.

Vehicle arrays are struct-of-arrays float64 (``s, y, psi, v, a``), ``target`` is
int64 with ``NO_TARGET`` meaning "no lane change in progress", and ``idm`` is an
``(n, 6)`` float64 table with columns ``v_set, T_set, d0, a_max, b, delta``.
"""
import math

import numpy as np

BACKEND = "python"
NO_TARGET = -9

# ordering used for leader/follower: j is ahead of i
def _ahead(s, j, i):
    return s[j] > s[i] or (s[j] == s[i] and j > i)


def occupancy(y, target, lane_width, lane_count, width):
    """Lowest and highest lane index touched by each body (plus any target lane)."""
    n = len(y)
    lo = np.empty(n, dtype=np.int64)
    hi = np.empty(n, dtype=np.int64)
    half = 0.5 * width
    top = lane_count - 1
    for i in range(n):
        a = min(max(int(math.floor((y[i] - half) / lane_width)), 0), top)
        b = min(max(int(math.floor((y[i] + half) / lane_width)), 0), top)
        t = target[i]
        if t != NO_TARGET:
            a = min(a, t)
            b = max(b, t)
        lo[i] = a
        hi[i] = b
    return lo, hi


def neighbor_table(s, lo, hi, lane_count):
    """Nearest leader and follower of every vehicle in every lane (-1 if none)."""
    n = len(s)
    leader = np.full((n, lane_count), -1, dtype=np.int64)
    follower = np.full((n, lane_count), -1, dtype=np.int64)
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
    return leader, follower


def _idm(v, gap, dv, has_leader, v_set, t_set, d0, a_max, b, delta, b_hard):
    acc = 1.0 - math.pow(v / v_set, delta)
    if has_leader:
        d_star = d0 + v * t_set + v * dv / (2.0 * math.sqrt(a_max * b))
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


def idm_batch(v, gap, dv, has_leader, idm, b_hard):
    n = len(v)
    out = np.empty(n)
    for i in range(n):
        out[i] = _idm(v[i], gap[i], dv[i], has_leader[i], idm[i, 0], idm[i, 1], idm[i, 2],
                      idm[i, 3], idm[i, 4], idm[i, 5], b_hard)
    return out


def advance_world(s, y, psi, v, a, target, idm, lane_width, lane_count, length, width,
                  l_f, l_r, dt, n_sub, k_y, k_psi, steer_max, b_hard, ego, lat_tol, head_tol,
                  min_gap=0.01):
    """Run ``n_sub`` physics substeps in place.

    Returns ``(status, other, background_overlaps, substeps_run)`` where status is
    0 for no ego event, 1 for ego/vehicle overlap (``other`` is the index) and 2
    for ego road departure. Simulation stops after the substep producing an ego
    event. ``background_overlaps`` counts overlapping non-ego pairs summed over
    substeps.
    """
    n = len(s)
    half_w = 0.5 * width
    road_w = lane_count * lane_width
    wheelbase = l_f + l_r
    top = lane_count - 1
    acc = [0.0] * n
    steer = [0.0] * n
    bg = 0
    for step in range(n_sub):
        lo, hi = occupancy(y, target, lane_width, lane_count, width)
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
            if ref == NO_TARGET:
                ref = min(max(int(math.floor(y[i] / lane_width)), 0), top)
            d = -k_y * (y[i] - (ref + 0.5) * lane_width) - k_psi * psi[i]
            if d > steer_max:
                d = steer_max
            elif d < -steer_max:
                d = -steer_max
            steer[i] = d
        for i in range(n):
            beta = math.atan(l_r * math.tan(steer[i]) / wheelbase)
            vi = v[i]
            s[i] = s[i] + vi * math.cos(psi[i] + beta) * dt
            y[i] = y[i] + vi * math.sin(psi[i] + beta) * dt
            psi[i] = psi[i] + (vi / l_r) * math.sin(beta) * dt
            vn = vi + acc[i] * dt
            v[i] = vn if vn > 0.0 else 0.0
            a[i] = acc[i]
            t = target[i]
            if t != NO_TARGET and abs(y[i] - (t + 0.5) * lane_width) < lat_tol and abs(psi[i]) < head_tol:
                target[i] = NO_TARGET
        status = 0
        other = -1
        for j in range(n):
            if j != ego and abs(s[j] - s[ego]) < length and abs(y[j] - y[ego]) < width:
                status = 1
                other = j
                break
        if status == 0 and (y[ego] - half_w < 0.0 or y[ego] + half_w > road_w):
            status = 2
        for i in range(n):
            if i == ego:
                continue
            for j in range(i + 1, n):
                if j != ego and abs(s[j] - s[i]) < length and abs(y[j] - y[i]) < width:
                    bg += 1
        if status:
            return status, other, bg, step + 1
    return 0, -1, bg, n_sub


def sumtree_set(tree, capacity, leaves, values):
    """Write leaf priorities and recompute every touched ancestor from its children."""
    for k in range(len(leaves)):
        idx = int(leaves[k])
        if idx < 0 or idx >= capacity:
            raise IndexError(f"leaf index {idx} out of range")
        node = idx + capacity
        tree[node] = values[k]
        node //= 2
        while node >= 1:
            tree[node] = tree[2 * node] + tree[2 * node + 1]
            node //= 2


def sumtree_find(tree, capacity, targets):
    """Descend from the root for each prefix-sum target; never lands on a zero leaf."""
    out = np.empty(len(targets), dtype=np.int64)
    for k in range(len(targets)):
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
    return out


def project_categorical(rewards, discounts, next_probs, v_min, v_max):
    """Categorical projection of ``r + gamma * z`` onto the fixed support."""
    batch, atoms = next_probs.shape
    dz = (v_max - v_min) / (atoms - 1)
    out = np.zeros((batch, atoms))
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
            near = math.floor(pos + 0.5)
            if abs(pos - near) < 1e-9:
                pos = near
            lower = int(math.floor(pos))
            p = next_probs[bi, j]
            if lower >= atoms - 1:
                out[bi, atoms - 1] += p
            elif pos == lower:
                out[bi, lower] += p
            else:
                out[bi, lower] += p * (lower + 1 - pos)
                out[bi, lower + 1] += p * (pos - lower)
    return out
