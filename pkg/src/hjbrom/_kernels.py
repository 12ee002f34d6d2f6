"""Compiled kernels for the semi-Lagrangian grid sweeps.

The grid is passed as flat arrays: ``axis_values`` concatenates all axis
node lists, ``axis_start`` holds the per-axis offsets (length dim+1),
``strides`` the row-major strides. Foot points outside the bounding box
evaluate to the penalty constant. All loops update disjoint entries, so
the parallel sweeps are bit-deterministic.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _interp_at(x, ell, idx, frac, axis_values, axis_start, strides, values, penalty):
    """Multilinear interpolation of `values` at point x (work arrays idx/frac)."""
    for j in range(ell):
        lo = axis_start[j]
        hi = axis_start[j + 1]
        xj = x[j]
        if xj < axis_values[lo] or xj > axis_values[hi - 1]:
            return penalty
        i0 = lo
        i1 = hi - 1
        while i1 - i0 > 1:
            mid = (i0 + i1) // 2
            if axis_values[mid] <= xj:
                i0 = mid
            else:
                i1 = mid
        idx[j] = i0 - lo
        frac[j] = (xj - axis_values[i0]) / (axis_values[i0 + 1] - axis_values[i0])
    acc = 0.0
    for corner in range(1 << ell):
        w = 1.0
        flat = 0
        for j in range(ell):
            bit = (corner >> j) & 1
            if bit == 1:
                w *= frac[j]
            else:
                w *= 1.0 - frac[j]
            flat += (idx[j] + bit) * strides[j]
        acc += w * values[flat]
    return acc


@njit(cache=True, parallel=True)
def sweep_min(
    nodes,
    fy,
    fu,
    controls,
    g_state,
    g_control,
    values,
    axis_values,
    axis_start,
    strides,
    dt,
    disc,
    penalty,
):
    """One Jacobi sweep of the Bellman operator with exhaustive control search.

    Returns the swept values and the per-node argmin control index (ties
    resolved to the lowest index by the strict comparison).
    """
    H, ell = nodes.shape
    n_ctrl, m = controls.shape
    out = np.empty(H)
    pol = np.empty(H, np.int64)
    for i in prange(H):
        idx = np.empty(ell, np.int64)
        frac = np.empty(ell)
        foot = np.empty(ell)
        best = np.inf
        best_c = 0
        for c in range(n_ctrl):
            for j in range(ell):
                f = fy[i, j]
                for k in range(m):
                    f += fu[i, j, k] * controls[c, k]
                foot[j] = nodes[i, j] + dt * f
            val = _interp_at(
                foot, ell, idx, frac, axis_values, axis_start, strides, values, penalty
            )
            total = disc * val + dt * (g_state[i] + g_control[c])
            if total < best:
                best = total
                best_c = c
        out[i] = best
        pol[i] = best_c
    return out, pol


@njit(cache=True, parallel=True)
def policy_apply(
    nodes,
    fy,
    fu,
    controls,
    policy,
    g_node,
    values,
    axis_values,
    axis_start,
    strides,
    dt,
    disc,
    penalty,
):
    """Frozen-policy Bellman application disc*I[V](foot_i) + dt*g_i."""
    H, ell = nodes.shape
    m = controls.shape[1]
    out = np.empty(H)
    for i in prange(H):
        idx = np.empty(ell, np.int64)
        frac = np.empty(ell)
        foot = np.empty(ell)
        c = policy[i]
        for j in range(ell):
            f = fy[i, j]
            for k in range(m):
                f += fu[i, j, k] * controls[c, k]
            foot[j] = nodes[i, j] + dt * f
        val = _interp_at(
            foot, ell, idx, frac, axis_values, axis_start, strides, values, penalty
        )
        out[i] = disc * val + dt * g_node[i]
    return out


@njit(cache=True, parallel=True)
def policy_weights(
    nodes,
    fy,
    fu,
    controls,
    policy,
    axis_values,
    axis_start,
    strides,
    dt,
):
    """Interpolation weights of the frozen-policy foot map, row per node.

    Returns (data, cols, inside): rows of the sparse operator M(u); rows
    whose foot point leaves the box are empty with inside=False.
    """
    H, ell = nodes.shape
    m = controls.shape[1]
    n_corner = 1 << ell
    data = np.zeros((H, n_corner))
    cols = np.zeros((H, n_corner), np.int64)
    inside = np.zeros(H, np.bool_)
    for i in prange(H):
        idx = np.empty(ell, np.int64)
        frac = np.empty(ell)
        c = policy[i]
        ok = True
        for j in range(ell):
            f = fy[i, j]
            for k in range(m):
                f += fu[i, j, k] * controls[c, k]
            xj = nodes[i, j] + dt * f
            lo = axis_start[j]
            hi = axis_start[j + 1]
            if xj < axis_values[lo] or xj > axis_values[hi - 1]:
                ok = False
                break
            i0 = lo
            i1 = hi - 1
            while i1 - i0 > 1:
                mid = (i0 + i1) // 2
                if axis_values[mid] <= xj:
                    i0 = mid
                else:
                    i1 = mid
            idx[j] = i0 - lo
            frac[j] = (xj - axis_values[i0]) / (axis_values[i0 + 1] - axis_values[i0])
        inside[i] = ok
        if ok:
            for corner in range(n_corner):
                w = 1.0
                flat = 0
                for j in range(ell):
                    bit = (corner >> j) & 1
                    if bit == 1:
                        w *= frac[j]
                    else:
                        w *= 1.0 - frac[j]
                    flat += (idx[j] + bit) * strides[j]
                data[i, corner] = w
                cols[i, corner] = flat
    return data, cols, inside
