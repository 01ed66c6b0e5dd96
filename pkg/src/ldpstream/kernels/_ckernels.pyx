# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: per-user FO perturbation and isolation-forest path lengths.

Every routine consumes caller-supplied uniforms in a fixed order, so the
results match the numpy fallback in ``_pykernels`` bit for bit.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log

cnp.import_array()

cdef double EULER_GAMMA = 0.5772156649015329


cdef inline double _avg_path(double size) noexcept nogil:
    if size <= 1.0:
        return 0.0
    if size == 2.0:
        return 1.0
    return 2.0 * (log(size - 1.0) + EULER_GAMMA) - 2.0 * (size - 1.0) / size


def krr_perturb(const cnp.int64_t[::1] values, const double[::1] uniforms,
                double p, double q, Py_ssize_t d):
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t i
    cdef cnp.int64_t v, j
    cdef double u
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    with nogil:
        for i in range(n):
            v = values[i]
            u = uniforms[i]
            if u < p:
                o[i] = v
            else:
                j = <cnp.int64_t>((u - p) / q)
                if j > d - 2:
                    j = d - 2
                if j >= v:
                    j += 1
                o[i] = j
    return out


def oue_perturb(const cnp.int64_t[::1] values, const double[:, ::1] uniforms,
                double p, double q):
    cdef Py_ssize_t n = uniforms.shape[0]
    cdef Py_ssize_t d = uniforms.shape[1]
    cdef Py_ssize_t i, k
    cdef cnp.int64_t v
    out = np.empty((n, d), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] o = out
    with nogil:
        for i in range(n):
            v = values[i]
            for k in range(d):
                if k == v:
                    o[i, k] = uniforms[i, k] < p
                else:
                    o[i, k] = uniforms[i, k] < q
    return out


def iforest_path_lengths(const double[:, ::1] X, const cnp.int64_t[:, ::1] samples,
                         const double[:, ::1] uniforms, int height_limit):
    """Mean path length of every row of X over the trees described by samples."""
    cdef Py_ssize_t n_points = X.shape[0]
    cdef Py_ssize_t dim = X.shape[1]
    cdef Py_ssize_t n_trees = samples.shape[0]
    cdef Py_ssize_t psi = samples.shape[1]
    cdef Py_ssize_t max_nodes = (1 << (height_limit + 1)) + 1

    attr_arr = np.empty(max_nodes, dtype=np.int64)
    split_arr = np.empty(max_nodes, dtype=np.float64)
    left_arr = np.empty(max_nodes, dtype=np.int64)
    right_arr = np.empty(max_nodes, dtype=np.int64)
    size_arr = np.empty(max_nodes, dtype=np.int64)
    idx_arr = np.empty(psi, dtype=np.int64)
    stack_arr = np.empty((max_nodes, 4), dtype=np.int64)
    total_arr = np.zeros(n_points, dtype=np.float64)

    cdef cnp.int64_t[::1] attr = attr_arr
    cdef double[::1] split = split_arr
    cdef cnp.int64_t[::1] left = left_arr
    cdef cnp.int64_t[::1] right = right_arr
    cdef cnp.int64_t[::1] size = size_arr
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef cnp.int64_t[:, ::1] stack = stack_arr
    cdef double[::1] total = total_arr

    cdef Py_ssize_t tr, i, a, top, node, start, end, depth, n_nodes, ucount
    cdef Py_ssize_t n_nonconst, chosen, lo, hi, tmp
    cdef double mn, mx, val, u1, u2, s
    cdef Py_ssize_t pick_attr

    with nogil:
        for tr in range(n_trees):
            for i in range(psi):
                idx[i] = samples[tr, i]
            n_nodes = 1
            ucount = 0
            top = 0
            stack[0, 0] = 0
            stack[0, 1] = 0
            stack[0, 2] = psi
            stack[0, 3] = 0
            top = 1
            while top > 0:
                top -= 1
                node = stack[top, 0]
                start = stack[top, 1]
                end = stack[top, 2]
                depth = stack[top, 3]
                size[node] = end - start
                left[node] = -1
                if end - start <= 1 or depth >= height_limit:
                    continue
                n_nonconst = 0
                for a in range(dim):
                    mn = X[idx[start], a]
                    mx = mn
                    for i in range(start + 1, end):
                        val = X[idx[i], a]
                        if val < mn:
                            mn = val
                        if val > mx:
                            mx = val
                    if mx > mn:
                        n_nonconst += 1
                if n_nonconst == 0:
                    continue
                u1 = uniforms[tr, ucount]
                u2 = uniforms[tr, ucount + 1]
                ucount += 2
                chosen = <Py_ssize_t>(u1 * n_nonconst)
                if chosen >= n_nonconst:
                    chosen = n_nonconst - 1
                pick_attr = -1
                for a in range(dim):
                    mn = X[idx[start], a]
                    mx = mn
                    for i in range(start + 1, end):
                        val = X[idx[i], a]
                        if val < mn:
                            mn = val
                        if val > mx:
                            mx = val
                    if mx > mn:
                        if chosen == 0:
                            pick_attr = a
                            break
                        chosen -= 1
                s = mn + u2 * (mx - mn)
                attr[node] = pick_attr
                split[node] = s
                lo = start
                hi = end - 1
                while lo <= hi:
                    if X[idx[lo], pick_attr] < s:
                        lo += 1
                    else:
                        tmp = idx[lo]
                        idx[lo] = idx[hi]
                        idx[hi] = tmp
                        hi -= 1
                left[node] = n_nodes
                right[node] = n_nodes + 1
                n_nodes += 2
                stack[top, 0] = right[node]
                stack[top, 1] = lo
                stack[top, 2] = end
                stack[top, 3] = depth + 1
                top += 1
                stack[top, 0] = left[node]
                stack[top, 1] = start
                stack[top, 2] = lo
                stack[top, 3] = depth + 1
                top += 1
            for i in range(n_points):
                node = 0
                depth = 0
                while left[node] >= 0:
                    if X[i, attr[node]] < split[node]:
                        node = left[node]
                    else:
                        node = right[node]
                    depth += 1
                total[i] += depth + _avg_path(<double>size[node])
        for i in range(n_points):
            total[i] = total[i] / n_trees
    return total_arr
