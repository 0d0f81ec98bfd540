# cython: language_level=3
"""Compiled inner loops: mixture log-likelihood grids and two-hop reach."""
from libc.math cimport log, INFINITY
from libc.stdlib cimport free, realloc
from libc.string cimport memset

import numpy as np


def loglik_grid(const double[::1] a, const double[::1] b, const double[::1] c,
                const double[::1] p1, const double[::1] p2, const double[::1] q):
    cdef Py_ssize_t n_links = a.shape[0]
    cdef Py_ssize_t n_points = p1.shape[0]
    cdef Py_ssize_t g, i
    cdef double acc, s, w1, w2, w0
    out = np.empty(n_points, dtype=np.float64)
    cdef double[::1] res = out
    with nogil:
        for g in range(n_points):
            w1 = p1[g]
            w2 = p2[g]
            w0 = q[g]
            acc = 0.0
            for i in range(n_links):
                s = w1 * a[i] + w2 * b[i] + w0 * c[i]
                if s <= 0.0:
                    acc = -INFINITY
                    break
                acc += log(s)
            res[g] = acc
    return out


cdef class TwoHop:
    """Counts the users two follow-steps from ``j`` that ``j`` does not follow.

    A per-user stamp buffer replaces the temporary set a pure-Python
    traversal would build; stamps from older queries are always smaller
    than the current epoch so the buffer never needs clearing.
    """
    cdef long long *mark
    cdef Py_ssize_t size
    cdef long long epoch

    def __cinit__(self):
        self.mark = NULL
        self.size = 0
        self.epoch = 0

    def __dealloc__(self):
        free(self.mark)

    cdef int _ensure(self, Py_ssize_t n) except -1:
        cdef Py_ssize_t new_size
        cdef long long *buf
        if n <= self.size:
            return 0
        new_size = max(n, 2 * self.size, 64)
        buf = <long long *>realloc(self.mark, new_size * sizeof(long long))
        if buf == NULL:
            raise MemoryError()
        memset(buf + self.size, 0, (new_size - self.size) * sizeof(long long))
        self.mark = buf
        self.size = new_size
        return 0

    def query(self, list followees, Py_ssize_t j, Py_ssize_t target=-1, bint collect=False):
        cdef Py_ssize_t u, v, count = 0
        cdef long long excluded, reached
        cdef list fj = <list>followees[j]
        cdef list fv
        cdef list members = [] if collect else None
        self._ensure(len(followees))
        self.epoch += 2
        excluded = self.epoch
        reached = self.epoch + 1
        self.mark[j] = excluded
        for obj in fj:
            self.mark[<Py_ssize_t>obj] = excluded
        for obj in fj:
            fv = <list>followees[<Py_ssize_t>obj]
            for uobj in fv:
                u = uobj
                if self.mark[u] < excluded:
                    self.mark[u] = reached
                    count += 1
                    if collect:
                        members.append(uobj)
        if collect:
            members.sort()
        hit = 0 <= target < self.size and self.mark[target] == reached
        return count, hit, members


cdef inline void _see(Py_ssize_t f, object u, dict counts, list n_cand, dict other,
                      list followee_set, list nguo, list nguo_all, long long cap):
    cdef object c = counts.get(u)
    if c is not None:
        if <long long>c < cap:
            counts[u] = c + 1
        return
    counts[u] = 1
    if <Py_ssize_t>u == f:
        return
    cdef bint new_in_union = u not in other
    if new_in_union:
        nguo_all[f] = nguo_all[f] + 1
    if u not in <set>followee_set[f]:
        n_cand[f] = n_cand[f] + 1
        if new_in_union:
            nguo[f] = nguo[f] + 1


def broadcast(list out_eids, list sink, list w_seen, list seen_src, list seen_g, list seen_o,
              list followee_set, list ng, list no, list nguo, list nguo_all,
              Py_ssize_t p, object parent, object origin, long long cap):
    cdef Py_ssize_t eid, f
    cdef dict src
    cdef bint repost = parent is not None
    cdef bint shortcut_origin = <Py_ssize_t>origin != p
    cdef object c
    for obj in out_eids:
        eid = obj
        f = sink[eid]
        w_seen[eid] = w_seen[eid] + 1
        src = <dict>seen_src[f]
        c = src.get(origin, 0)
        if <long long>c < cap:
            src[origin] = c + 1
        if repost:
            _see(f, parent, <dict>seen_g[f], ng, <dict>seen_o[f], followee_set, nguo, nguo_all, cap)
        if shortcut_origin:
            _see(f, origin, <dict>seen_o[f], no, <dict>seen_g[f], followee_set, nguo, nguo_all, cap)


def rank_counts(dict counts, object target, Py_ssize_t j, set followed, bint include_followed):
    cdef long long c_t = counts[target]
    cdef long long c
    cdef Py_ssize_t greater = 0, equal = 0
    for u, cobj in counts.items():
        c = cobj
        if c < c_t or <Py_ssize_t>u == j or (not include_followed and u in followed):
            continue
        if c > c_t:
            greater += 1
        else:
            equal += 1
    return greater, equal
