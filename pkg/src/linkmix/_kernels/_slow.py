"""Pure-Python/numpy versions of the compiled kernels."""
import numpy as np

# grid rows evaluated per numpy block, bounded by links * rows
_BLOCK = 1 << 22


def loglik_grid(a, b, c, p1, p2, q):
    """Sum of ``log(p1*a + p2*b + q*c)`` over links, for every grid point."""
    a, b, c = (np.ascontiguousarray(x, dtype=np.float64) for x in (a, b, c))
    p1, p2, q = (np.ascontiguousarray(x, dtype=np.float64) for x in (p1, p2, q))
    out = np.empty(p1.shape[0])
    if a.shape[0] == 0:
        out[:] = 0.0
        return out
    rows = max(1, _BLOCK // a.shape[0])
    with np.errstate(divide="ignore"):
        for lo in range(0, p1.shape[0], rows):
            hi = lo + rows
            s = (p1[lo:hi, None] * a + p2[lo:hi, None] * b) + q[lo:hi, None] * c
            s[s < 0.0] = 0.0
            out[lo:hi] = np.log(s).sum(axis=1)
    return out


class TwoHop:
    """Set-based two-hop reach; same interface as the compiled version."""

    def query(self, followees, j, target=-1, collect=False):
        fj = followees[j]
        reach = set()
        for v in fj:
            reach.update(followees[v])
        reach.difference_update(fj)
        reach.discard(j)
        members = sorted(reach) if collect else None
        return len(reach), target in reach, members


def _see(f, u, counts, n_cand, other, followee_set, nguo, nguo_all, cap):
    c = counts.get(u)
    if c is not None:
        if c < cap:
            counts[u] = c + 1
        return
    counts[u] = 1
    if u == f:
        return
    new_in_union = u not in other
    if new_in_union:
        nguo_all[f] += 1
    if u not in followee_set[f]:
        n_cand[f] += 1
        if new_in_union:
            nguo[f] += 1


def broadcast(out_eids, sink, w_seen, seen_src, seen_g, seen_o, followee_set,
              ng, no, nguo, nguo_all, p, parent, origin, cap):
    """Seen-accounting for one post/repost by ``p`` of a message from ``origin``.

    ``parent`` is ``p``'s cascade parent, or ``None`` for an original post.
    """
    for eid in out_eids:
        f = sink[eid]
        w_seen[eid] += 1
        src = seen_src[f]
        c = src.get(origin, 0)
        if c < cap:
            src[origin] = c + 1
        if parent is not None:
            _see(f, parent, seen_g[f], ng, seen_o[f], followee_set, nguo, nguo_all, cap)
        if origin != p:
            _see(f, origin, seen_o[f], no, seen_g[f], followee_set, nguo, nguo_all, cap)


def rank_counts(counts, target, j, followed, include_followed):
    """Candidates seen strictly more often than ``target``, and those tied with it."""
    c_t = counts[target]
    greater = equal = 0
    for u, c in counts.items():
        if c < c_t or u == j or (not include_followed and u in followed):
            continue
        if c > c_t:
            greater += 1
        else:
            equal += 1
    return greater, equal
