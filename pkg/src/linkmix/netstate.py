"""Incremental follower graph, cascade forest and per-follow snapshots.

Replaying a log builds the follower graph, the repost cascades and the
"seen" counters event by event.  Just before each follow is applied, a
:class:`LinkContext` records what the creator could see at that moment:
how many grandparents, origins and triadic nodes were available as
targets, and whether the actual target was one of them.

Visibility is inferred from the graph: when ``p`` posts or reposts a
message, every current follower of ``p`` sees it.  For such a viewer the
grandparent is ``p``'s cascade parent (reposts only) and the origin is the
root author, counted only when it is not ``p`` itself.
"""
from __future__ import annotations

import hashlib
import io
from collections import Counter
from collections.abc import Sequence
from dataclasses import astuple, dataclass, fields

import numpy as np

from . import _kernels
from .eventlog import Follow, Join, LogError, Post, Repost, validate_log
from .stats import box_summary

SEEN_CAP = 2**32 - 1

_KIND_CODE = {Join: 0, Follow: 1, Post: 2, Repost: 3}


@dataclass
class Edge:
    source: int
    sink: int
    created_seq: int
    created_time: int | float
    w_seen: int = 0
    w_repost: int = 0


@dataclass(frozen=True, slots=True)
class CascadeNode:
    message: int
    holder: int
    parent: int | None
    origin: int


@dataclass(frozen=True, slots=True)
class LinkContext:
    link_index: int
    creator: int
    target: int
    k: int
    pool: int
    n_g: int
    n_o: int
    n_tri: int
    is_g: int
    is_o: int
    is_tri: int
    seen_from_target: int
    target_rank_pct_g: float | None
    target_rank_pct_o: float | None
    # grandparent-or-origin union, used by the traffic-shortcut strategy
    n_guo: int
    is_guo: int
    # candidates sharing the target's seen-count, target included
    rank_ties_g: int
    rank_ties_o: int
    seq: int
    time: int | float


CONTEXT_COLUMNS = tuple(f.name for f in fields(LinkContext))
_FLOAT_COLUMNS = {"target_rank_pct_g", "target_rank_pct_o", "time"}


@dataclass(frozen=True)
class ReplayOptions:
    pool_mode: str = "links"
    include_followed: bool = False

    def __post_init__(self):
        if self.pool_mode not in ("links", "users"):
            raise ValueError(f"pool_mode must be 'links' or 'users', not {self.pool_mode!r}")


class NetworkState:
    """Follower graph plus cascades, updated one event at a time.

    Degree convention: ``in_degree(u)`` counts the users ``u`` follows,
    ``out_degree(u)`` counts ``u``'s followers.
    """

    def __init__(self, options: ReplayOptions | None = None):
        self.options = options or ReplayOptions()
        self.n_users = 0
        self.join_seq: list[int] = []
        self.followees: list[list[int]] = []
        self.followee_set: list[set[int]] = []
        self.followers: list[list[int]] = []
        # edges are parallel lists indexed by creation order
        self.edge_source: list[int] = []
        self.edge_sink: list[int] = []
        self.edge_seq: list[int] = []
        self.edge_time: list[int | float] = []
        self.w_seen: list[int] = []
        self.w_repost: list[int] = []
        self.edge_index: dict[tuple[int, int], int] = {}
        self._out_eids: list[list[int]] = []
        self.origin: dict[int, int] = {}
        self.cascade: dict[tuple[int, int], CascadeNode] = {}
        self.seen_g: list[dict[int, int]] = []
        self.seen_o: list[dict[int, int]] = []
        self.seen_src: list[dict[int, int]] = []
        # candidate counts excluding self and followed users
        self._ng: list[int] = []
        self._no: list[int] = []
        self._nguo: list[int] = []
        # union size excluding only self
        self._nguo_all: list[int] = []
        self.posts: list[int] = []
        self.reposts: list[int] = []
        self.times_reposted: list[int] = []
        self.n_links = 0
        self.n_posts = 0
        self.n_reposts = 0
        self.event_kinds = bytearray()
        self.event_times: list[int | float] = []
        self._two_hop = _kernels.TwoHop()

    # -- queries -------------------------------------------------------

    def in_degree(self, u):
        return len(self.followees[u])

    def out_degree(self, u):
        return len(self.followers[u])

    def follows(self, creator, target):
        return target in self.followee_set[creator]

    def edge(self, source, sink) -> Edge:
        i = self.edge_index[(source, sink)]
        return Edge(source, sink, self.edge_seq[i], self.edge_time[i],
                    self.w_seen[i], self.w_repost[i])

    @property
    def edges(self) -> list[Edge]:
        return [Edge(*row) for row in zip(self.edge_source, self.edge_sink, self.edge_seq,
                                           self.edge_time, self.w_seen, self.w_repost)]

    def last_time(self):
        return self.event_times[-1] if self.event_times else 0

    def pool_size(self, creator):
        k = len(self.followees[creator])
        if self.options.pool_mode == "links":
            return self.n_links + 1 - k - 1
        return self.n_users - k - 1

    def triadic_candidates(self, j):
        return self._two_hop.query(self.followees, j, -1, True)[2]

    def _eligible(self, j, u):
        return u != j and (self.options.include_followed or u not in self.followee_set[j])

    def shortcut_candidates(self, j, flavor):
        """Sorted ``(users, seen_counts)`` for flavor ``"G"``, ``"O"`` or ``"GuO"``."""
        if flavor == "G":
            counts = self.seen_g[j]
        elif flavor == "O":
            counts = self.seen_o[j]
        elif flavor == "GuO":
            counts = Counter(self.seen_g[j])
            counts.update(self.seen_o[j])
        else:
            raise ValueError(f"unknown shortcut flavor {flavor!r}")
        users = sorted(u for u in counts if self._eligible(j, u))
        return users, [counts[u] for u in users]

    def node_features(self):
        """Per-user arrays used for class profiles."""
        n = self.n_users
        order = np.argsort(np.asarray(self.join_seq), kind="stable")
        join_rank = np.empty(n, dtype=np.int64)
        join_rank[order] = np.arange(n)
        k = np.array([len(f) for f in self.followees], dtype=np.int64)
        k_out = np.array([len(f) for f in self.followers], dtype=np.int64)
        return {
            "lifetime": (n - 1 - join_rank).astype(float),
            "k": k.astype(float),
            "k_out": k_out.astype(float),
            "posts": np.array(self.posts, dtype=float),
            "reposts": np.array(self.reposts, dtype=float),
            "times_reposted": np.array(self.times_reposted, dtype=float),
        }

    # -- updates -------------------------------------------------------

    def _add_user(self, u, seq):
        while self.n_users <= u:
            self.n_users += 1
            self.join_seq.append(seq)
            for lst in (self.followees, self.followers, self._out_eids):
                lst.append([])
            self.followee_set.append(set())
            for lst in (self.seen_g, self.seen_o, self.seen_src):
                lst.append({})
            for lst in (self._ng, self._no, self._nguo, self._nguo_all,
                        self.posts, self.reposts, self.times_reposted):
                lst.append(0)

    def context(self, ev: Follow) -> LinkContext:
        """Snapshot for ``ev`` computed from the state before it is applied."""
        j, t = ev.creator, ev.target
        opts = self.options
        k = len(self.followees[j])
        link_index = self.n_links + 1
        n_tri, hit, _ = self._two_hop.query(self.followees, j, t, False)
        sg, so = self.seen_g[j], self.seen_o[j]
        if opts.include_followed:
            n_g = len(sg) - (j in sg)
            n_o = len(so) - (j in so)
            n_guo = self._nguo_all[j]
        else:
            n_g, n_o, n_guo = self._ng[j], self._no[j], self._nguo[j]
        is_g = int(t in sg and t != j)
        is_o = int(t in so and t != j)
        pct_g = pct_o = None
        ties_g = ties_o = 0
        if is_g:
            pct_g, ties_g = self._rank(j, sg, t, n_g)
        if is_o:
            pct_o, ties_o = self._rank(j, so, t, n_o)
        return LinkContext(
            link_index=link_index,
            creator=j,
            target=t,
            k=k,
            pool=self.pool_size(j),
            n_g=n_g,
            n_o=n_o,
            n_tri=n_tri,
            is_g=is_g,
            is_o=is_o,
            is_tri=int(hit),
            seen_from_target=self.seen_src[j].get(t, 0),
            target_rank_pct_g=pct_g,
            target_rank_pct_o=pct_o,
            n_guo=n_guo,
            is_guo=int(is_g or is_o),
            rank_ties_g=ties_g,
            rank_ties_o=ties_o,
            seq=ev.seq,
            time=ev.time,
        )

    def _rank(self, j, counts, target, n):
        # mid-rank by descending seen-count, as a percentile of n candidates
        greater, equal = _kernels.rank_counts(counts, target, j, self.followee_set[j],
                                              self.options.include_followed)
        return 100.0 * (greater + (equal + 1) / 2) / n, equal

    def apply(self, ev):
        self.event_kinds.append(_KIND_CODE[type(ev)])
        self.event_times.append(ev.time)
        if isinstance(ev, Join):
            self._add_user(ev.user, ev.seq)
        elif isinstance(ev, Follow):
            self._apply_follow(ev)
        elif isinstance(ev, Post):
            self.origin[ev.message] = ev.author
            self.cascade[(ev.message, ev.author)] = CascadeNode(ev.message, ev.author, None, ev.author)
            self.posts[ev.author] += 1
            self.n_posts += 1
            self._broadcast(ev.author, ev.message, None)
        else:
            o = self.origin[ev.message]
            self.cascade[(ev.message, ev.user)] = CascadeNode(ev.message, ev.user, ev.parent, o)
            self.reposts[ev.user] += 1
            self.times_reposted[ev.parent] += 1
            self.n_reposts += 1
            eid = self.edge_index.get((ev.parent, ev.user))
            if eid is not None:
                self.w_repost[eid] += 1
            self._broadcast(ev.user, ev.message, ev.parent)

    def _apply_follow(self, ev):
        j, t = ev.creator, ev.target
        eid = len(self.edge_sink)
        self.edge_source.append(t)
        self.edge_sink.append(j)
        self.edge_seq.append(ev.seq)
        self.edge_time.append(ev.time)
        self.w_seen.append(0)
        self.w_repost.append(0)
        self.edge_index[(t, j)] = eid
        self._out_eids[t].append(eid)
        self.followees[j].append(t)
        self.followee_set[j].add(t)
        self.followers[t].append(j)
        self.n_links += 1
        in_g = t in self.seen_g[j]
        in_o = t in self.seen_o[j]
        if in_g:
            self._ng[j] -= 1
        if in_o:
            self._no[j] -= 1
        if in_g or in_o:
            self._nguo[j] -= 1

    def _broadcast(self, p, m, parent):
        _kernels.broadcast(self._out_eids[p], self.edge_sink, self.w_seen, self.seen_src,
                           self.seen_g, self.seen_o, self.followee_set, self._ng, self._no,
                           self._nguo, self._nguo_all, p, parent, self.origin[m], SEEN_CAP)


def replay(events, options: ReplayOptions | None = None, upto: int | None = None,
           validate: bool = True):
    """Replay ``events[:upto]``; returns ``(state, ContextTable)``."""
    events = events if upto is None else events[:upto]
    if validate:
        problems = validate_log(events)
        if problems:
            v = problems[0]
            raise LogError(v.code, v.reason, seq=v.seq)
    state = NetworkState(options)
    contexts = []
    for ev in events:
        if isinstance(ev, Follow):
            contexts.append(state.context(ev))
        state.apply(ev)
    return state, ContextTable(contexts)


class ContextTable(Sequence):
    """Immutable sequence of :class:`LinkContext` with column arrays.

    ``table.k``, ``table.is_g`` etc. return numpy arrays; optional rank
    percentiles are NaN where absent.
    """

    def __init__(self, records=()):
        self._records = tuple(records)
        self._cols = {}
        self._fingerprint = None

    def __len__(self):
        return len(self._records)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return ContextTable(self._records[i])
        return self._records[i]

    def __eq__(self, other):
        if isinstance(other, ContextTable):
            return self._records == other._records
        return NotImplemented

    def __hash__(self):
        return hash(self._records)

    def column(self, name):
        arr = self._cols.get(name)
        if arr is None:
            if name not in CONTEXT_COLUMNS:
                raise AttributeError(name)
            if name in _FLOAT_COLUMNS:
                vals = (getattr(r, name) for r in self._records)
                arr = np.array([np.nan if v is None else v for v in vals], dtype=np.float64)
            else:
                arr = np.fromiter((getattr(r, name) for r in self._records), dtype=np.int64,
                                  count=len(self._records))
            arr.flags.writeable = False
            self._cols[name] = arr
        return arr

    def __getattr__(self, name):
        if name.startswith("_"):
            raise AttributeError(name)
        return self.column(name)

    def subset(self, mask):
        mask = np.asarray(mask)
        if mask.dtype == bool:
            idx = np.flatnonzero(mask)
        else:
            idx = mask
        return ContextTable([self._records[i] for i in idx])

    def by_creator(self):
        groups: dict[int, list[LinkContext]] = {}
        for r in self._records:
            groups.setdefault(r.creator, []).append(r)
        return {u: ContextTable(rs) for u, rs in sorted(groups.items())}

    @property
    def fingerprint(self):
        """Content hash; fits on different tables are not comparable."""
        if self._fingerprint is None:
            self._fingerprint = hashlib.sha256(contexts_tsv(self)).hexdigest()[:16]
        return self._fingerprint


def as_table(contexts) -> ContextTable:
    return contexts if isinstance(contexts, ContextTable) else ContextTable(contexts)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def contexts_tsv(contexts, comments=()) -> bytes:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    buf.write("#" + "\t".join(CONTEXT_COLUMNS) + "\n")
    for r in contexts:
        buf.write("\t".join(_fmt(v) for v in astuple(r)) + "\n")
    return buf.getvalue().encode("utf-8")


def _parse_cell(name, tok):
    if name in ("target_rank_pct_g", "target_rank_pct_o"):
        return None if tok == "" else float(tok)
    if name == "time":
        return int(tok) if tok.isdigit() else float(tok)
    return int(tok)


def read_contexts_tsv(stream) -> ContextTable:
    if isinstance(stream, (bytes, bytearray)):
        text = stream.decode("utf-8")
    elif isinstance(stream, str):
        text = stream
    else:
        data = stream.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    header_seen = False
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.startswith("#"):
            if line[1:].split("\t") == list(CONTEXT_COLUMNS):
                header_seen = True
            continue
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) != len(CONTEXT_COLUMNS):
            raise LogError("MALFORMED", f"expected {len(CONTEXT_COLUMNS)} columns", line=lineno)
        try:
            rows.append(LinkContext(*(_parse_cell(n, c) for n, c in zip(CONTEXT_COLUMNS, cells))))
        except ValueError as exc:
            raise LogError("MALFORMED", str(exc), line=lineno) from None
    if not header_seen:
        raise LogError("MALFORMED", "missing LinkContext header row")
    return ContextTable(rows)


def is_contexts_file(path):
    header = "#" + "\t".join(CONTEXT_COLUMNS)
    with open(path, encoding="utf-8", errors="replace") as fh:
        for line in fh:
            if line.rstrip("\n") == header:
                return True
            if not line.startswith("#"):
                return False
    return False


# -- summaries ----------------------------------------------------------

VENN_CELLS = ("none", "G", "O", "Delta", "G&O", "G&Delta", "O&Delta", "G&O&Delta")


def mechanism_overlap(contexts):
    """Fraction of follows in each region of the G/O/Delta Venn diagram."""
    tab = as_table(contexts)
    if len(tab) == 0:
        raise ValueError("mechanism_overlap needs at least one context")
    g, o, d = (tab.is_g.astype(bool), tab.is_o.astype(bool), tab.is_tri.astype(bool))
    n = len(tab)
    cells = {
        "none": ~g & ~o & ~d,
        "G": g & ~o & ~d,
        "O": ~g & o & ~d,
        "Delta": ~g & ~o & d,
        "G&O": g & o & ~d,
        "G&Delta": g & ~o & d,
        "O&Delta": ~g & o & d,
        "G&O&Delta": g & o & d,
    }
    out = {name: float(mask.sum()) / n for name, mask in cells.items()}
    out["marginal_G"] = float(g.sum()) / n
    out["marginal_O"] = float(o.sum()) / n
    out["marginal_Delta"] = float(d.sum()) / n
    return out


def _histogram(values, log_bins):
    values = [v for v in values if v >= 1]
    if not values:
        return {}
    if not log_bins:
        return dict(sorted(Counter(values).items()))
    top = max(values)
    edges = [1]
    while edges[-1] <= top:
        edges.append(edges[-1] * 2)
    counts = np.histogram(values, bins=edges)[0]
    total = len(values)
    return {
        (lo, hi): c / (total * (hi - lo))
        for lo, hi, c in zip(edges[:-1], edges[1:], counts) if c
    }


def summary_stats(state: NetworkState, n_samples: int = 100, log_bins: bool = False):
    """Cumulative growth curves and degree histograms.

    Growth is sampled at ``n_samples`` evenly spaced event indices (plus the
    last event).  Histograms skip zero-degree users; with ``log_bins`` the
    keys are ``(lo, hi)`` power-of-two bins and values are densities.
    """
    kinds = np.frombuffer(bytes(state.event_kinds), dtype=np.uint8)
    n = kinds.shape[0]
    if n:
        idx = np.unique(np.linspace(0, n - 1, max(1, min(n_samples, n))).round().astype(int))
    else:
        idx = np.zeros(0, dtype=int)
    cum = {name: np.cumsum(kinds == code)[idx] if n else np.zeros(0, dtype=int)
           for name, code in (("users", 0), ("links", 1), ("posts", 2), ("reposts", 3))}
    growth = {
        "seq": idx,
        "time": np.array([state.event_times[i] for i in idx], dtype=float),
        **cum,
        "messages": cum["posts"] + cum["reposts"],
    }
    in_deg = [len(f) for f in state.followees]
    out_deg = [len(f) for f in state.followers]
    return {
        "growth": growth,
        "in_degree": _histogram(in_deg, log_bins),
        "out_degree": _histogram(out_deg, log_bins),
    }


EFFICIENCY_GROUPS = ("G", "O", "GuO", "Delta-only", "all")


def link_efficiency(state: NetworkState, contexts, T=None):
    """Traffic per time unit through each follow link after its creation.

    Returns ``(per_link, summary)``.  ``per_link`` holds arrays ``seen``,
    ``repost`` and the group masks; links created at ``T`` are dropped.
    ``summary[group][measure]`` is a box summary, or ``None`` when the
    group is empty.
    """
    tab = as_table(contexts)
    if T is None:
        T = state.last_time()
    times = tab.time
    if len(tab) and np.any(times > T):
        raise ValueError("T precedes a link creation time")
    keep = times < T
    sub = tab.subset(keep)
    dt = T - sub.time
    eids = [state.edge_index[(r.target, r.creator)] for r in sub]
    w_seen = np.array([state.w_seen[i] for i in eids], dtype=float)
    w_rep = np.array([state.w_repost[i] for i in eids], dtype=float)
    g, o, d = sub.is_g.astype(bool), sub.is_o.astype(bool), sub.is_tri.astype(bool)
    masks = {
        "G": g,
        "O": o,
        "GuO": g | o,
        "Delta-only": d & ~g & ~o,
        "all": np.ones(len(sub), dtype=bool),
    }
    per_link = {
        "link_index": sub.link_index,
        "seen": w_seen / dt if len(sub) else w_seen,
        "repost": w_rep / dt if len(sub) else w_rep,
        "masks": masks,
    }
    summary = {}
    for name, mask in masks.items():
        if not mask.any():
            summary[name] = None
            continue
        summary[name] = {
            "seen": box_summary(per_link["seen"][mask]),
            "repost": box_summary(per_link["repost"][mask]),
        }
    return per_link, summary
