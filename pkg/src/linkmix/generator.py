"""Synthetic event logs driven by a mixture of link-creation strategies.

Each follow picks a strategy: *traffic* (a grandparent/origin the creator
has seen), *structure* (a friend-of-a-friend) or *random* (any user not yet
followed).  When the chosen strategy has no candidates the follow falls
back to random and the trace records it.  Posting and reposting are a
minimal activity model: authors are drawn by activity propensity and
reposts come from the last few messages visible in the reposter's feed,
which is enough to grow multi-hop cascades.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ._rng import rng_for
from .eventlog import Follow, Join, Post, Repost
from .netstate import NetworkState, ReplayOptions

FLAVORS = ("G", "O", "GuO")
LABELS = ("traffic", "structure", "random", "fallback-from-traffic", "fallback-from-structure")


@dataclass(frozen=True)
class StrategyMix:
    p_traffic: float
    p_structure: float
    p_random: float

    def __post_init__(self):
        vals = (self.p_traffic, self.p_structure, self.p_random)
        if any(not (0.0 <= v <= 1.0) for v in vals):
            raise ValueError(f"mix components must lie in [0, 1]: {vals}")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"mix must sum to 1, got {sum(vals)!r}")

    @classmethod
    def from_p(cls, p1, p2):
        """Mix from ``(p_traffic, p_structure)``; the remainder is random."""
        p1, p2 = float(p1), float(p2)
        return cls(p1, p2, max(0.0, 1.0 - p1 - p2))

    def as_tuple(self):
        return (self.p_traffic, self.p_structure, self.p_random)


@dataclass(frozen=True)
class UserClassSpec:
    """A planted class: users drawn into it get ``mix`` plus Gaussian jitter.

    ``activity`` scales how often members post and repost.
    """
    weight: float
    mix: StrategyMix
    activity: float = 1.0
    jitter: float = 0.0


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    n_events: int = 10_000
    # relative weights of (join, post, repost, follow)
    rates: tuple[float, float, float, float] = (0.02, 0.18, 0.30, 0.50)
    mix: StrategyMix = field(default_factory=lambda: StrategyMix(0.12, 0.71, 0.17))
    shortcut_flavor: str = "GuO"
    traffic_weighting: bool = False
    weight_exponent: float = 1.0
    repost_feed_window: int = 10
    initial_users: int = 10
    # sd of log-normal per-user activity propensity; 0 means uniform
    activity_skew: float = 0.0
    # creators following at least switch_k users use mix_after instead
    switch_k: int | None = None
    mix_after: StrategyMix | None = None
    user_classes: tuple[UserClassSpec, ...] = ()
    trace: bool = True

    def __post_init__(self):
        if self.n_events < 1:
            raise ValueError("n_events must be at least 1")
        if len(self.rates) != 4 or any(r < 0 for r in self.rates):
            raise ValueError("rates must be four non-negative weights")
        if abs(sum(self.rates) - 1.0) > 1e-9:
            raise ValueError(f"rates must sum to 1, got {sum(self.rates)!r}")
        if self.shortcut_flavor not in FLAVORS:
            raise ValueError(f"shortcut_flavor must be one of {FLAVORS}")
        if self.repost_feed_window < 1:
            raise ValueError("repost_feed_window must be positive")
        if (self.switch_k is None) != (self.mix_after is None):
            raise ValueError("switch_k and mix_after go together")
        if self.user_classes and abs(sum(c.weight for c in self.user_classes) - 1.0) > 1e-9:
            raise ValueError("user class weights must sum to 1")


class TraceDisabled(ValueError):
    pass


@dataclass
class Generation:
    config: GeneratorConfig
    events: list
    labels: list[tuple[int, str]] | None
    skips: list[tuple[int, str]]
    user_class: list[int]
    user_mix: list[StrategyMix]


def _jittered(mix, sd, rng):
    if sd <= 0:
        return mix
    p1 = min(max(mix.p_traffic + sd * rng.standard_normal(), 0.0), 1.0)
    p2 = min(max(mix.p_structure + sd * rng.standard_normal(), 0.0), 1.0)
    if p1 + p2 > 1.0:
        s = p1 + p2
        p1, p2 = p1 / s, p2 / s
    return StrategyMix.from_p(p1, p2)


class _Simulator:
    # give up after this many consecutive impossible actions
    MAX_STALL = 10_000

    def __init__(self, config: GeneratorConfig):
        self.cfg = config
        self.rng = rng_for(config.seed, "generate")
        self.state = NetworkState(ReplayOptions(pool_mode="users"))
        self.events = []
        self.labels = [] if config.trace else None
        self.skips = []
        self.feeds: list[deque] = []
        self.user_class: list[int] = []
        self.user_mix: list[StrategyMix] = []
        self.propensity: list[float] = []
        self._cum = None
        self._uniform = config.activity_skew == 0 and all(
            c.activity == config.user_classes[0].activity for c in config.user_classes)
        self.next_message = 0

    def emit(self, ev):
        self.events.append(ev)
        self.state.apply(ev)
        if isinstance(ev, (Post, Repost)):
            p = ev.author if isinstance(ev, Post) else ev.user
            entry = (ev.message, p)
            for f in self.state.followers[p]:
                self.feeds[f].append(entry)

    def pick_active(self):
        n = self.state.n_users
        if self._uniform:
            return int(self.rng.integers(n))
        if self._cum is None:
            self._cum = np.cumsum(self.propensity)
        return int(np.searchsorted(self._cum, self.rng.random() * self._cum[-1], side="right"))

    def join(self):
        cfg, rng = self.cfg, self.rng
        u = self.state.n_users
        activity = 1.0
        if cfg.user_classes:
            weights = [c.weight for c in cfg.user_classes]
            ci = int(rng.choice(len(weights), p=weights))
            spec = cfg.user_classes[ci]
            mix = _jittered(spec.mix, spec.jitter, rng)
            activity = spec.activity
        else:
            ci, mix = -1, cfg.mix
        if cfg.activity_skew > 0:
            activity *= math.exp(cfg.activity_skew * rng.standard_normal())
        self.user_class.append(ci)
        self.user_mix.append(mix)
        self.propensity.append(activity)
        self._cum = None
        self.feeds.append(deque(maxlen=cfg.repost_feed_window))
        self.emit(Join(len(self.events), len(self.events), u))
        return None

    def post(self):
        if self.state.n_users == 0:
            return "post: no users"
        a = self.pick_active()
        m = self.next_message
        self.next_message += 1
        self.emit(Post(len(self.events), len(self.events), a, m))
        return None

    def repost(self):
        if self.state.n_users == 0:
            return "repost: no users"
        u = self.pick_active()
        cascade = self.state.cascade
        options = [(m, p) for m, p in self.feeds[u] if (m, u) not in cascade]
        if not options:
            return "repost: nothing new in feed"
        m, p = options[int(self.rng.integers(len(options)))]
        self.emit(Repost(len(self.events), len(self.events), u, m, p))
        return None

    def mix_for(self, j, k):
        cfg = self.cfg
        if cfg.switch_k is not None and k >= cfg.switch_k:
            return cfg.mix_after
        return self.user_mix[j]

    def random_target(self, j):
        st, rng = self.state, self.rng
        n = st.n_users
        fset = st.followee_set[j]
        if 2 * len(fset) < n:
            while True:
                t = int(rng.integers(n))
                if t != j and t not in fset:
                    return t
        free = [u for u in range(n) if u != j and u not in fset]
        return free[int(rng.integers(len(free)))]

    def follow(self):
        st, rng, cfg = self.state, self.rng, self.cfg
        n = st.n_users
        if n < 2:
            return "follow: fewer than two users"
        j = int(rng.integers(n))
        k = len(st.followees[j])
        if n - k - 1 <= 0:
            return "follow: creator already follows everyone"
        mix = self.mix_for(j, k)
        r = rng.random()
        target = None
        if r < mix.p_traffic:
            users, counts = st.shortcut_candidates(j, cfg.shortcut_flavor)
            if users:
                if cfg.traffic_weighting:
                    w = np.asarray(counts, dtype=float) ** cfg.weight_exponent
                    target = users[int(rng.choice(len(users), p=w / w.sum()))]
                else:
                    target = users[int(rng.integers(len(users)))]
                label = "traffic"
            else:
                label = "fallback-from-traffic"
        elif r < mix.p_traffic + mix.p_structure:
            users = st.triadic_candidates(j)
            if users:
                target = users[int(rng.integers(len(users)))]
                label = "structure"
            else:
                label = "fallback-from-structure"
        else:
            label = "random"
        if target is None:
            target = self.random_target(j)
        seq = len(self.events)
        if self.labels is not None:
            self.labels.append((seq, label))
        self.emit(Follow(seq, seq, j, target))
        return None

    def run(self):
        cfg, rng = self.cfg, self.rng
        for _ in range(min(cfg.initial_users, cfg.n_events)):
            self.join()
        actions = (self.join, self.post, self.repost, self.follow)
        cum = np.cumsum(cfg.rates)
        stall = 0
        while len(self.events) < cfg.n_events:
            a = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), 3)
            why = actions[a]()
            if why is None:
                stall = 0
                continue
            self.skips.append((len(self.events), why))
            stall += 1
            if stall >= self.MAX_STALL:
                self.skips.append((len(self.events), "stalled: no possible action"))
                break
        return Generation(cfg, self.events, self.labels, self.skips,
                          self.user_class, self.user_mix)


def generate(config: GeneratorConfig) -> Generation:
    """Run the simulator; identical configs give identical event sequences."""
    return _Simulator(config).run()


def trace(generation: Generation):
    """Ground-truth ``(follow_seq, label)`` for every follow."""
    if generation.labels is None:
        raise TraceDisabled("generation ran with trace=False")
    return list(generation.labels)


def trace_tsv(labels, comments=()) -> bytes:
    lines = [f"# {c}\n" for c in comments]
    lines.extend(f"{seq}\t{label}\n" for seq, label in labels)
    return "".join(lines).encode("utf-8")


def realized_fractions(labels):
    """Share of follows per realized strategy; fallbacks count as random."""
    counts = {"traffic": 0, "structure": 0, "random": 0}
    for _, lab in labels:
        counts["random" if lab.startswith("fallback") else lab] += 1
    n = max(1, len(labels))
    return {k: v / n for k, v in counts.items()}
