"""Event types, validation and the tab-separated log format.

One event per line, ``#`` lines are comments::

    <time>\tjoin\t<user>
    <time>\tpost\t<author>\t<message>
    <time>\trepost\t<user>\t<message>\t<parent_user>
    <time>\tfollow\t<creator>\t<target>

A follow ``creator -> target`` is the directed edge ``target -> creator``
in information-flow terms: the creator receives what the target posts.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import ClassVar, Iterable, Union

# machine-readable error codes
MALFORMED = "MALFORMED"
BAD_SEQ = "BAD_SEQ"
TIME_DECREASE = "TIME_DECREASE"
UNJOINED_USER = "UNJOINED_USER"
DUPLICATE_JOIN = "DUPLICATE_JOIN"
SELF_FOLLOW = "SELF_FOLLOW"
DUPLICATE_FOLLOW = "DUPLICATE_FOLLOW"
DUPLICATE_MESSAGE = "DUPLICATE_MESSAGE"
UNKNOWN_MESSAGE = "UNKNOWN_MESSAGE"
PARENT_NOT_HOLDER = "PARENT_NOT_HOLDER"
SELF_REPOST = "SELF_REPOST"
DUPLICATE_HOLD = "DUPLICATE_HOLD"


@dataclass(frozen=True, slots=True)
class Join:
    kind: ClassVar[str] = "join"
    seq: int
    time: int | float
    user: int


@dataclass(frozen=True, slots=True)
class Follow:
    kind: ClassVar[str] = "follow"
    seq: int
    time: int | float
    creator: int
    target: int


@dataclass(frozen=True, slots=True)
class Post:
    kind: ClassVar[str] = "post"
    seq: int
    time: int | float
    author: int
    message: int


@dataclass(frozen=True, slots=True)
class Repost:
    kind: ClassVar[str] = "repost"
    seq: int
    time: int | float
    user: int
    message: int
    parent: int


Event = Union[Join, Follow, Post, Repost]


def users_of(event):
    """User ids an event refers to, actor first."""
    if isinstance(event, Join):
        return (event.user,)
    if isinstance(event, Follow):
        return (event.creator, event.target)
    if isinstance(event, Post):
        return (event.author,)
    return (event.user, event.parent)


@dataclass(frozen=True)
class Violation:
    seq: int
    code: str
    reason: str


class LogError(ValueError):
    """Raised for unreadable or inconsistent logs.

    ``code`` is one of the module-level error codes; ``line`` is the
    1-based line number in the source stream when known.
    """

    def __init__(self, code, reason, line=None, seq=None):
        self.code = code
        self.reason = reason
        self.line = line
        self.seq = seq
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{code}: {where}{reason}")


def validate_log(events: Iterable[Event]) -> list[Violation]:
    """Every invariant violation in ``events``; empty iff the log is valid."""
    out = []
    joined = set()
    edges = set()
    holders: dict[int, set[int]] = {}
    last_seq = -1
    last_time = None

    def bad(ev, code, reason):
        out.append(Violation(ev.seq, code, reason))

    for ev in events:
        if ev.seq <= last_seq:
            bad(ev, BAD_SEQ, f"seq {ev.seq} does not exceed {last_seq}")
        last_seq = max(last_seq, ev.seq)
        t = ev.time
        if not isinstance(t, (int, float)) or isinstance(t, bool) or not math.isfinite(t) or t < 0:
            bad(ev, MALFORMED, f"invalid time {t!r}")
        elif last_time is not None and t < last_time:
            bad(ev, TIME_DECREASE, f"time {t} precedes {last_time}")
        else:
            last_time = t
        ids = users_of(ev)
        if any(not isinstance(u, int) or u < 0 for u in ids):
            bad(ev, MALFORMED, f"invalid user id in {ids!r}")
            continue

        if isinstance(ev, Join):
            if ev.user in joined:
                bad(ev, DUPLICATE_JOIN, f"user {ev.user} already joined")
            joined.add(ev.user)
            continue
        missing = [u for u in ids if u not in joined]
        if missing:
            bad(ev, UNJOINED_USER, f"user {missing[0]} has no earlier join")

        if isinstance(ev, Follow):
            if ev.creator == ev.target:
                bad(ev, SELF_FOLLOW, f"user {ev.creator} follows itself")
            elif (ev.target, ev.creator) in edges:
                bad(ev, DUPLICATE_FOLLOW, f"{ev.creator} already follows {ev.target}")
            else:
                edges.add((ev.target, ev.creator))
        elif isinstance(ev, Post):
            if ev.message in holders:
                bad(ev, DUPLICATE_MESSAGE, f"message {ev.message} already exists")
            else:
                holders[ev.message] = {ev.author}
        else:
            held = holders.get(ev.message)
            if held is None:
                bad(ev, UNKNOWN_MESSAGE, f"message {ev.message} was never posted")
            elif ev.user == ev.parent:
                bad(ev, SELF_REPOST, f"user {ev.user} reposts from itself")
            elif ev.parent not in held:
                bad(ev, PARENT_NOT_HOLDER, f"user {ev.parent} never held message {ev.message}")
            elif ev.user in held:
                bad(ev, DUPLICATE_HOLD, f"user {ev.user} already holds message {ev.message}")
            else:
                held.add(ev.user)
    return out


def _lines(stream):
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    for raw in stream:
        if isinstance(raw, (bytes, bytearray)):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                yield None, str(exc)
                continue
        yield raw.rstrip("\n").rstrip("\r"), None


def _parse_id(tok):
    if not tok.isascii() or not tok.isdigit():
        raise ValueError(f"bad id {tok!r}")
    return int(tok)


def _parse_time(tok):
    if tok.isascii() and tok.isdigit():
        return int(tok)
    t = float(tok)
    if not math.isfinite(t) or t < 0:
        raise ValueError(f"bad time {tok!r}")
    return t


_ARITY = {"join": 1, "post": 2, "repost": 3, "follow": 2}


def parse_log(stream) -> list[Event]:
    """Parse a log into events with ``seq`` = 0..n-1.

    External user ids are interned densely in order of first appearance.
    A user first seen in a non-join event gets a synthesized ``Join`` at
    that event's time, placed immediately before it.
    """
    events = []
    line_of = []
    intern: dict[int, int] = {}
    for lineno, (line, decode_err) in enumerate(_lines(stream), start=1):
        if decode_err is not None:
            raise LogError(MALFORMED, decode_err, line=lineno)
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        kind = fields[1] if len(fields) > 1 else ""
        if kind not in _ARITY:
            raise LogError(MALFORMED, f"unknown event kind {kind!r}", line=lineno)
        if len(fields) != 2 + _ARITY[kind]:
            raise LogError(MALFORMED, f"{kind} takes {_ARITY[kind]} fields, got {len(fields) - 2}", line=lineno)
        try:
            t = _parse_time(fields[0])
            args = [_parse_id(x) for x in fields[2:]]
        except ValueError as exc:
            raise LogError(MALFORMED, str(exc), line=lineno) from None

        user_slots = {"join": [0], "post": [0], "repost": [0, 2], "follow": [0, 1]}[kind]
        for i in user_slots:
            ext = args[i]
            if ext not in intern:
                intern[ext] = len(intern)
                if kind != "join":
                    events.append(Join(len(events), t, intern[ext]))
                    line_of.append(lineno)
                args[i] = intern[ext]
            elif kind == "join":
                raise LogError(DUPLICATE_JOIN, f"user {ext} already joined", line=lineno)
            else:
                args[i] = intern[ext]

        seq = len(events)
        if kind == "join":
            ev = Join(seq, t, args[0])
        elif kind == "post":
            ev = Post(seq, t, args[0], args[1])
        elif kind == "repost":
            ev = Repost(seq, t, args[0], args[1], args[2])
        else:
            ev = Follow(seq, t, args[0], args[1])
        events.append(ev)
        line_of.append(lineno)

    problems = validate_log(events)
    if problems:
        v = problems[0]
        raise LogError(v.code, v.reason, line=line_of[v.seq], seq=v.seq)
    return events


def format_event(ev: Event) -> str:
    t = ev.time
    ts = str(t) if isinstance(t, int) else repr(float(t))
    if isinstance(ev, Join):
        rest = (ev.user,)
    elif isinstance(ev, Follow):
        rest = (ev.creator, ev.target)
    elif isinstance(ev, Post):
        rest = (ev.author, ev.message)
    else:
        rest = (ev.user, ev.message, ev.parent)
    return "\t".join([ts, ev.kind, *map(str, rest)])


def write_log(events: Iterable[Event], comments: Iterable[str] = ()) -> bytes:
    """Serialize events; refuses logs that fail :func:`validate_log`."""
    events = list(events)
    problems = validate_log(events)
    if problems:
        v = problems[0]
        raise LogError(v.code, v.reason, seq=v.seq)
    parts = [f"# {c}\n" for c in comments]
    parts.extend(format_event(ev) + "\n" for ev in events)
    return "".join(parts).encode("utf-8")


def read_log(path) -> list[Event]:
    with open(path, "rb") as fh:
        return parse_log(fh)


def save_log(path, events, comments=()):
    data = write_log(events, comments)
    with open(path, "wb") as fh:
        fh.write(data)
