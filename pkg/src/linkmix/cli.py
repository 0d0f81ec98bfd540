"""Command-line front end: ``linkmix <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Failures print one ``error code=... reason=...`` line on stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys

import numpy as np

from . import __version__
from .eventlog import LogError, read_log, write_log
from .generator import GeneratorConfig, StrategyMix, generate, trace_tsv
from .likelihood import FitError, fit_all, loglik_curve, loglik_surface, model_comparison
from .netstate import (
    EFFICIENCY_GROUPS,
    ReplayOptions,
    contexts_tsv,
    is_contexts_file,
    link_efficiency,
    mechanism_overlap,
    read_contexts_tsv,
    replay,
    summary_stats,
)
from .nullstats import (
    MECHANISMS,
    InconsistentCounts,
    UnusableLink,
    lyapunov_diagnostic,
    rank_bias,
    z_by_indegree,
    z_score,
)
from .stats import BOX_FIELDS
from .userclasses import UserFit, class_profiles, cluster_users, fit_users

FLAVORS = {"g": "G", "o": "O", "guo": "GuO"}
# options that never change results
_UNHASHED = {"threads", "output_dir", "config", "input", "command", "func"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _mix(text):
    try:
        p1, p2 = (float(x) for x in text.split(","))
        return StrategyMix.from_p(p1, p2) if p1 + p2 <= 1 + 1e-12 else StrategyMix(p1, p2, 0.0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad mix {text!r}: {exc}") from None


def _rates(text):
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rates {text!r}") from None
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("rates need four values: join,post,repost,follow")
    return vals


def _k_range(text):
    try:
        lo, hi = (int(x) for x in text.split(".."))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k range {text!r}, expected lo..hi") from None
    if not 1 <= lo <= hi:
        raise argparse.ArgumentTypeError(f"bad k range {text!r}")
    return (lo, hi)


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _step(text):
    v = float(text)
    if not 0 < v <= 0.1:
        raise argparse.ArgumentTypeError("grid step must lie in (0, 0.1]")
    return v


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--input", help="event log or LinkContext TSV")
    p.add_argument("--output-dir", default=".")
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=1)
    g = p.add_argument_group("generator")
    g.add_argument("--events", type=_positive_int, default=10_000)
    g.add_argument("--mix", type=_mix, default=StrategyMix(0.12, 0.71, 0.17), help="p1,p2")
    g.add_argument("--rates", type=_rates, default=(0.02, 0.18, 0.30, 0.50), help="join,post,repost,follow")
    g.add_argument("--traffic-weighting", action="store_true")
    g.add_argument("--weight-exponent", type=float, default=1.0)
    g.add_argument("--window", type=_positive_int, default=10, help="repost feed window")
    g.add_argument("--initial-users", type=int, default=10)
    g.add_argument("--activity-skew", type=float, default=0.0)
    a = p.add_argument_group("analysis")
    a.add_argument("--flavor", choices=sorted(FLAVORS), default="guo")
    a.add_argument("--pool", choices=("links", "users"), default="links")
    a.add_argument("--include-followed", action="store_true")
    a.add_argument("--binning", choices=("mixed", "exact", "log"), default="mixed")
    a.add_argument("--min-count", type=int, default=30)
    a.add_argument("--bin-width", type=float, default=5.0)
    a.add_argument("--min-links", type=int, default=20)
    a.add_argument("--grid-step", type=_step, default=0.01)
    a.add_argument("--k-range", type=_k_range, default=(1, 8), help="lo..hi")
    a.add_argument("--folds", type=_positive_int, default=10)
    return p


COMMANDS = {}


def command(name, help):
    def deco(fn):
        COMMANDS[name] = (fn, help)
        return fn
    return deco


def build_parser():
    parser = _Parser(prog="linkmix", description="Link-creation strategy analysis for follower networks.")
    parser.add_argument("--version", action="version", version=f"linkmix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common()
    for name, (fn, help) in COMMANDS.items():
        sp = sub.add_parser(name, help=help, parents=[common])
        sp.set_defaults(func=fn)
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config`` so that flags win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        dest = key.replace("-", "_")
        act = actions.get(dest)
        if act is None or dest in ("config", "help"):
            raise UsageError(f"config line {n}: unknown key {key!r}")
        if isinstance(act, argparse._StoreTrueAction):
            defaults[dest] = val.lower() in ("1", "true", "yes", "on")
            continue
        try:
            defaults[dest] = act.type(val) if act.type else val
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"config line {n}: {exc}") from None
        if act.choices and defaults[dest] not in act.choices:
            raise UsageError(f"config line {n}: {key} must be one of {sorted(act.choices)}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# -- output helpers --------------------------------------------------


def _jsonable(v):
    if isinstance(v, StrategyMix):
        return list(v.as_tuple())
    if isinstance(v, tuple):
        return list(v)
    return v


class Run:
    """Shared per-invocation state: parsed args, header line and written files."""

    def __init__(self, args):
        self.args = args
        self.out = args.output_dir
        self.written = []
        self._input_digest = None
        self._loaded = None

    def input_digest(self):
        if self._input_digest is None:
            if self.args.input:
                h = hashlib.sha256()
                with open(self.args.input, "rb") as fh:
                    for block in iter(lambda: fh.read(1 << 20), b""):
                        h.update(block)
                self._input_digest = h.hexdigest()[:16]
            else:
                self._input_digest = "-"
        return self._input_digest

    def config_hash(self):
        items = {k: _jsonable(v) for k, v in sorted(vars(self.args).items()) if k not in _UNHASHED}
        items["input"] = self.input_digest()
        blob = json.dumps(items, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def header(self):
        return (f"linkmix {__version__} command={self.args.command} seed={self.args.seed} "
                f"config={self.config_hash()}")

    def path(self, name):
        return os.path.join(self.out, name)

    def write_bytes(self, name, data):
        with open(self.path(name), "wb") as fh:
            fh.write(data)
        self.written.append(name)

    def write_csv(self, name, columns, rows):
        buf = io.StringIO()
        buf.write(f"# {self.header()}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])
        self.write_bytes(name, buf.getvalue().encode("utf-8"))

    # -- inputs ------------------------------------------------------

    def options(self):
        return ReplayOptions(pool_mode=self.args.pool, include_followed=self.args.include_followed)

    def load(self, need_state=False):
        """``(state, contexts)``; ``state`` is None for a contexts file."""
        if self._loaded is None:
            path = self.args.input
            if path is None:
                raise UsageError("--input is required")
            if is_contexts_file(path):
                with open(path, "rb") as fh:
                    self._loaded = (None, read_contexts_tsv(fh))
            else:
                self._loaded = replay(read_log(path), self.options())
        state, ctx = self._loaded
        if need_state and state is None:
            raise DataError(f"{self.args.command} needs an event log, got a contexts file")
        return state, ctx


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return v


# -- subcommands -----------------------------------------------------


def generator_config(args):
    try:
        return GeneratorConfig(
            seed=args.seed,
            n_events=args.events,
            rates=args.rates,
            mix=args.mix,
            shortcut_flavor=FLAVORS[args.flavor],
            traffic_weighting=args.traffic_weighting,
            weight_exponent=args.weight_exponent,
            repost_feed_window=args.window,
            initial_users=args.initial_users,
            activity_skew=args.activity_skew,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


@command("generate", "simulate an event log and its strategy trace")
def cmd_generate(run):
    gen = generate(generator_config(run.args))
    header = [run.header()]
    run.write_bytes("events.log", write_log(gen.events, comments=header))
    run.write_bytes("trace.tsv", trace_tsv(gen.labels, comments=header))
    run.args.input = run.path("events.log")
    run._input_digest = None


@command("contexts", "replay a log and export one LinkContext per follow")
def cmd_contexts(run):
    _, ctx = run.load()
    run.write_bytes("contexts.tsv", contexts_tsv(ctx, comments=[run.header()]))


@command("stats", "growth curves, degree histograms and mechanism overlap")
def cmd_stats(run):
    state, ctx = run.load(need_state=True)
    s = summary_stats(state)
    g = s["growth"]
    cols = ("seq", "time", "users", "links", "posts", "reposts", "messages")
    run.write_csv("growth.csv", cols, zip(*(g[c] for c in cols)))
    rows = [(d, k, n) for d in ("in", "out") for k, n in s[f"{d}_degree"].items()]
    run.write_csv("degree.csv", ("direction", "degree", "users"), rows)
    if len(ctx):
        run.write_csv("overlap.csv", ("cell", "fraction"), mechanism_overlap(ctx).items())


@command("nulltest", "z-scores against the random-follow null model")
def cmd_nulltest(run):
    _, ctx = run.load()
    if not len(ctx):
        raise DataError("no follow events")
    reports = [z_score(ctx, m) for m in MECHANISMS]
    run.write_csv("zreport.csv", ("mechanism", "S", "E", "sigma", "z", "p_value", "n"),
                  [(r.mechanism, r.S, r.E, r.sigma, r.z, r.p_value, r.n_links_used) for r in reports])
    rows = []
    for m in MECHANISMS:
        curve = z_by_indegree(ctx, m, run.args.binning, run.args.min_count)
        rows += [(m, b.lo, b.hi, b.report.z, b.report.n_links_used) for b in curve.bins]
    run.write_csv("z_by_k.csv", ("mechanism", "k_bin_lo", "k_bin_hi", "z", "n"), rows)
    rows = []
    for m in MECHANISMS:
        try:
            ly = lyapunov_diagnostic(ctx, m)
        except ValueError:
            continue
        rows.append((m, int(ly.n[-1]) if ly.n.size else 0, ly.final, ly.tail_max))
    run.write_csv("lyapunov.csv", ("mechanism", "n", "final", "tail_max"), rows)
    return reports


@command("rankbias", "rank-percentile density of chosen shortcut targets")
def cmd_rankbias(run):
    _, ctx = run.load()
    rows = []
    for m in ("G", "O"):
        try:
            rb = rank_bias(ctx, m, run.args.bin_width)
        except ValueError:
            continue
        rows += [(m, lo, hi, d) for lo, hi, d in zip(rb.edges[:-1], rb.edges[1:], rb.density)]
    run.write_csv("rank_bias.csv", ("mechanism", "pct_bin_lo", "pct_bin_hi", "density"), rows)


@command("efficiency", "messages seen and reposted per link per time unit")
def cmd_efficiency(run):
    state, ctx = run.load(need_state=True)
    _, summary = link_efficiency(state, ctx)
    rows = []
    for group in EFFICIENCY_GROUPS:
        s = summary[group]
        if s is None:
            continue
        for measure in ("seen", "repost"):
            rows.append((group, measure, *(s[measure][f] for f in BOX_FIELDS)))
    run.write_csv("efficiency.csv", ("group", "measure", *BOX_FIELDS), rows)


@command("fit", "maximum-likelihood strategy mixtures (single and combined)")
def cmd_fit(run):
    _, ctx = run.load()
    a = run.args
    fits = model_comparison(fit_all(ctx, a.grid_step, threads=a.threads))
    for f in fits:
        if not np.isfinite(f.loglik):
            raise NumericalError(f"non-finite maximized log-likelihood for {f.spec.name}")
    rows = []
    for f in fits:
        p = f.params.get("p")
        rows.append((f.spec.kind, f.spec.name, p, f.params.get("p1"), f.params.get("p2"),
                     f.loglik, int(f.boundary_flag)))
    run.write_csv("fit.csv", ("strategy", "model", "p", "p1", "p2", "max_loglik", "boundary"), rows)
    rows = []
    for comp in ("Delta", "G", "O", "GuO"):
        p, ll = loglik_curve(ctx, comp, a.grid_step, a.threads)
        rows += [(comp, x, y) for x, y in zip(p, ll)]
    run.write_csv("loglik_curve.csv", ("model", "p", "logL"), rows)
    flavor = FLAVORS[a.flavor]
    p1, p2, ll = loglik_surface(ctx, flavor, a.grid_step, a.threads)
    run.write_csv("loglik_surface.csv", ("model", "p1", "p2", "logL"),
                  [(f"{flavor}+Delta", x, y, z) for x, y, z in zip(p1, p2, ll)])
    return fits


def _user_fits(run):
    a = run.args
    path = a.input
    if path and _is_user_fits(path):
        return _read_user_fits(path)
    _, ctx = run.load()
    return fit_users(ctx, a.min_links, FLAVORS[a.flavor], a.grid_step, threads=a.threads)


USER_FIT_COLUMNS = ("user", "n_links", "p_traffic", "p_structure", "p_random", "loglik")


def _is_user_fits(path):
    with open(path, encoding="utf-8", errors="replace") as fh:
        for line in fh:
            if not line.startswith("#"):
                return line.rstrip("\n") == ",".join(USER_FIT_COLUMNS)
    return False


def _read_user_fits(path):
    with open(path, encoding="utf-8") as fh:
        rows = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for i, r in enumerate(csv.DictReader(rows), 2):
        try:
            mix = StrategyMix(float(r["p_traffic"]), float(r["p_structure"]), float(r["p_random"]))
            out.append(UserFit(int(r["user"]), int(r["n_links"]), mix, float(r["loglik"])))
        except (ValueError, TypeError) as exc:
            raise DataError(f"user fits row {i}: {exc}") from None
    return out


def _write_user_fits(run, fits):
    run.write_csv("user_fits.csv", USER_FIT_COLUMNS,
                  [(f.user, f.n_links, *f.mix.as_tuple(), f.loglik) for f in fits])


@command("fit-users", "per-user strategy mixtures")
def cmd_fit_users(run):
    fits = _user_fits(run)
    _write_user_fits(run, fits)
    return fits


def _clustering(run, fits):
    a = run.args
    try:
        return cluster_users(fits, a.k_range, a.folds, a.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None


def _write_classes(run, fits, cl):
    rows = []
    if fits:
        allm = np.array([f.mix.as_tuple() for f in fits]).mean(axis=0)
        rows.append(("All", 1.0, *allm, len(fits)))
    rows += [(c.label, c.weight, *c.mean_mix.as_tuple(), len(c.members)) for c in cl.classes]
    run.write_csv("classes.csv", ("class", "weight", "mean_p_traffic", "mean_p_structure",
                                  "mean_p_random", "n_members"), rows)
    labels = cl.class_of()
    run.write_csv("ternary.csv", ("user", "p_traffic", "p_structure", "p_random", "class"),
                  [(f.user, *f.mix.as_tuple(), labels[f.user]) for f in fits])


@command("cluster", "Gaussian-mixture classes of per-user mixtures")
def cmd_cluster(run):
    fits = _user_fits(run)
    cl = _clustering(run, fits)
    _write_classes(run, fits, cl)
    return cl


def _write_profiles(run, cl, state):
    rows = [(p.label, p.feature, *(p.summary[f] for f in BOX_FIELDS[:-1]), p.summary["n"],
             int(p.low_confidence)) for p in class_profiles(cl.classes, state)]
    run.write_csv("profiles.csv", ("class", "feature", "q1", "median", "mean", "q3", "p99", "n",
                                   "low_confidence"), rows)


@command("profiles", "feature summaries of each user class")
def cmd_profiles(run):
    state, _ = run.load(need_state=True)
    fits = _user_fits(run)
    cl = _clustering(run, fits)
    _write_profiles(run, cl, state)


@command("pipeline", "generate (without --input) and run every analysis stage")
def cmd_pipeline(run):
    generated = not run.args.input
    if generated:
        cmd_generate(run)
    run.load(need_state=True)
    cmd_contexts(run)
    cmd_stats(run)
    reports = cmd_nulltest(run)
    cmd_rankbias(run)
    cmd_efficiency(run)
    fits = cmd_fit(run)
    ufits = cmd_fit_users(run)
    cl = None
    if len(ufits) >= 10:
        cl = _clustering(run, ufits)
        _write_classes(run, ufits, cl)
        _write_profiles(run, cl, run.load()[0])
    _, ctx = run.load()
    source = "events.log (generated)" if generated else run.args.input
    lines = [f"# {run.header()}", f"input\t{source}", f"follows\t{len(ctx)}", ""]
    lines += [f"z_{r.mechanism}\t{r.z:.3f}" for r in reports]
    best = fits[0]
    lines += ["", f"best_model\t{best.spec.name}\t{best.parameters_text()}\t{best.loglik:.3f}"]
    lines += [f"model\t{f.spec.name}\t{f.parameters_text()}\t{f.loglik:.3f}" for f in fits]
    lines.append("")
    lines.append(f"user_fits\t{len(ufits)}")
    if cl is None:
        lines.append("clustering\tskipped (fewer than 10 user fits)")
    else:
        lines.append(f"classes\t{cl.k}")
    lines.append("")
    lines += [f"file\t{name}" for name in [*run.written, "report.txt"]]
    run.write_bytes("report.txt", ("\n".join(lines) + "\n").encode("utf-8"))


# -- entry point -----------------------------------------------------


def _check_paths(args):
    if args.input is not None and not os.path.isfile(args.input):
        raise UsageError(f"input file not found: {args.input}")
    try:
        os.makedirs(args.output_dir, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output dir {args.output_dir}: {exc.strerror}") from None
    if not os.access(args.output_dir, os.W_OK):
        raise UsageError(f"output dir not writable: {args.output_dir}")


def _fail(code, kind, message):
    reason = " ".join(str(message).split())
    print(f"error code={kind} reason={reason}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, sys.argv[1:] if argv is None else list(argv))
        _check_paths(args)
        args.func(Run(args))
    except UsageError as exc:
        return _fail(1, "USAGE", exc)
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)
    except LogError as exc:
        where = f" line={exc.line}" if getattr(exc, "line", None) else ""
        return _fail(2, exc.code, f"{exc.reason}{where}")
    except (DataError, FitError, UnusableLink, InconsistentCounts) as exc:
        return _fail(2, "DATA", exc)
    except OSError as exc:
        return _fail(2, "IO", f"{exc.filename}: {exc.strerror}")
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(3, "NUMERICAL", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
