"""Compare the compiled kernels with their pure-Python fallbacks.

    python benchmarks/bench_kernels.py [--events N] [--repeat R]
"""
import argparse
import time

import numpy as np

from linkmix import _kernels
from linkmix._kernels import _slow
from linkmix.generator import GeneratorConfig, generate
from linkmix.likelihood import fit_combined
from linkmix.netstate import replay

try:
    from linkmix._kernels import _fast
except ImportError:
    _fast = None

KERNELS = ("loglik_grid", "TwoHop", "broadcast", "rank_counts")


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def use(backend):
    for name in KERNELS:
        setattr(_kernels, name, getattr(backend, name))


def grid_case(n_links, n_points, seed=0):
    rng = np.random.default_rng(seed)
    a = np.where(rng.random(n_links) < 0.3, rng.uniform(1, 500, n_links), 0.0)
    b = np.where(rng.random(n_links) < 0.6, rng.uniform(1, 50, n_links), 0.0)
    c = np.ones(n_links)
    p1 = rng.random(n_points) * 0.5
    p2 = rng.random(n_points) * 0.5
    return a, b, c, p1, p2, 1 - p1 - p2


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=60_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _fast is None:
        raise SystemExit("compiled extension not built; run `pip install -e .` first")

    events = generate(GeneratorConfig(seed=1, n_events=args.events, trace=False)).events
    _, ctx = replay(events)
    grid = grid_case(len(ctx), 5151)

    rows = []
    rows.append(("loglik_grid (%d links x 5151 points)" % len(ctx),
                 best_of(lambda: _slow.loglik_grid(*grid), args.repeat),
                 best_of(lambda: _fast.loglik_grid(*grid), args.repeat)))

    results = {}
    for label, backend in (("python", _slow), ("cython", _fast)):
        use(backend)
        results[label] = (best_of(lambda: replay(events), args.repeat),
                          best_of(lambda: fit_combined(ctx, "GuO"), args.repeat))
    use(_fast)
    rows.append(("replay (%d events)" % len(events), results["python"][0], results["cython"][0]))
    rows.append(("fit_combined GuO+Delta", results["python"][1], results["cython"][1]))

    print(f"{'case':<44}{'python s':>10}{'cython s':>10}{'speedup':>9}")
    for name, slow, fast in rows:
        print(f"{name:<44}{slow:>10.3f}{fast:>10.3f}{slow / fast:>8.1f}x")


if __name__ == "__main__":
    main()
