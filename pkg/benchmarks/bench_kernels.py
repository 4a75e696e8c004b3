"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--n 1500] [--repeat 3]

Both backends are imported from the same module so the comparison is on
identical inputs; the first numba call is excluded (compilation).
"""
import argparse
import time

import numpy as np

from confdim import _kernels
from confdim.metric_spaces import generate_grid
from confdim.modulus import path_family
from confdim.nets_filling import build_graph, build_nets


def best_of(fn, repeat):
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return min(out)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=1500, help="points in the random cloud")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    X = rng.random((args.n, 2))
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    acc = np.zeros(args.n, dtype=np.bool_)
    centers = np.arange(0, args.n, 50)
    radii = np.array([0.1, 0.2, 0.4])

    g = build_graph(build_nets(generate_grid(257), 2, 6), 7)
    fam = path_family(g, 0, 4)
    w = rng.random(fam.size)

    cases = {
        "greedy_extend": lambda k: k(D, acc, 0.05),
        "triangle_worst": lambda k: k(D[:400, :400]),
        "doubling_counts": lambda k: k(D, centers, radii),
        "vertex_dijkstra": lambda k: k(fam.indptr, fam.indices, w, fam.is_source, fam.is_sink, True),
    }
    backends = _kernels.BACKENDS
    print(f"{'kernel':18s} " + " ".join(f"{b:>10s}" for b in backends) + "   speedup")
    for name, call in cases.items():
        times = {}
        for b, table in backends.items():
            k = table[name]
            call(k)  # warm up / compile
            times[b] = best_of(lambda: call(k), args.repeat)
        line = f"{name:18s} " + " ".join(f"{times[b]:10.4f}" for b in backends)
        if "numba" in times:
            line += f"   {times['numpy'] / times['numba']:6.1f}x"
        print(line)


if __name__ == "__main__":
    main()
