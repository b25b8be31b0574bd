"""Compare the compiled and numpy spiral gather/scatter kernels.

    python3 benchmarks/bench_kernels.py --level 3 --T 30 --C 16 --repeat 5
"""

import argparse
import time

import numpy as np

from emoface import kernels
from emoface.mesh import build_adjacency, build_spiral_table, icosphere


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--level", type=int, default=3, help="icosphere subdivision level")
    ap.add_argument("--T", type=int, default=30)
    ap.add_argument("--C", type=int, default=16)
    ap.add_argument("--delta", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    verts, faces = icosphere(args.level)
    table = build_spiral_table(build_adjacency(faces, len(verts)), 2, cap=16).indices
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, len(verts), args.T, args.C))
    L = table.shape[1]
    g = rng.standard_normal((1, len(verts), args.T, args.delta * L * args.C))
    print(f"V={len(verts)} L={L} T={args.T} C={args.C} delta={args.delta}")

    backends = [("python", kernels.python_backend)]
    if kernels.compiled_backend is not None:
        backends.append(("cython", kernels.compiled_backend))
    else:
        print("compiled backend unavailable; timing the numpy fallback only")
    results = {}
    for name, mod in backends:
        tg = best_of(lambda: mod.spiral_gather(x, table, args.delta, False), args.repeat)
        ts = best_of(lambda: mod.spiral_scatter(g, table, args.delta, args.C, False), args.repeat)
        results[name] = (tg, ts)
        print(f"{name:7s} gather {tg * 1e3:9.3f} ms   scatter {ts * 1e3:9.3f} ms")
    if len(results) == 2:
        (pg, ps), (cg, cs) = results["python"], results["cython"]
        print(f"speedup gather x{pg / cg:.1f}   scatter x{ps / cs:.1f}")
        a = kernels.python_backend.spiral_gather(x, table, args.delta, False)
        b = kernels.compiled_backend.spiral_gather(x, table, args.delta, False)
        print(f"max |gather difference| {np.abs(a - b).max():.3e}")


if __name__ == "__main__":
    main()
