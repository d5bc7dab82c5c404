"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each row reports the best wall time over N repeats and checks that both
backends agree.
"""

import argparse
import timeit

import numpy as np

from afrclip.kernels import BACKENDS


def cases(rng):
    scores = rng.random(1_000_000)
    labels = (rng.random(scores.size) < 0.1).astype(np.uint8)
    grid = rng.normal(size=(37, 37, 768))
    small = rng.random((37, 37))
    return [
        ("ranked_sweep n=1e6", "ranked_sweep", (np.round(scores, 4), labels)),
        ("box_mean 37x37x768 m=3", "box_mean", (grid, 3)),
        ("box_mean 37x37x768 m=5", "box_mean", (grid, 5)),
        ("bilinear 37x37 -> 518x518", "bilinear_align_corners", (small, 518, 518)),
    ]


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=0, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if "cython" not in BACKENDS:
        print("compiled extension not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    names = sorted(BACKENDS)
    print(f"{'kernel':<28}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}  agree")
    for label, fn, inputs in cases(rng):
        times, outs = {}, {}
        for name in names:
            f = getattr(BACKENDS[name], fn)
            outs[name] = f(*inputs)
            times[name] = min(timeit.repeat(lambda: f(*inputs), number=1, repeat=args.repeat))
        speed = times["python"] / times["cython"] if "cython" in times else 1.0
        agree = all(_same(outs[names[0]], outs[n]) for n in names[1:])
        print(f"{label:<28}" + "".join(f"{1e3 * times[n]:>10.2f}ms" for n in names) + f"{speed:>9.1f}x  {agree}")


if __name__ == "__main__":
    main()
