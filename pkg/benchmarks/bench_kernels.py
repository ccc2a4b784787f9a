"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--number 20]
"""
import argparse
import timeit

import numpy as np

from cochceps import kernels


def cases(rng):
    x = rng.standard_normal((20, 239))
    power = rng.random((239, 257))
    gains = rng.random((20, 257)) ** 2
    scale = rng.random(20)
    z = rng.standard_normal((128, 256))
    partner = np.r_[np.arange(64, 128), np.arange(64)]
    return {
        "lift_rows 20x239": lambda k: k.lift_rows(x, 239),
        "mode_energies 239x257x20": lambda k: k.mode_energies(power, gains, scale),
        "nt_xent 128x256": lambda k: k.nt_xent(z, partner, 0.07),
        "resize_nearest 20x239->239x239": lambda k: k.resize_nearest(x, 239, 239),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args()

    backends = sorted(kernels.BACKENDS)
    if "cython" not in backends:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':34s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for b in backends:
            impl = kernels.BACKENDS[b]
            best = min(timeit.repeat(lambda: fn(impl), repeat=args.repeat, number=args.number))
            times[b] = best / args.number * 1e6
        row = f"{name:34s}" + "".join(f"{times[b]:10.1f}us" for b in backends)
        if len(backends) > 1:
            row += f"{times['python'] / times['cython']:11.2f}x"
        print(row)


if __name__ == "__main__":
    main()
