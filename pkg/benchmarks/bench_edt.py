"""Benchmark the compiled distance-transform core against the numpy fallback.

The two backends produce bit-identical squared distances (the tests enforce
it); this script reports how much wall clock the compiled kernel saves at
click-simulation-relevant mask sizes.

    python3 benchmarks/bench_edt.py [--sizes 64,128,448,896] [--repeats 5]
"""

import argparse
import time

import numpy as np

from clickmask.clicksim import _SQUARED_EDT_IMPLS


def random_mask(rng, side):
    mask = rng.random((side, side)) < 0.4
    mask[0, 0] = False  # keep at least one background pixel
    return mask.astype(np.uint8)


def bench(side, repeats, rng):
    masks = [random_mask(rng, side) for _ in range(repeats)]
    rows = {}
    for name, impl in sorted(_SQUARED_EDT_IMPLS.items()):
        start = time.perf_counter()
        for m in masks:
            impl(np.ascontiguousarray(m))
        rows[name] = (time.perf_counter() - start) / repeats
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="64,128,448,896")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    impls = sorted(_SQUARED_EDT_IMPLS)
    if "compiled" not in impls:
        print("note: compiled backend unavailable; timing pure numpy only")
    header = f"{'side':>6}" + "".join(f"{name:>14}" for name in impls)
    if len(impls) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for side in (int(s) for s in args.sizes.split(",")):
        rows = bench(side, args.repeats, rng)
        line = f"{side:>6}" + "".join(f"{rows[name]*1e3:>12.2f}ms" for name in impls)
        if len(impls) == 2:
            line += f"{rows['pure'] / rows['compiled']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
