"""Measure the cost split the architecture is built around: the one-time
image encode versus the per-click head pass.

    python3 benchmarks/bench_latency.py [--preset toy|paper] [--clicks 10]

The paper-shaped preset is CPU-heavy (a full ViT-B pass at 896x896); the toy
preset answers in seconds and shows the same shape of result.
"""

import argparse
import time

import numpy as np

from clickmask.clicksim import Click
from clickmask.model import ClickSegmenter, ModelConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", choices=("toy", "paper"), default="toy")
    ap.add_argument("--clicks", type=int, default=10)
    args = ap.parse_args()

    cfg = ModelConfig.toy() if args.preset == "toy" else ModelConfig.paper_shaped()
    model = ClickSegmenter(cfg)
    patch = cfg.backbone.patch_size
    gh, gw = cfg.backbone.base_grid
    h, w = gh * patch, gw * patch
    rng = np.random.default_rng(0)
    image = rng.random((1, h, w, 3)).astype(np.float32)

    t0 = time.perf_counter()
    taps = model.encode(image)
    encode_s = time.perf_counter() - t0
    print(f"{args.preset}: encode once at {h}x{w}: {encode_s*1e3:.1f} ms")

    mask = np.zeros((h, w), dtype=np.uint8)
    clicks = []
    per_click = []
    for k in range(args.clicks):
        clicks.append(Click(int(rng.integers(h)), int(rng.integers(w)), k % 2 == 0))
        t0 = time.perf_counter()
        mask = model.predict(taps, clicks, mask)
        per_click.append(time.perf_counter() - t0)
    mean_click = float(np.mean(per_click))
    print(f"{args.preset}: per-click head pass: mean {mean_click*1e3:.1f} ms "
          f"(max {max(per_click)*1e3:.1f} ms over {args.clicks} clicks)")
    print(f"{args.preset}: encode / click ratio: {encode_s / mean_click:.1f}x")


if __name__ == "__main__":
    main()
