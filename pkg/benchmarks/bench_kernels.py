"""Benchmark the compiled kernels against the pure-numpy fallback.

Run:  python3 benchmarks/bench_kernels.py [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from plainseg.kernels import _ckernels, _pykernels


def time_call(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def make_masks(rng, n, side):
    masks = []
    for _ in range(n):
        m = np.zeros((side, side), dtype=np.uint8)
        cx, cy = rng.integers(10, side - 10, 2)
        r = int(rng.integers(5, side // 3))
        ys, xs = np.ogrid[:side, :side]
        m[(xs - cx) ** 2 + (ys - cy) ** 2 <= r * r] = 1
        masks.append(m)
    return masks


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    side = 256
    masks = make_masks(rng, 200, side)
    encoded = [_pykernels.rle_encode(m) for m in masks]
    boxes = np.concatenate([rng.random((400, 2)) * 200,
                            rng.random((400, 2)) * 200 + 210], axis=1)
    big = np.concatenate([boxes] * 2)
    scores = rng.random(len(big))

    cases = [
        ("rle_encode (200 x 256^2 masks)",
         lambda impl: [impl.rle_encode(m) for m in masks]),
        ("rle_decode (200 masks)",
         lambda impl: [impl.rle_decode(c, side, side) for c in encoded]),
        ("rle_intersection (all pairs of 60)",
         lambda impl: [impl.rle_intersection(a, b)
                       for a in encoded[:60] for b in encoded[:60]]),
        ("box_iou_matrix (800 x 800)",
         lambda impl: impl.box_iou_matrix(big, big)),
        ("nms (800 boxes)",
         lambda impl: impl.nms(big, scores, 0.5)),
    ]

    print(f"{'case':<36}{'python':>12}{'cython':>12}{'speedup':>10}")
    print("-" * 70)
    for name, fn in cases:
        t_py = time_call(lambda: fn(_pykernels), args.repeats)
        t_cy = time_call(lambda: fn(_ckernels), args.repeats)
        print(f"{name:<36}{t_py * 1e3:>10.2f}ms{t_cy * 1e3:>10.2f}ms"
              f"{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
