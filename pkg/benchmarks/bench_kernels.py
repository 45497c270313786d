#!/usr/bin/env python3
"""Benchmark the compiled kernel lane against the pure-numpy fallback.

Times the raw kernels (im2col, col2im, maxpool, upsample) at training-relevant
shapes, then a full conv2d forward+backward and one denoiser training step per
lane. Lane selection for the end-to-end rows uses MGRDENOISE_KERNELS, so this
script re-executes itself once per lane.

Usage: python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def bench(fn, *args, reps=10):
    fn(*args)
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def bench_raw_kernels(reps):
    from mgrdenoise.engine import kernels_numpy as lane_np
    try:
        from mgrdenoise import _kernels as lane_cy
    except ImportError:
        print("compiled extension not importable; raw-kernel comparison skipped")
        return

    shapes = [(1, 24, 96, 96), (1, 48, 96, 96), (4, 24, 64, 64)]
    k = 3
    print(f"{'kernel':<22} {'shape':<16} {'numpy ms':>9} {'cython ms':>10} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for (n, c, h, w) in shapes:
        xp = np.ascontiguousarray(rng.standard_normal((n, c, h + 2, w + 2)).astype(np.float32))
        cols = np.ascontiguousarray(lane_np.im2col(xp, k, 1, h, w))
        x = np.ascontiguousarray(rng.standard_normal((n, c, h, w)).astype(np.float32))
        _, idx = lane_np.maxpool2_forward(x)
        gp = np.ascontiguousarray(rng.standard_normal((n, c, h // 2, w // 2)).astype(np.float32))
        gu = np.ascontiguousarray(rng.standard_normal((n, c, 2 * h, 2 * w)).astype(np.float32))
        rows = [
            ("im2col", lambda L: L.im2col(xp, k, 1, h, w)),
            ("col2im", lambda L: L.col2im(cols, n, c, h + 2, w + 2, k, 1, h, w)),
            ("maxpool2_forward", lambda L: L.maxpool2_forward(x)),
            ("maxpool2_backward", lambda L: L.maxpool2_backward(gp, idx, h, w)),
            ("upsample2_forward", lambda L: L.upsample2_forward(x)),
            ("upsample2_backward", lambda L: L.upsample2_backward(gu)),
        ]
        for name, call in rows:
            t_np = bench(call, lane_np, reps=reps)
            t_cy = bench(call, lane_cy, reps=reps)
            print(f"{name:<22} {f'{n}x{c}x{h}x{w}':<16} {t_np:9.3f} {t_cy:10.3f} "
                  f"{t_np / t_cy:7.2f}x")


def bench_end_to_end(reps):
    """Timed in the CURRENT lane (honours MGRDENOISE_KERNELS)."""
    from mgrdenoise import backend_name
    from mgrdenoise.engine import ops
    from mgrdenoise.engine.rng import child_rng, make_rng
    from mgrdenoise.noise import NoiseSpec, corrupt
    from mgrdenoise.training import Adam, desk_config
    from mgrdenoise.blindspot import make_sample, masked_mse
    from mgrdenoise.unet import Network

    lane = backend_name()
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 48, 96, 96)).astype(np.float32)
    w = (rng.standard_normal((48, 48, 3, 3)) * 0.1).astype(np.float32)
    b = np.zeros(48, np.float32)
    t_f = bench(lambda: ops.conv2d(x, w, b), reps=reps)
    y = ops.conv2d(x, w, b)
    g = rng.standard_normal(y.shape).astype(np.float32)
    t_b = bench(lambda: ops.conv2d_backward(g, x, w), reps=reps)
    print(f"[{lane}] conv2d 48->48 @96px: fwd {t_f:.2f} ms, bwd {t_b:.2f} ms")

    cfg = desk_config("s2s_single", seed=0)
    net = Network(cfg.net, make_rng(0))
    adam = Adam(net.params(), lr=cfg.lr)
    clean = make_rng(1).random((1, 1, 96, 96), dtype=np.float32)
    noisy = corrupt(clean, NoiseSpec(sigma=25.0), make_rng(2))

    def step(i=[0]):
        srng = child_rng(0, 1, i[0])
        i[0] += 1
        sample = make_sample(noisy, cfg.mask_scheme, srng)
        pred = net.forward(sample.manipulated, sample.guide_mask, training=True, rng=srng)
        _, grad = masked_mse(pred, sample.target, sample.guide_mask)
        net.backward(grad)
        adam.step()

    t_s = bench(step, reps=max(3, reps // 2))
    print(f"[{lane}] full training step (desk net, 96x96): {t_s:.1f} ms")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--lane-only", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    reps = 3 if args.quick else 10

    if args.lane_only:
        bench_end_to_end(reps)
        return

    bench_raw_kernels(reps)
    print()
    for lane in ("numpy", "cython"):
        env = dict(os.environ, MGRDENOISE_KERNELS=lane)
        r = subprocess.run([sys.executable, __file__, "--lane-only"]
                           + (["--quick"] if args.quick else []), env=env)
        if r.returncode:
            print(f"(lane {lane} unavailable)")


if __name__ == "__main__":
    main()
