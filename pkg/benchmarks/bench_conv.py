#!/usr/bin/env python3
"""Compare the compiled convolution kernels against the pure-Python fallback.

Times forward and backward passes on dilated-module-sized workloads.
Run: python benchmarks/bench_conv.py [--repeats N]
"""

import argparse
import time

import numpy as np

from headplan.tinynet import _kernels_py

try:
    from headplan.tinynet import _convkern
except ImportError:
    _convkern = None

CASES = [
    # (label, batch, c_in, c_out, hw, k, dilation)
    ("gradcheck-size, 4ch, 8px", 1, 4, 4, 8, 3, 1),
    ("support-size, 32ch, 24px", 1, 32, 8, 24, 3, 8),
    ("branch d=1, 32ch, 64px", 1, 32, 8, 64, 3, 1),
    ("branch d=8, 32ch, 64px", 1, 32, 8, 64, 3, 8),
    ("fuse 1x1, 24->32, 64px", 1, 24, 32, 64, 1, 1),
    ("branch d=4, 64ch, 128px", 1, 64, 16, 128, 3, 4),
]


def run_case(mod, x, w, d, pad, g, repeats):
    fwd = bwd = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = mod.conv2d_forward(x, w, 1, d, pad)
        fwd = min(fwd, time.perf_counter() - t0)
        t0 = time.perf_counter()
        mod.conv2d_backward(x, w, g, 1, d, pad)
        bwd = min(bwd, time.perf_counter() - t0)
    return fwd, bwd, out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'case':28s} {'pure fwd':>10s} {'pure bwd':>10s}"
          f" {'comp fwd':>10s} {'comp bwd':>10s} {'speedup':>8s}")
    for label, b, ci, co, hw, k, d in CASES:
        x = rng.uniform(-1, 1, (b, ci, hw, hw))
        w = rng.uniform(-1, 1, (co, ci, k, k))
        pad = d * (k - 1) // 2
        g = rng.uniform(-1, 1, (b, co, hw, hw))
        pf, pb, out_p = run_case(_kernels_py, x, w, d, pad, g, args.repeats)
        if _convkern is None:
            print(f"{label:28s} {pf * 1e3:9.2f}ms {pb * 1e3:9.2f}ms"
                  f" {'n/a':>10s} {'n/a':>10s}")
            continue
        cf, cb, out_c = run_case(_convkern, x, w, d, pad, g, args.repeats)
        assert np.allclose(out_p, out_c, rtol=1e-12, atol=1e-13)
        speed = (pf + pb) / (cf + cb)
        print(f"{label:28s} {pf * 1e3:9.2f}ms {pb * 1e3:9.2f}ms"
              f" {cf * 1e3:9.2f}ms {cb * 1e3:9.2f}ms {speed:7.1f}x")
    if _convkern is None:
        print("\ncompiled extension not built; showing fallback only")


if __name__ == "__main__":
    main()
