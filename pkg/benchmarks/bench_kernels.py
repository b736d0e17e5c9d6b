"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py            # kernel micro-benchmarks
    python benchmarks/bench_kernels.py --run      # also a short delayed run per backend

The end-to-end timing spawns a fresh interpreter per backend because the
backend is fixed when the package is imported.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from wgmps import _kernels as K


def block_matrix(rng, m, n, blocks):
    mat = np.zeros((m, n), dtype=complex)
    for rows, cols in zip(np.array_split(rng.permutation(m), blocks), np.array_split(rng.permutation(n), blocks)):
        mat[np.ix_(rows, cols)] = rng.normal(size=(rows.size, cols.size)) + 1j * rng.normal(size=(rows.size, cols.size))
    return mat


def best_of(fn, repeat=5, number=20):
    fn()  # warm-up (jit compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        times.append((time.perf_counter() - t0) / number)
    return min(times)


def micro():
    rng = np.random.default_rng(0)
    cases = []
    for chi, blocks in ((16, 1), (48, 3), (96, 5)):
        a = block_matrix(rng, chi * 3, chi, 1).reshape(chi, 3, chi)
        b = block_matrix(rng, chi, 3 * chi, 1).reshape(chi, 3, chi)
        mat = block_matrix(rng, 3 * chi, 3 * chi, blocks)
        cases.append((f"svd {3 * chi}x{3 * chi}, {blocks} blocks", lambda m=mat, f=K.truncated_svd_numpy: f(m, 1e-10, 64),
                      lambda m=mat, f=K.truncated_svd_numba: f(m, 1e-10, 64)))
        cases.append((f"qr {3 * chi}x{chi}, {blocks} blocks", lambda m=mat[:, :chi]: K.block_qr_numpy(m),
                      lambda m=mat[:, :chi]: K.block_qr_numba(m)))
        cases.append((f"swap chi={chi}", lambda a=a, b=b: K.swap_sites_numpy(a, b, 1e-10, 64, True),
                      lambda a=a, b=b: K.swap_sites_numba(a, b, 1e-10, 64, True)))
    n = 200_000
    qcfg = rng.integers(0, 4, n)
    ph = -np.sort(-rng.integers(-1, 400, (n, 2)), axis=1)
    ph[ph[:, 0] < 0, 1] = -1
    act = np.array([10, 11, 200], dtype=np.int64)
    radix = np.array([3, 3, 4], dtype=np.int64)
    cases.append(("classify 2e5 states", lambda: K.classify_states_numpy(qcfg, ph, act, 2, radix, 401),
                  lambda: K.classify_states_numba(qcfg, ph, act, 2, radix, 401)))
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, f_np, f_nb in cases:
        t_np, t_nb = best_of(f_np), best_of(f_nb)
        print(f"{name:32s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.2f}")


SNIPPET = """
import time
from wgmps import PhysicalParams, run, _kernels
run(PhysicalParams(tau=0.1), "ee", 0.2)  # compile
t0 = time.perf_counter()
run(PhysicalParams(tau=0.5), "ee", 1.5)
print(_kernels.BACKEND, time.perf_counter() - t0)
"""


def end_to_end():
    for flag in ("0", "1"):
        env = dict(os.environ, WGMPS_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", SNIPPET], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        print(f"tau=0.5 run to t=1.5 with {backend:5s}: {float(secs):.2f} s")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--run", action="store_true", help="also time a short simulation per backend")
    args = ap.parse_args()
    micro()
    if args.run:
        end_to_end()
