"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 3] [--quick]
"""
import argparse
import time

import numpy as np

from qifcanard import kernels
from qifcanard.meanfield import MeanFieldModel, integrate
from qifcanard.network import build_dense, build_sparse, initial_state, integrate_network, simulate_single_theta
from qifcanard.params import ForcingParams, GeneralMfParams, QifParams, SparseParams


def dense_case(scale):
    sys_ = build_dense(QifParams(N=int(10_000 * scale), J=15.0, tau_s=0.02, eta_bar=-2.0, delta=1.0),
                       ForcingParams(A=6.0, eps=0.5, eta_bar=-2.0))

    def go(backend):
        integrate_network(sys_, initial_state(sys_, s0=0.3), (0, 0.5), 1e-3, record_every=50, backend=backend)
    return go


def sparse_case(scale):
    sys_ = build_sparse(SparseParams(N=int(10_000 * scale), M=int(1_000 * scale), eta_bar=0.3, delta=0.05))

    def go(backend):
        integrate_network(sys_, initial_state(sys_, s0=0.05), (0, 0.5), 1e-3, record_every=50, backend=backend)
    return go


def meanfield_case(scale):
    m = MeanFieldModel(GeneralMfParams(delta=1.0, J=15.0, tau_s=0.02, eta_bar=-15.1),
                       ForcingParams(A=12.0, eps=0.05, eta_bar=-15.1))
    y0 = np.array([0.01, -3.0, 0.01, -15.1, 12.0])

    def go(backend):
        integrate(m, y0, (0, 200 * scale), dt=1e-3, record_every=100, backend=backend)
    return go


def theta_case(scale):
    fp = ForcingParams(A=0.3, eps=0.05, eta_bar=1.0)

    def go(backend):
        simulate_single_theta(1.0, 6.0, 0.3, fp, (0, 200 * scale), 1e-3, record_every=100, backend=backend)
    return go


CASES = {"dense network": dense_case, "sparse network": sparse_case,
         "mean field rk4": meanfield_case, "theta neuron": theta_case}


def best_time(fn, backend, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(backend)
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="run at a tenth of the default size")
    args = ap.parse_args(argv)
    scale = 0.1 if args.quick else 1.0
    backends = [b for b in ("python", "compiled") if b in kernels.BACKENDS]
    print(f"{'case':<16}" + "".join(f"{b + ' [s]':>16}" for b in backends) + f"{'speedup':>10}")
    for name, make in CASES.items():
        fn = make(scale)
        t = {b: best_time(fn, b, args.repeat) for b in backends}
        speed = f"{t['python'] / t['compiled']:>9.1f}x" if "compiled" in t else f"{'n/a':>10}"
        print(f"{name:<16}" + "".join(f"{t[b]:>16.4f}" for b in backends) + speed)


if __name__ == "__main__":
    main()
