"""Compare the compiled likelihood kernel with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 200] [--json out.json]

Times one log-likelihood + gradient pass over the observed cells for a few
tensor sizes, and one full FactorModel.log_joint_and_grad call per backend.
"""
import argparse
import json
import timeit

import numpy as np

from perfcomplete import _kernels_py, kernels
from perfcomplete.models import FactorModel, ModelSpec, init_state

SIZES = [(20, 30, 1, 3), (40, 60, 1, 5), (108, 176, 3, 10), (300, 500, 2, 10)]


def _problem(M, N, S, D, density=0.8, seed=0):
    rng = np.random.default_rng(seed)
    mask = rng.random((M, N, S)) < density
    mi, ni, si = (a.astype(np.int64) for a in np.nonzero(mask))
    args = (rng.standard_normal((M, D)), rng.standard_normal((N, D)), rng.standard_normal(S),
            rng.standard_normal(S), mi, ni, si, rng.standard_normal(mi.size))
    return args, mask, rng.standard_normal((M, N, S))


def _time(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=repeat, repeat=3)) / repeat


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--json", help="write results here")
    a = ap.parse_args()
    if kernels.BACKEND != "cython":
        print("compiled extension not available; only the numpy fallback is timed")
    rows = []
    print(f"{'M x N x S, D':>20} {'n_obs':>7} {'numpy us':>10} {'cython us':>10} {'speedup':>8}"
          f" {'joint np us':>12} {'joint cy us':>12}")
    for M, N, S, D in SIZES:
        args, mask, vals = _problem(M, N, S, D)
        t_py = _time(lambda: _kernels_py.loglik_terms(*args), a.repeat)
        t_cy = _time(lambda: kernels.loglik_terms(*args), a.repeat) if kernels.BACKEND == "cython" else None
        if t_cy is not None:
            ref, got = _kernels_py.loglik_terms(*args), kernels.loglik_terms(*args)
            assert abs(ref[0] - got[0]) <= 1e-9 * abs(ref[0])
        fm = FactorModel(ModelSpec("PTF", D=D), vals, mask)
        v = init_state(fm.spec, fm.layout, 0)
        timings = {}
        for backend, fn in (("python", _kernels_py.loglik_terms), ("cython", kernels.loglik_terms)):
            if backend == "cython" and kernels.BACKEND != "cython":
                continue
            saved = kernels.loglik_terms
            kernels.loglik_terms = fn
            try:
                timings[backend] = _time(lambda: fm.log_joint_and_grad(v), a.repeat)
            finally:
                kernels.loglik_terms = saved
        row = {"M": M, "N": N, "S": S, "D": D, "n_obs": int(mask.sum()),
               "kernel_numpy_s": t_py, "kernel_cython_s": t_cy,
               "joint_numpy_s": timings["python"], "joint_cython_s": timings.get("cython")}
        rows.append(row)
        fmt = lambda x: f"{x * 1e6:10.1f}" if x is not None else f"{'-':>10}"
        speed = f"{t_py / t_cy:8.1f}" if t_cy else f"{'-':>8}"
        print(f"{f'{M} x {N} x {S}, {D}':>20} {row['n_obs']:7d} {fmt(t_py)} {fmt(t_cy)} {speed}"
              f" {timings['python'] * 1e6:12.1f} {fmt(timings.get('cython')):>12}")
    if a.json:
        with open(a.json, "w", encoding="utf-8") as fh:
            json.dump({"backend": kernels.BACKEND, "rows": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
