"""Timing comparison of the compiled coding kernels vs the NumPy reference.

Run:  python3 benchmarks/bench_kernels.py

The shapes mirror a detection pass over a 5-minute 4-channel recording:
91-sample instances, a 3+3 dictionary, and a few thousand candidate peaks
coded with 50 ISTA iterations.
"""

import time

import numpy as np

from bcgbeat import kernels
from bcgbeat.dlfumi import step_length


def make_problem(d=91, T=3, M=3, n=4000, seed=0):
    rng = np.random.default_rng(seed)
    atoms = rng.standard_normal((d, T + M))
    atoms /= np.linalg.norm(atoms, axis=0)
    X = rng.standard_normal((d, n))
    G = atoms.T @ atoms
    G_bg = atoms[:, T:].T @ atoms[:, T:]
    corr_full = atoms.T @ X
    corr_bg = atoms[:, T:].T @ X
    post = rng.uniform(0.0, 1.0, n)
    eta = step_length(atoms)
    eta_bg = step_length(atoms[:, T:])
    return dict(
        T=T, M=M, n=n, G=G, G_bg=G_bg, corr_full=corr_full, corr_bg=corr_bg,
        post=post, eta=eta, eta_bg=eta_bg,
    )


def run_negative(impl, p, lam=5e-3, n_iter=50):
    return impl.ista_negative(
        p["G_bg"], p["corr_bg"], np.zeros((p["M"], p["n"])), lam, p["eta_bg"], n_iter
    )


def run_positive(impl, p, lam=5e-3, n_iter=50):
    codes0 = np.zeros((p["T"] + p["M"], p["n"]))
    return impl.ista_positive(
        p["G"], p["G_bg"], p["corr_full"], p["post"], codes0, lam, p["eta"],
        n_iter, p["T"],
    )


def best_of(fn, repeats=5):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    p = make_problem()
    print(f"active backend: {kernels.BACKEND}")
    print(f"problem: d=91, T+M={p['T'] + p['M']}, n={p['n']}, 50 iterations")

    impls = [("numpy reference", kernels.reference)]
    if kernels.BACKEND == "cython":
        impls.insert(0, ("cython extension", kernels))
    else:
        print("compiled extension unavailable; timing the reference only")

    results = {}
    for name, impl in impls:
        run_negative(impl, p, n_iter=2)  # warm up
        run_positive(impl, p, n_iter=2)
        t_neg = best_of(lambda: run_negative(impl, p))
        t_pos = best_of(lambda: run_positive(impl, p))
        results[name] = (t_neg, t_pos)
        print(f"{name:18s} ista_negative {t_neg * 1e3:8.2f} ms   "
              f"ista_positive {t_pos * 1e3:8.2f} ms")

    if len(results) == 2:
        (fast_neg, fast_pos) = results["cython extension"]
        (ref_neg, ref_pos) = results["numpy reference"]
        print(f"speedup: ista_negative {ref_neg / fast_neg:.2f}x, "
              f"ista_positive {ref_pos / fast_pos:.2f}x")
        a = run_negative(kernels, p)
        b = run_negative(kernels.reference, p)
        c = run_positive(kernels, p)
        d = run_positive(kernels.reference, p)
        print(f"max |difference|: negative {np.max(np.abs(a - b)):.3e}, "
              f"positive {np.max(np.abs(c - d)):.3e}")


if __name__ == "__main__":
    main()
