"""Time the compiled and numpy kernels on the shipped models.

    python3 benchmarks/bench_kernels.py [--repeat 200]
"""
import argparse
import timeit

import numpy as np

from nnreach import kernels
from nnreach.envs import get_env
from nnreach.reach import reach_function


def bench(backend, model, lo, hi, repeat):
    W, b = model.weights, model.biases
    z = 0.5 * (lo + hi)
    out = {}
    for name, fn in (("forward", lambda: backend.mlp_forward(W, b, z)),
                     ("interval", lambda: backend.interval_forward(W, b, lo, hi)),
                     ("crown", lambda: backend.crown_bounds(W, b, lo, hi))):
        out[name] = min(timeit.repeat(fn, number=repeat, repeat=5)) / repeat
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    backends = {"python": kernels.get_backend("python")}
    try:
        backends["cython"] = kernels.get_backend("cython")
    except ImportError:
        print("compiled kernels not built; timing numpy only")
    print(f"{'env':10s} {'kernel':10s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup")
    for env_name in ("pendulum", "dubins"):
        env = get_env(env_name)
        nndm = env.load_model()
        center = np.zeros(env.m_x + env.m_u)
        lo, hi = center - 0.1, center + 0.1
        res = {name: bench(be, nndm.model, lo, hi, args.repeat) for name, be in backends.items()}
        for kernel in ("forward", "interval", "crown"):
            times = [res[b][kernel] for b in backends]
            speed = res["python"][kernel] / res["cython"][kernel] if "cython" in res else 1.0
            print(f"{env_name:10s} {kernel:10s} " + " ".join(f"{t * 1e6:10.2f}us" for t in times)
                  + f"   {speed:6.1f}x")
        # end-to-end: 5-step reach function with the active backend
        x0 = np.zeros(env.m_x)
        controls = np.zeros((5, env.m_u))
        t = min(timeit.repeat(lambda: reach_function(nndm, x0, controls, 0.01),
                              number=20, repeat=3)) / 20
        print(f"{env_name:10s} reach(k=5) {t * 1e3:.3f} ms  [{kernels.BACKEND}]")


if __name__ == "__main__":
    main()
