"""Compare the compiled and pure-Python kernel backends.

Times the Dormand-Prince integrator on pendulum bundles of several sizes,
dense-output evaluation, and one end-to-end correction, once per backend.

    python benchmarks/bench_kernels.py --repeat 5
"""
import argparse
import json
import time
import warnings

import numpy as np

from hustab.harness import default_config, run_correction
from hustab.numerics import available_backends, kernels, use_backend


def pendulum(y):
    y = y.reshape(-1, 2)
    return np.stack([y[:, 1], -np.sin(y[:, 0])], axis=-1).ravel()


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(sizes):
    rng = np.random.default_rng(0)
    out = {}
    for n in sizes:
        y0 = rng.uniform(-1.5, 1.5, size=2 * n)
        out[f"integrate n={n}"] = lambda y0=y0: kernels.dp45_integrate(pendulum, y0, 20.0, 1e-10, 1e-12)
    y0 = rng.uniform(-1.5, 1.5, size=2 * 64)
    traj = kernels.dp45_integrate(pendulum, y0, 20.0, 1e-10, 1e-12)
    tq = np.sort(rng.uniform(0, 20.0, size=(64, 2000)), axis=1)
    out["dense_eval 64x2000"] = lambda: kernels.dense_eval(*traj, 2, tq)
    config = default_config("bump", -2.0, magnitude=0.1)
    out["correction bump"] = lambda: run_correction(config)
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3, help="best-of count per case")
    parser.add_argument("--sizes", type=int, nargs="+", default=[1, 16, 256],
                        help="pendulum bundle sizes")
    parser.add_argument("--json", action="store_true", help="print machine-readable results")
    args = parser.parse_args(argv)

    warnings.simplefilter("ignore", RuntimeWarning)
    backends = available_backends()
    results = {}
    previous = use_backend(backends[0])
    try:
        for name in backends:
            use_backend(name)
            results[name] = {label: best_of(fn, args.repeat) for label, fn in cases(args.sizes).items()}
    finally:
        use_backend(previous)

    if args.json:
        print(json.dumps(results, indent=2, sort_keys=True))
        return 0
    labels = list(next(iter(results.values())))
    header = f"{'case':<22}" + "".join(f"{b:>12}" for b in backends)
    if "compiled" in results and "python" in results:
        header += f"{'speedup':>10}"
    print(header)
    for label in labels:
        row = f"{label:<22}" + "".join(f"{results[b][label] * 1e3:>10.2f}ms" for b in backends)
        if "compiled" in results and "python" in results:
            row += f"{results['python'][label] / results['compiled'][label]:>9.1f}x"
        print(row)
    if "compiled" not in results:
        print("compiled kernels not built; only the python backend was timed")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
