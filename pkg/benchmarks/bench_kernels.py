"""Time the compiled and pure-Python likelihood kernels.

    python3 benchmarks/bench_kernels.py [--n 5000] [--repeat 200]

Prints per-call time for each backend and preset, the speed-up, and the
largest absolute difference between the backends' outputs.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from tendency_lab import kernels
from tendency_lab.datagen import GeneratorConfig, generate_dataset
from tendency_lab.decision_model import PRESETS


def bench(n: int, repeat: int, seed: int) -> None:
    if "compiled" not in kernels.BACKENDS:
        print("compiled backend unavailable; timing the python backend only")
    print(f"{'preset':<14}{'backend':<10}{'us/call':>10}{'speed-up':>10}{'max |diff|':>12}")
    for name, theta in PRESETS.items():
        packed = generate_dataset(theta, GeneratorConfig(n=n, seed=seed)).packed
        x = theta.as_array()
        times, outputs = {}, {}
        for backend in kernels.BACKENDS:
            call = lambda: kernels.loglik_grad(x, packed, backend)  # noqa: E731
            call()
            times[backend] = min(timeit.repeat(call, number=repeat, repeat=3)) / repeat
            ll, grad = call()
            outputs[backend] = np.concatenate([[ll], grad])
        base = times["python"]
        diff = (
            float(np.max(np.abs(outputs["compiled"] - outputs["python"])))
            if "compiled" in outputs
            else float("nan")
        )
        for backend, t in times.items():
            print(f"{name:<14}{backend:<10}{t * 1e6:>10.1f}{base / t:>10.2f}{diff:>12.2e}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=5000)
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()
    bench(args.n, args.repeat, args.seed)


if __name__ == "__main__":
    main()
