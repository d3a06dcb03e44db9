"""Compare the compiled and pure-Python kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from moesim import kernels


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(impl):
    rng = np.random.default_rng(0)
    ctx = rng.integers(100, 3000, size=20000).astype(np.int64)
    held = -(-ctx // 16)
    layer_bytes = np.full(32, 2.9e9)
    pair = (0.02, 0.03)
    timeline_args = (layer_bytes, 100e6, 19.5e9, 45e9, True, pair, pair, (0.1, 0.1),
                     (1e8, 1e8), (5e7, 5e7), (1e9, 1e9))
    return {
        "lifetime_block_sum(p=100,g=512,b=16) x200": lambda: [impl.lifetime_block_sum(100, 512, 16) for _ in range(200)],
        "decode_block_demand(20000 seqs) x50": lambda: [impl.decode_block_demand(ctx, held, 16) for _ in range(50)],
        "iteration_timeline(32 layers, contention) x200": lambda: [impl.iteration_timeline(*timeline_args) for _ in range(200)],
    }


SIM_SNIPPET = """
import time
from moesim import cli, pipeline
from moesim.core import load_scenario_file
sc = load_scenario_file(cli.find_scenario("mixtral8x7b_210gb_g256.cfg"))
t = time.perf_counter()
pipeline.simulate_run(sc.workload, sc.hardware, sc.model, sc.kv_cache)
print(time.perf_counter() - t)
"""


def end_to_end(pure: bool) -> float:
    """Seconds for one bundled simulation; backend is chosen at import time."""
    env = dict(os.environ, MOESIM_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", SIM_SNIPPET], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5, help="best-of repetitions (default: 5)")
    args = parser.parse_args()
    found = kernels.backends()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(found)}")
    table = {name: {k: _time(fn, args.repeat) for k, fn in cases(impl).items()} for name, impl in found.items()}
    for case in table["python"]:
        line = f"{case:50s} python {table['python'][case] * 1e3:9.2f} ms"
        if "cython" in table:
            c = table["cython"][case]
            line += f"   cython {c * 1e3:9.2f} ms   speedup {table['python'][case] / c:6.1f}x"
        print(line)
    line = f"{'simulate_run(210 GB, g=256, 20000 seqs)':50s} python {end_to_end(True) * 1e3:9.2f} ms"
    if "cython" in found:
        line += f"   cython {end_to_end(False) * 1e3:9.2f} ms"
    print(line)


if __name__ == "__main__":
    main()
