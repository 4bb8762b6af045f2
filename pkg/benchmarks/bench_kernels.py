"""Time the numba kernels against the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeats N]``. Each kernel is
called once before timing so numba compilation is excluded. Outputs of the two
backends are compared before any timing is reported.
"""
import argparse
import statistics
import time

import numpy as np

from asmlp import kernels
from asmlp.kernels import MODE_CODES


def _cases(rng):
    x = rng.standard_normal((8, 96, 56, 56)).astype(np.float32)
    gamma = rng.standard_normal(96).astype(np.float32)
    beta = rng.standard_normal(96).astype(np.float32)
    blob = rng.integers(0, 256, size=1 << 20, dtype=np.uint8).tobytes()
    zero = MODE_CODES["zero"]
    return {
        "layer_norm_fwd": lambda k: k.layer_norm_fwd(x, gamma, beta, 1e-5)[0],
        "gelu_fwd": lambda k: k.gelu_fwd(x),
        "shift_fwd width s=5": lambda k: k.shift_fwd(x, 3, 5, 1, zero),
        "shift_fwd height s=5": lambda k: k.shift_fwd(x, 2, 5, 1, zero),
        "crc64 1 MiB": lambda k: k.crc64(blob),
    }


def _time(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    names = kernels.available_backends()
    backends = {n: kernels.get_backend(n) for n in names}
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':24s}" + "".join(f"{n + ' ms':>12s}" for n in names) + "     speedup  agree")
    for label, call in cases.items():
        outs = {n: call(b) for n, b in backends.items()}
        ref = outs["numpy"]
        agree = all(np.allclose(o, ref, rtol=1e-5, atol=1e-6) for o in outs.values())
        ms = {n: _time(lambda b=b: call(b), args.repeats) * 1e3 for n, b in backends.items()}
        speed = f"{ms['numpy'] / ms['numba']:10.2f}x" if "numba" in ms else "         -"
        print(f"{label:24s}" + "".join(f"{ms[n]:12.2f}" for n in names) + f"  {speed}  {agree}")


if __name__ == "__main__":
    main()
