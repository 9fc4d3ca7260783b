"""Benchmark the numba kernels against the pure-numpy fallback.

Times the two hot kernels (per-edge neighborhood combine and row
scatter-add) on training-shaped inputs, then a full forward/backward
training step on a synthetic batch under each kernel path.

Run:  python benchmarks/bench_kernels.py
The env flag GEANN_NUMBA only selects the dispatch default; this script
calls both implementations directly when numba is importable.
"""

import time

import numpy as np

from geann import _accel


def timeit(fn, *args, repeat=20):
    fn(*args)  # warm up (and trigger compilation on the jit path)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels():
    rng = np.random.default_rng(0)
    n, k, width = 2000, 10, 96
    edges = n * k
    src = rng.integers(0, n, size=edges).astype(np.int64)
    dst = np.repeat(np.arange(n, dtype=np.int64), k)
    coeff = rng.uniform(0.05, 0.5, size=edges)
    self_coeff = rng.uniform(0.05, 0.5, size=n)
    x = rng.normal(size=(n, width))
    idx = rng.integers(0, n, size=n // 2).astype(np.int64)
    g = rng.normal(size=(n // 2, width))

    print(f"kernel inputs: {n} nodes, {edges} edges, width {width}")
    rows = [("edge_combine numpy", timeit(_accel.edge_combine_numpy, src, dst, coeff, self_coeff, x))]
    if _accel.NUMBA_AVAILABLE and _accel.edge_combine_numba is not None:
        rows.append(("edge_combine numba", timeit(_accel.edge_combine_numba, src, dst, coeff, self_coeff, x)))
    rows.append(("scatter_rows numpy", timeit(_accel.scatter_rows_numpy, idx, g, n)))
    if _accel.NUMBA_AVAILABLE and _accel.scatter_rows_numba is not None:
        rows.append(("scatter_rows numba", timeit(_accel.scatter_rows_numba, idx, g, n)))

    base = {}
    for name, t in rows:
        kernel = name.split()[0]
        base.setdefault(kernel, t)
        speedup = base[kernel] / t
        print(f"  {name:22s} {t * 1e3:8.3f} ms   x{speedup:.1f}")


def bench_training_step():
    from geann import (
        EncoderConfig,
        GemConfig,
        ModelConfig,
        SyntheticSpec,
        TrainConfig,
        generate,
        train,
    )

    spec = SyntheticSpec(
        num_series=1000, num_steps=120, num_clusters=20,
        cold_start_fraction=0.1, oos_fraction=0.1, noise_scale=0.5, seed=0,
        context_length=12, horizons=(1, 3, 6, 12), quantiles=(0.5, 0.9),
    )
    bundle = generate(spec)
    model = ModelConfig(
        encoder=EncoderConfig(kernel_size=2, dilations=(1, 2, 4), channels=(8, 8, 8)),
        gem=GemConfig(num_graphs=1, num_layers=2, hidden_width=8, out_width=8),
        static_hidden=4, static_width=4, decoder_hidden=12,
    )
    cfg = TrainConfig(epochs=3, batch_size=256, learning_rate=5e-3, seed=0)

    def one_training():
        train(bundle.dataset, [bundle.truth_graph], cfg, model)

    t0 = time.perf_counter()
    one_training()
    per_epoch = (time.perf_counter() - t0) / cfg.epochs
    path = "numba" if _accel.USING_NUMBA else "numpy"
    print(f"training step ({path} path): {per_epoch * 1e3:.0f} ms/epoch on 1000 series")


if __name__ == "__main__":
    print(f"numba available: {_accel.NUMBA_AVAILABLE}, active path: "
          f"{'numba' if _accel.USING_NUMBA else 'numpy'} (flag {_accel.ENV_FLAG})")
    bench_kernels()
    bench_training_step()
