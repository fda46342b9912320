"""Wall-clock scaling of the selective scan."""

from __future__ import annotations

import gc
import time

import numpy as np

from .ssm import SsmParams, s6_forward, ssm_conv_apply, ssm_kernel, ssm_scan_sequential, zoh_discretize
from .tensor import Tensor, debug_checks, no_grad


def _time(fn, repeats: int) -> float:
    # collector paused while timing, as timeit does
    times = []
    enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
    finally:
        if enabled:
            gc.enable()
    return float(np.median(times))


def bench_scan(lengths=(1024, 2048, 4096), repeats: int = 5, d_inner: int = 16, d_state: int = 16,
               seed: int = 0, modes=("s6", "sequential", "conv")) -> list[tuple[int, str, float]]:
    """Median seconds per call for each (length, mode); rows are ``(L, mode, seconds)``.

    ``s6`` is the selective forward pass (projections, discretization and
    scan), ``sequential`` the static recurrence, ``conv`` the kernel mode.
    """
    rng = np.random.default_rng(seed)
    params = SsmParams(d_inner, d_state, max(1, d_inner // 16), rng)
    A = -np.exp(params.A_log.data.astype(float))
    A_bar, B_bar = zoh_discretize(A, rng.normal(size=(d_inner, d_state)), 0.05)
    C = rng.normal(size=(d_inner, d_state))
    rows = []
    with no_grad(), debug_checks(False):
        for L in lengths:
            x = rng.normal(size=(1, L, d_inner)).astype(np.float32)
            xt = Tensor(x)
            x64 = x[0].astype(float)
            s6_forward(xt, params)  # warm-up
            for mode in modes:
                if mode == "s6":
                    sec = _time(lambda: s6_forward(xt, params), repeats)
                elif mode == "sequential":
                    sec = _time(lambda: ssm_scan_sequential(A_bar, B_bar, C, x64), repeats)
                elif mode == "conv":
                    sec = _time(lambda: ssm_conv_apply(ssm_kernel(A_bar, B_bar, C, L), x64), repeats)
                else:
                    raise ValueError(f"unknown bench mode {mode!r}")
                rows.append((L, mode, sec))
    return rows


def scaling_ratios(rows, mode: str = "s6") -> list[float]:
    """time(L_{i+1}) / time(L_i) for consecutive lengths of one mode."""
    times = [sec for _, m, sec in sorted(r for r in rows if r[1] == mode)]
    return [b / a for a, b in zip(times, times[1:])]


def rows_to_csv(rows) -> str:
    lines = ["L,mode,seconds"]
    lines += [f"{L},{mode},{sec:.6f}" for L, mode, sec in rows]
    return "\n".join(lines) + "\n"
