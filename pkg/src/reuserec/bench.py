"""Per-block compute-cost validation.

Analytic operation counts for both block types, instrumented multiply
counts, single-threaded wall-clock medians, and log-log scaling-exponent
fits over the window length.
"""

import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, DataFormatError
from .model_common import ModelHyper, block_param_shapes
from .numerics import OpCounter
from .reuse_model import block_step
from .selfattn_model import sa_block

BLOCK_KINDS = ("sa", "ram")

CSV_HEADER = "kind,n,d,n_h,analytic_ops,measured_muls,median_ns,reps"


@dataclass
class BenchRecord:
    kind: str
    n: int
    d: int
    n_h: int
    analytic_ops: int
    measured_muls: int
    median_ns: int
    reps: int


def analytic_ops(kind, n, d):
    """Operation count of one block: quadratic in n for the self-attention
    block, linear for the reuse block."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    if kind == "sa":
        return 6 * n * d * d + 2 * n * n * d + 2 * n * d
    if kind == "ram":
        return 2 * n * d * d + 4 * d * d + 2 * n * d + 2 * d
    raise ValueError(f"unknown block kind {kind!r}")


def _random_block(hyper, gen):
    bound = 1.0 / np.sqrt(hyper.d)
    params = {}
    for name, shape in block_param_shapes(hyper).items():
        params[f"b0.{name}"] = (np.zeros(shape) if name in ("b1", "b2")
                                else gen.uniform(-bound, bound, size=shape))
    return params


def measure_block(kind, n, d, n_h, repetitions=20, rng_gen=None, warmup=3):
    """Forward-only timing of one block on random inputs.

    Median of `repetitions` single-threaded runs; the multiply count is
    captured once with an instrumented pass (it is a deterministic
    function of kind, n, d, n_h).
    """
    if kind not in BLOCK_KINDS:
        raise ValueError(f"unknown block kind {kind!r}")
    if repetitions < 5:
        raise ContractViolationError("need at least 5 repetitions")
    gen = rng_gen if rng_gen is not None else np.random.default_rng(0)
    hyper = ModelHyper(d=d, n=n, n_h=n_h, n_b=1, mask_padding=False)
    params = _random_block(hyper, gen)
    E = gen.standard_normal((n, d))
    h = gen.standard_normal((1, d))
    mask = np.ones(n, dtype=bool)
    key_mask = np.tril(np.ones((n, n), dtype=bool))

    def run(counter=None):
        if kind == "ram":
            block_step(h, E, params, "b0", mask, hyper, counter=counter)
        else:
            sa_block(E, params, "b0", key_mask, hyper, counter=counter)

    counter = OpCounter()
    run(counter)
    for _ in range(warmup):
        run()
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter_ns()
        run()
        times.append(time.perf_counter_ns() - t0)
    return BenchRecord(kind=kind, n=n, d=d, n_h=n_h,
                       analytic_ops=analytic_ops(kind, n, d),
                       measured_muls=counter.multiplies,
                       median_ns=int(np.median(times)), reps=repetitions)


def scaling_fit(ns, times):
    """Least-squares slope of log(time) against log(n)."""
    ns = np.asarray(ns, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if len(ns) < 4:
        raise ContractViolationError("scaling_fit needs at least 4 sweep points")
    if ns.max() / ns.min() < 4.0:
        raise ContractViolationError("sweep must span at least a 4x range in n")
    slope = np.polyfit(np.log(ns), np.log(times), 1)[0]
    return float(slope)


def write_records_csv(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            fh.write(f"{r.kind},{r.n},{r.d},{r.n_h},{r.analytic_ops},"
                     f"{r.measured_muls},{r.median_ns},{r.reps}\n")


def read_records_csv(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise DataFormatError(f"unexpected benchmark CSV header: {header!r}")
        for line in fh:
            kind, n, d, n_h, ops, muls, ns, reps = line.strip().split(",")
            records.append(BenchRecord(kind=kind, n=int(n), d=int(d), n_h=int(n_h),
                                       analytic_ops=int(ops), measured_muls=int(muls),
                                       median_ns=int(ns), reps=int(reps)))
    return records
