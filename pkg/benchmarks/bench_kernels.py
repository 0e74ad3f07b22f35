"""Compiled vs numpy-fallback kernel timings.

    python benchmarks/bench_kernels.py [--repeat N] [--vocab V]

Times each kernel on a batch-sized workload and one full training run
(5 epochs on the default synthetic benchmark) with each backend swapped in.
"""

import argparse
import logging
import sys
import timeit

import numpy as np

from gatelab import _kernels_py, kernels
from gatelab.lm import OptimizerConfig, SyntheticSpec, make_synthetic_dataset, sft_initialize, train
from gatelab.objectives import LossConfig


def backends():
    out = {"python": _kernels_py}
    try:
        from gatelab import _kernels

        out["cython"] = _kernels
    except ImportError:
        print("compiled extension not built; timing the fallback only", file=sys.stderr)
    return out


def kernel_workload(V, n_tokens, seed=0):
    rng = np.random.default_rng(seed)
    theta = rng.normal(0, 1, (V, V))
    ctx = rng.integers(0, V, n_tokens)
    tok = rng.integers(0, V, n_tokens)
    w = rng.normal(0, 0.1, n_tokens)
    return theta, ctx, tok, w


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--vocab", type=int, default=24)
    ap.add_argument("--tokens", type=int, default=48, help="tokens per minibatch (4 pairs x 2 x 6 by default)")
    args = ap.parse_args(argv)
    logging.disable(logging.WARNING)

    impls = backends()
    theta, ctx, tok, w = kernel_workload(args.vocab, args.tokens)
    rows = []
    for name, impl in impls.items():
        lse = impl.logsumexp_rows(theta)
        grad = np.zeros_like(theta)
        rows.append((name, "logsumexp_rows", best_of(lambda: impl.logsumexp_rows(theta), args.repeat, 2000)))
        rows.append((name, "gather_logprobs", best_of(lambda: impl.gather_logprobs(theta, lse, ctx, tok), args.repeat, 2000)))
        rows.append(
            (name, "accumulate_grad", best_of(lambda: impl.accumulate_grad(theta, lse, ctx, tok, w, grad), args.repeat, 2000))
        )

    spec = SyntheticSpec()
    tr, ev = make_synthetic_dataset(spec, 0)
    ref = sft_initialize(spec.vocab_size, tr)
    saved = kernels._impl
    try:
        for name, impl in impls.items():
            kernels._impl = impl
            t = best_of(lambda: train(ref, tr, ev, LossConfig("DPO", gated=True), OptimizerConfig(), seed=0), 3, 1)
            rows.append((name, "train (5 epochs)", t))
    finally:
        kernels._impl = saved

    base = {op: t for name, op, t in rows if name == "python"}
    print(f"V={args.vocab}, tokens per batch={args.tokens}, best of {args.repeat}")
    print(f"{'backend':8s} {'operation':18s} {'time':>12s} {'speedup':>8s}")
    for name, op, t in rows:
        unit, scale = ("ms", 1e3) if t >= 1e-3 else ("us", 1e6)
        print(f"{name:8s} {op:18s} {t * scale:9.2f} {unit} {base[op] / t:7.1f}x")


if __name__ == "__main__":
    main()
