"""Timing comparison of the numpy and compiled kernel backends.

Runs each hot kernel on training-shaped inputs, then a full
forward/backward/update step of the desk-scale model under each backend.

    python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import os
import time

import numpy as np

from trajsynth.nn.kernels import available_backends, reference

try:
    from trajsynth.nn.kernels import _fastcore
except ImportError:
    _fastcore = None

B, H, T, D, V = 64, 2, 64, 32, 363   # desk-scale training shapes


def timeit(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1000  # ms


def kernel_cases(impl, rng):
    scores = rng.normal(size=(B, H, T, T))
    probs = impl.causal_softmax(scores)
    dprobs = np.ascontiguousarray(rng.normal(size=scores.shape))
    logits = np.ascontiguousarray(rng.normal(size=(B * T, V)))
    targets = rng.integers(0, V, size=B * T).astype(np.int64)
    weights = np.ones(B * T)
    _, xprobs = impl.softmax_xent(logits, targets, weights)
    xprobs = np.ascontiguousarray(xprobs)
    x2d = np.ascontiguousarray(rng.normal(size=(B * T, D)))
    gamma, beta = np.ones(D), np.zeros(D)
    _, xhat, rstd = impl.layernorm(x2d, gamma, beta)
    xhat = np.ascontiguousarray(xhat)
    h4 = rng.normal(size=(B, T, 4 * D))
    p = rng.normal(size=100_000)
    g = rng.normal(size=100_000)
    m = np.zeros(100_000)
    v = np.zeros(100_000)
    return {
        "causal_softmax": lambda: impl.causal_softmax(scores),
        "causal_softmax_grad": lambda: impl.causal_softmax_grad(probs, dprobs),
        "softmax_xent": lambda: impl.softmax_xent(logits, targets, weights),
        "softmax_xent_grad": lambda: impl.softmax_xent_grad(xprobs, targets, weights),
        "gelu": lambda: impl.gelu(h4),
        "gelu_grad": lambda: impl.gelu_grad(h4, h4),
        "layernorm": lambda: impl.layernorm(x2d, gamma, beta),
        "layernorm_grad": lambda: impl.layernorm_grad(x2d, xhat, rstd, gamma),
        "adamw_update": lambda: impl.adamw_update(p, g, m, v, 3, 1e-4, 0.9,
                                                  0.95, 1e-8, 0.1),
    }


def bench_kernels(repeats):
    impls = [("numpy", reference)]
    if _fastcore is not None:
        impls.append(("compiled", _fastcore))
    rng = np.random.default_rng(0)
    cases = {name: kernel_cases(impl, rng) for name, impl in impls}
    names = list(cases[impls[0][0]].keys())
    header = f"{'kernel':<22}" + "".join(f"{n:>12}" for n, _ in impls)
    if len(impls) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for kernel in names:
        times = [timeit(cases[n][kernel], repeats) for n, _ in impls]
        row = f"{kernel:<22}" + "".join(f"{t:>10.3f}ms" for t in times)
        if len(times) == 2 and times[1] > 0:
            row += f"{times[0] / times[1]:>9.2f}x"
        print(row)


def bench_train_step(repeats):
    from trajsynth.nn.masking import cross_entropy_with_grad
    from trajsynth.nn.model import ModelConfig, Transformer
    from trajsynth.nn.optim import AdamW

    print(f"\nfull training step ({B}x{T} tokens, 2 layers, d_model {D}, "
          f"vocab {V}) under backend {os.environ.get('TRAJSYNTH_KERNELS', 'auto')!r}:")
    rng = np.random.default_rng(1)
    model = Transformer(ModelConfig(vocab_size=V, block_size=T, dropout=0.1,
                                    seed=0), rng)
    opt = AdamW(lr=1e-4)
    toks = rng.integers(0, V, size=(B, T))
    tgts = rng.integers(0, V, size=(B, T))
    drop = np.random.default_rng(2)

    def step():
        logits = model.forward(toks, train=True, rng=drop)
        _, dlogits = cross_entropy_with_grad(logits, tgts)
        model.zero_grads()
        model.backward(dlogits)
        opt.step(model)

    print(f"  {timeit(step, max(3, repeats // 10)):.1f} ms/step")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=30)
    args = ap.parse_args()
    print("available backends:", ", ".join(available_backends()))
    bench_kernels(args.repeats)
    bench_train_step(args.repeats)
