"""Central finite-difference checks for the autodiff engine (run in float64)."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-6,
                 coords: Sequence[tuple] | None = None) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place (all or only ``coords``)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = coords if coords is not None else list(np.ndindex(x.shape))
    for idx in it:
        old = x[idx]
        x[idx] = old + eps
        up = f()
        x[idx] = old - eps
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, np.float64).ravel(), np.asarray(b, np.float64).ravel()
    scale = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def check(fn: Callable[..., ad.Tensor], *arrays: np.ndarray, eps: float = 1e-6) -> float:
    """Largest relative error between analytic and numeric gradients of the scalar ``fn(*tensors)``.

    Non-scalar outputs are reduced with a fixed random projection so every
    output element contributes.
    """
    with ad.precision(np.float64):
        arrays = [np.array(a, dtype=np.float64) for a in arrays]
        leaves = [ad.Tensor(a, requires_grad=True) for a in arrays]
        probe: list[np.ndarray] = []

        def scalar(out: ad.Tensor) -> ad.Tensor:
            if out.data.size == 1:
                return ad.reshape(out, ())
            if not probe:
                probe.append(np.random.default_rng(0).standard_normal(out.shape))
            return ad.sum_(out * probe[0])

        scalar(fn(*leaves)).backward()
        worst = 0.0
        for leaf, arr in zip(leaves, arrays):
            def f(leaf=leaf):
                with ad.no_grad():
                    return float(scalar(fn(*leaves)).data)

            num = numeric_grad(f, leaf.data, eps)
            ana = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
            worst = max(worst, relative_error(ana, num))
        return worst


def check_params(loss_fn: Callable[[], ad.Tensor], params: dict[str, ad.Tensor], n: int = 20,
                 seed: int = 0, eps: float = 1e-6) -> float:
    """Relative error over ``n`` randomly chosen scalar parameter entries of a model loss."""
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    names = sorted(params)
    picks = [(names[i], tuple(int(rng.integers(s)) for s in params[names[i]].shape))
             for i in rng.integers(len(names), size=n)]
    ana, num = [], []
    for name, idx in picks:
        p = params[name]

        def f():
            with ad.no_grad():
                return float(loss_fn().data)

        num.append(numeric_grad(f, p.data, eps, [idx])[idx])
        ana.append(0.0 if p.grad is None else float(p.grad[idx]))
    return relative_error(np.array(ana), np.array(num))
