"""Shared test utilities: the finite-difference gradient oracle."""

import numpy as np

from neuralgraph import autodiff as ad


def finite_diff_grad(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued fn at x, float64."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-6)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def check_grad(build_loss, params: dict[str, np.ndarray], h: float = 1e-5) -> float:
    """Compare autodiff grads of build_loss(tensors) against finite differences.

    build_loss receives {name: Tensor} and returns a scalar Tensor. Returns the
    worst relative error across all parameters.
    """
    tensors = {k: ad.Tensor(v.copy(), requires_grad=True) for k, v in params.items()}
    loss = build_loss(tensors)
    ad.backward(loss)
    worst = 0.0
    for name, base in params.items():
        def scalar_fn(x, _name=name):
            local = {k: ad.Tensor(v.copy()) for k, v in params.items()}
            local[_name] = ad.Tensor(x)
            return float(build_loss(local).data)

        fd = finite_diff_grad(scalar_fn, base.copy(), h=h)
        got = tensors[name].grad
        if got is None:
            got = np.zeros_like(base)  # param unused by this loss; oracle must agree
        worst = max(worst, rel_err(got, fd))
    return worst
