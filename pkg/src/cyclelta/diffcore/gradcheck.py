"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable, Dict, Mapping, Optional

import numpy as np

from .tensor import Tensor, no_grad


def analytic_grads(fn: Callable[[], Tensor], params: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    for p in params.values():
        p.requires_grad = True
        p.zero_grad()
    fn().backward()
    return {
        k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for k, p in params.items()
    }


def per_param_errors(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    analytic: Optional[Mapping[str, np.ndarray]] = None,
    numeric_dtype=None,
) -> Dict[str, float]:
    """Worst relative error per named parameter.

    The relative error of one scalar is ``|a - n| / max(|a|, |n|, 1e-8)`` with
    ``n = (f(w + eps) - f(w - eps)) / (2 eps)``.

    ``numeric_dtype`` (e.g. ``np.longdouble``) re-evaluates ``fn`` with the
    parameters cast to that type for the finite differences only; ``fn`` must
    follow the parameter dtype. This keeps roundoff in ``f(w+eps) - f(w-eps)``
    from swamping gradients below ~1e-7.
    """
    if analytic is None:
        analytic = analytic_grads(fn, params)
    worst: Dict[str, float] = {}
    saved = {k: p.data for k, p in params.items()}
    if numeric_dtype is not None:
        for p in params.values():
            p.data = p.data.astype(numeric_dtype)
    try:
        _finite_differences(fn, params, eps, analytic, worst)
    finally:
        for k, p in params.items():
            p.data = saved[k]
    return worst


def _finite_differences(fn, params, eps, analytic, worst) -> None:
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            a = np.asarray(analytic[name]).reshape(-1)
            err = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = fn().data
                flat[i] = orig - eps
                fm = fn().data
                flat[i] = orig
                num = float((fp - fm) / (2.0 * eps))
                denom = max(abs(a[i]), abs(num), 1e-8)
                err = max(err, abs(a[i] - num) / denom)
            worst[name] = float(err)


def grad_check(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    analytic: Optional[Mapping[str, np.ndarray]] = None,
    numeric_dtype=None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` rebuilds the scalar loss from the current parameter values; it is
    called twice per scalar parameter. Pass ``analytic`` to check a given set
    of gradients instead of the tape's.
    """
    errs = per_param_errors(fn, params, eps=eps, analytic=analytic, numeric_dtype=numeric_dtype)
    return max(errs.values()) if errs else 0.0
