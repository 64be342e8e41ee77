"""Forward ops with their reverse rules.

Layout conventions: sequences are ``channels x time`` (one column per frame),
vectors are 1-D. Each op validates shapes and raises ``DimensionError``.
"""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from ..errors import DimensionError, InputError
from .tensor import Tensor, as_tensor, make_node

PROB_FLOOR = 1e-12
NORM_FLOOR = 1e-8

ArrayLike = Union[Tensor, np.ndarray, float]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


# ---------------------------------------------------------------- elementwise


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data
    return make_node(
        A * B,
        (a, b),
        lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)),
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return make_node(y, (x,), lambda g: (g * y * (1.0 - y),))


def total(x: Tensor) -> Tensor:
    shape = x.shape
    return make_node(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    return make_node(
        np.asarray(x.data.mean()), (x,), lambda g: (np.broadcast_to(g / n, shape),)
    )


# ---------------------------------------------------------------- structural


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """numpy ``@`` semantics including 1-D operands and leading batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data
    if A.shape[-1] != B.shape[0 if B.ndim == 1 else -2]:
        raise DimensionError(f"matmul: {A.shape} @ {B.shape}")

    def back(g):
        a2 = A[None, :] if A.ndim == 1 else A
        b2 = B[:, None] if B.ndim == 1 else B
        g2 = g
        if A.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if B.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        if A.ndim == 1:
            ga = ga[..., 0, :]
        if B.ndim == 1:
            gb = gb[..., :, 0]
        return _unbroadcast(ga, A.shape), _unbroadcast(gb, B.shape)

    return make_node(A @ B, (a, b), back)


def linear(W: Tensor, x: Tensor, b: Tensor = None) -> Tensor:
    """``W x + b``; for a matrix ``x`` the bias is added to every column."""
    y = matmul(W, x)
    if b is None:
        return y
    if y.data.ndim == 2:
        b = reshape(b, (-1, 1))
    return add(y, b)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    src = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: tuple = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.data.ndim)))
    inv = tuple(np.argsort(axes))
    return make_node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(parts: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make_node(np.concatenate([p.data for p in parts], axis=axis), parts, back)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_node(np.stack([p.data for p in parts], axis=axis), parts, back)


def take(x: Tensor, index) -> Tensor:
    """Basic or integer-array indexing ``x[index]``."""
    shape, dtype = x.shape, x.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, index, g)
        return (out,)

    return make_node(x.data[index], (x,), back)


# ---------------------------------------------------------------- normalizers


def softmax(x: Tensor, axis: int = 0) -> Tensor:
    """Max-subtracted softmax along ``axis`` (columns for ``classes x time``)."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return make_node(
        y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    )


def l2_normalize(x: Tensor, axis: int = 0, floor: float = NORM_FLOOR) -> Tensor:
    X = x.data
    n = np.sqrt((X * X).sum(axis=axis, keepdims=True))
    d = np.maximum(n, floor)
    y = X / d
    live = n > floor

    def back(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        return (np.where(live, g - y * proj, g) / d,)

    return make_node(y, (x,), back)


# ---------------------------------------------------------------- losses


def cross_entropy(probs: Tensor, target) -> Tensor:
    """``-log p[target]`` with the probability floored at 1e-12.

    ``probs`` is a vector with an int target, or ``C x T`` with one target per
    column, in which case the per-column losses are averaged.
    """
    P = probs.data
    tgt = np.asarray(target, dtype=np.int64)
    C = P.shape[0]
    if tgt.size and (tgt.min() < 0 or tgt.max() >= C):
        raise InputError(f"target index out of range [0, {C})")
    if P.ndim == 1:
        if tgt.ndim != 0:
            raise DimensionError("vector probs need a scalar target")
        cols = None
        p = P[tgt]
        n = 1
    else:
        if tgt.shape != (P.shape[1],):
            raise DimensionError(f"{P.shape[1]} columns vs {tgt.shape} targets")
        cols = np.arange(P.shape[1])
        p = P[tgt, cols]
        n = P.shape[1]
    pc = np.maximum(p, PROB_FLOOR)
    loss = -np.log(pc).sum() / n

    def back(g):
        out = np.zeros_like(P)
        dp = np.where(p >= PROB_FLOOR, -1.0 / pc, 0.0) * (g / n)
        if cols is None:
            out[tgt] = dp
        else:
            out[tgt, cols] = dp
        return (out,)

    return make_node(np.asarray(loss, dtype=P.dtype), (probs,), back)


def mse(pred: Tensor, target) -> Tensor:
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise DimensionError(f"mse: {pred.shape} vs {target.shape}")
    diff = pred.data - target
    n = diff.size
    return make_node(
        np.asarray((diff * diff).sum() / n, dtype=pred.dtype),
        (pred,),
        lambda g: (2.0 * g * diff / n,),
    )


# ---------------------------------------------------------------- convolutions


def conv1x1(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Per-frame affine map ``W x[:, t] + b`` over a ``K_in x T`` input."""
    if x.data.ndim != 2 or W.shape[1] != x.shape[0] or b.shape != (W.shape[0],):
        raise DimensionError(f"conv1x1: input {x.shape}, W {W.shape}, b {b.shape}")
    X, Wd = x.data, W.data
    out = Wd @ X + b.data[:, None]
    return make_node(
        out, (x, W, b), lambda g: (Wd.T @ g, g @ X.T, g.sum(axis=1))
    )


def dilated_conv1d(x: Tensor, W: Tensor, b: Tensor, dilation: int) -> Tensor:
    """Centred kernel-3 convolution with zero padding ``dilation`` on both sides.

    ``out[k, t] = b[k] + sum_j sum_c W[j, k, c] * x[c, t + (j - 1) * dilation]``.
    """
    if dilation < 1:
        raise DimensionError("dilation must be >= 1")
    if x.data.ndim != 2 or W.data.ndim != 3 or W.shape[0] != 3 or W.shape[2] != x.shape[0]:
        raise DimensionError(f"dilated_conv1d: input {x.shape}, W {W.shape}")
    if b.shape != (W.shape[1],):
        raise DimensionError(f"dilated_conv1d: bias {b.shape} for {W.shape[1]} outputs")
    X, Wd = x.data, W.data
    T = X.shape[1]
    d = dilation
    Xp = np.zeros((X.shape[0], T + 2 * d), dtype=X.dtype)
    Xp[:, d : d + T] = X
    out = b.data[:, None] + Wd[0] @ Xp[:, 0:T] + Wd[1] @ X + Wd[2] @ Xp[:, 2 * d : 2 * d + T]

    def back(g):
        gW = np.stack([g @ Xp[:, j * d : j * d + T].T for j in range(3)])
        gXp = np.zeros_like(Xp)
        for j in range(3):
            gXp[:, j * d : j * d + T] += Wd[j].T @ g
        return gXp[:, d : d + T], gW, g.sum(axis=1)

    return make_node(out, (x, W, b), back)


# ---------------------------------------------------------------- recurrent


def _check_gru(in_dim: int, hid: int, W: Tensor, U: Tensor, b: Tensor) -> None:
    if W.shape != (3 * hid, in_dim) or U.shape != (3 * hid, hid) or b.shape != (3 * hid,):
        raise DimensionError(
            f"GRU weights W{W.shape} U{U.shape} b{b.shape} for input {in_dim}, hidden {hid}"
        )


def gru_cell(x: Tensor, h: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    """One GRU update. ``W``, ``U``, ``b`` stack the update, reset and candidate rows.

    z = sigma(Wz x + Uz h + bz), r = sigma(Wr x + Ur h + br),
    c = tanh(Wc x + Uc (r*h) + bc), h' = (1 - z) h + z c.
    """
    x, h = as_tensor(x), as_tensor(h)
    X, Hp = x.data, h.data
    if X.ndim != 1 or Hp.ndim != 1:
        raise DimensionError("gru_cell expects vector input and state")
    n = Hp.shape[0]
    _check_gru(X.shape[0], n, W, U, b)
    Wd, Ud = W.data, U.data
    ax = Wd @ X + b.data
    ah = Ud[: 2 * n] @ Hp
    z = _sigmoid(ax[:n] + ah[:n])
    r = _sigmoid(ax[n : 2 * n] + ah[n:])
    rh = r * Hp
    c = np.tanh(ax[2 * n :] + Ud[2 * n :] @ rh)
    out = (1.0 - z) * Hp + z * c

    def back(g):
        dz = g * (c - Hp)
        dac = g * z * (1.0 - c * c)
        drh = Ud[2 * n :].T @ dac
        daz = dz * z * (1.0 - z)
        dar = drh * Hp * r * (1.0 - r)
        da = np.concatenate([daz, dar, dac])
        dh = g * (1.0 - z) + drh * r + Ud[: 2 * n].T @ da[: 2 * n]
        dU = np.concatenate(
            [np.outer(da[: 2 * n], Hp), np.outer(dac, rh)], axis=0
        )
        return Wd.T @ da, dh, np.outer(da, X), dU, da

    return make_node(out, (x, h, W, U, b), back)


def gru_sequence(X: Tensor, h0: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    """Run ``gru_cell`` over the columns of ``X`` (``in x T``); returns ``hidden x T`` states.

    Single tape node: the input projection is one matmul and the backward pass
    is an explicit loop through time.
    """
    X, h0 = as_tensor(X), as_tensor(h0)
    Xd = X.data
    if Xd.ndim != 2 or Xd.shape[1] < 1:
        raise DimensionError("gru_sequence expects a non-empty in x T input")
    n = h0.shape[0]
    _check_gru(Xd.shape[0], n, W, U, b)
    Wd, Ud = W.data, U.data
    T = Xd.shape[1]
    AX = Wd @ Xd + b.data[:, None]
    dt = np.result_type(Xd, Wd)
    S = np.empty((n, T), dtype=dt)
    Hprev = np.empty((n, T), dtype=dt)
    Z = np.empty((n, T), dtype=dt)
    R = np.empty((n, T), dtype=dt)
    Cc = np.empty((n, T), dtype=dt)
    Uzr, Uc = Ud[: 2 * n], Ud[2 * n :]
    h = h0.data
    for t in range(T):
        Hprev[:, t] = h
        a = AX[:, t]
        ah = Uzr @ h
        z = _sigmoid(a[:n] + ah[:n])
        r = _sigmoid(a[n : 2 * n] + ah[n:])
        c = np.tanh(a[2 * n :] + Uc @ (r * h))
        h = (1.0 - z) * h + z * c
        Z[:, t], R[:, t], Cc[:, t], S[:, t] = z, r, c, h

    def back(G):
        DA = np.empty((3 * n, T), dtype=dt)
        dh_next = np.zeros(n, dtype=dt)
        UcT, UzrT = Uc.T, Uzr.T
        for t in range(T - 1, -1, -1):
            g = G[:, t] + dh_next
            z, r, c, hp = Z[:, t], R[:, t], Cc[:, t], Hprev[:, t]
            dac = g * z * (1.0 - c * c)
            drh = UcT @ dac
            daz = g * (c - hp) * z * (1.0 - z)
            dar = drh * hp * r * (1.0 - r)
            DA[:n, t], DA[n : 2 * n, t], DA[2 * n :, t] = daz, dar, dac
            dh_next = g * (1.0 - z) + drh * r + UzrT @ DA[: 2 * n, t]
        dU = np.concatenate([DA[: 2 * n] @ Hprev.T, DA[2 * n :] @ (R * Hprev).T], axis=0)
        return Wd.T @ DA, dh_next, DA @ Xd.T, dU, DA.sum(axis=1)

    return make_node(S, (X, h0, W, U, b), back)
