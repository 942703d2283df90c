"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: ops executed while a tape is active append their backward
closures to it, and `backward` replays the tape in reverse creation order
(which is a reverse topological order by construction).  Supported shapes
are scalars, vectors and matrices; the only implicit broadcasts are
scalar*tensor and adding a row vector (k,) to a matrix (B,k).  Constants may
be passed as plain numpy arrays; they are never recorded.
"""

from __future__ import annotations

import numpy as np


class AutodiffError(ValueError):
    """Shape mismatch or misuse of the tape."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Tape:
    """Recorded operations: (output, parents, vjp) in creation order."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _stack.append(self)
        return self

    def __exit__(self, *exc):
        _stack.pop()
        return False


_stack: list[Tape] = []


def _record(out: Tensor, parents, vjp) -> Tensor:
    if _stack:
        out.requires_grad = True
        _stack[-1].nodes.append((out, parents, vjp))
    return out


def _live(x) -> bool:
    return isinstance(x, Tensor) and x.requires_grad and bool(_stack)


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
    else:
        t.grad += g


def backward(tape: Tape, loss: Tensor, params=None):
    """Backpropagate from a scalar loss; gradients accumulate on .grad.

    When `params` is given, returns {tensor: gradient array} with zeros for
    parameters the loss never touched.
    """
    if loss.data.size != 1:
        raise AutodiffError(f"loss must be scalar, got shape {loss.data.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, parents, vjp in reversed(tape.nodes):
        if out.grad is None:
            continue
        grads = vjp(out.grad)
        for p, g in zip(parents, grads):
            if g is not None:
                _accumulate(p, g)
    if params is not None:
        return {p: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for p in params}
    return None


def _check_same_shape(a, b, opname):
    if a.shape != b.shape:
        raise AutodiffError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    da, db = _data(a), _data(b)
    bias = False
    if da.shape != db.shape:
        if db.ndim == 1 and da.ndim == 2 and da.shape[1] == db.shape[0]:
            bias = True
        elif db.ndim == 0 or da.ndim == 0:
            pass
        else:
            raise AutodiffError(f"add: shape mismatch {da.shape} vs {db.shape}")
    out = Tensor(da + db)
    la, lb = _live(a), _live(b)
    if not (la or lb):
        return out

    def vjp(g):
        ga = g if la else None
        if not lb:
            gb = None
        elif bias or (db.ndim == 0 and da.ndim > 0):
            gb = g.sum(axis=0) if bias else g.sum()
        else:
            gb = g
        if la and da.ndim == 0 and db.ndim > 0:
            ga = g.sum()
        return ga, gb

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    da, db = _data(a), _data(b)
    if da.shape != db.shape and da.ndim != 0 and db.ndim != 0:
        raise AutodiffError(f"sub: shape mismatch {da.shape} vs {db.shape}")
    out = Tensor(da - db)
    la, lb = _live(a), _live(b)
    if not (la or lb):
        return out

    def vjp(g):
        ga = (g.sum() if da.ndim == 0 and db.ndim > 0 else g) if la else None
        gb = (-(g.sum()) if db.ndim == 0 and da.ndim > 0 else -g) if lb else None
        return ga, gb

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    da, db = _data(a), _data(b)
    if da.shape != db.shape and da.ndim != 0 and db.ndim != 0:
        raise AutodiffError(f"mul: shape mismatch {da.shape} vs {db.shape}")
    out = Tensor(da * db)
    la, lb = _live(a), _live(b)
    if not (la or lb):
        return out

    def vjp(g):
        ga = gb = None
        if la:
            ga = g * db
            if da.ndim == 0 and ga.ndim > 0:
                ga = ga.sum()
        if lb:
            gb = g * da
            if db.ndim == 0 and gb.ndim > 0:
                gb = gb.sum()
        return ga, gb

    return _record(out, (a, b), vjp)


def scale(a, s: float) -> Tensor:
    da = _data(a)
    out = Tensor(da * s)
    if not _live(a):
        return out
    return _record(out, (a,), lambda g: (g * s,))


def matmul(a, b) -> Tensor:
    da, db = _data(a), _data(b)
    if da.ndim != 2 or db.ndim != 2 or da.shape[1] != db.shape[0]:
        raise AutodiffError(f"matmul: incompatible shapes {da.shape} and {db.shape}")
    out = Tensor(da @ db)
    la, lb = _live(a), _live(b)
    if not (la or lb):
        return out

    def vjp(g):
        return (g @ db.T if la else None, da.T @ g if lb else None)

    return _record(out, (a, b), vjp)


def tanh(a) -> Tensor:
    y = np.tanh(_data(a))
    out = Tensor(y)
    if not _live(a):
        return out
    return _record(out, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    da = _data(a)
    y = 1.0 / (1.0 + np.exp(-da))
    out = Tensor(y)
    if not _live(a):
        return out
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def pos(a) -> Tensor:
    """Positive part y^+; subgradient at 0 takes the right branch (slope 1)."""
    da = _data(a)
    out = Tensor(np.maximum(da, 0.0))
    if not _live(a):
        return out
    mask = (da >= 0.0).astype(np.float64)
    return _record(out, (a,), lambda g: (g * mask,))


def negpart(a) -> Tensor:
    """Negative part y^- = max(-y, 0); subgradient at 0 takes the right branch (0)."""
    da = _data(a)
    out = Tensor(np.maximum(-da, 0.0))
    if not _live(a):
        return out
    mask = -(da < 0.0).astype(np.float64)
    return _record(out, (a,), lambda g: (g * mask,))


def square(a) -> Tensor:
    da = _data(a)
    out = Tensor(da * da)
    if not _live(a):
        return out
    return _record(out, (a,), lambda g: (g * (2.0 * da),))


def tsum(a, axis=None) -> Tensor:
    da = _data(a)
    out = Tensor(da.sum(axis=axis))
    if not _live(a):
        return out

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, da.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), da.shape).copy(),)

    return _record(out, (a,), vjp)


def mean(a) -> Tensor:
    da = _data(a)
    out = Tensor(da.mean())
    if not _live(a):
        return out
    inv = 1.0 / da.size
    return _record(out, (a,), lambda g: (np.broadcast_to(g * inv, da.shape).copy(),))


def concat(parts, axis: int = 1) -> Tensor:
    datas = [_data(p) for p in parts]
    out = Tensor(np.concatenate(datas, axis=axis))
    lives = [_live(p) for p in parts]
    if not any(lives):
        return out
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        slc = [slice(None)] * g.ndim
        outg = []
        for i, live in enumerate(lives):
            if live:
                slc[axis] = slice(offsets[i], offsets[i + 1])
                outg.append(g[tuple(slc)])
            else:
                outg.append(None)
        return outg

    return _record(out, tuple(parts), vjp)


def slice_cols(a, lo: int, hi: int) -> Tensor:
    da = _data(a)
    if da.ndim != 2:
        raise AutodiffError(f"slice_cols expects a matrix, got shape {da.shape}")
    out = Tensor(da[:, lo:hi])
    if not _live(a):
        return out

    def vjp(g):
        full = np.zeros_like(da)
        full[:, lo:hi] = g
        return (full,)

    return _record(out, (a,), vjp)


def finite_difference_check(make_loss, params, eps: float = 1e-6,
                            samples: int = 5, seed: int = 0) -> float:
    """Worst relative error between tape gradients and central differences.

    ``make_loss()`` must rebuild the scalar loss from the current parameter
    values (it is called fresh for every probe).  For each parameter a few
    coordinates are sampled and perturbed by +/- eps.
    """
    gen = np.random.default_rng(seed)

    def loss_value():
        for p in params:
            p.grad = None
        with Tape() as tape:
            loss = make_loss()
        return float(loss.data), tape, loss

    _, tape, loss = loss_value()
    grads = backward(tape, loss, params=params)
    grads = {p: g.copy() for p, g in grads.items()}
    worst = 0.0
    for p in params:
        flat = p.data.ravel()
        n = min(samples, flat.size)
        for idx in gen.choice(flat.size, size=n, replace=False):
            old = flat[idx]
            flat[idx] = old + eps
            up, _, _ = loss_value()
            flat[idx] = old - eps
            down, _, _ = loss_value()
            flat[idx] = old
            fd = (up - down) / (2.0 * eps)
            g = grads[p].ravel()[idx]
            rel = abs(fd - g) / max(abs(fd), abs(g), 1e-8)
            worst = max(worst, rel)
    return worst


def reshape(a, shape) -> Tensor:
    da = _data(a)
    out = Tensor(da.reshape(shape))
    if not _live(a):
        return out
    return _record(out, (a,), lambda g: (g.reshape(da.shape),))
