"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only what the neural decoder needs: broadcasting arithmetic, affine maps,
sigmoid/tanh, concatenation, stacking, slicing, gathers along an axis, batch
normalization, a fused LSTM recurrence and a logit-form binary cross entropy.

Every op records its parents and a closure mapping the output gradient to
parent gradients.  ``Tensor.backward`` walks the graph once in reverse
topological order; leaf tensors accumulate (``+=``) into ``.grad`` so a
parameter used several times receives the sum of its contributions.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True
_COUNTER = None


@dataclass
class OpCounter:
    """Multiply-accumulates and nonlinearity evaluations executed by forward ops."""

    macs: int = 0
    activations: int = 0


@contextlib.contextmanager
def count_ops():
    """Tally forward-pass work of every op run inside the block."""
    global _COUNTER
    prev, _COUNTER = _COUNTER, OpCounter()
    try:
        yield _COUNTER
    finally:
        _COUNTER = prev


def _tally(macs: int = 0, activations: int = 0) -> None:
    if _COUNTER is not None:
        _COUNTER.macs += int(macs)
        _COUNTER.activations += int(activations)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.name = name

    # -- graph construction ----------------------------------------------------------------

    @classmethod
    def from_op(cls, data, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        """Wrap an op result; ``backward(g)`` returns one gradient (or None) per parent."""
        out = cls(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # -- backward --------------------------------------------------------------------------

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # -- arithmetic ------------------------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor.from_op(
            a.data + b.data, (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor.from_op(
            a.data - b.data, (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        )

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = a.data * b.data
        _tally(macs=out.size)
        return Tensor.from_op(
            out, (a, b),
            lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        )

    __rmul__ = __mul__

    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor.from_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self
        return Tensor.from_op(a.data.reshape(*shape), (a,), lambda g: (g.reshape(a.shape),))

    def __getitem__(self, idx):
        a = self

        def back(g):
            out = np.zeros_like(a.data)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor.from_op(a.data[idx], (a,), back)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


# --- elementwise ------------------------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    _tally(activations=s.size)
    return Tensor.from_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    _tally(activations=t.size)
    return Tensor.from_op(t, (x,), lambda g: (g * (1.0 - t * t),))


# --- structural -------------------------------------------------------------------------------


def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``y = x W^T + b`` over the last axis; ``W`` is ``[D_out, D_in]``."""
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"affine: input width {x.shape[-1]} != weight in-dim {W.shape[1]}")
    if b is not None and b.shape != (W.shape[0],):
        raise ValueError(f"affine: bias shape {b.shape} != ({W.shape[0]},)")
    y = x.data @ W.data.T
    _tally(macs=y.size * W.shape[1])
    if b is not None:
        y = y + b.data

    def back(g):
        x2 = x.data.reshape(-1, x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ W.data
        gW = g2.T @ x2
        gb = g2.sum(axis=0) if b is not None else None
        return (gx, gW, gb) if b is not None else (gx, gW)

    parents = (x, W, b) if b is not None else (x, W)
    return Tensor.from_op(y, parents, back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=ax))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=ax), tensors, back)


def stack(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def back(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return Tensor.from_op(out, tensors, back)


def take(x: Tensor, index: np.ndarray, axis: int = -1) -> Tensor:
    """Gather ``x`` along ``axis``; used for (de)interleaving sequences."""
    index = np.asarray(index)
    ax = axis % x.ndim

    def back(g):
        out = np.zeros_like(x.data)
        sl = [slice(None)] * x.ndim
        sl[ax] = index
        np.add.at(out, tuple(sl), g)
        return (out,)

    return Tensor.from_op(np.take(x.data, index, axis=ax), (x,), back)


# --- batch normalization ----------------------------------------------------------------------


@dataclass
class BatchNormState:
    """Per-feature affine parameters and running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, n_features: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        return cls(
            gamma=parameter(np.ones(n_features, dtype=dtype), "bn.gamma"),
            beta=parameter(np.zeros(n_features, dtype=dtype), "bn.beta"),
            running_mean=np.zeros(n_features, dtype=dtype),
            running_var=np.ones(n_features, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )


def batchnorm(x: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Normalize the last axis with statistics pooled over all leading axes."""
    D = x.shape[-1]
    if state.gamma.shape != (D,):
        raise ValueError(f"batchnorm: {D} features but state has {state.gamma.shape[0]}")
    xs = x.data.reshape(-1, D)
    N = xs.shape[0]
    gamma, beta = state.gamma, state.beta
    if training:
        if N < 2:
            raise ValueError("batchnorm: need at least 2 samples per feature in training mode")
        mu = xs.mean(axis=0)
        var = xs.var(axis=0)
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mu).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var + m * var * N / (N - 1)).astype(
            state.running_var.dtype
        )
    else:
        mu = state.running_mean
        var = state.running_var
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (xs - mu) * inv
    y = (xhat * gamma.data + beta.data).reshape(x.shape)
    _tally(macs=xs.size)  # per-element scale and shift, folded

    def back(g):
        g2 = g.reshape(-1, D)
        dgamma = (g2 * xhat).sum(axis=0)
        dbeta = g2.sum(axis=0)
        dxhat = g2 * gamma.data
        if training:
            dx = inv / N * (N * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv
        return dx.reshape(x.shape), dgamma, dbeta

    return Tensor.from_op(y, (x, gamma, beta), back)


# --- LSTM recurrence --------------------------------------------------------------------------


def lstm(x: Tensor, W: Tensor, b_x: Tensor, b_h: Tensor, reverse: bool = False) -> Tensor:
    """Single-direction LSTM over ``x[B, T, D]``, returning ``h[B, T, H]``.

    ``W`` is ``[4H, H + D]`` acting on ``[h_{t-1}, x_t]`` with gate row blocks
    ordered (input, forget, candidate, output).  ``b_x`` and ``b_h`` are the
    input- and recurrent-side biases (both ``[4H]``).  The initial hidden and
    cell states are zero.  With ``reverse`` the sequence is processed from the
    last step to the first; outputs stay aligned with the input positions.
    """
    B, T, D = x.shape
    H = W.shape[0] // 4
    if W.shape != (4 * H, H + D):
        raise ValueError(f"lstm: weight shape {W.shape} != ({4 * H}, {H + D})")
    Wh = W.data[:, :H]
    Wx = W.data[:, H:]
    dt = x.data.dtype
    zx = x.data @ Wx.T + (b_x.data + b_h.data)
    steps = range(T - 1, -1, -1) if reverse else range(T)
    # gate pre-activations plus c = f c + i g and h = o tanh(c)
    _tally(macs=B * T * (4 * H * (H + D) + 3 * H), activations=B * T * 5 * H)

    gates = np.empty((T, B, 4 * H), dtype=dt)  # activated i, f, g, o
    cs = np.empty((T, B, H), dtype=dt)
    tcs = np.empty((T, B, H), dtype=dt)
    hs = np.empty((B, T, H), dtype=dt)
    h = np.zeros((B, H), dtype=dt)
    c = np.zeros((B, H), dtype=dt)
    for t in steps:
        z = zx[:, t] + h @ Wh.T
        a = gates[t]
        a[:, : 2 * H] = _sigmoid(z[:, : 2 * H])
        a[:, 2 * H: 3 * H] = np.tanh(z[:, 2 * H: 3 * H])
        a[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
        c = a[:, H: 2 * H] * c + a[:, :H] * a[:, 2 * H: 3 * H]
        tc = np.tanh(c)
        h = a[:, 3 * H:] * tc
        cs[t] = c
        tcs[t] = tc
        hs[:, t] = h

    def back(gh):
        dz_all = np.empty((B, T, 4 * H), dtype=dt)
        dh_next = np.zeros((B, H), dtype=dt)
        dc_next = np.zeros((B, H), dtype=dt)
        dWh = np.zeros_like(Wh)
        order = list(steps)
        for pos in range(T - 1, -1, -1):
            t = order[pos]
            a = gates[t]
            i, f, gg, o = a[:, :H], a[:, H: 2 * H], a[:, 2 * H: 3 * H], a[:, 3 * H:]
            c_prev = cs[order[pos - 1]] if pos > 0 else np.zeros((B, H), dtype=dt)
            h_prev = hs[:, order[pos - 1]] if pos > 0 else np.zeros((B, H), dtype=dt)
            dh = gh[:, t] + dh_next
            tc = tcs[t]
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dz_all[:, t]
            dz[:, :H] = dc * gg * i * (1.0 - i)
            dz[:, H: 2 * H] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * H: 3 * H] = dc * i * (1.0 - gg * gg)
            dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dWh += dz.T @ h_prev
            dh_next = dz @ Wh
        dz2 = dz_all.reshape(-1, 4 * H)
        dWx = dz2.T @ x.data.reshape(-1, D)
        dx = dz_all @ Wx
        db = dz2.sum(axis=0)
        return dx, np.concatenate([dWh, dWx], axis=1), db, db.copy()

    return Tensor.from_op(hs, (x, W, b_x, b_h), back)


# --- losses -----------------------------------------------------------------------------------


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross entropy of ``sigmoid(logits)`` against 0/1 targets.

    Evaluated as ``max(z, 0) - y z + log1p(exp(-|z|))``; ``log(sigmoid)`` is
    never formed.
    """
    z = logits.data
    y = np.asarray(targets, dtype=z.dtype)
    n = z.size
    loss = np.maximum(z, 0) - y * z + np.log1p(np.exp(-np.abs(z)))
    s = _sigmoid(z)
    return Tensor.from_op(
        np.asarray(loss.mean(), dtype=z.dtype), (logits,), lambda g: (g * (s - y) / n,)
    )


# --- verification -----------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple = ()
    n_probes: int = 0
    details: list = field(default_factory=list, repr=False)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def grad_check(
    fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    n_probes: int = 10,
    h: float = 1e-5,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare backprop gradients of scalar ``fn()`` with central differences.

    Probes ``n_probes`` random coordinates of every parameter (all of them when
    the parameter is smaller).  The relative error of a coordinate is
    ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps derivatives that are
    zero up to rounding from reporting spurious errors.  Parameters should be
    float64.
    """
    rng = rng or np.random.default_rng(0)
    params = list(params)
    for p in params:
        p.grad = None
    fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    report = GradCheckReport(0.0)
    with no_grad():
        for pi, p in enumerate(params):
            flat = p.data.reshape(-1)
            k = min(n_probes, flat.size)
            coords = rng.choice(flat.size, size=k, replace=False)
            for c in coords:
                orig = flat[c]
                flat[c] = orig + h
                fp = float(fn().data)
                flat[c] = orig - h
                fm = float(fn().data)
                flat[c] = orig
                num = (fp - fm) / (2 * h)
                ana = float(analytic[pi].reshape(-1)[c])
                err = abs(ana - num) / max(abs(ana), abs(num), floor)
                report.details.append((p.name or f"param{pi}", int(c), ana, num, err))
                report.n_probes += 1
                if err > report.max_rel_error:
                    report.max_rel_error = err
                    report.worst = (p.name or f"param{pi}", int(c), ana, num)
    for p in params:
        p.grad = None
    return report
