"""Minimal numerical substrate: 2-D tensors with reverse-mode gradients over a
fixed op vocabulary, an Adam optimizer, finite-difference checking, and the
statistics helpers (softmax, Spearman, Welch's t-test) the rest of the package
relies on.

Everything is float64 and strictly two-dimensional; scalars are (1, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyInputError,
    NumericError,
    OptimizerStateError,
    ShapeError,
    StatisticsError,
)


class Tensor:
    """A 2-D value in the computation graph.

    ``requires_grad`` marks trainable leaves; op outputs inherit the flag from
    their parents. ``backward`` accumulates into ``grad`` (zero it between
    optimization steps; ``adam_step`` does this for you).
    """

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad: bool = False):
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(1, -1)
        elif v.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {v.shape}")
        self.values = v
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def t(self) -> "Tensor":
        return transpose(self)

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _op(values, parents, backward_fn) -> Tensor:
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] > 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] > 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    return _op(a.values + b.values, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _op(a.values - b.values, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _op(a.values * b.values, (a, b),
               lambda g: (_unbroadcast(g * b.values, a.shape),
                          _unbroadcast(g * a.values, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    return _op(a.values / b.values, (a, b),
               lambda g: (_unbroadcast(g / b.values, a.shape),
                          _unbroadcast(-g * a.values / (b.values * b.values), b.shape)))


def neg(a: Tensor) -> Tensor:
    return _op(-a.values, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul mismatch: {a.shape} @ {b.shape}")
    return _op(a.values @ b.values, (a, b),
               lambda g: (g @ b.values.T, a.values.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _op(a.values.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, rows: int, cols: int) -> Tensor:
    shape = a.shape
    return _op(a.values.reshape(rows, cols), (a,), lambda g: (g.reshape(shape),))


def log(a: Tensor) -> Tensor:
    return _op(np.log(a.values), (a,), lambda g: (g / a.values,))


def exp(a: Tensor) -> Tensor:
    out_values = np.exp(a.values)
    return _op(out_values, (a,), lambda g: (g * out_values,))


def sqrt(a: Tensor) -> Tensor:
    out_values = np.sqrt(a.values)
    return _op(out_values, (a,), lambda g: (g * 0.5 / out_values,))


def sigmoid(a: Tensor) -> Tensor:
    out_values = 1.0 / (1.0 + np.exp(-a.values))
    return _op(out_values, (a,), lambda g: (g * out_values * (1.0 - out_values),))


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0.0
    return _op(a.values * mask, (a,), lambda g: (g * mask,))


def clip_min(a: Tensor, lo: float) -> Tensor:
    """Elementwise max(a, lo); gradient passes only where a > lo."""
    mask = a.values > lo
    return _op(np.maximum(a.values, lo), (a,), lambda g: (g * mask,))


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    """Sum to (1, 1) when axis is None, else keepdims sum along the axis."""
    if axis is None:
        values = a.values.sum().reshape(1, 1)
        return _op(values, (a,), lambda g: (np.broadcast_to(g, a.shape),))
    values = a.values.sum(axis=axis, keepdims=True)
    return _op(values, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows by index (duplicates allowed); backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        out = np.zeros_like(a.values)
        np.add.at(out, idx, g)
        return (out,)

    return _op(a.values[idx], (a,), backward)


def segment_sum_rows(a: Tensor, seg: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows that share a segment id into one output row per segment."""
    seg = np.asarray(seg, dtype=np.int64)
    values = np.zeros((num_segments, a.shape[1]))
    np.add.at(values, seg, a.values)
    return _op(values, (a,), lambda g: (g[seg],))


def segment_col_max(a: Tensor, seg: np.ndarray, num_segments: int) -> tuple[Tensor, np.ndarray]:
    """Per-segment, per-column max. Returns the (num_segments, cols) tensor and
    the row index attaining each max (first row on ties); gradients route to
    those rows only."""
    seg = np.asarray(seg, dtype=np.int64)
    n, m = a.shape
    values = np.full((num_segments, m), -np.inf)
    argrow = np.zeros((num_segments, m), dtype=np.int64)
    for r in range(n):
        s = seg[r]
        better = a.values[r] > values[s]
        argrow[s][better] = r
        values[s][better] = a.values[r][better]

    def backward(g):
        out = np.zeros_like(a.values)
        for s in range(num_segments):
            for c in range(m):
                out[argrow[s, c], c] += g[s, c]
        return (out,)

    return _op(values, (a,), backward), argrow


def hstack(parts: list[Tensor]) -> Tensor:
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _op(np.hstack([p.values for p in parts]), tuple(parts), backward)


def vstack(parts: list[Tensor]) -> Tensor:
    heights = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + heights)

    def backward(g):
        return tuple(g[offsets[i]:offsets[i + 1], :] for i in range(len(parts)))

    return _op(np.vstack([p.values for p in parts]), tuple(parts), backward)


def sparse_matmul(a_sparse, b: Tensor) -> Tensor:
    """Multiply a constant scipy.sparse matrix by a dense tensor."""
    return _op(a_sparse @ b.values, (b,), lambda g: (a_sparse.T @ g,))


def row_unit_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """L2-normalize each row; rows with norm <= eps become zero rows (guard)."""
    norms = np.sqrt((a.values * a.values).sum(axis=1, keepdims=True))
    good = norms > eps
    safe = np.where(good, norms, 1.0)
    out_values = np.where(good, a.values / safe, 0.0)

    def backward(g):
        dot = (out_values * g).sum(axis=1, keepdims=True)
        return (np.where(good, (g - out_values * dot) / safe, 0.0),)

    return _op(out_values, (a,), backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    shifted = logits.values - logits.values.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=1, keepdims=True)
    nll = -(shifted[np.arange(n), labels] - np.log(expv.sum(axis=1)))
    value = nll.mean().reshape(1, 1)

    def backward(g):
        grad = probs.copy()
        grad[np.arange(n), labels] -= 1.0
        return (grad * (float(g.reshape(())) / n),)

    return _op(value, (logits,), backward)


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into ``grad`` of every requires_grad tensor
    reachable from ``output``. ``output`` must be scalar."""
    if output.values.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    order = []
    visited = set()
    stack = [(output, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    grads = {id(output): np.ones((1, 1))}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient encountered")
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward_fn is None:
            continue
        parent_grads = node._backward_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def finite_difference_check(f, params: list[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` re-evaluates the scalar objective from the current parameter values.
    """
    for p in params:
        p.zero_grad()
    out = f()
    if not np.isfinite(out.values).all():
        raise NumericError("objective is non-finite")
    backward(out)
    analytic = [np.zeros_like(p.values) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, g_ad in zip(params, analytic):
        base = p.values
        flat = base.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            f_plus = f().item()
            flat[i] = keep - eps
            f_minus = f().item()
            flat[i] = keep
            g_fd = (f_plus - f_minus) / (2.0 * eps)
            rel = abs(g_ad.reshape(-1)[i] - g_fd) / (abs(g_fd) + 1e-8)
            worst = max(worst, rel)
    return worst


@dataclass
class AdamState:
    """Adam moments plus hyperparameters; one slot per parameter tensor."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(params: list[Tensor], lr: float = 0.01, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
    state.m = [np.zeros_like(p.values) for p in params]
    state.v = [np.zeros_like(p.values) for p in params]
    return state


def adam_step(params: list[Tensor], state: AdamState) -> None:
    """One Adam update (classic L2 weight decay added to the gradient).

    Parameters are updated in place and their grads are zeroed.
    """
    if len(state.m) != len(params):
        raise OptimizerStateError("state does not match the parameter list")
    for p in params:
        if p.grad is None:
            raise OptimizerStateError("parameter has no gradient; run backward first")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for i, p in enumerate(params):
        g = p.grad + state.weight_decay * p.values
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.values = p.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = None


def softmax(v: np.ndarray) -> np.ndarray:
    """Max-subtracted stable softmax of a 1-D vector."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise EmptyInputError("softmax of an empty vector")
    e = np.exp(v - v.max())
    return e / e.sum()


def _rank_average_ties(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    n = len(x)
    while i < n:
        j = i
        while j + 1 < n and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_abs(x, y) -> float:
    """Absolute Spearman rank correlation with average-rank tie handling.

    Returns 0.0 when either vector is constant (correlation undefined).
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ShapeError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ShapeError("need at least 2 observations")
    rx = _rank_average_ties(x)
    ry = _rank_average_ties(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sx = float(dx @ dx)
    sy = float(dy @ dy)
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return abs(float(dx @ dy) / math.sqrt(sx * sy))


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    # modified Lentz's method
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-14:
            break
    return h


def _betainc_regularized(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log(1.0 - x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0.0:
        raise StatisticsError("degrees of freedom must be positive")
    x = df / (df + t * t)
    return _betainc_regularized(0.5 * df, 0.5, x)


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p_value: float
    significant: bool
    alpha: float


def welch_ttest(a, b, alpha: float = 0.05) -> TTestResult:
    """Two-sided Welch's t-test with Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size < 2 or b.size < 2:
        raise StatisticsError("each sample needs at least 2 observations")
    va = float(a.var(ddof=1))
    vb = float(b.var(ddof=1))
    if va == 0.0 and vb == 0.0:
        raise StatisticsError("both samples have zero variance")
    sa, sb = va / a.size, vb / b.size
    t = (float(a.mean()) - float(b.mean())) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa * sa / (a.size - 1) + sb * sb / (b.size - 1))
    p = student_t_two_sided_p(t, df)
    return TTestResult(t=t, df=df, p_value=p, significant=p < alpha, alpha=alpha)
