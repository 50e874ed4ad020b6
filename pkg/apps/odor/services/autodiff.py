"""
Dense float64 tensors with a recorded tape and reverse-mode gradients.

Usage::

    with Tape():
        loss = model_loss(params)
        backward(loss, params.values())

Operations on tensors that require gradients are recorded only while a
tape is active on the current thread. A tape is consumed by one
``backward`` call.
"""
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .exceptions import GradientError, NumericError, ShapeError

logger = logging.getLogger(__name__)

_state = threading.local()

ArrayLike = Union[np.ndarray, float, int, Sequence]
Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def _tape_stack() -> List['Tape']:
    if not hasattr(_state, 'tapes'):
        _state.tapes = []
        _state.grad_enabled = True
    return _state.tapes


def grad_enabled() -> bool:
    _tape_stack()
    return _state.grad_enabled


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording on this thread for the duration of the block"""
    _tape_stack()
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@dataclass
class Record:
    primitive: str
    output: 'Tensor'
    inputs: Tuple['Tensor', ...]
    backward: Backward


@dataclass
class Tape:
    """Ordered primitive applications of one forward pass"""
    records: List[Record] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> 'Tape':
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.records)


def current_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """N-dimensional float64 array with an optional gradient"""

    def __init__(self, values: ArrayLike, requires_grad: bool = False, name: str = ''):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Record] = None
        self.tape: Optional[Tape] = None
        self.name = name

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.size == 1 else float('nan')

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, key):
        return slice_tensor(self, key)

    @property
    def T(self) -> 'Tensor':
        return transpose(self)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _apply(primitive: str, values: np.ndarray, inputs: Sequence[Tensor], backward: Backward) -> Tensor:
    """Wrap a primitive's output and record it when any input needs a gradient"""
    out = Tensor(values)
    if not grad_enabled() or not any(t.requires_grad for t in inputs):
        return out
    tape = current_tape()
    if tape is None:
        return out
    out.requires_grad = True
    out.node = Record(primitive, out, tuple(inputs), backward)
    out.tape = tape
    tape.records.append(out.node)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes broadcasting added to reach ``shape``"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(primitive: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(primitive, a.shape, b.shape) from None


# -- arithmetic ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('add', a, b)
    return _apply('add', a.values + b.values, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('sub', a, b)
    return _apply('sub', a.values - b.values, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('mul', a, b)
    return _apply('mul', a.values * b.values, (a, b),
                  lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('div', a, b)
    return _apply('div', a.values / b.values, (a, b),
                  lambda g: (_unbroadcast(g / b.values, a.shape),
                             _unbroadcast(-g * a.values / b.values ** 2, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _apply('neg', -a.values, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul', a.shape, b.shape)

    def backward(g):
        if b.ndim == 1:
            return np.outer(g, b.values), a.values.T @ g
        return g @ b.values.T, a.values.T @ g

    return _apply('matmul', a.values @ b.values, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent`` for a constant exponent"""
    a = as_tensor(a)
    if exponent == 0:
        return _apply('power', np.ones_like(a.values), (a,), lambda g: (np.zeros_like(g),))
    values = a.values ** exponent
    return _apply('power', values, (a,), lambda g: (g * exponent * a.values ** (exponent - 1),))


# -- elementwise ---------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    values = np.exp(a.values)
    return _apply('exp', values, (a,), lambda g: (g * values,))


def expm1(a) -> Tensor:
    a = as_tensor(a)
    values = np.expm1(a.values)
    return _apply('expm1', values, (a,), lambda g: (g * (values + 1.0),))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _apply('log', np.log(a.values), (a,), lambda g: (g / a.values,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    values = expit(a.values)
    return _apply('sigmoid', values, (a,), lambda g: (g * values * (1.0 - values),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0
    return _apply('relu', np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.values > 0, 1.0, slope)
    return _apply('leaky_relu', a.values * scale, (a,), lambda g: (g * scale,))


def clamp_min(a, floor: float) -> Tensor:
    """``max(a, floor)``; entries at or below the floor pass no gradient"""
    a = as_tensor(a)
    mask = a.values > floor
    return _apply('clamp_min', np.where(mask, a.values, floor), (a,), lambda g: (g * mask,))


# -- shape ---------------------------------------------------------------

def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _apply('transpose', a.values.T, (a,), lambda g: (g.T,))


def reshape(a, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        values = a.values.reshape(shape)
    except ValueError:
        raise ShapeError('reshape', a.shape, tuple(shape)) from None
    return _apply('reshape', values, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError('concat', detail='no inputs')
    try:
        values = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError('concat', *(t.shape for t in tensors), detail=f'axis={axis}') from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _apply('concat', values, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def slice_tensor(a, key) -> Tensor:
    a = as_tensor(a)
    try:
        values = a.values[key]
    except IndexError as e:
        raise ShapeError('slice', a.shape, detail=str(e)) from None

    def backward(g):
        full = np.zeros_like(a.values)
        np.add.at(full, key, g)
        return (full,)

    return _apply('slice', np.array(values, dtype=np.float64), (a,), backward)


def gather(a, indices: np.ndarray) -> Tensor:
    """Rows of ``a`` selected by ``indices`` (repeats allowed)"""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= a.shape[0]):
        raise ShapeError('gather', a.shape, indices.shape, detail='row index out of range')

    def backward(g):
        full = np.zeros_like(a.values)
        np.add.at(full, indices, g)
        return (full,)

    return _apply('gather', a.values[indices], (a,), backward)


# -- reductions ----------------------------------------------------------

def sum(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _apply('sum', np.sum(a.values, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / max(count, 1))


# -- segment operations --------------------------------------------------

def _check_segments(primitive: str, a: Tensor, segment_ids: np.ndarray) -> np.ndarray:
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.ndim != 1 or a.ndim == 0 or segment_ids.shape[0] != a.shape[0]:
        raise ShapeError(primitive, a.shape, segment_ids.shape, detail='one segment id per row expected')
    return segment_ids


def _segment_total(values: np.ndarray, segment_ids: np.ndarray, num_segments: int) -> np.ndarray:
    out = np.zeros((num_segments,) + values.shape[1:], dtype=np.float64)
    np.add.at(out, segment_ids, values)
    return out


def segment_sum(a, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of ``a`` sharing a segment id; empty segments are zero"""
    a = as_tensor(a)
    segment_ids = _check_segments('segment_sum', a, segment_ids)
    values = _segment_total(a.values, segment_ids, num_segments)
    return _apply('segment_sum', values, (a,), lambda g: (g[segment_ids],))


def segment_mean(a, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    a = as_tensor(a)
    segment_ids = _check_segments('segment_mean', a, segment_ids)
    counts = np.maximum(np.bincount(segment_ids, minlength=num_segments), 1).astype(np.float64)
    counts = counts.reshape((num_segments,) + (1,) * (a.ndim - 1))
    return segment_sum(a, segment_ids, num_segments) / counts


def segment_max(a, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Row-wise maximum per segment; tied maxima share the gradient equally"""
    a = as_tensor(a)
    segment_ids = _check_segments('segment_max', a, segment_ids)
    values = np.full((num_segments,) + a.shape[1:], -np.inf)
    np.maximum.at(values, segment_ids, a.values)
    empty = np.isneginf(values)
    values[empty] = 0.0
    winners = (a.values == values[segment_ids]).astype(np.float64)
    ties = _segment_total(winners, segment_ids, num_segments)

    def backward(g):
        return (winners * g[segment_ids] / np.maximum(ties, 1.0)[segment_ids],)

    return _apply('segment_max', values, (a,), backward)


def segment_softmax(a, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Softmax over the rows of each segment, independently per column"""
    a = as_tensor(a)
    segment_ids = _check_segments('segment_softmax', a, segment_ids)
    peak = np.full((num_segments,) + a.shape[1:], -np.inf)
    np.maximum.at(peak, segment_ids, a.values)
    shifted = np.exp(a.values - peak[segment_ids])
    values = shifted / _segment_total(shifted, segment_ids, num_segments)[segment_ids]

    def backward(g):
        inner = _segment_total(g * values, segment_ids, num_segments)[segment_ids]
        return (values * (g - inner),)

    return _apply('segment_softmax', values, (a,), backward)


# -- layers --------------------------------------------------------------

def batch_norm(
    x,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-feature normalisation over rows.

    Training mode normalises with batch statistics and updates the running
    arrays in place (unbiased variance). Inference mode uses the running
    statistics and is an affine map.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError('batch_norm', x.shape, gamma.shape, beta.shape)
    n = x.shape[0]

    if training:
        mu = x.values.mean(axis=0)
        var = x.values.var(axis=0)
        unbiased = var * n / (n - 1) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean, running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mu) * inv_std
    values = gamma.values * xhat + beta.values

    def backward(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * gamma.values
        if training:
            dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv_std
        return dx, dgamma, dbeta

    return _apply('batch_norm', values, (x, gamma, beta), backward)


def bce_with_logits(logits, targets: np.ndarray) -> Tensor:
    """Elementwise max(x, 0) - x*y + log(1 + exp(-|x|))"""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ShapeError('bce_with_logits', logits.shape, targets.shape)
    x = logits.values
    values = np.maximum(x, 0.0) - x * targets + np.log1p(np.exp(-np.abs(x)))
    return _apply('bce_with_logits', values, (logits,), lambda g: (g * (expit(x) - targets),))


def dropout(a, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    if rng is None:
        raise GradientError("dropout in training mode needs a random generator")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _apply('dropout', a.values * mask, (a,), lambda g: (g * mask,))


# -- reverse mode --------------------------------------------------------

def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> None:
    """Populate ``.grad`` on every leaf tensor the loss depends on.

    Leaves in ``params`` that the loss does not reach get a zero gradient.
    The tape is freed afterwards; a second call raises ``GradientError``.
    """
    if loss.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None or loss.tape is None:
        raise GradientError("loss is not connected to a recorded tape")
    tape = loss.tape
    if tape.consumed:
        raise GradientError("tape already consumed by a previous backward call; run a new forward pass")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    leaves: Dict[int, Tensor] = {}
    leaf_grads: Dict[int, np.ndarray] = {}
    for record in reversed(tape.records):
        upstream = grads.pop(id(record.output), None)
        if upstream is None:
            continue
        for tensor, grad in zip(record.inputs, record.backward(upstream)):
            if grad is None or not tensor.requires_grad:
                continue
            if grad.shape != tensor.shape:
                grad = _unbroadcast(grad, tensor.shape)
            if tensor.node is None:
                leaves[id(tensor)] = tensor
                previous = leaf_grads.get(id(tensor))
                leaf_grads[id(tensor)] = grad if previous is None else previous + grad
            else:
                previous = grads.get(id(tensor))
                grads[id(tensor)] = grad if previous is None else previous + grad

    for key, tensor in leaves.items():
        tensor.grad = leaf_grads[key]
    for tensor in params or ():
        if id(tensor) not in leaves:
            tensor.grad = np.zeros_like(tensor.values)

    tape.consumed = True
    tape.records.clear()


# -- optimisation --------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update applied in place to ``params``"""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"Non-finite gradient for parameter {name}")
    state.step += 1
    t = state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError('adam_step', param.shape, grad.shape, detail=name)
        m = state.m.setdefault(name, np.zeros_like(param.values))
        v = state.v.setdefault(name, np.zeros_like(param.values))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        param.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Adam:
    """Adam over a fixed name -> tensor mapping"""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        grads = {name: p.grad for name, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()


# -- verification --------------------------------------------------------

def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-4,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Largest relative error between backward() and central differences.

    ``f`` rebuilds the scalar loss from the current parameter values.
    ``max_coords`` samples that many coordinates per parameter.
    """
    params = list(params)
    with Tape():
        loss = f()
        backward(loss, params)
    analytic = [p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)

    worst = 0.0
    with no_grad():
        for param, grad in zip(params, analytic):
            flat = param.values.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            for c in coords:
                original = flat[c]
                flat[c] = original + h
                upper = f().item()
                flat[c] = original - h
                lower = f().item()
                flat[c] = original
                numeric = (upper - lower) / (2.0 * h)
                exact = grad.reshape(-1)[c]
                error = abs(numeric - exact) / max(abs(numeric), abs(exact), 1e-8)
                worst = max(worst, error)
    return worst
