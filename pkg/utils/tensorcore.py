"""A small reverse-mode differentiation engine over dense float64 arrays.

Every primitive returns a Tensor that remembers its parents and a function
mapping the output gradient to one gradient per parent (its exact
vector-Jacobian product).  Calling backward() on a scalar walks the recorded
computation once, in reverse topological order.

Values are numpy arrays in double precision.  The recorded computation
belongs to the thread that built it; Parameters may be read from several
threads while no optimizer step is running.

"""

from collections import OrderedDict
import contextlib
import logging
import math
import threading

import numpy as np
from scipy import special

logger = logging.getLogger('tensorcore')


class InvalidShapeError(ValueError):
    "Operand shapes are incompatible, or a scalar was required."


class DegenerateMaskError(ValueError):
    "A masked softmax row has no unmasked entry."


class NonFiniteError(FloatingPointError):
    "A primitive produced NaN or infinity while debug checks were on."


class OptimizerAbortError(FloatingPointError):
    """A gradient handed to the optimizer was not finite.

    The offending parameter's name is in the 'name' attribute.

    """
    def __init__(self, name):
        super().__init__('non-finite gradient for parameter %s' % name)
        self.name = name


_flags = threading.local()


def _flag(key, default):
    return getattr(_flags, key, default)


def set_deterministic_eval(flag):
    """Turn dropout and drop-path into no-ops (the default) or back on."""
    _flags.deterministic_eval = bool(flag)


def deterministic_eval():
    return _flag('deterministic_eval', True)


def set_debug_checks(flag):
    """Check every primitive's output for NaN/inf."""
    _flags.debug_checks = bool(flag)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording anything for backward()."""
    previous = _flag('grad_enabled', True)
    _flags.grad_enabled = False
    try:
        yield
    finally:
        _flags.grad_enabled = previous


class Tensor:
    """A value in a recorded computation.

    data is a float64 numpy array.  Leaves created with requires_grad=True
    receive their gradient in .grad after backward().

    """
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        return 'Tensor(shape=%s, op=%s)' % (self.shape, self._op)

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

    def backward(self):
        return backward(self)


class Parameter(Tensor):
    """A named learnable leaf.  grad starts at zero."""

    def __init__(self, name, data):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return 'Parameter(%s, shape=%s)' % (self.name, self.shape)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _record(op, data, parents, backward_fn):
    out = Tensor(data)
    out._op = op
    if _flag('debug_checks', False) and not np.all(np.isfinite(out.data)):
        raise NonFiniteError('%s produced a non-finite value' % op)
    if _flag('grad_enabled', True) and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise InvalidShapeError('%s: cannot broadcast %s with %s' % (op, a.shape, b.shape)) from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast('add', a, b)
    return _record('add', a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast('sub', a, b)
    return _record('sub', a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast('mul', a, b)
    return _record('mul', a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast('div', a, b)
    out = a.data / b.data
    return _record('div', out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    a = as_tensor(a)
    return _record('neg', -a.data, (a,), lambda g: (-g,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record('exp', out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _record('log', np.log(a.data), (a,), lambda g: (g / a.data,))


def matmul(a, b):
    """Matrix product with numpy batching rules.  A 1-D left operand is
    treated as a single row.

    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1:
        if b.ndim != 2:
            raise InvalidShapeError('matmul: vector times %d-D array' % b.ndim)
        return reshape(matmul(reshape(a, (1, -1)), b), (b.shape[1],))
    if a.ndim < 2 or b.ndim < 2:
        raise InvalidShapeError('matmul: operands must be at least 2-D')
    if a.shape[-1] != b.shape[-2]:
        raise InvalidShapeError('matmul: %s @ %s' % (a.shape, b.shape))

    def backward_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _record('matmul', a.data @ b.data, (a, b), backward_fn)


def transpose(a, axes=None):
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = np.argsort(axes)
    return _record('transpose', np.transpose(a.data, axes), (a,),
                   lambda g: (np.transpose(g, inverse),))


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise InvalidShapeError('reshape: %s to %s' % (a.shape, shape)) from None
    return _record('reshape', out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise InvalidShapeError('concat: shapes %s' % [t.shape for t in tensors]) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record('concat', out, tuple(tensors),
                   lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(a, indices, axis=0):
    """Gather slices along an axis with a 1-D index array; repeated indices
    accumulate gradient.

    """
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1:
        raise InvalidShapeError('take: indices must be 1-D, got shape %s' % (indices.shape,))

    def backward_fn(g):
        grad = np.zeros_like(a.data)
        np.add.at(np.moveaxis(grad, axis, 0), indices, np.moveaxis(g, axis, 0))
        return (grad,)
    return _record('take', np.take(a.data, indices, axis=axis), (a,), backward_fn)


def sum(a, axis=None, keepdims=False):  # pylint: disable=redefined-builtin
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _record('sum', out, (a,), backward_fn)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[k] for k in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def gelu(a):
    """Exact GELU, x * Phi(x)."""
    a = as_tensor(a)
    cdf = special.ndtr(a.data)
    pdf = np.exp(-0.5 * a.data ** 2) / math.sqrt(2 * math.pi)
    return _record('gelu', a.data * cdf, (a,), lambda g: (g * (cdf + a.data * pdf),))


def layer_norm(a, eps=1e-5):
    """Normalize over the last axis to zero mean and unit variance."""
    a = as_tensor(a)
    centred = a.data - a.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centred ** 2).mean(axis=-1, keepdims=True) + eps)
    normed = centred * inv_std

    def backward_fn(g):
        g_mean = g.mean(axis=-1, keepdims=True)
        proj = (g * normed).mean(axis=-1, keepdims=True)
        return (inv_std * (g - g_mean - normed * proj),)
    return _record('layer_norm', normed, (a,), backward_fn)


def _softmax_backward(out, axis):
    return lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),)


def softmax(a, axis=-1):
    a = as_tensor(a)
    out = special.softmax(a.data, axis=axis)
    return _record('softmax', out, (a,), _softmax_backward(out, axis))


def masked_softmax(a, mask, axis=-1):
    """Softmax restricted to entries where mask is true; masked entries are
    exactly zero.  Every slice along axis needs one unmasked entry.

    """
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    if not np.all(mask.any(axis=axis)):
        raise DegenerateMaskError('masked_softmax: a row has every entry masked')
    out = special.softmax(np.where(mask, a.data, -np.inf), axis=axis)
    return _record('masked_softmax', out, (a,), _softmax_backward(out, axis))


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    out = special.log_softmax(a.data, axis=axis)
    probs = np.exp(out)
    return _record('log_softmax', out, (a,),
                   lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits, targets):
    """Mean negative log-likelihood of integer targets under row-wise
    softmax of a (rows x classes) logit matrix.

    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise InvalidShapeError('cross_entropy: logits %s, targets %s'
                                % (logits.shape, targets.shape))
    rows = np.arange(len(targets))
    log_probs = special.log_softmax(logits.data, axis=-1)
    loss = -log_probs[rows, targets].mean()

    def backward_fn(g):
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        return (g * grad / len(targets),)
    return _record('cross_entropy', np.asarray(loss), (logits,), backward_fn)


def dropout(a, rate, rng):
    """Inverted dropout; identity under deterministic_eval or rate 0."""
    a = as_tensor(a)
    if rate <= 0 or deterministic_eval():
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _record('dropout', a.data * keep, (a,), lambda g: (g * keep,))


def drop_path(a, rate, rng):
    """Drop a whole residual branch with probability rate."""
    a = as_tensor(a)
    if rate <= 0 or deterministic_eval():
        return a
    scale = float(rng.random() >= rate) / (1.0 - rate)
    return _record('drop_path', a.data * scale, (a,), lambda g: (g * scale,))


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss, params=None):
    """Back-propagate from a scalar loss.

    Leaf gradients are accumulated into .grad.  If params (a ParameterSet)
    is given, returns a dict name -> gradient covering every parameter;
    parameters the loss does not reach get zeros.

    """
    loss = as_tensor(loss)
    if loss.data.size != 1:
        raise InvalidShapeError('backward needs a scalar loss, got shape %s' % (loss.shape,))
    if loss.requires_grad:
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(_topological_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
    if params is None:
        return None
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()}


class ParameterSet:
    """Ordered name -> Parameter mapping."""

    def __init__(self):
        self._params = OrderedDict()

    def add(self, name, data):
        if name in self._params:
            raise KeyError('duplicate parameter %s' % name)
        param = Parameter(name, data)
        self._params[name] = param
        return param

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def numel(self):
        return int(np.sum([p.data.size for p in self._params.values()]))

    def zero_grad(self):
        for param in self._params.values():
            param.zero_grad()

    def state_dict(self):
        return OrderedDict((name, p.data.copy()) for name, p in self._params.items())

    def load_state_dict(self, arrays):
        for name, param in self._params.items():
            if name not in arrays:
                raise KeyError('missing parameter %s' % name)
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != param.shape:
                raise InvalidShapeError('parameter %s: expected %s, got %s'
                                        % (name, param.shape, value.shape))
            param.data = value.copy()


def adamw_step(value, grad, m, v, step, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """One AdamW update (decoupled weight decay) of a single array.

    step counts from 1.  Returns the new (value, m, v).

    """
    beta1, beta2 = betas
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** step)
    v_hat = v / (1 - beta2 ** step)
    value = value * (1 - lr * weight_decay)
    value = value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return value, m, v


class AdamW:
    """AdamW over a ParameterSet, with moment buffers that start at zero."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        for name, param in self.params.items():
            if not np.all(np.isfinite(param.grad)):
                raise OptimizerAbortError(name)
        self.step_count += 1
        for name, param in self.params.items():
            param.data, self.m[name], self.v[name] = adamw_step(
                param.data, param.grad, self.m[name], self.v[name], self.step_count,
                self.lr, self.betas, self.eps, self.weight_decay)

    def state_arrays(self):
        arrays = OrderedDict()
        for name in self.params:
            arrays['adam.m/' + name] = self.m[name]
            arrays['adam.v/' + name] = self.v[name]
        return arrays

    def load_state_arrays(self, arrays, step_count):
        for name in self.params:
            self.m[name] = np.array(arrays['adam.m/' + name], dtype=np.float64)
            self.v[name] = np.array(arrays['adam.v/' + name], dtype=np.float64)
        self.step_count = step_count


def clip_grad_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns the norm before clipping.

    """
    total = math.sqrt(np.sum([np.sum(p.grad ** 2) for p in params.values()]))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for param in params.values():
            param.grad = param.grad * scale
    return total


def numerical_gradient(fn, array, indices, step=1e-5):
    """Central finite differences of a scalar fn() w.r.t. selected entries
    of array, which is perturbed in place and restored.

    """
    estimates = []
    for index in indices:
        original = array[index]
        array[index] = original + step
        upper = fn()
        array[index] = original - step
        lower = fn()
        array[index] = original
        estimates.append((upper - lower) / (2 * step))
    return np.array(estimates)
