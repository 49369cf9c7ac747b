#!/usr/bin/env python
# -*- coding: utf-8 -*-

__version__ = "0.1.0"

__copyright__ = """
    pyMVCCL - Multi-view co-occurrence and consistency learning for paired views.

   (C) 2022 by Christoph Schueler <github.com/Christoph2,
                                        cpu12.gems@googlemail.com>

   All Rights Reserved

  This program is free software; you can redistribute it and/or modify
  it under the terms of the GNU General Public License as published by
  the Free Software Foundation; either version 2 of the License, or
  (at your option) any later version.

  This program is distributed in the hope that it will be useful,
  but WITHOUT ANY WARRANTY; without even the implied warranty of
  MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
  GNU General Public License for more details.

  You should have received a copy of the GNU General Public License along
  with this program; if not, write to the Free Software Foundation, Inc.,
  51 Franklin Street, Fifth Floor, Boston, MA 02110-1301 USA.
"""

"""Dense tensors with reverse-mode automatic differentiation.

All buffers are C-contiguous (row-major) ``numpy`` arrays. Every primitive
records itself (inputs, output, backward rule) on the output tensor; the
`GradTape` built from a scalar loss replays those records in reverse.
Tensors are never mutated by an op, gradients live in separate buffers.
"""

__all__ = [
    'Tensor', 'GradTape', 'Pooling', 'DimensionError', 'UsageError', 'NumericalError',
    'precision', 'defaultDtype', 'noGrad', 'gradEnabled', 'tensor', 'parameter',
    'matmul', 'conv2d', 'softmaxRows', 'poolGlobal', 'elementwise', 'backward',
    'add', 'sub', 'mul', 'div', 'scale', 'relu', 'sigmoid', 'sqrt', 'log', 'clip', 'maximum',
    'sumAll', 'mean', 'reshape', 'transpose', 'permute', 'getItem', 'concat', 'concatLastDim',
]

from contextlib import contextmanager
import enum
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from pyMVCCL.utils import formatShape


class DimensionError(ValueError): pass
class UsageError(ValueError): pass
class NumericalError(ArithmeticError): pass


class Pooling(enum.Enum):
    MAX = "max"
    AVG = "avg"


PRECISIONS = {
    'single': np.float32,
    'double': np.float64,
}

_PRECISION = {'dtype': np.float64}
_gradMode = threading.local()


def defaultDtype():
    return _PRECISION['dtype']

@contextmanager
def precision(mode):
    """Temporarily switch the dtype new tensors are created with ('single' or 'double')."""
    try:
        dtype = PRECISIONS[mode]
    except KeyError:
        raise UsageError("Unknown precision mode '{0}'.".format(mode))
    previous = _PRECISION['dtype']
    _PRECISION['dtype'] = dtype
    try:
        yield dtype
    finally:
        _PRECISION['dtype'] = previous

def gradEnabled():
    return getattr(_gradMode, 'enabled', True)

@contextmanager
def noGrad():
    """Evaluate without recording ops (per thread)."""
    previous = gradEnabled()
    _gradMode.enabled = False
    try:
        yield
    finally:
        _gradMode.enabled = previous


class Op(object):
    """One executed primitive: what produced `output` and how to push gradients back."""

    __slots__ = ('name', 'inputs', 'output', 'backwardFn')

    def __init__(self, name, inputs, output, backwardFn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backwardFn = backwardFn

    def __repr__(self):
        return "Op({0}, {1})".format(self.name, formatShape(self.output.shape))


class Tensor(object):

    __array_priority__ = 100

    def __init__(self, data, requiresGrad = False, dtype = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = defaultDtype()
        self.data = np.array(data, dtype = dtype, order = 'C')
        self.requiresGrad = bool(requiresGrad)
        self.grad = None
        self.op = None

    @classmethod
    def fromArray(cls, data, requiresGrad = False):
        """Wrap an array without copying it (the caller hands over ownership)."""
        result = cls.__new__(cls)
        result.data = _contiguous(data)
        result.requiresGrad = requiresGrad
        result.grad = None
        result.op = None
        return result

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def isLeaf(self):
        return self.op is None

    def item(self):
        if self.size != 1:
            raise UsageError("item() needs a single-element tensor, got shape {0}.".format(formatShape(self.shape)))
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor.fromArray(self.data.copy())

    def zeroGrad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def sum(self):
        return sumAll(self)

    def mean(self):
        return mean(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getItem(self, key)

    def __len__(self):
        return self.shape[0]

    def __repr__(self):
        return "Tensor(shape={0}, dtype={1}, requiresGrad={2})".format(
            formatShape(self.shape), self.dtype, self.requiresGrad
        )


def tensor(data, requiresGrad = False):
    return Tensor(data, requiresGrad = requiresGrad)

def parameter(data):
    return Tensor(data, requiresGrad = True)


##
##  Gradient tape.
##
class GradTape(object):
    """Ops reachable from a loss, recorded in topological order (inputs first)."""

    def __init__(self, ops):
        self.ops = ops

    @classmethod
    def fromLoss(cls, loss):
        order = []
        visited = set()
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            op = node.op
            if op is None:
                continue
            if expanded:
                order.append(op)
                continue
            if id(op) in visited:
                continue
            visited.add(id(op))
            stack.append((node, True))
            for inp in reversed(op.inputs):
                if inp.op is not None and id(inp.op) not in visited:
                    stack.append((inp, False))
        return cls(order)

    def __len__(self):
        return len(self.ops)

    def backward(self, loss):
        seed = np.ones_like(loss.data)
        if loss.op is None:
            _accumulate(loss, seed)
            return
        pending = {id(loss): seed}
        for op in reversed(self.ops):
            g = pending.pop(id(op.output), None)
            if g is None:
                continue
            for inp, ig in zip(op.inputs, op.backwardFn(g)):
                if ig is None or not inp.requiresGrad:
                    continue
                if not np.isfinite(ig).all():
                    raise NumericalError("Non-finite gradient flowing out of '{0}'.".format(op.name))
                if inp.op is None:
                    _accumulate(inp, ig)
                else:
                    key = id(inp)
                    pending[key] = pending[key] + ig if key in pending else ig


def _accumulate(leaf, g):
    g = np.asarray(g, dtype = leaf.dtype).reshape(leaf.shape)
    leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g

def backward(loss):
    """Populate ``grad`` of every leaf with ``requiresGrad`` reachable from `loss`.

    Gradients accumulate across calls until the leaves are reset.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = loss.shape if isinstance(loss, Tensor) else type(loss).__name__
        raise UsageError("backward() needs a scalar loss, got {0}.".format(shape))
    if not loss.requiresGrad:
        raise UsageError("Loss is not connected to any tensor requiring gradients.")
    GradTape.fromLoss(loss).backward(loss)


##
##  Recording helpers.
##
def _contiguous(data):
    # np.ascontiguousarray would promote 0-d results to shape (1, )
    data = np.asarray(data)
    if not data.flags.c_contiguous:
        data = data.copy(order = 'C')
    return data

def _record(name, data, inputs, backwardFn):
    data = _contiguous(data)
    if not np.isfinite(data).all():
        raise NumericalError("Non-finite values produced by '{0}'.".format(name))
    out = Tensor.fromArray(data)
    if gradEnabled() and any(t.requiresGrad for t in inputs):
        out.requiresGrad = True
        out.op = Op(name, tuple(inputs), out, backwardFn)
    return out

def _lift(value, like = None):
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else defaultDtype()
    return Tensor.fromArray(np.asarray(value, dtype = dtype))

def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    b = _lift(b)
    return _lift(a, b), b

def _broadcastShape(name, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError("{0}: shapes {1} and {2} are not broadcast-compatible.".format(
            name, formatShape(a.shape), formatShape(b.shape))
        )

def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis = 0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis = axis, keepdims = True)
    return g


##
##  Elementwise primitives.
##
def add(a, b):
    a, b = _pair(a, b)
    _broadcastShape('add', a, b)
    return _record('add', a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )

def sub(a, b):
    a, b = _pair(a, b)
    _broadcastShape('sub', a, b)
    return _record('sub', a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    )

def mul(a, b):
    a, b = _pair(a, b)
    _broadcastShape('mul', a, b)
    return _record('mul', a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))
    )

def div(a, b):
    a, b = _pair(a, b)
    _broadcastShape('div', a, b)
    return _record('div', a.data / b.data, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    )

def scale(x, factor):
    factor = float(factor)
    return _record('scale', x.data * x.dtype.type(factor), (x, ), lambda g: (g * x.dtype.type(factor), ))

def relu(x):
    mask = x.data > 0
    return _record('relu', np.where(mask, x.data, 0).astype(x.dtype), (x, ), lambda g: (g * mask, ))

def sigmoid(x):
    e = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _record('sigmoid', y, (x, ), lambda g: (g * y * (1 - y), ))

def sqrt(x):
    y = np.sqrt(x.data)

    def backwardFn(g):
        # subgradient 0 at the origin
        out = np.zeros_like(g)
        np.divide(0.5 * g, y, out = out, where = y > 0)
        return (out, )
    return _record('sqrt', y, (x, ), backwardFn)

def log(x):
    with np.errstate(divide = 'ignore', invalid = 'ignore'):
        y = np.log(x.data)
    return _record('log', y, (x, ), lambda g: (g / x.data, ))

def clip(x, low, high):
    inside = (x.data >= low) & (x.data <= high)
    return _record('clip', np.clip(x.data, low, high), (x, ), lambda g: (g * inside, ))

def maximum(x, floor):
    """Elementwise max against a constant; ties select `x`."""
    selected = x.data >= floor
    y = np.where(selected, x.data, x.dtype.type(floor))
    return _record('maximum', y, (x, ), lambda g: (g * selected, ))

def concat(tensors, axis = 0):
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat: nothing to concatenate.")
    ndim = tensors[0].ndim
    axis = axis % ndim if ndim else 0
    for t in tensors[1 : ]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise DimensionError("concat: shapes {0} and {1} disagree outside axis {2}.".format(
                formatShape(tensors[0].shape), formatShape(t.shape), axis)
            )
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[ : -1]
    return _record('concat', np.concatenate([t.data for t in tensors], axis = axis), tensors,
        lambda g: tuple(np.split(g, bounds, axis = axis))
    )

def concatLastDim(*tensors):
    return concat(tensors, axis = -1)

ELEMENTWISE = {
    'add': add,
    'mul': mul,
    'relu': relu,
    'sigmoid': sigmoid,
    'concat_lastdim': concatLastDim,
}

def elementwise(name, *args):
    try:
        fn = ELEMENTWISE[name]
    except KeyError:
        raise UsageError("Unknown elementwise op '{0}'.".format(name))
    return fn(*args)


##
##  Reductions and shape primitives.
##
def sumAll(x):
    return _record('sum', x.data.sum(), (x, ), lambda g: (np.broadcast_to(g, x.shape).copy(), ))

def mean(x):
    n = x.size
    return _record('mean', x.data.mean(), (x, ), lambda g: (np.broadcast_to(g / n, x.shape).copy(), ))

def reshape(x, shape):
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise DimensionError("reshape: cannot view {0} as {1}.".format(formatShape(x.shape), formatShape(shape)))
    return _record('reshape', y, (x, ), lambda g: (g.reshape(x.shape), ))

def transpose(x):
    if x.ndim != 2:
        raise DimensionError("transpose: expected a matrix, got {0}.".format(formatShape(x.shape)))
    return _record('transpose', x.data.T, (x, ), lambda g: (g.T, ))

def permute(x, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record('permute', x.data.transpose(axes), (x, ), lambda g: (g.transpose(inverse), ))

def getItem(x, key):
    def backwardFn(g):
        out = np.zeros_like(x.data)
        np.add.at(out, key, g)
        return (out, )
    return _record('getitem', np.array(x.data[key]), (x, ), backwardFn)


##
##  Linear algebra.
##
def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul: shapes {0} and {1} are not aligned.".format(
            formatShape(a.shape), formatShape(b.shape))
        )
    return _record('matmul', a.data @ b.data, (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g)
    )

def conv2d(x, kernels, stride = 1, padding = 0):
    """Cross-correlate a C_in x H x W input with C_out x C_in x k x k kernels."""
    if x.ndim != 3 or kernels.ndim != 4:
        raise DimensionError("conv2d: expected C x H x W input and 4-d kernels, got {0} and {1}.".format(
            formatShape(x.shape), formatShape(kernels.shape))
        )
    if stride < 1 or padding < 0:
        raise UsageError("conv2d: stride must be >= 1 and padding >= 0 (got {0}, {1}).".format(stride, padding))
    cIn, h, w = x.shape
    cOut, kIn, kh, kw = kernels.shape
    if kIn != cIn:
        raise DimensionError("conv2d: input {0} has {1} channels, kernels {2} expect {3}.".format(
            formatShape(x.shape), cIn, formatShape(kernels.shape), kIn)
        )
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise DimensionError("conv2d: kernels {0} larger than padded input {1}.".format(
            formatShape(kernels.shape), formatShape((cIn, hp, wp)))
        )
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    windows = sliding_window_view(xp, (kh, kw), axis = (1, 2))[ : , : : stride, : : stride]
    oh, ow = windows.shape[1], windows.shape[2]
    out = np.tensordot(kernels.data, windows, axes = ([1, 2, 3], [0, 3, 4]))

    def backwardFn(g):
        gk = np.tensordot(g, windows, axes = ([1, 2], [1, 2]))
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[ : , i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride] += \
                    np.tensordot(kernels.data[ : , : , i, j], g, axes = ([0], [0]))
        return gxp[ : , padding : padding + h, padding : padding + w], gk
    return _record('conv2d', out, (x, kernels), backwardFn)

def softmaxRows(x):
    if x.ndim != 2:
        raise DimensionError("softmaxRows: expected a matrix, got {0}.".format(formatShape(x.shape)))
    shifted = x.data - x.data.max(axis = 1, keepdims = True)
    e = np.exp(shifted)
    y = e / e.sum(axis = 1, keepdims = True)
    return _record('softmax', y, (x, ),
        lambda g: (y * (g - (g * y).sum(axis = 1, keepdims = True)), )
    )

def poolGlobal(u, mode = Pooling.MAX):
    """Channel-wise max or mean over all positions of an H x W x D map.

    Max routes its gradient to the first (lowest flat index) maximum.
    """
    try:
        mode = Pooling(mode)
    except ValueError:
        raise UsageError("Unknown pooling mode '{0}'.".format(mode))
    if u.ndim != 3:
        raise DimensionError("poolGlobal: expected H x W x D, got {0}.".format(formatShape(u.shape)))
    d = u.shape[2]
    flat = u.data.reshape(-1, d)
    if mode is Pooling.MAX:
        index = flat.argmax(axis = 0)
        channels = np.arange(d)

        def backwardFn(g):
            out = np.zeros_like(flat)
            out[index, channels] = g
            return (out.reshape(u.shape), )
        return _record('maxpool', flat[index, channels], (u, ), backwardFn)
    n = flat.shape[0]
    return _record('avgpool', flat.mean(axis = 0), (u, ),
        lambda g: (np.broadcast_to(g / n, flat.shape).reshape(u.shape).copy(), )
    )

