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

from collections import OrderedDict

import numpy as np

from pyMVCCL.logger import Logger
from pyMVCCL.tensor import DimensionError, Tensor, defaultDtype
from pyMVCCL.utils import formatShape

__all__ = ['Module', 'ParameterStore', 'parameterProperty', 'groupOf']


def parameterProperty(name, doc = None):
    def fget(self):
        return self.store[self.qualified(name)]

    def fset(self, value):
        self.store.assign(self.qualified(name), value)

    return property(fget = fget, fset = fset, doc = doc)


def groupOf(name):
    """Parameter group of a qualified name ('gcm.a2m.w1' -> 'gcm.a2m')."""
    parts = name.split('.')
    if parts[0] in ('gcm', 'lcm'):
        return '.'.join(parts[ : 2])
    return parts[0]


class ParameterStore(object):
    """Flat, ordered, uniquely named enumeration of all trainable tensors.

    Optimizer state and checkpoints are keyed by these names. Modules that
    share a parameter share the very same `Tensor` object.
    """

    def __init__(self):
        self._params = OrderedDict()

    def register(self, name, data):
        if name in self._params:
            raise ValueError("Parameter '{0}' registered twice.".format(name))
        param = Tensor(data, requiresGrad = True, dtype = np.asarray(data).dtype)
        self._params[name] = param
        return param

    def assign(self, name, value):
        param = self._params[name]
        value = np.array(value, dtype = param.dtype)
        if value.shape != param.shape:
            raise DimensionError("Parameter '{0}' has shape {1}, got {2}.".format(
                name, formatShape(param.shape), formatShape(value.shape))
            )
        param.data = value

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def items(self):
        return list(self._params.items())

    def values(self):
        return list(self._params.values())

    def zeroGrad(self):
        for param in self._params.values():
            param.zeroGrad()

    def groups(self):
        result = OrderedDict()
        for name in self._params:
            result.setdefault(groupOf(name), []).append(name)
        return result

    def copy(self):
        result = ParameterStore()
        for name, param in self._params.items():
            result.register(name, param.data.copy())
        return result

    def state(self):
        return OrderedDict((name, param.data.copy()) for name, param in self._params.items())


class Module(object):
    """Base of all network parts; parameters live in a shared `ParameterStore`.

    Subclasses list ``(name, shape, fanIn)`` triples in `parameterSpecs`;
    each name becomes a property reading the qualified store entry, the
    same way register tables become properties on peripheral modules.
    A `fanIn` of None means zero initialisation.
    """

    PREFIX = None

    def __init__(self, config, store, rng = None, prefix = None):
        self.config = config
        self._store = store
        if prefix is not None:
            self.PREFIX = prefix
        self.logger = Logger(self.__class__.__name__)
        for name, shape, fanIn in self.parameterSpecs():
            qualified = self.qualified(name)
            if qualified in store:
                if store[qualified].shape != tuple(shape):
                    raise DimensionError("Stored parameter '{0}' has shape {1}, module expects {2}.".format(
                        qualified, formatShape(store[qualified].shape), formatShape(shape))
                    )
            elif rng is None:
                raise KeyError("Parameter '{0}' missing from store.".format(qualified))
            else:
                store.register(qualified, initialValue(rng, shape, fanIn))
            if not isinstance(getattr(self.__class__, name, None), property):
                setattr(self.__class__, name, parameterProperty(name))

    def parameterSpecs(self):
        return ()

    def qualified(self, name):
        return "{0}.{1}".format(self.PREFIX, name)

    def parameters(self):
        return [(self.qualified(name), self._store[self.qualified(name)]) for name, _, _ in self.parameterSpecs()]

    def _getStore(self):
        return self._store

    store = property(_getStore)


def initialValue(rng, shape, fanIn):
    """He-style fan-in scaled normal draw (zeros for biases)."""
    if fanIn is None:
        return np.zeros(shape, dtype = defaultDtype())
    return (rng.normal(size = shape) * np.sqrt(2.0 / fanIn)).astype(defaultDtype())

