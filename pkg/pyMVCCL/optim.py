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

__all__ = ['Adam', 'ReduceLROnPlateau']

from collections import OrderedDict

import numpy as np

from pyMVCCL.logger import Logger
from pyMVCCL.tensor import NumericalError


class Adam(object):
    """Adam with bias correction; weight decay is an L2 term added to the gradient.

    Moments are kept per parameter name of the `ParameterStore`; parameters
    are updated in place so shared tensors stay shared.
    """

    def __init__(self, params, lr = 1e-4, weightDecay = 1e-6, beta1 = 0.9, beta2 = 0.999, eps = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.weightDecay = float(weightDecay)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = OrderedDict((name, np.zeros_like(p.data)) for name, p in params.items())
        self.v = OrderedDict((name, np.zeros_like(p.data)) for name, p in params.items())
        self.logger = Logger('Adam')

    def gradients(self):
        result = OrderedDict()
        for name, p in self.params.items():
            grad = np.zeros_like(p.data) if p.grad is None else p.grad
            if not np.isfinite(grad).all():
                raise NumericalError("Gradient of parameter '{0}' contains NaN or Inf.".format(name))
            result[name] = grad
        return result

    def step(self):
        grads = self.gradients()
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name] + self.weightDecay * p.data
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            p.data -= update.astype(p.dtype)
        self.logger.debug("step {0}: lr={1!r}".format(self.t, self.lr))

    def state(self):
        return self.t, self.m, self.v

    def loadState(self, t, m, v):
        for name, p in self.params.items():
            for label, moments in (('m', m), ('v', v)):
                if name not in moments or moments[name].shape != p.shape:
                    raise KeyError("Optimizer state '{0}' does not match parameter '{1}'.".format(label, name))
        self.t = int(t)
        self.m = OrderedDict((name, np.array(m[name], dtype = p.dtype)) for name, p in self.params.items())
        self.v = OrderedDict((name, np.array(v[name], dtype = p.dtype)) for name, p in self.params.items())


class ReduceLROnPlateau(object):
    """Multiply the learning rate by `factor` after `patience` epochs without improvement.

    An epoch improves when its loss beats the best so far by more than
    `threshold`; a reduction restarts the count.
    """

    def __init__(self, optimizer, factor = 0.1, patience = 2, threshold = 1e-6):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.best = None
        self.numBad = 0
        self.reductions = 0
        self.logger = Logger('ReduceLROnPlateau')

    def step(self, loss):
        """Record one validation loss; returns True if the learning rate was reduced."""
        loss = float(loss)
        if self.best is None or loss < self.best - self.threshold:
            self.best = loss
            self.numBad = 0
            return False
        self.numBad += 1
        if self.numBad < self.patience:
            return False
        self.optimizer.lr *= self.factor
        self.numBad = 0
        self.reductions += 1
        self.logger.info("validation loss stalled at {0:.6f}; learning rate reduced to {1:.3e}.".format(self.best, self.optimizer.lr))
        return True

    def state(self):
        return self.best, self.numBad, self.reductions

    def loadState(self, best, numBad, reductions):
        self.best = best
        self.numBad = int(numBad)
        self.reductions = int(reductions)
