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

"""Central finite-difference verification of analytic gradients."""

__all__ = ['GradcheckResult', 'GradcheckReport', 'OracleInvalidError', 'finiteDiffCheck', 'checkOp', 'relativeError']

from collections import namedtuple, OrderedDict

import numpy as np

from pyMVCCL.logger import Logger
from pyMVCCL.tensor import Tensor, UsageError, backward, mul, noGrad, sumAll


class OracleInvalidError(RuntimeError): pass


# gradients below the floor compare absolutely
DENOMINATOR_FLOOR = 1e-8

GradcheckResult = namedtuple('GradcheckResult', 'name size checked skipped maxRelError maxAbsError passed')


def relativeError(a, b):
    return abs(a - b) / max(abs(a), abs(b), DENOMINATOR_FLOOR)


class GradcheckReport(object):

    def __init__(self, results, tol):
        self.results = list(results)
        self.tol = tol

    def __iter__(self):
        return iter(self.results)

    def __len__(self):
        return len(self.results)

    def __getitem__(self, name):
        for result in self.results:
            if result.name == name:
                return result
        raise KeyError(name)

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    @property
    def maxRelError(self):
        return max([r.maxRelError for r in self.results] or [0.0])

    def grouped(self, groupOf):
        """Aggregate per-parameter rows into one row per group name."""
        groups = OrderedDict()
        for r in self.results:
            groups.setdefault(groupOf(r.name), []).append(r)
        rows = []
        for name, members in groups.items():
            rows.append(GradcheckResult(
                name,
                sum(m.size for m in members),
                sum(m.checked for m in members),
                sum(m.skipped for m in members),
                max(m.maxRelError for m in members),
                max(m.maxAbsError for m in members),
                all(m.passed for m in members),
            ))
        return GradcheckReport(rows, self.tol)

    def __str__(self):
        lines = ["{0:<32} {1:>7} {2:>7} {3:>12} {4}".format('parameter', 'checked', 'skipped', 'max rel err', 'status')]
        for r in self.results:
            lines.append("{0:<32} {1:>7d} {2:>7d} {3:>12.3e} {4}".format(
                r.name, r.checked, r.skipped, r.maxRelError, 'ok' if r.passed else 'FAIL')
            )
        return '\n'.join(lines)


def _namedParameters(params):
    if hasattr(params, 'items'):
        return list(params.items())
    result = []
    for idx, item in enumerate(params):
        if isinstance(item, Tensor):
            result.append(("p{0}".format(idx), item))
        else:
            result.append(tuple(item))
    return result

def _evaluate(f):
    with noGrad():
        return f().item()

def _slopes(f, p, original, j, step, base):
    """One-sided slopes and central estimate of element `j` at `step`."""
    shifted = original.copy()
    shifted.flat[j] += step
    p.data = shifted
    fPlus = _evaluate(f)
    shifted = original.copy()
    shifted.flat[j] -= step
    p.data = shifted
    fMinus = _evaluate(f)
    p.data = original
    return (fPlus - base) / step, (base - fMinus) / step, (fPlus - fMinus) / (2.0 * step)

def _isKink(forward, backwardSlope, kinkTol):
    jump = abs(forward - backwardSlope)
    return jump > 1e-6 and jump > kinkTol * max(abs(forward), abs(backwardSlope))

def finiteDiffCheck(f, params, step = 1e-4, tol = 1e-4, kinkTol = 0.1):
    """Compare analytic gradients of ``f()`` with central differences.

    `f` takes no arguments and returns a scalar `Tensor` computed from the
    current values of `params`. Elements whose one-sided slopes disagree by
    more than `kinkTol` (relative) sit on a relu / max-pool kink and are
    skipped; they are counted in the report.
    """
    logger = Logger('Gradcheck')
    if step <= 0:
        raise UsageError("Finite-difference step must be positive, got {0}.".format(step))
    named = _namedParameters(params)
    base = _evaluate(f)
    if _evaluate(f) != base:
        raise OracleInvalidError("Function under test is not deterministic.")

    for _, p in named:
        p.zeroGrad()
    loss = f()
    if loss.requiresGrad:
        backward(loss)
    analytic = OrderedDict((name, np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64)) for name, p in named)

    results = []
    for name, p in named:
        original = p.data
        grad = analytic[name].ravel()
        maxRel = maxAbs = 0.0
        checked = skipped = 0
        try:
            for j in range(p.size):
                forward, backwardSlope, numeric = _slopes(f, p, original, j, step, base)
                if _isKink(forward, backwardSlope, kinkTol):
                    skipped += 1
                    continue
                rel = relativeError(grad[j], numeric)
                maxRel = max(maxRel, rel)
                maxAbs = max(maxAbs, abs(grad[j] - numeric))
                checked += 1
        finally:
            p.data = original
        passed = maxRel < tol
        if not passed:
            logger.warn("Gradient mismatch for '{0}': max relative error {1:.3e} (tol {2:.1e}).".format(name, maxRel, tol))
        results.append(GradcheckResult(name, p.size, checked, skipped, maxRel, maxAbs, passed))
    return GradcheckReport(results, tol)

def checkOp(fn, inputs, seed = 0, step = 1e-4, tol = 1e-4):
    """Gradient-check an arbitrary op by contracting its output with fixed random weights."""
    inputs = list(inputs)
    with noGrad():
        shape = fn(*inputs).shape
    weights = Tensor.fromArray(np.random.default_rng(seed).normal(size = shape).astype(inputs[0].dtype))
    named = [("input{0}".format(idx), t) for idx, t in enumerate(inputs) if t.requiresGrad]
    return finiteDiffCheck(lambda: sumAll(mul(fn(*inputs), weights)), named, step = step, tol = tol)

