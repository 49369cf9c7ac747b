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

"""Versioned checkpoint container.

Layout: an ASCII header (format version, model configuration as key=value
lines, training state, block table ``name,dtype,shape,offset``) terminated
by a ``[data]`` line, followed by the raw little-endian blocks.
"""

__all__ = ['CheckpointError', 'Checkpoint', 'dumps', 'loads', 'saveCheckpoint', 'loadCheckpoint', 'snapshot', 'restoreModel']

from collections import namedtuple, OrderedDict
import io
import json

import numpy as np

from pyMVCCL.data import DataError
from pyMVCCL.logger import Logger
from pyMVCCL.model import MVCCL, ModelConfig
from pyMVCCL.module import ParameterStore
from pyMVCCL.utils import formatFloat, formatValue, parseValue


class CheckpointError(DataError): pass


MAGIC = "MVCCL-CHECKPOINT"
FORMAT_VERSION = 1
DATA_MARKER = b"[data]\n"
DTYPES = {'float32': '<f4', 'float64': '<f8'}

Checkpoint = namedtuple('Checkpoint',
    'modelConfig params epoch lr adamT adamM adamV schedulerBest schedulerBad reductions bestValAuc rngState',
    defaults = (0, None, 0, None, None, None, 0, 0, None, None)
)

_logger = Logger('Checkpoint')


def _floatOrNone(text):
    return float(text) if text else None

def _blocks(ckpt):
    blocks = [("param.{0}".format(name), data) for name, data in ckpt.params.items()]
    if ckpt.adamM is not None:
        blocks.extend(("m.{0}".format(name), data) for name, data in ckpt.adamM.items())
        blocks.extend(("v.{0}".format(name), data) for name, data in ckpt.adamV.items())
    return blocks

def dumps(ckpt):
    lines = [MAGIC, "version={0}".format(FORMAT_VERSION), "[model]"]
    lines.extend("{0}={1}".format(field, formatValue(value)) for field, value in zip(ckpt.modelConfig._fields, ckpt.modelConfig))
    lines.extend([
        "[state]",
        "epoch={0}".format(int(ckpt.epoch)),
        "lr={0}".format(formatFloat(ckpt.lr)),
        "adam.t={0}".format(int(ckpt.adamT)),
        "scheduler.best={0}".format(formatFloat(ckpt.schedulerBest)),
        "scheduler.numBad={0}".format(int(ckpt.schedulerBad)),
        "scheduler.reductions={0}".format(int(ckpt.reductions)),
        "bestValAuc={0}".format(formatFloat(ckpt.bestValAuc)),
        "rng={0}".format(json.dumps(ckpt.rngState, sort_keys = True) if ckpt.rngState is not None else ""),
        "[blocks]",
    ])
    payload = []
    offset = 0
    for name, data in _blocks(ckpt):
        data = np.asarray(data)
        try:
            code = DTYPES[data.dtype.name]
        except KeyError:
            raise CheckpointError("Block '{0}' has unsupported dtype {1}.".format(name, data.dtype))
        raw = data.astype(code).tobytes(order = 'C')
        lines.append("{0},{1},{2},{3}".format(name, code, "x".join(str(s) for s in data.shape), offset))
        payload.append(raw)
        offset += len(raw)
    header = ("\n".join(lines) + "\n").encode('ascii')
    return header + DATA_MARKER + b"".join(payload)

def _section(lines, name):
    try:
        start = lines.index("[{0}]".format(name)) + 1
    except ValueError:
        raise CheckpointError("Checkpoint header lacks a [{0}] section.".format(name))
    end = start
    while end < len(lines) and not lines[end].startswith("["):
        end += 1
    return lines[start : end]

def _keyValues(lines):
    result = OrderedDict()
    for line in lines:
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError("Malformed header line '{0}'.".format(line))
        result[key] = value
    return result

def loads(raw):
    cut = raw.find(DATA_MARKER)
    if not raw.startswith(MAGIC.encode('ascii')) or cut < 0:
        raise CheckpointError("Not a checkpoint (missing magic or data marker).")
    try:
        lines = raw[ : cut].decode('ascii').splitlines()
    except UnicodeDecodeError:
        raise CheckpointError("Checkpoint header is not ASCII.")
    data = raw[cut + len(DATA_MARKER) : ]
    version = _keyValues(lines[1 : 2]).get('version')
    if version != str(FORMAT_VERSION):
        raise CheckpointError("Unsupported checkpoint format version '{0}'.".format(version))

    modelValues = _keyValues(_section(lines, 'model'))
    defaults = ModelConfig()
    fields = OrderedDict()
    try:
        for key, text in modelValues.items():
            if key not in ModelConfig._fields:
                raise CheckpointError("Unknown model field '{0}' in checkpoint.".format(key))
            fields[key] = parseValue(text, getattr(defaults, key))
    except ValueError as e:
        raise CheckpointError("Bad model field in checkpoint: {0}".format(e))
    modelConfig = ModelConfig(**fields)

    state = _keyValues(_section(lines, 'state'))
    params, moments = OrderedDict(), {'m': OrderedDict(), 'v': OrderedDict()}
    expected = 0
    for line in _section(lines, 'blocks'):
        try:
            name, code, shape, offset = line.split(",")
            shape = tuple(int(s) for s in shape.split("x")) if shape else ()
            offset = int(offset)
        except ValueError:
            raise CheckpointError("Malformed block entry '{0}'.".format(line))
        if code not in DTYPES.values():
            raise CheckpointError("Block '{0}' has unsupported dtype '{1}'.".format(name, code))
        dtype = np.dtype(code)
        size = int(np.prod(shape)) * dtype.itemsize
        if offset != expected or offset + size > len(data):
            raise CheckpointError("Block '{0}' lies outside the data section.".format(name))
        expected = offset + size
        array = np.frombuffer(data, dtype = dtype, count = int(np.prod(shape)), offset = offset).reshape(shape).copy()
        kind, _, pname = name.partition(".")
        if kind == 'param':
            params[pname] = array
        elif kind in moments:
            moments[kind][pname] = array
        else:
            raise CheckpointError("Unknown block kind in '{0}'.".format(name))
    if expected != len(data):
        raise CheckpointError("Checkpoint has {0} trailing bytes.".format(len(data) - expected))
    rngText = state.get('rng', '')
    try:
        return Checkpoint(
            modelConfig, params,
            epoch = int(state.get('epoch', 0)),
            lr = _floatOrNone(state.get('lr', '')),
            adamT = int(state.get('adam.t', 0)),
            adamM = moments['m'] or None,
            adamV = moments['v'] or None,
            schedulerBest = _floatOrNone(state.get('scheduler.best', '')),
            schedulerBad = int(state.get('scheduler.numBad', 0)),
            reductions = int(state.get('scheduler.reductions', 0)),
            bestValAuc = _floatOrNone(state.get('bestValAuc', '')),
            rngState = json.loads(rngText) if rngText else None,
        )
    except ValueError as e:
        raise CheckpointError("Bad training state in checkpoint: {0}".format(e))

def saveCheckpoint(path, ckpt):
    raw = dumps(ckpt)
    with io.open(path, 'wb') as fout:
        fout.write(raw)
    _logger.debug("saved epoch {0} checkpoint to '{1}' ({2} bytes).".format(ckpt.epoch, path, len(raw)))

def loadCheckpoint(path):
    try:
        with io.open(path, 'rb') as fin:
            raw = fin.read()
    except (IOError, OSError) as e:
        raise CheckpointError("Cannot read checkpoint '{0}': {1}".format(path, e))
    return loads(raw)

def snapshot(model, epoch = 0, optimizer = None, scheduler = None, rng = None, bestValAuc = None):
    """Capture model (and optionally training) state as a `Checkpoint`."""
    params = model.params.state()
    fields = dict(epoch = epoch, bestValAuc = bestValAuc)
    if optimizer is not None:
        t, m, v = optimizer.state()
        fields.update(
            lr = optimizer.lr, adamT = t,
            adamM = OrderedDict((k, a.copy()) for k, a in m.items()),
            adamV = OrderedDict((k, a.copy()) for k, a in v.items()),
        )
    if scheduler is not None:
        best, numBad, reductions = scheduler.state()
        fields.update(schedulerBest = best, schedulerBad = numBad, reductions = reductions)
    if rng is not None:
        fields['rngState'] = rng.bit_generator.state
    return Checkpoint(model.config, params, **fields)

def restoreModel(ckpt):
    """Network bound to a copy of the checkpoint's parameters."""
    store = ParameterStore()
    for name, data in ckpt.params.items():
        store.register(name, data.copy())
    return MVCCL(ckpt.modelConfig, store)
