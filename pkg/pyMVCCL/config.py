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

__all__ = ['SECTIONS', 'RunConfig', 'parseAssignment', 'readConfigFile', 'applyAssignments', 'loadRunConfig', 'echoConfig']

from collections import namedtuple, OrderedDict
import io
import os

from pyMVCCL.data import SynthConfig
from pyMVCCL.model import ConfigError, ModelConfig
from pyMVCCL.training import TrainConfig
from pyMVCCL.utils import formatValue, parseValue


SECTIONS = OrderedDict((
    ('model', ModelConfig),
    ('train', TrainConfig),
    ('synth', SynthConfig),
))

ECHO_FILE = 'config.echo'

RunConfig = namedtuple('RunConfig', 'command configPath seed outDir overrides model train synth')


def parseAssignment(text, source = '--set'):
    """Split ``section.key=value``; returns (section, key, raw value)."""
    name, sep, value = text.partition('=')
    name = name.strip()
    if not sep:
        raise ConfigError("{0}: expected section.key=value, got '{1}'.".format(source, text.strip()))
    section, dot, key = name.partition('.')
    if not dot or section not in SECTIONS or key not in SECTIONS[section]._fields:
        raise ConfigError("{0}: unknown configuration key '{1}'.".format(source, name))
    return section, key, value.strip()

def readConfigFile(path):
    if not os.path.exists(path):
        raise ConfigError("Config file '{0}' not found.".format(path))
    result = []
    with io.open(path, 'r', encoding = 'utf-8') as fin:
        for lineNo, line in enumerate(fin, 1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            result.append(parseAssignment(line, "{0}:{1}".format(path, lineNo)))
    return result

def applyAssignments(assignments, configs = None):
    """Fold (section, key, value) triples into config records, coercing to the field types."""
    if configs is None:
        configs = OrderedDict((name, cls()) for name, cls in SECTIONS.items())
    configs = OrderedDict(configs)
    for section, key, text in assignments:
        current = configs[section]
        try:
            value = parseValue(text, getattr(current, key))
        except ValueError as e:
            raise ConfigError("Bad value for '{0}.{1}': {2}".format(section, key, e))
        configs[section] = current._replace(**{key: value})
    return configs

def loadRunConfig(command, configPath = None, overrides = (), seed = None, outDir = None):
    """Defaults, then the config file, then ``--set`` overrides, then ``--seed``."""
    assignments = readConfigFile(configPath) if configPath else []
    assignments.extend(parseAssignment(text) for text in overrides)
    configs = applyAssignments(assignments)
    if seed is not None:
        configs['train'] = configs['train']._replace(seed = int(seed))
        configs['synth'] = configs['synth']._replace(seed = int(seed))
    return RunConfig(command, configPath, seed, outDir, tuple(overrides), configs['model'], configs['train'], configs['synth'])

def echoLines(runConfig):
    lines = []
    for section in SECTIONS:
        record = getattr(runConfig, section)
        lines.extend("{0}.{1}={2}".format(section, key, formatValue(value)) for key, value in zip(record._fields, record))
    return sorted(lines)

def echoConfig(runConfig, directory):
    """Write the effective configuration to ``<directory>/config.echo``."""
    if not os.path.isdir(directory):
        os.makedirs(directory)
    path = os.path.join(directory, ECHO_FILE)
    header = ["# command={0}".format(runConfig.command)]
    with io.open(path, 'w', encoding = 'utf-8', newline = '') as fout:
        fout.write("\n".join(header + echoLines(runConfig)) + "\n")
    return path
