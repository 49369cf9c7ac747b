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

import os
import tempfile
import unittest

from pyMVCCL.config import applyAssignments, echoConfig, loadRunConfig, parseAssignment, readConfigFile
from pyMVCCL.model import ConfigError, ModelConfig
from pyMVCCL.training import TrainConfig


class TestAssignments(unittest.TestCase):

    def testParse(self):
        self.assertEqual(parseAssignment("model.D = 32"), ('model', 'D', '32'))
        self.assertEqual(parseAssignment("synth.lesionRadius=1.5,3"), ('synth', 'lesionRadius', '1.5,3'))

    def testUnknownKeys(self):
        for text in ("model.bogus=1", "optim.lr=0.1", "lr=0.1", "model.D"):
            with self.assertRaises(ConfigError, msg = text):
                parseAssignment(text)

    def testCoercion(self):
        configs = applyAssignments([
            ('model', 'gcm', 'false'), ('model', 'stageWidths', '8,8'), ('model', 'backboneStages', '2'),
            ('train', 'lr', '0.5'), ('synth', 'lesionRadius', '1,2'),
        ])
        self.assertEqual((configs['model'].gcm, configs['model'].stageWidths, configs['model'].backboneStages), (False, (8, 8), 2))
        self.assertEqual(configs['train'].lr, 0.5)
        self.assertEqual(configs['synth'].lesionRadius, (1.0, 2.0))
        with self.assertRaises(ConfigError):
            applyAssignments([('model', 'D', 'many')])
        with self.assertRaises(ConfigError):
            applyAssignments([('train', 'augment', 'maybe')])


class TestRunConfig(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, 'run.cfg')
        with open(self.path, 'w') as fout:
            fout.write("# tiny run\n\ntrain.lr=0.001\nmodel.heads=2\n")

    def tearDown(self):
        self.tmp.cleanup()

    def testLayering(self):
        run = loadRunConfig('train', self.path, ["train.lr=0.01"], seed = 7)
        self.assertEqual(run.train.lr, 0.01)
        self.assertEqual(run.model.heads, 2)
        self.assertEqual((run.train.seed, run.synth.seed), (7, 7))
        self.assertEqual(run.overrides, ("train.lr=0.01", ))

    def testDefaults(self):
        run = loadRunConfig('eval')
        self.assertEqual(run.model, ModelConfig())
        self.assertEqual(run.train, TrainConfig())

    def testFileErrorsNameTheLine(self):
        with open(self.path, 'a') as fout:
            fout.write("model.depth=3\n")
        with self.assertRaises(ConfigError) as cm:
            loadRunConfig('train', self.path)
        self.assertIn("run.cfg:5", str(cm.exception))
        with self.assertRaises(ConfigError):
            loadRunConfig('train', os.path.join(self.tmp.name, 'missing.cfg'))

    def testEchoReadsBack(self):
        run = loadRunConfig('train', self.path, ["model.stageWidths=8,8,16,16", "train.augment=false"], seed = 3)
        path = echoConfig(run, os.path.join(self.tmp.name, 'out'))
        with open(path) as fin:
            lines = fin.read().splitlines()
        self.assertEqual(lines[0], "# command=train")
        self.assertEqual(lines[1 : ], sorted(lines[1 : ]))
        self.assertIn("model.stageWidths=8,8,16,16", lines)
        self.assertIn("train.augment=false", lines)
        configs = applyAssignments(readConfigFile(path))
        self.assertEqual((configs['model'], configs['train'], configs['synth']), (run.model, run.train, run.synth))


if __name__ == '__main__':
    unittest.main()
