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

import logging
import os
import tempfile
import unittest

import numpy as np

from pyMVCCL.logger import Logger
from pyMVCCL.utils import formatFloat, formatShape, formatValue, parseValue, seededRng, slicer, writeCsv


class TestUtils(unittest.TestCase):

    def testSlicer(self):
        self.assertEqual(slicer([1, 2, 3, 4, 5], 2), [[1, 2], [3, 4], [5]])
        self.assertEqual(slicer("abcdef", 3), ["abc", "def"])
        self.assertEqual(slicer((1, 2, 3), 2, list), [[1, 2], [3]])

    def testSeededStreams(self):
        self.assertEqual(seededRng(10, 5).random(), np.random.default_rng(15).random())
        self.assertNotEqual(seededRng(10, 5).random(), seededRng(10, 6).random())

    def testFormatting(self):
        self.assertEqual(formatShape((3, 4)), "(3, 4)")
        self.assertEqual(formatFloat(0.1), "0.1")
        self.assertEqual(formatFloat(None), "")
        self.assertEqual(formatValue(True), "true")
        self.assertEqual(formatValue((2.0, 4.0)), "2.0,4.0")

    def testParseValue(self):
        self.assertIs(parseValue("Yes", False), True)
        self.assertIs(parseValue("off", True), False)
        self.assertEqual(parseValue(" 12 ", 3), 12)
        self.assertEqual(parseValue("1e-3", 0.5), 0.001)
        self.assertEqual(parseValue("8, 16", (1, 2)), (8, 16))
        self.assertEqual(parseValue("head", "model"), "head")
        for text, like in (("2.5", 1), ("perhaps", True), ("x", 0.1)):
            with self.assertRaises(ValueError):
                parseValue(text, like)

    def testWriteCsv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'out.csv')
            text = writeCsv(path, ('a', 'b'), [(1, 0.25), ('x', np.float64(1.0) / 3.0), (None, None)], comment = "seed=1")
            with open(path, 'rb') as fin:
                self.assertEqual(fin.read(), text.encode('utf-8'))
        self.assertEqual(text, "# seed=1\na,b\n1,0.25\nx,0.3333333333333333\n,\n")


class TestLogger(unittest.TestCase):

    def testChildNamesAndLevels(self):
        logger = Logger('Unit')
        self.assertEqual(logger.logger.name, 'pyMVCCL.Unit')
        logger.setLevel('debug')
        self.assertTrue(logger.logger.isEnabledFor(logging.DEBUG))
        logger.setLevel('critical')
        self.assertFalse(logger.logger.isEnabledFor(logging.ERROR))
        logger.setLevel('nonsense')
        self.assertEqual(logger.logger.level, logging.WARN)
        logger.setLevel('WARN')

    def testMessagesReachLogging(self):
        logger = Logger('Unit')
        with self.assertLogs('pyMVCCL.Unit', level = 'INFO') as cm:
            logger.info("hello")
            logger.warn("careful")
        self.assertEqual(cm.output, ['INFO:pyMVCCL.Unit:hello', 'WARNING:pyMVCCL.Unit:careful'])

    def testSingleBaseHandler(self):
        Logger('A')
        Logger('B')
        self.assertEqual(len(logging.getLogger('pyMVCCL').handlers), 1)


if __name__ == '__main__':
    unittest.main()
