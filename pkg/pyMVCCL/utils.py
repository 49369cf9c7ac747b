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

import csv
import io

import numpy as np


def slicer(iteratable, sliceLength, resultType = None):
    if resultType is None:
        resultType = type(iteratable)
    length = len(iteratable)
    return [resultType(iteratable[i : i + sliceLength]) for i in range(0, length, sliceLength)]

def seededRng(seed, index = 0):
    """Independent random stream for work item `index`.

    Streams are derived as ``seed + index`` so results never depend on
    the order (or thread) in which items are processed.
    """
    return np.random.default_rng(int(seed) + int(index))

def formatShape(shape):
    return "({0})".format(", ".join(str(s) for s in shape))

def formatFloat(value):
    """Shortest round-tripping text for a float (empty for missing values)."""
    if value is None:
        return ""
    return repr(float(value))

def writeCsv(path, header, rows, comment = None):
    """Write a CSV file byte-reproducibly (``\\n`` line endings, repr floats)."""
    buf = io.StringIO()
    if comment:
        buf.write("# {0}\n".format(comment))
    writer = csv.writer(buf, lineterminator = "\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([formatFloat(v) if isinstance(v, (float, np.floating)) else v for v in row])
    with io.open(path, "w", encoding = "utf-8", newline = "") as fout:
        fout.write(buf.getvalue())
    return buf.getvalue()


def formatValue(value):
    """Text form of a configuration value, readable by `parseValue`."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (tuple, list)):
        return ",".join(formatValue(v) for v in value)
    return str(value)

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")

def parseValue(text, like):
    """Coerce `text` to the type of the default value `like` (raises ValueError)."""
    text = text.strip()
    if isinstance(like, bool):
        lowered = text.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError("'{0}' is not a boolean".format(text))
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, (tuple, list)):
        element = like[0] if like else 0.0
        return tuple(parseValue(part, element) for part in text.split(",") if part.strip())
    return text
