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

"""Image preprocessing, augmentation, manifest ingestion and the synthetic two-view generator.

All images handled here are 2-d float arrays with intensities in [0, 1].
"""

__all__ = [
    'DataError', 'EmptyForegroundError', 'ManifestError', 'DataIOError', 'ViewPair', 'Episode', 'SynthConfig',
    'preprocess', 'augment', 'synthEpisodes', 'synthGenerate', 'episodePairs', 'writeDataset', 'readImage',
    'writeImage', 'readManifestRows', 'groupManifest', 'loadManifest', 'blobMap', 'singleViewOracle',
    'bothViewsOracle', 'cooccurrenceOracle', 'splitByEpisode',
]

from collections import namedtuple, OrderedDict
import csv
import io
import math
import os

import numpy as np
from PIL import Image
from scipy import ndimage

from pyMVCCL.logger import Logger
from pyMVCCL.model import ConfigError
from pyMVCCL.utils import seededRng


class DataError(Exception): pass
class EmptyForegroundError(DataError): pass
class ManifestError(DataError): pass
class DataIOError(DataError, IOError): pass


VIEWS = ('CC', 'MLO')
SIDES = ('L', 'R')
MANIFEST_HEADER = ('episode_id', 'side', 'view', 'label', 'path')

ViewPair = namedtuple('ViewPair', 'xM xA y episodeId side mainView')
Episode = namedtuple('Episode', 'episodeId side label images lesionRows')
ManifestRow = namedtuple('ManifestRow', 'line episodeId side view label path')

_logger = Logger('Data')


##
##  Preprocessing.
##
THRESHOLD_FRACTION = 0.05
CONNECTIVITY = np.ones((3, 3), dtype = bool)


def _largestComponents(mask):
    """Keep the largest 8-connected component(s); equal-sized winners are all kept."""
    labels, count = ndimage.label(mask, structure = CONNECTIVITY)
    if count == 0:
        return mask.copy()
    sizes = np.bincount(labels.ravel())[1 : ]
    keep = np.flatnonzero(sizes == sizes.max()) + 1
    return np.isin(labels, keep)

def _boundingBox(mask):
    rows = np.flatnonzero(mask.any(axis = 1))
    cols = np.flatnonzero(mask.any(axis = 0))
    return slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1)

def _shouldMirror(image):
    """True if the left half carries more intensity than the right half.

    Half sums are exactly rounded, so an image and its mirror always get
    opposite answers unless the image is symmetric.
    """
    width = image.shape[1]
    half = width // 2
    columns = image.sum(axis = 0)
    left = math.fsum(columns[ : half])
    right = math.fsum(columns[width - half : ])
    if left != right:
        return left > right
    diff = (image - image[ : , : : -1]).ravel()
    nonzero = np.flatnonzero(diff)
    return bool(nonzero.size) and bool(diff[nonzero[0]] > 0)

def _orient(image, mask):
    if _shouldMirror(image):
        return image[ : , : : -1].copy(), mask[ : , : : -1].copy()
    return image, mask

def _resampled(array, height, width):
    result = Image.fromarray(np.asarray(array, dtype = np.float32)).resize((width, height), Image.BILINEAR)
    return np.asarray(result, dtype = np.float64)

def _fit(image, mask, height, width):
    """Aspect-preserving resize of the foreground so it fits into height x width."""
    h, w = image.shape
    s = min(float(height) / h, float(width) / w)
    hc = min(height, max(1, int(round(h * s))))
    wc = min(width, max(1, int(round(w * s))))
    if (hc, wc) == (h, w):
        return image.copy(), mask.copy()
    values = image[mask]
    low, high = values.min(), values.max()
    weight = _resampled(mask, hc, wc)
    summed = _resampled(np.where(mask, image, 0.0), hc, wc)
    inside = weight > 0
    result = np.zeros((hc, wc))
    result[inside] = np.clip(summed[inside] / weight[inside], low, high)
    return result, inside

def preprocess(raw, height = 96, width = 48):
    """Bring a raw view into canonical form.

    Steps: background threshold at 5% of the peak, largest connected
    component keep (drops text labels and noise), crop to the foreground,
    mirror so the right half dominates, aspect-preserving resize, zero
    padding (vertically centred, content flush left), final component
    cleanup. A second application returns its input unchanged.
    """
    image = np.asarray(raw, dtype = np.float64)
    if image.ndim != 2 or image.size == 0:
        raise DataError("Expected a non-empty grayscale image, got shape {0}.".format(image.shape))
    peak = image.max()
    if not peak > 0:
        raise EmptyForegroundError("Image has no foreground (maximum intensity {0}).".format(peak))
    mask = _largestComponents(image >= THRESHOLD_FRACTION * peak)
    rows, cols = _boundingBox(mask)
    mask = mask[rows, cols]
    image = np.where(mask, image[rows, cols], 0.0)
    image, mask = _orient(image, mask)
    image, mask = _fit(image, mask, height, width)
    image, mask = _orient(image, mask)
    hc, wc = image.shape
    top = (height - hc) // 2
    canvas = np.zeros((height, width))
    canvasMask = np.zeros((height, width), dtype = bool)
    canvas[top : top + hc, : wc] = image
    canvasMask[top : top + hc, : wc] = mask
    keep = _largestComponents(canvasMask & (canvas > 0))
    return np.where(keep, canvas, 0.0)


##
##  Augmentation.
##
TRANSLATE_FRACTION = 0.05
MAX_ROTATION = 5.0

def _affine(image, rng):
    h, w = image.shape
    maxDy, maxDx = int(TRANSLATE_FRACTION * h), int(TRANSLATE_FRACTION * w)
    dy = int(rng.integers(-maxDy, maxDy, endpoint = True))
    dx = int(rng.integers(-maxDx, maxDx, endpoint = True))
    angle = float(rng.uniform(-MAX_ROTATION, MAX_ROTATION))
    if dy == 0 and dx == 0 and angle == 0.0:
        return image.copy()
    theta = np.deg2rad(angle)
    rotation = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    inverse = rotation.T
    centre = (np.array(image.shape, dtype = np.float64) - 1.0) / 2.0
    offset = centre - inverse @ (centre + np.array([dy, dx], dtype = np.float64))
    return ndimage.affine_transform(image, inverse, offset = offset, order = 0, mode = 'constant', cval = 0.0)

def augment(pair, rng):
    """Shared random vertical flip, then an independent small translation / rotation per view.

    Draw order is fixed: ``random`` (flip), then per view ``integers`` (dy),
    ``integers`` (dx) and ``uniform`` (angle), main view first.
    """
    xM, xA = np.asarray(pair.xM), np.asarray(pair.xA)
    if rng.random() < 0.5:
        xM, xA = xM[ : : -1], xA[ : : -1]
    return pair._replace(xM = _affine(np.ascontiguousarray(xM), rng), xA = _affine(np.ascontiguousarray(xA), rng))


##
##  Synthetic episodes.
##
DISTRACTOR_MODES = ('mismatched', 'single')
# lesion rows lie within this fraction of the breast half-height around its centre
LESION_BAND = 0.6

_SYNTH_DEFAULTS = OrderedDict((
    ('nEpisodes', 200),
    ('height', 96),
    ('width', 48),
    ('lesionRadius', (2.0, 4.0)),
    ('lesionIntensity', 0.4),
    ('crossViewJitter', 2),
    ('distractorRate', 0.5),
    ('distractorMode', 'mismatched'),
    ('noiseSigma', 0.02),
    ('positiveRate', 0.5),
    ('seed', 0),
))


class SynthConfig(namedtuple('SynthConfig', list(_SYNTH_DEFAULTS.keys()), defaults = list(_SYNTH_DEFAULTS.values()))):
    """Parameters of the planted-lesion generator.

    `distractorMode` 'single' plants the confounding blob of a negative
    episode in one view only; 'mismatched' plants one blob per view at rows
    further apart than `cooccurrenceTolerance`.
    """

    __slots__ = ()

    @property
    def cooccurrenceTolerance(self):
        return self.crossViewJitter + 2.0 * max(self.lesionRadius)

    def validate(self):
        if int(self.nEpisodes) < 1:
            raise ConfigError("synth.nEpisodes must be positive, got {0}.".format(self.nEpisodes))
        if self.height < 16 or self.width < 8:
            raise ConfigError("synth image {0}x{1} is too small.".format(self.height, self.width))
        if not 0.0 < self.positiveRate < 1.0:
            raise ConfigError("synth.positiveRate must lie in (0, 1), got {0}.".format(self.positiveRate))
        if not 0.0 <= self.distractorRate <= 1.0:
            raise ConfigError("synth.distractorRate must lie in [0, 1], got {0}.".format(self.distractorRate))
        if not 0 <= self.crossViewJitter < self.height:
            raise ConfigError("synth.crossViewJitter must lie in [0, height), got {0}.".format(self.crossViewJitter))
        low, high = self.lesionRadius
        if not 0.0 < low <= high:
            raise ConfigError("synth.lesionRadius must be an increasing pair of positive radii, got {0}.".format(self.lesionRadius))
        if self.noiseSigma < 0:
            raise ConfigError("synth.noiseSigma must be non-negative, got {0}.".format(self.noiseSigma))
        if self.distractorMode not in DISTRACTOR_MODES:
            raise ConfigError("synth.distractorMode must be one of {0}, got '{1}'.".format(', '.join(DISTRACTOR_MODES), self.distractorMode))
        if self.distractorMode == 'mismatched' and self.cooccurrenceTolerance >= _mismatchGap(self.height):
            raise ConfigError("synth: jitter plus lesion size ({0:.1f} px) leaves no room for mismatched distractors at height {1}.".format(
                self.cooccurrenceTolerance, self.height)
            )
        return self


def _mismatchGap(height):
    # breast half-height is at least 0.4 * height; mismatched rows come from the outer thirds of the band
    return 0.4 * 2 * LESION_BAND * 0.4 * height


class _Breast(object):
    """Half-ellipse attached to the right image border, brightest at the chest wall."""

    def __init__(self, cfg, rng):
        self.height, self.width = cfg.height, cfg.width
        self.rx = cfg.width * rng.uniform(0.75, 0.95)
        self.ry = cfg.height * rng.uniform(0.4, 0.46)
        self.cy = cfg.height / 2.0 + rng.uniform(-0.03, 0.03) * cfg.height
        band = LESION_BAND * self.ry
        self.rowRange = (self.cy - band, self.cy + band)

    def render(self):
        rows, cols = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        depth = (self.width - 1 - cols) / self.rx
        inside = depth ** 2 + ((rows - self.cy) / self.ry) ** 2 <= 1.0
        return np.where(inside, 0.3 + 0.3 * (1.0 - depth), 0.0)

    def lesionColumn(self, rng):
        return self.width - 1 - self.rx * rng.uniform(0.2, 0.6)


def _blob(shape, row, col, radius, intensity):
    rows, cols = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    return intensity * np.exp(-((rows - row) ** 2 + (cols - col) ** 2) / (2.0 * radius ** 2))

def _episode(cfg, index, label):
    rng = seededRng(cfg.seed, index)
    side = SIDES[int(rng.integers(0, 2))]
    breast = _Breast(cfg, rng)
    low, high = breast.rowRange
    rows = {'CC': None, 'MLO': None}
    if label:
        row = rng.uniform(low, high)
        rows['CC'] = row
        rows['MLO'] = float(np.clip(row + int(rng.integers(-cfg.crossViewJitter, cfg.crossViewJitter, endpoint = True)), low, high))
    elif rng.random() < cfg.distractorRate:
        if cfg.distractorMode == 'single':
            rows[VIEWS[int(rng.integers(0, 2))]] = rng.uniform(low, high)
        else:
            third = (high - low) * 0.3
            upper, lower = rng.uniform(low, low + third), rng.uniform(high - third, high)
            if rng.random() < 0.5:
                upper, lower = lower, upper
            rows['CC'], rows['MLO'] = upper, lower
    images = OrderedDict()
    for view in VIEWS:
        image = breast.render()
        if rows[view] is not None:
            radius = rng.uniform(*cfg.lesionRadius)
            image = image + _blob(image.shape, rows[view], breast.lesionColumn(rng), radius, cfg.lesionIntensity)
        if cfg.noiseSigma > 0:
            image = image + rng.normal(0.0, cfg.noiseSigma, image.shape)
        image = np.clip(image, 0.0, 1.0)
        if side == 'L':
            image = image[ : , : : -1].copy()
        images[view] = image
    return Episode("ep{0:05d}".format(index), side, int(label), images, rows)

def synthEpisodes(cfg):
    """Generate episodes; episode `i` uses its own stream seeded with ``seed + i``."""
    cfg.validate()
    labelRng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    positives = set(labelRng.permutation(cfg.nEpisodes)[ : int(round(cfg.positiveRate * cfg.nEpisodes))].tolist())
    episodes = [_episode(cfg, index, index in positives) for index in range(cfg.nEpisodes)]
    _logger.debug("generated {0} episodes ({1} positive).".format(len(episodes), len(positives)))
    return episodes

def episodePairs(episodeId, side, label, images):
    """Both orderings of one breast: CC as main view, then MLO as main view."""
    return [
        ViewPair(images['CC'], images['MLO'], int(label), episodeId, side, 'CC'),
        ViewPair(images['MLO'], images['CC'], int(label), episodeId, side, 'MLO'),
    ]

def synthGenerate(cfg, preprocessed = True):
    """Synthetic dataset as view pairs (two per episode).

    Views are preprocessed like manifest images; pass `preprocessed = False`
    for the raw renderings the blob oracles read.
    """
    pairs = []
    for episode in synthEpisodes(cfg):
        images = episode.images
        if preprocessed:
            images = OrderedDict((view, preprocess(image, cfg.height, cfg.width)) for view, image in images.items())
        pairs.extend(episodePairs(episode.episodeId, episode.side, episode.label, images))
    return pairs


##
##  Blob oracles on synthetic pairs.
##
INTERIOR_MARGIN = 3

def _disk(radius):
    rows, cols = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return rows ** 2 + cols ** 2 <= radius ** 2

def blobMap(image, cfg):
    """Lesion likelihood map: white top-hat with a disk wider than any lesion, lightly smoothed.

    Responses within `INTERIOR_MARGIN` pixels of the tissue contour are zeroed.
    """
    image = np.asarray(image, dtype = np.float64)
    radius = int(math.ceil(2.0 * max(cfg.lesionRadius)))
    opened = ndimage.grey_opening(image, footprint = _disk(radius), mode = 'nearest')
    response = ndimage.gaussian_filter(image - opened, min(cfg.lesionRadius) / 2.0)
    tissue = ndimage.binary_fill_holes(_largestComponents(image >= 0.25 * image.max()))
    interior = ndimage.binary_erosion(tissue, iterations = INTERIOR_MARGIN, border_value = 1)
    return np.where(interior, response, 0.0)

def singleViewOracle(pair, cfg):
    return float(blobMap(pair.xM, cfg).max())

def bothViewsOracle(pair, cfg):
    return min(float(blobMap(pair.xM, cfg).max()), float(blobMap(pair.xA, cfg).max()))

def cooccurrenceOracle(pair, cfg):
    """Main-view peak response AND an auxiliary response at a corresponding row."""
    mapM, mapA = blobMap(pair.xM, cfg), blobMap(pair.xA, cfg)
    row = np.unravel_index(mapM.argmax(), mapM.shape)[0]
    tol = int(math.ceil(cfg.cooccurrenceTolerance))
    near = mapA[max(0, row - tol) : row + tol + 1]
    return min(float(mapM.max()), float(near.max()))


##
##  Image files and manifests.
##
def writeImage(path, image):
    """Store an image as 16-bit grayscale PNG."""
    data = np.round(np.clip(np.asarray(image, dtype = np.float64), 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(data).save(path, format = 'PNG')

def readImage(path):
    """Load an 8- or 16-bit grayscale PNG normalised to [0, 1]."""
    if not os.path.exists(path):
        raise DataIOError("Image file '{0}' not found.".format(path))
    try:
        with Image.open(path) as img:
            mode = img.mode
            if mode in ('I;16', 'I;16B', 'I;16L', 'I'):
                return np.asarray(img, dtype = np.float64) / 65535.0
            if mode != 'L':
                img = img.convert('L')
            return np.asarray(img, dtype = np.float64) / 255.0
    except (OSError, ValueError) as e:
        raise DataIOError("Cannot read image '{0}': {1}".format(path, e))

def writeDataset(episodes, directory):
    """Write the episodes as PNG files plus ``manifest.csv``; returns the manifest path."""
    if not os.path.isdir(directory):
        os.makedirs(directory)
    rows = []
    for episode in episodes:
        for view, image in episode.images.items():
            name = "{0}_{1}_{2}.png".format(episode.episodeId, episode.side, view)
            writeImage(os.path.join(directory, name), image)
            rows.append((episode.episodeId, episode.side, view, episode.label, name))
    path = os.path.join(directory, 'manifest.csv')
    with io.open(path, 'w', encoding = 'utf-8', newline = '') as fout:
        writer = csv.writer(fout, lineterminator = '\n')
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)
    _logger.info("wrote {0} images and '{1}'.".format(len(rows), path))
    return path

def readManifestRows(path):
    if not os.path.exists(path):
        raise DataIOError("Manifest '{0}' not found.".format(path))
    base = os.path.dirname(os.path.abspath(path))
    result = []
    with io.open(path, 'r', encoding = 'utf-8', newline = '') as fin:
        reader = csv.reader(fin)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ManifestError("{0}:1: expected header '{1}'.".format(path, ','.join(MANIFEST_HEADER)))
        for fields in reader:
            line = reader.line_num
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) != len(MANIFEST_HEADER):
                raise ManifestError("{0}:{1}: expected {2} fields, got {3}.".format(path, line, len(MANIFEST_HEADER), len(fields)))
            episodeId, side, view, label, imagePath = [f.strip() for f in fields]
            if not episodeId:
                raise ManifestError("{0}:{1}: empty episode_id.".format(path, line))
            if side not in SIDES:
                raise ManifestError("{0}:{1}: side must be L or R, got '{2}'.".format(path, line, side))
            if view not in VIEWS:
                raise ManifestError("{0}:{1}: view must be CC or MLO, got '{2}'.".format(path, line, view))
            if label not in ('0', '1'):
                raise ManifestError("{0}:{1}: label must be 0 or 1, got '{2}'.".format(path, line, label))
            if not os.path.isabs(imagePath):
                imagePath = os.path.join(base, imagePath)
            result.append(ManifestRow(line, episodeId, side, view, int(label), imagePath))
    return result

def groupManifest(rows):
    """Pair CC with MLO rows per (episode, side); returns (complete groups, skipped count)."""
    groups = OrderedDict()
    for row in rows:
        groups.setdefault((row.episodeId, row.side), []).append(row)
    complete = OrderedDict()
    skipped = 0
    for key, members in groups.items():
        views = dict((row.view, row) for row in members)
        if len(members) != 2 or set(views) != set(VIEWS):
            skipped += 1
            _logger.warn("skipping incomplete pair {0}/{1} (views: {2}).".format(key[0], key[1], ','.join(r.view for r in members)))
            continue
        if views['CC'].label != views['MLO'].label:
            raise ManifestError("line {0}: label of {1}/{2} disagrees with line {3}.".format(
                views['MLO'].line, key[0], key[1], views['CC'].line)
            )
        complete[key] = views
    if skipped:
        _logger.warn("{0} incomplete pair(s) skipped.".format(skipped))
    return complete, skipped

def loadManifest(path, height = 96, width = 48, preprocessed = True):
    """Read a manifest and its images into view pairs (both orderings per breast)."""
    complete, _ = groupManifest(readManifestRows(path))
    pairs = []
    for (episodeId, side), views in complete.items():
        images = OrderedDict()
        for view in VIEWS:
            image = readImage(views[view].path)
            if preprocessed:
                try:
                    image = preprocess(image, height, width)
                except EmptyForegroundError as e:
                    raise EmptyForegroundError("{0}: {1}".format(views[view].path, e))
            images[view] = image
        if images['CC'].shape != images['MLO'].shape:
            raise DataError("Views of {0}/{1} differ in size: {2} vs {3}.".format(episodeId, side, images['CC'].shape, images['MLO'].shape))
        pairs.extend(episodePairs(episodeId, side, views['CC'].label, images))
    _logger.info("loaded {0} pairs from '{1}'.".format(len(pairs), path))
    return pairs

def splitByEpisode(pairs, weights):
    """Partition pairs into consecutive episode blocks sized proportionally to `weights`.

    Both orderings of a breast always land in the same part.
    """
    groups = OrderedDict()
    for pair in pairs:
        groups.setdefault((pair.episodeId, pair.side), []).append(pair)
    keys = list(groups)
    total = float(sum(weights))
    bounds = np.round(np.cumsum(weights) / total * len(keys)).astype(int)
    parts, start = [], 0
    for end in bounds:
        parts.append([pair for key in keys[start : end] for pair in groups[key]])
        start = end
    return parts
