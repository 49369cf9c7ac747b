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

"""Ranking metrics, bootstrap intervals, breast-level grouping and the ablation harness."""

__all__ = [
    'UndefinedMetricError', 'DataIntegrityError', 'ScoredSet', 'EvalReport', 'AblationRow', 'METRICS',
    'aucRoc', 'aucPr', 'bceScores', 'bootstrapCi', 'breastLevel', 'scorePairs', 'scoreDataset', 'evaluate',
    'AcceptanceCheck', 'ablationRun', 'ablationMeans', 'acceptanceChecks', 'writeEvalCsv', 'writeAblationCsv',
]

from collections import namedtuple, OrderedDict
from concurrent.futures import ThreadPoolExecutor
import time

import numpy as np
from scipy.stats import rankdata

from pyMVCCL.checkpoint import restoreModel
from pyMVCCL.data import DataError
from pyMVCCL.logger import Logger
from pyMVCCL.model import BCE_CLAMP, VARIANT_ALIASES, consistencyLoss, variantConfig
from pyMVCCL.tensor import noGrad
from pyMVCCL.utils import seededRng, writeCsv


class UndefinedMetricError(ValueError): pass
class DataIntegrityError(DataError): pass


_logger = Logger('Evaluation')


class ScoredSet(object):
    """Per-example scores with their labels and provenance."""

    def __init__(self, ids, scores, labels, episodeIds, sides, views):
        self.ids = list(ids)
        self.scores = np.asarray(scores, dtype = np.float64)
        self.labels = np.asarray(labels, dtype = np.int64)
        self.episodeIds = list(episodeIds)
        self.sides = list(sides)
        self.views = list(views)
        if not (len(self.ids) == len(self.scores) == len(self.labels) == len(self.episodeIds) == len(self.sides) == len(self.views)):
            raise DataIntegrityError("Scored set columns differ in length.")

    @classmethod
    def fromPairs(cls, pairs, scores):
        return cls(
            ["{0}/{1}/{2}".format(p.episodeId, p.side, p.mainView) for p in pairs],
            scores, [p.y for p in pairs],
            [p.episodeId for p in pairs], [p.side for p in pairs], [p.mainView for p in pairs],
        )

    def subset(self, index):
        index = np.asarray(index)
        return ScoredSet(
            [self.ids[i] for i in index], self.scores[index], self.labels[index],
            [self.episodeIds[i] for i in index], [self.sides[i] for i in index], [self.views[i] for i in index],
        )

    def __len__(self):
        return len(self.ids)

    def __repr__(self):
        return "ScoredSet(n={0}, positives={1})".format(len(self), int(self.labels.sum()))


EvalReport = namedtuple('EvalReport', 'metric n estimate mean ciLow ciHigh replicates seed level')


def _columns(scores, labels):
    if labels is None:
        scores, labels = scores.scores, scores.labels
    scores = np.asarray(scores, dtype = np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataIntegrityError("Scores {0} and labels {1} do not line up.".format(scores.shape, labels.shape))
    if not np.isin(labels, (0, 1)).all():
        raise DataIntegrityError("Labels must be 0 or 1.")
    return scores, labels.astype(np.int64)

def aucRoc(scores, labels = None):
    """Mann-Whitney AUC: P(positive outranks negative) with half credit for ties.

    Accepts a `ScoredSet` or parallel score / label sequences.
    """
    scores, labels = _columns(scores, labels)
    nPos = int(labels.sum())
    nNeg = len(labels) - nPos
    if nPos == 0 or nNeg == 0:
        raise UndefinedMetricError("AUC-ROC needs both classes ({0} positive, {1} negative).".format(nPos, nNeg))
    ranks = rankdata(scores, method = 'average')
    return float((ranks[labels == 1].sum() - nPos * (nPos + 1) / 2.0) / (nPos * nNeg))

def aucPr(scores, labels = None):
    """Average precision: precision at each distinct threshold weighted by the recall gained."""
    scores, labels = _columns(scores, labels)
    nPos = int(labels.sum())
    if nPos == 0:
        raise UndefinedMetricError("AUC-PR needs at least one positive example.")
    order = np.argsort(-scores, kind = 'mergesort')
    scores, labels = scores[order], labels[order]
    ap = 0.0
    tp = fp = prevTp = 0
    idx = 0
    n = len(scores)
    while idx < n:
        threshold = scores[idx]
        while idx < n and scores[idx] == threshold:
            if labels[idx]:
                tp += 1
            else:
                fp += 1
            idx += 1
        ap += (tp - prevTp) / nPos * (tp / (tp + fp))
        prevTp = tp
    return ap

METRICS = OrderedDict((
    ('auc_roc', aucRoc),
    ('auc_pr', aucPr),
))

def bceScores(labels, scores):
    p = np.clip(np.asarray(scores, dtype = np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(labels, dtype = np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


MAX_REDRAWS = 10000

def _replicate(scores, labels, metric, seed, index):
    rng = seededRng(seed, index)
    n = len(scores)
    for _ in range(MAX_REDRAWS):
        sample = rng.integers(0, n, size = n)
        try:
            return metric(scores[sample], labels[sample])
        except UndefinedMetricError:
            continue
    raise UndefinedMetricError("No defined bootstrap resample after {0} draws.".format(MAX_REDRAWS))

def bootstrapCi(scored, metric = 'auc_roc', replicates = 2000, level = 0.95, seed = 0, workers = 1):
    """Percentile bootstrap interval; replicate `r` resamples with the stream ``seed + r``.

    Resamples on which the metric is undefined are redrawn from the same
    stream, so exactly `replicates` values enter the interval.
    """
    name = metric if isinstance(metric, str) else getattr(metric, '__name__', 'metric')
    fn = METRICS[metric] if isinstance(metric, str) else metric
    if not 0.0 < level < 1.0:
        raise ValueError("Confidence level must lie in (0, 1), got {0}.".format(level))
    scores, labels = _columns(scored, None) if isinstance(scored, ScoredSet) else _columns(*scored)
    estimate = fn(scores, labels)
    if replicates <= 0:
        return EvalReport(name, len(scores), estimate, None, None, None, 0, seed, level)
    task = lambda r: _replicate(scores, labels, fn, seed, r)
    if workers > 1:
        with ThreadPoolExecutor(max_workers = workers) as pool:
            values = np.array(list(pool.map(task, range(replicates))))
    else:
        values = np.array([task(r) for r in range(replicates)])
    tail = (1.0 - level) / 2.0 * 100.0
    low, high = np.percentile(values, [tail, 100.0 - tail])
    return EvalReport(name, len(scores), estimate, float(values.mean()), float(low), float(high), replicates, seed, level)

def breastLevel(scored):
    """One entry per (episode, side): the mean of its view scores."""
    groups = OrderedDict()
    for idx, key in enumerate(zip(scored.episodeIds, scored.sides)):
        groups.setdefault(key, []).append(idx)
    ids, scores, labels = [], [], []
    for (episodeId, side), members in groups.items():
        memberLabels = set(int(scored.labels[i]) for i in members)
        if len(memberLabels) != 1:
            raise DataIntegrityError("Breast {0}/{1} carries conflicting labels.".format(episodeId, side))
        ids.append("{0}/{1}".format(episodeId, side))
        scores.append(float(np.mean(scored.scores[members])))
        labels.append(memberLabels.pop())
    keys = list(groups.keys())
    return ScoredSet(ids, scores, labels, [k[0] for k in keys], [k[1] for k in keys], ['breast'] * len(keys))


##
##  Scoring networks.
##
def _scorePair(model, pair):
    with noGrad():
        out = model.forward(pair.xM, pair.xA)
        sim = np.nan
        if out.gTildeM is not None:
            sim = consistencyLoss(out.gM, out.gA, out.gTildeM, out.gTildeA, model.config.epsilon).item()
        return out.yHat.item(), sim

def scorePairs(model, pairs, workers = 1):
    """Predictions and consistency losses for `pairs`, in input order."""
    pairs = list(pairs)
    if workers > 1:
        with ThreadPoolExecutor(max_workers = workers) as pool:
            results = list(pool.map(lambda pair: _scorePair(model, pair), pairs))
    else:
        results = [_scorePair(model, pair) for pair in pairs]
    scores = np.array([r[0] for r in results], dtype = np.float64)
    sims = np.array([r[1] for r in results], dtype = np.float64)
    return scores, sims

def scoreDataset(models, pairs, workers = 1):
    """Score every pair with each model; an ensemble averages its members' predictions."""
    pairs = list(pairs)
    if not models:
        raise ValueError("At least one model is needed for scoring.")
    start = time.perf_counter()
    members = [scorePairs(model, pairs, workers)[0] for model in models]
    elapsed = time.perf_counter() - start
    if pairs:
        _logger.info("inference: {0:.3f} ms per image ({1} images, {2} model(s)).".format(
            1000.0 * elapsed / (len(pairs) * len(models)), len(pairs), len(models))
        )
    return ScoredSet.fromPairs(pairs, np.mean(members, axis = 0))

def evaluate(scored, replicates = 2000, level = 0.95, seed = 0, workers = 1):
    """AUC-ROC and AUC-PR reports for one scored set."""
    return [bootstrapCi(scored, name, replicates, level, seed, workers) for name in METRICS]

def writeEvalCsv(path, reports, scope):
    seed = reports[0].seed if reports else 0
    replicates = reports[0].replicates if reports else 0
    rows = [
        (r.metric, scope, r.n, r.estimate, r.mean, r.ciLow, r.ciHigh, r.replicates, r.seed, r.level)
        for r in reports
    ]
    header = ('metric', 'level', 'n', 'estimate', 'bootstrap_mean', 'ci_low', 'ci_high', 'replicates', 'seed', 'confidence')
    return writeCsv(path, header, rows, comment = "seed={0} replicates={1}".format(seed, replicates))


##
##  Ablation.
##
AblationRow = namedtuple('AblationRow', 'variant seed fusion sa lcm gcm singleView testAuc simStart simEnd', defaults = (None, None))
AcceptanceCheck = namedtuple('AcceptanceCheck', 'name measured threshold passed')


def ablationRun(trainSet, valSet, testSet, baseConfig, variants, trainConfig, seeds = None, trainFn = None):
    """Train every variant (per seed) on identical data and report test AUC-ROC.

    GCM rows also carry the mean validation consistency loss before and after training.
    """
    if trainFn is None:
        from pyMVCCL.training import fit as trainFn
    seeds = [trainConfig.seed] if seeds is None else list(seeds)
    configs = [(name, variantConfig(baseConfig, name)) for name in variants]
    rows = []
    for seed in seeds:
        for name, config in configs:
            _logger.info("ablation: training variant '{0}' with seed {1}.".format(name, seed))
            result = trainFn(trainSet, valSet, config, trainConfig._replace(seed = seed))
            model = restoreModel(result.best)
            scores, _ = scorePairs(model, testSet, trainConfig.workers)
            auc = aucRoc(scores, [p.y for p in testSet])
            _logger.info("ablation: '{0}' seed {1}: test AUC-ROC {2:.4f}.".format(name, seed, auc))
            rows.append(AblationRow(
                name, seed, config.fusion, config.sa, config.lcm, config.gcm, config.singleView, auc,
                result.initialValSim, result.valSim,
            ))
    return rows

def _meanOrNone(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None

def ablationMeans(rows):
    """Mean test AUC (and consistency losses) per variant, in first-seen variant order."""
    groups = OrderedDict()
    for row in rows:
        groups.setdefault(row.variant, []).append(row)
    return [
        members[0]._replace(
            seed = 'mean', testAuc = float(np.mean([r.testAuc for r in members])),
            simStart = _meanOrNone(r.simStart for r in members), simEnd = _meanOrNone(r.simEnd for r in members),
        )
        for members in groups.values()
    ]

def acceptanceChecks(rows, aucMargin = 0.05, simDrop = 0.3):
    """Ordering checks on the per-variant means of an ablation run.

    'full-over-fusion': full model minus fusion baseline, at least `aucMargin`.
    'full-is-best': full model minus the best other variant, at least 0.
    'lcm-over-sa': LCM variant minus SA variant, at least 0.
    'sim-drop': decrease of the full model's validation consistency loss, at least `simDrop`.

    A check is left out when its variants are not part of `rows`.
    """
    means = OrderedDict((VARIANT_ALIASES.get(m.variant, m.variant), m) for m in ablationMeans(rows))
    full = VARIANT_ALIASES['full']
    checks = []

    def add(name, measured, threshold):
        checks.append(AcceptanceCheck(name, measured, threshold, measured >= threshold))

    if full in means and 'fusion' in means:
        add('full-over-fusion', means[full].testAuc - means['fusion'].testAuc, aucMargin)
    if full in means and len(means) > 1:
        add('full-is-best', means[full].testAuc - max(m.testAuc for name, m in means.items() if name != full), 0.0)
    if 'fusion+lcm' in means and 'fusion+sa' in means:
        add('lcm-over-sa', means['fusion+lcm'].testAuc - means['fusion+sa'].testAuc, 0.0)
    if full in means and means[full].simStart is not None and means[full].simEnd is not None:
        add('sim-drop', means[full].simStart - means[full].simEnd, simDrop)
    return checks

def writeAblationCsv(path, rows, seeds):
    header = ('variant', 'seed', 'fusion', 'sa', 'lcm', 'gcm', 'single_view', 'test_auc_roc', 'val_sim_initial', 'val_sim_final')
    body = [
        (r.variant, r.seed, int(r.fusion), int(r.sa), int(r.lcm), int(r.gcm), int(r.singleView), r.testAuc, r.simStart, r.simEnd)
        for r in list(rows) + ablationMeans(rows)
    ]
    return writeCsv(path, header, body, comment = "seeds={0}".format(",".join(str(s) for s in seeds)))
