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
from unittest import mock

from hypothesis import assume, given, settings, strategies as st
import numpy as np

from pyMVCCL.checkpoint import snapshot
from pyMVCCL.data import ViewPair
from pyMVCCL.evaluation import (
    AblationRow, DataIntegrityError, ScoredSet, UndefinedMetricError, acceptanceChecks, ablationMeans, ablationRun, aucPr, aucRoc,
    bceScores, bootstrapCi, breastLevel, evaluate, scoreDataset, scorePairs, writeAblationCsv, writeEvalCsv,
)
from pyMVCCL.model import MVCCL, ModelConfig
from pyMVCCL.training import FitResult, TrainConfig

TINY = ModelConfig(
    inputHeight = 16, inputWidth = 8, backboneStages = 3, stageWidths = (2, 3, 4),
    D = 4, DPrime = 4, heads = 2, classifierHidden = 4,
)

labelLists = st.lists(st.integers(0, 1), min_size = 2, max_size = 30)


def pairwiseAuc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    credit = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return credit / (len(pos) * len(neg))

def sweepAp(scores, labels):
    nPos = sum(labels)
    ap, prevTp = 0.0, 0
    for t in sorted(set(scores), reverse = True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and not y)
        ap += (tp - prevTp) / nPos * (tp / (tp + fp))
        prevTp = tp
    return ap

def scoredSet(scores, labels, episodes = None):
    n = len(scores)
    episodes = episodes or ["e{0}".format(i) for i in range(n)]
    return ScoredSet(["x{0}".format(i) for i in range(n)], scores, labels, episodes, ['L'] * n, ['CC'] * n)

def tinyPairs(count, seed):
    rng = np.random.default_rng(seed)
    return [
        ViewPair(rng.uniform(size = (16, 8)), rng.uniform(size = (16, 8)), idx % 2, "t{0}".format(idx), 'R', 'CC')
        for idx in range(count)
    ]


class TestRankingMetrics(unittest.TestCase):

    def testAucRocExample(self):
        self.assertEqual(aucRoc([0.9, 0.1, 0.8, 0.2], [1, 0, 0, 1]), 0.75)

    def testAucRocEdgeCases(self):
        self.assertEqual(aucRoc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]), 0.5)
        self.assertEqual(aucRoc([0.1, 0.9], [0, 1]), 1.0)
        self.assertEqual(aucRoc([0.1, 0.9], [1, 0]), 0.0)
        with self.assertRaises(UndefinedMetricError):
            aucRoc([0.1, 0.2], [1, 1])
        with self.assertRaises(DataIntegrityError):
            aucRoc([0.1, 0.2], [1, 2])
        with self.assertRaises(DataIntegrityError):
            aucRoc([0.1, 0.2, 0.3], [1, 0])

    @settings(max_examples = 200, deadline = None)
    @given(labelLists, st.integers(0, 2 ** 31 - 1))
    def testAucRocMatchesPairwiseCount(self, labels, seed):
        assume(0 < sum(labels) < len(labels))
        scores = np.random.default_rng(seed).integers(0, 5, len(labels)) / 4.0
        self.assertAlmostEqual(aucRoc(scores, labels), pairwiseAuc(list(scores), labels), places = 12)

    def testAucPrExamples(self):
        self.assertEqual(aucPr([0.9, 0.8, 0.1], [1, 1, 0]), 1.0)
        self.assertAlmostEqual(aucPr([0.9, 0.8, 0.7, 0.1], [0, 0, 0, 1]), 0.25, places = 15)
        self.assertAlmostEqual(aucPr([0.5, 0.5], [1, 0]), 0.5, places = 15)
        with self.assertRaises(UndefinedMetricError):
            aucPr([0.1, 0.2], [0, 0])

    @settings(max_examples = 200, deadline = None)
    @given(labelLists, st.integers(0, 2 ** 31 - 1))
    def testAucPrMatchesThresholdSweep(self, labels, seed):
        assume(sum(labels) > 0)
        scores = list(np.random.default_rng(seed).integers(0, 6, len(labels)) / 5.0)
        self.assertAlmostEqual(aucPr(scores, labels), sweepAp(scores, labels), places = 12)

    def testScoredSetInput(self):
        scored = scoredSet([0.9, 0.1, 0.8, 0.2], [1, 0, 0, 1])
        self.assertEqual(aucRoc(scored), 0.75)
        self.assertEqual(len(scored.subset([0, 1])), 2)
        with self.assertRaises(DataIntegrityError):
            ScoredSet(['a'], [0.1, 0.2], [1, 0], ['e'], ['L'], ['CC'])

    def testBceScores(self):
        values = bceScores([1, 0], [0.5, 0.5])
        self.assertTrue(np.allclose(values, np.log(2.0), atol = 1e-15))
        self.assertTrue(np.isfinite(bceScores([1], [0.0])).all())


class TestBootstrap(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(3)
        labels = np.arange(40) % 2
        self.scored = scoredSet(rng.normal(size = 40) + labels, labels)

    def testInterval(self):
        report = bootstrapCi(self.scored, replicates = 200, seed = 1)
        self.assertEqual((report.metric, report.n, report.replicates, report.seed, report.level), ('auc_roc', 40, 200, 1, 0.95))
        self.assertEqual(report.estimate, aucRoc(self.scored))
        self.assertTrue(0.0 <= report.ciLow <= report.ciHigh <= 1.0)
        self.assertTrue(report.ciLow <= report.mean <= report.ciHigh)

    def testReproducibleAcrossWorkers(self):
        serial = bootstrapCi(self.scored, 'auc_pr', replicates = 100, seed = 7)
        parallel = bootstrapCi(self.scored, 'auc_pr', replicates = 100, seed = 7, workers = 4)
        self.assertEqual(serial, parallel)
        self.assertNotEqual(serial, bootstrapCi(self.scored, 'auc_pr', replicates = 100, seed = 8))

    def testNarrowerAtLowerConfidence(self):
        wide = bootstrapCi(self.scored, replicates = 300, level = 0.95)
        narrow = bootstrapCi(self.scored, replicates = 300, level = 0.5)
        self.assertLessEqual(wide.ciLow, narrow.ciLow)
        self.assertGreaterEqual(wide.ciHigh, narrow.ciHigh)

    def testUndefinedResamplesAreRedrawn(self):
        report = bootstrapCi(scoredSet([0.9, 0.1], [1, 0]), replicates = 50)
        self.assertEqual((report.mean, report.ciLow, report.ciHigh), (1.0, 1.0, 1.0))

    def testNoReplicates(self):
        report = bootstrapCi(self.scored, replicates = 0)
        self.assertEqual((report.mean, report.ciLow, report.ciHigh, report.replicates), (None, None, None, 0))

    def testBadLevel(self):
        with self.assertRaises(ValueError):
            bootstrapCi(self.scored, level = 1.0)

    def testEvalCsv(self):
        reports = evaluate(self.scored, replicates = 20, seed = 3)
        self.assertEqual([r.metric for r in reports], ['auc_roc', 'auc_pr'])
        with tempfile.TemporaryDirectory() as tmp:
            text = writeEvalCsv(os.path.join(tmp, 'eval.csv'), reports, 'image')
            with open(os.path.join(tmp, 'eval.csv')) as fin:
                self.assertEqual(fin.read(), text)
        lines = text.splitlines()
        self.assertEqual(lines[0], "# seed=3 replicates=20")
        self.assertTrue(lines[1].startswith("metric,level,n,estimate"))
        self.assertTrue(lines[2].startswith("auc_roc,image,40,"))
        self.assertEqual(len(lines), 4)


class TestBreastLevel(unittest.TestCase):

    def testMeanOfViews(self):
        scored = scoredSet([0.2, 0.4, 0.9, 0.7], [0, 0, 1, 1], ['a', 'a', 'b', 'b'])
        breasts = breastLevel(scored)
        self.assertEqual(breasts.ids, ['a/L', 'b/L'])
        self.assertTrue(np.allclose(breasts.scores, [0.3, 0.8], atol = 1e-15))
        self.assertEqual(list(breasts.labels), [0, 1])

    def testConflictingLabels(self):
        with self.assertRaises(DataIntegrityError):
            breastLevel(scoredSet([0.2, 0.4], [0, 1], ['a', 'a']))


class TestScoring(unittest.TestCase):

    def testEnsembleAveragesMembers(self):
        pairs = tinyPairs(4, 0)
        models = [MVCCL(TINY, seed = 1), MVCCL(TINY, seed = 2)]
        with self.assertLogs('pyMVCCL.Evaluation', level = 'INFO'):
            scored = scoreDataset(models, pairs)
        expected = np.mean([[m.predict(p.xM, p.xA) for p in pairs] for m in models], axis = 0)
        self.assertTrue(np.allclose(scored.scores, expected, atol = 1e-15))
        self.assertEqual(scored.ids[0], 't0/R/CC')

    def testWorkersDoNotChangeScores(self):
        pairs = tinyPairs(6, 1)
        model = MVCCL(TINY, seed = 3)
        serial, sims = scorePairs(model, pairs)
        parallel, _ = scorePairs(model, pairs, workers = 3)
        self.assertTrue(np.array_equal(serial, parallel))
        self.assertTrue(np.all((sims >= -1.0) & (sims <= 1.0)))


class TestAblation(unittest.TestCase):

    def fakeFit(self, train, val, config, trainConfig):
        return FitResult(snapshot(MVCCL(config, seed = trainConfig.seed)), None, [], None)

    def testRowsPerVariantAndSeed(self):
        pairs = tinyPairs(6, 2)
        trainFn = mock.Mock(side_effect = self.fakeFit)
        rows = ablationRun(pairs, pairs, pairs, TINY, ['fusion', 'full'], TrainConfig(), seeds = [0, 1], trainFn = trainFn)
        self.assertEqual(trainFn.call_count, 4)
        self.assertEqual([c[0][3].seed for c in trainFn.call_args_list], [0, 0, 1, 1])
        self.assertEqual([(r.variant, r.seed) for r in rows], [('fusion', 0), ('full', 0), ('fusion', 1), ('full', 1)])
        self.assertEqual((rows[1].lcm, rows[1].gcm, rows[0].lcm), (True, True, False))
        for row in rows:
            self.assertTrue(0.0 <= row.testAuc <= 1.0)

    def testRowsCarryConsistencyLoss(self):
        pairs = tinyPairs(6, 3)

        def simFit(train, val, config, trainConfig):
            sims = (-0.9, -0.1) if config.gcm else (None, None)
            return FitResult(snapshot(MVCCL(config, seed = trainConfig.seed)), None, [], *sims)

        rows = ablationRun(pairs, pairs, pairs, TINY, ['fusion', 'full'], TrainConfig(), trainFn = simFit)
        self.assertEqual([(r.simStart, r.simEnd) for r in rows], [(None, None), (-0.1, -0.9)])

    def testAcceptanceChecksPass(self):
        rows = []
        for seed, shift in enumerate((0.0, 0.02)):
            rows.extend([
                AblationRow('fusion', seed, True, False, False, False, False, 0.60 + shift),
                AblationRow('fusion+sa', seed, True, True, False, False, False, 0.62 + shift),
                AblationRow('fusion+lcm', seed, True, False, True, False, False, 0.66 + shift),
                AblationRow('full', seed, True, False, True, True, False, 0.70 + shift, -0.05, -0.45 - shift),
            ])
        checks = acceptanceChecks(rows)
        self.assertEqual([c.name for c in checks], ['full-over-fusion', 'full-is-best', 'lcm-over-sa', 'sim-drop'])
        self.assertTrue(all(c.passed for c in checks))
        measured = dict((c.name, c.measured) for c in checks)
        self.assertAlmostEqual(measured['full-over-fusion'], 0.10, places = 12)
        self.assertAlmostEqual(measured['full-is-best'], 0.04, places = 12)
        self.assertAlmostEqual(measured['sim-drop'], 0.41, places = 12)

    def testAcceptanceChecksFail(self):
        rows = [
            AblationRow('fusion', 0, True, False, False, False, False, 0.60),
            AblationRow('fusion+sa+gcm', 0, True, True, False, True, False, 0.66, -0.1, -0.3),
            AblationRow('fusion+lcm+gcm', 0, True, False, True, True, False, 0.63, -0.1, -0.3),
        ]
        verdict = dict((c.name, c.passed) for c in acceptanceChecks(rows))
        self.assertEqual(verdict, {'full-over-fusion': False, 'full-is-best': False, 'sim-drop': False})

    def testAcceptanceChecksWithoutFullModel(self):
        rows = [AblationRow('fusion', 0, True, False, False, False, False, 0.6)]
        self.assertEqual(acceptanceChecks(rows), [])

    def testMeansAndCsv(self):
        rows = [
            AblationRow('fusion', 0, True, False, False, False, False, 0.6),
            AblationRow('fusion', 1, True, False, False, False, False, 0.8),
            AblationRow('single', 0, False, False, False, False, True, 0.5),
            AblationRow('single', 1, False, False, False, False, True, 0.5),
        ]
        means = ablationMeans(rows)
        self.assertEqual([(m.variant, m.seed) for m in means], [('fusion', 'mean'), ('single', 'mean')])
        self.assertAlmostEqual(means[0].testAuc, 0.7, places = 15)
        with tempfile.TemporaryDirectory() as tmp:
            text = writeAblationCsv(os.path.join(tmp, 'ablation.csv'), rows, [0, 1])
        lines = text.splitlines()
        self.assertEqual(lines[0], "# seeds=0,1")
        self.assertEqual(lines[1].split(",")[-2 : ], ["val_sim_initial", "val_sim_final"])
        self.assertEqual(lines[2], "fusion,0,1,0,0,0,0,0.6,,")
        self.assertEqual(len(lines), 2 + 4 + 2)
        self.assertTrue(lines[-1].startswith("single,mean,0,0,0,0,1,0.5"))


if __name__ == '__main__':
    unittest.main()
