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

from collections import OrderedDict
from optparse import OptionParser, make_option
import os
import sys

import numpy as np

from pyMVCCL.checkpoint import loadCheckpoint, restoreModel
from pyMVCCL.config import echoConfig, loadRunConfig
from pyMVCCL.data import (
    DataError, ViewPair, bothViewsOracle, cooccurrenceOracle, episodePairs, loadManifest,
    singleViewOracle, splitByEpisode, synthEpisodes, writeDataset,
)
from pyMVCCL.evaluation import (
    UndefinedMetricError, acceptanceChecks, ablationMeans, ablationRun, aucRoc, breastLevel, evaluate, scoreDataset,
    writeAblationCsv, writeEvalCsv,
)
from pyMVCCL.gradcheck import finiteDiffCheck
from pyMVCCL.logger import Logger
from pyMVCCL.model import ABLATION_VARIANTS, MVCCL, VARIANT_ALIASES, VARIANTS, ConfigError, ModelConfig, totalLoss, variantConfig
from pyMVCCL.module import groupOf
from pyMVCCL.tensor import DimensionError, NumericalError, UsageError, precision
from pyMVCCL.training import LAST_CHECKPOINT_FILE, fit


class GradcheckFailure(NumericalError): pass
class AcceptanceFailure(NumericalError): pass


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

GRADCHECK_CONFIG = ModelConfig(
    inputHeight = 16, inputWidth = 8, backboneStages = 3, stageWidths = (2, 3, 4),
    D = 4, DPrime = 4, heads = 2, classifierHidden = 4,
)

logger = Logger('mvccl')


class _OptionParser(OptionParser):

    def error(self, msg):
        raise UsageError(msg)


COMMON_OPTIONS = [
    make_option("-c", "--config", help = "configuration file (section.key=value lines)", dest = "config", default = None),
    make_option("--set", help = "override one configuration key, e.g. --set model.D=32 (repeatable)",
        dest = "overrides", action = "append", default = []),
    make_option("-s", "--seed", help = "seed for all random streams", dest = "seed", type = "int", default = None),
    make_option("-o", "--out", help = "output directory", dest = "out", default = None),
    make_option("-l", "--loglevel", help = "DEBUG, INFO, WARN, ERROR or CRITICAL", dest = "loglevel", default = "WARN"),
]

DATA_OPTIONS = [
    make_option("-d", "--data", help = "manifest CSV", dest = "data", default = None),
    make_option("--val", help = "validation manifest (default: split --data by episode)", dest = "val", default = None),
]


def _require(opts, *names):
    for name in names:
        if getattr(opts, name) is None:
            raise UsageError("option --{0} is required.".format(name))

def _splitData(opts, model, weights):
    """Load --data (and --val / --test when given); missing splits are cut from --data."""
    pairs = loadManifest(opts.data, model.inputHeight, model.inputWidth)
    extra = [getattr(opts, name, None) for name in ('val', 'test')][ : len(weights) - 1]
    if all(extra):
        return [pairs] + [loadManifest(path, model.inputHeight, model.inputWidth) for path in extra]
    return splitByEpisode(pairs, weights)

def _oracleAucs(episodes, cfg):
    pairs = [pair for e in episodes for pair in episodePairs(e.episodeId, e.side, e.label, e.images) if pair.mainView == 'CC']
    labels = [p.y for p in pairs]
    result = OrderedDict()
    for name, oracle in (('single-view', singleViewOracle), ('both-views', bothViewsOracle), ('co-occurrence', cooccurrenceOracle)):
        try:
            result[name] = aucRoc([oracle(p, cfg) for p in pairs], labels)
        except UndefinedMetricError:
            result[name] = None
    return result


##
##  Commands.
##
def cmdSynth(run, opts):
    _require(opts, 'out')
    cfg = run.synth
    for option, field in (('n', 'nEpisodes'), ('distractorRate', 'distractorRate'), ('distractorMode', 'distractorMode'),
            ('noiseSigma', 'noiseSigma'), ('positiveRate', 'positiveRate'), ('jitter', 'crossViewJitter')):
        value = getattr(opts, option)
        if value is not None:
            cfg = cfg._replace(**{field: value})
    cfg.validate()
    run = run._replace(synth = cfg)
    echoConfig(run, opts.out)
    episodes = synthEpisodes(cfg)
    manifest = writeDataset(episodes, opts.out)
    print("episodes: {0}".format(len(episodes)))
    print("pairs: {0}".format(2 * len(episodes)))
    print("manifest: {0}".format(manifest))
    for name, auc in _oracleAucs(episodes, cfg).items():
        print("oracle {0} AUC-ROC: {1}".format(name, "undefined" if auc is None else "{0:.4f}".format(auc)))
    return EXIT_OK

def cmdTrain(run, opts):
    _require(opts, 'data', 'out')
    run.model.validate()
    run.train.validate()
    echoConfig(run, opts.out)
    trainSet, valSet = _splitData(opts, run.model, (4, 1))
    resume = loadCheckpoint(os.path.join(opts.out, LAST_CHECKPOINT_FILE)) if opts.resume else None
    result = fit(trainSet, valSet, run.model, run.train, outDir = opts.out, resume = resume)
    print("epochs: {0}".format(len(result.metrics)))
    if result.metrics:
        final = result.metrics[-1]
        print("final val_auc: {0}".format("undefined" if final.valAuc is None else "{0:.4f}".format(final.valAuc)))
    print("best checkpoint: epoch {0}".format(result.best.epoch))
    return EXIT_OK

def cmdEval(run, opts):
    _require(opts, 'data', 'out')
    if not opts.checkpoints:
        raise UsageError("option --checkpoint is required.")
    if opts.level not in ('image', 'breast'):
        raise UsageError("--level must be 'image' or 'breast', got '{0}'.".format(opts.level))
    echoConfig(run, opts.out)
    models = [restoreModel(loadCheckpoint(path)) for path in opts.checkpoints]
    config = models[0].config
    for model in models[1 : ]:
        if (model.config.inputHeight, model.config.inputWidth) != (config.inputHeight, config.inputWidth):
            raise ConfigError("Ensemble members disagree on the input size: {0}x{1} vs {2}x{3}.".format(
                config.inputHeight, config.inputWidth, model.config.inputHeight, model.config.inputWidth)
            )
    pairs = loadManifest(opts.data, config.inputHeight, config.inputWidth, preprocessed = not opts.noPreprocess)
    for pair in pairs:
        if np.shape(pair.xM) != (config.inputHeight, config.inputWidth):
            raise ConfigError("Data image size {0}x{1} does not match the checkpoint input {2}x{3}.".format(
                np.shape(pair.xM)[0], np.shape(pair.xM)[1], config.inputHeight, config.inputWidth)
            )
    scored = scoreDataset(models, pairs, run.train.workers)
    if opts.level == 'breast':
        scored = breastLevel(scored)
    reports = evaluate(scored, opts.bootstrap, opts.confidence, run.train.seed, run.train.workers)
    writeEvalCsv(os.path.join(opts.out, 'eval.csv'), reports, opts.level)
    for r in reports:
        if r.replicates:
            print("{0} ({1}, n={2}): {3:.4f} [{4:.4f}, {5:.4f}] mean {6:.4f}".format(r.metric, opts.level, r.n, r.estimate, r.ciLow, r.ciHigh, r.mean))
        else:
            print("{0} ({1}, n={2}): {3:.4f}".format(r.metric, opts.level, r.n, r.estimate))
    return EXIT_OK

def _variantNames(text, default):
    if not text:
        return list(default)
    if text == 'all':
        return list(VARIANTS)
    return [name.strip() for name in text.split(',') if name.strip()]

def cmdAblate(run, opts):
    _require(opts, 'data', 'out')
    run.train.validate()
    variants = _variantNames(opts.variants, ABLATION_VARIANTS)
    for name in variants:
        variantConfig(run.model, name)
    if opts.seeds < 1:
        raise UsageError("--seeds must be at least 1.")
    if opts.acceptance and not {"fusion", VARIANT_ALIASES["full"]} <= set(VARIANT_ALIASES.get(name, name) for name in variants):
        raise UsageError("--acceptance compares the full model with the fusion baseline; list both variants.")
    echoConfig(run, opts.out)
    trainSet, valSet, testSet = _splitData(opts, run.model, (4, 1, 1))
    seeds = [run.train.seed + i for i in range(opts.seeds)]
    rows = ablationRun(trainSet, valSet, testSet, run.model, variants, run.train, seeds)
    writeAblationCsv(os.path.join(opts.out, 'ablation.csv'), rows, seeds)
    for row in ablationMeans(rows):
        print("{0:<16} {1:.4f}".format(row.variant, row.testAuc))
    if opts.acceptance:
        checks = acceptanceChecks(rows)
        for check in checks:
            print("{0:<16} {1:+.4f} (>= {2:.4f}) {3}".format(check.name, check.measured, check.threshold, "ok" if check.passed else "FAILED"))
        failed = [check.name for check in checks if not check.passed]
        if failed:
            raise AcceptanceFailure("Ablation acceptance failed: {0}.".format(", ".join(failed)))
    return EXIT_OK

def gradcheckVariant(name, seed = 0, tol = 1e-4, step = 1e-4):
    """End-to-end finite-difference check of the total loss at 16x8 input, in double precision."""
    with precision('double'):
        config = variantConfig(GRADCHECK_CONFIG, name)
        model = MVCCL(config, seed = seed)
        rng = np.random.default_rng(seed)
        batch = [
            ViewPair(rng.uniform(size = (16, 8)), rng.uniform(size = (16, 8)), y, "gc{0}".format(y), 'L', 'CC')
            for y in (0, 1)
        ]
        report = finiteDiffCheck(lambda: totalLoss(model, batch), model.params, step = step, tol = tol)
    return report.grouped(groupOf)

def cmdGradcheck(run, opts):
    variants = _variantNames(opts.variants, VARIANTS)
    seed = run.train.seed
    failed = []
    for name in variants:
        report = gradcheckVariant(name, seed, opts.tol)
        print("variant {0}:".format(name))
        print(str(report))
        if not report.passed:
            failed.append(name)
    if failed:
        raise GradcheckFailure("Gradient check failed for: {0}.".format(', '.join(failed)))
    return EXIT_OK


COMMANDS = OrderedDict((
    ('synth', (cmdSynth, "write a synthetic two-view dataset with planted co-occurring lesions", [
        make_option("-n", "--n", help = "number of episodes", dest = "n", type = "int", default = None),
        make_option("--distractor-rate", dest = "distractorRate", type = "float", default = None),
        make_option("--distractor-mode", help = "mismatched or single", dest = "distractorMode", default = None),
        make_option("--noise-sigma", dest = "noiseSigma", type = "float", default = None),
        make_option("--positive-rate", dest = "positiveRate", type = "float", default = None),
        make_option("--jitter", help = "cross-view lesion row jitter (pixels)", dest = "jitter", type = "int", default = None),
    ])),
    ('train', (cmdTrain, "train a model on a manifest", DATA_OPTIONS + [
        make_option("--resume", help = "continue from <out>/checkpoint.last.bin", dest = "resume", action = "store_true", default = False),
    ])),
    ('eval', (cmdEval, "score a manifest with one checkpoint or an ensemble", [
        make_option("-d", "--data", help = "manifest CSV", dest = "data", default = None),
        make_option("--checkpoint", help = "checkpoint file (repeat for an ensemble)", dest = "checkpoints", action = "append", default = []),
        make_option("--level", help = "image or breast", dest = "level", default = "image"),
        make_option("--bootstrap", help = "bootstrap replicates (0: point estimates only)", dest = "bootstrap", type = "int", default = 2000),
        make_option("--confidence", dest = "confidence", type = "float", default = 0.95),
        make_option("--no-preprocess", help = "images are already preprocessed", dest = "noPreprocess", action = "store_true", default = False),
    ])),
    ('ablate', (cmdAblate, "train and test each module variant", DATA_OPTIONS + [
        make_option("--test", help = "test manifest (default: split --data by episode)", dest = "test", default = None),
        make_option("--variants", help = "comma separated variant names, 'full' or 'all'", dest = "variants", default = None),
        make_option("--seeds", help = "number of consecutive seeds", dest = "seeds", type = "int", default = 1),
        make_option("--acceptance", help = "check the variant orderings, exit 3 when one fails", dest = "acceptance", action = "store_true", default = False),
    ])),
    ('gradcheck', (cmdGradcheck, "finite-difference check of every parameter group", [
        make_option("--tol", dest = "tol", type = "float", default = 1e-4),
        make_option("--variants", help = "comma separated variant names (default: all)", dest = "variants", default = None),
    ])),
))


def usage():
    lines = ["usage: mvccl <command> [options]", "", "commands:"]
    lines.extend("  {0:<10} {1}".format(name, entry[1]) for name, entry in COMMANDS.items())
    return "\n".join(lines)

def main(argv = None):
    argv = sys.argv[1 : ] if argv is None else list(argv)
    if not argv or argv[0] not in COMMANDS:
        sys.stderr.write(usage() + "\n")
        return EXIT_USAGE
    command = argv[0]
    fn, description, options = COMMANDS[command]
    op = _OptionParser(usage = "%prog {0} [options]".format(command), version = '%prog ' + __version__,
        description = description, option_list = COMMON_OPTIONS + options, prog = 'mvccl')
    try:
        opts, args = op.parse_args(argv[1 : ])
        if args:
            raise UsageError("unexpected arguments: {0}".format(' '.join(args)))
        Logger().setLevel(opts.loglevel)
        run = loadRunConfig(command, opts.config, opts.overrides, opts.seed, opts.out)
        return fn(run, opts)
    except (UsageError, ConfigError, DimensionError) as e:
        logger.error(e)
        return EXIT_USAGE
    except (DataError, UndefinedMetricError, IOError, OSError) as e:
        logger.error(e)
        return EXIT_DATA
    except NumericalError as e:
        logger.error(e)
        return EXIT_NUMERICAL


if __name__ == '__main__':
    sys.exit(main())
