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

__all__ = ['TrainConfig', 'TrainingDivergedError', 'EpochMetrics', 'FitResult', 'fit', 'validate', 'writeMetrics', 'readMetrics', 'METRICS_HEADER']

from collections import namedtuple, OrderedDict
import csv
import io
import os

import numpy as np

from pyMVCCL.checkpoint import loadCheckpoint, restoreModel, saveCheckpoint, snapshot
from pyMVCCL.data import DataError, augment
from pyMVCCL.evaluation import UndefinedMetricError, aucRoc, bceScores, scorePairs
from pyMVCCL.logger import Logger
from pyMVCCL.model import MVCCL, ConfigError, totalLoss
from pyMVCCL.optim import Adam, ReduceLROnPlateau
from pyMVCCL.tensor import PRECISIONS, NumericalError, backward, precision
from pyMVCCL.utils import slicer, writeCsv


class TrainingDivergedError(NumericalError):

    def __init__(self, message, checkpoint = None):
        super(TrainingDivergedError, self).__init__(message)
        self.checkpoint = checkpoint


_TRAIN_DEFAULTS = OrderedDict((
    ('lr', 1e-4),
    ('weightDecay', 1e-6),
    ('batchSize', 8),
    ('epochs', 10),
    ('plateauFactor', 0.1),
    ('plateauPatience', 2),
    ('beta1', 0.9),
    ('beta2', 0.999),
    ('adamEps', 1e-8),
    ('seed', 0),
    ('precision', 'single'),
    ('augment', True),
    ('workers', 1),
))


class TrainConfig(namedtuple('TrainConfig', list(_TRAIN_DEFAULTS.keys()), defaults = list(_TRAIN_DEFAULTS.values()))):

    __slots__ = ()

    def validate(self):
        if not self.lr > 0:
            raise ConfigError("train.lr must be positive, got {0}.".format(self.lr))
        if self.weightDecay < 0:
            raise ConfigError("train.weightDecay must be non-negative, got {0}.".format(self.weightDecay))
        if not 0.0 < self.plateauFactor < 1.0:
            raise ConfigError("train.plateauFactor must lie in (0, 1), got {0}.".format(self.plateauFactor))
        if self.plateauPatience < 1:
            raise ConfigError("train.plateauPatience must be at least 1, got {0}.".format(self.plateauPatience))
        if self.batchSize < 1:
            raise ConfigError("train.batchSize must be at least 1, got {0}.".format(self.batchSize))
        if self.epochs < 0:
            raise ConfigError("train.epochs must be non-negative, got {0}.".format(self.epochs))
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0) or not self.adamEps > 0:
            raise ConfigError("train: Adam needs beta1, beta2 in [0, 1) and adamEps > 0.")
        if self.precision not in PRECISIONS:
            raise ConfigError("train.precision must be one of {0}, got '{1}'.".format(', '.join(sorted(PRECISIONS)), self.precision))
        if self.workers < 1:
            raise ConfigError("train.workers must be at least 1, got {0}.".format(self.workers))
        return self


EpochMetrics = namedtuple('EpochMetrics', 'epoch trainLoss valBce valAuc lr')
FitResult = namedtuple('FitResult', 'best last metrics valSim initialValSim', defaults = (None, None))
ValidationResult = namedtuple('ValidationResult', 'bce auc sim')

METRICS_HEADER = ('epoch', 'train_loss', 'val_bce', 'val_auc', 'lr')
CHECKPOINT_FILE = 'checkpoint.bin'
LAST_CHECKPOINT_FILE = 'checkpoint.last.bin'
METRICS_FILE = 'metrics.csv'


def writeMetrics(path, metrics):
    return writeCsv(path, METRICS_HEADER, [(m.epoch, m.trainLoss, m.valBce, m.valAuc, m.lr) for m in metrics])

def readMetrics(path):
    result = []
    with io.open(path, 'r', encoding = 'utf-8', newline = '') as fin:
        rows = [row for row in csv.reader(fin) if row and not row[0].startswith('#')]
    for row in rows[1 : ]:
        epoch, trainLoss, valBce, valAuc, lr = row
        result.append(EpochMetrics(int(epoch), float(trainLoss), float(valBce), float(valAuc) if valAuc else None, float(lr)))
    return result

def validate(model, pairs, workers = 1):
    """Validation BCE, AUC-ROC (None when a class is missing) and mean consistency loss."""
    scores, sims = scorePairs(model, pairs, workers)
    labels = np.array([p.y for p in pairs])
    try:
        auc = aucRoc(scores, labels)
    except UndefinedMetricError:
        auc = None
    sim = float(np.mean(sims)) if model.config.gcm else None
    return ValidationResult(float(np.mean(bceScores(labels, scores))), auc, sim)

def _groupEpisodes(pairs):
    groups = OrderedDict()
    for pair in pairs:
        groups.setdefault((pair.episodeId, pair.side), []).append(pair)
    return list(groups.values())

def _epochOrder(episodes, rng):
    """Shuffle episodes, then the main-view orderings within each episode."""
    order = []
    for idx in rng.permutation(len(episodes)):
        members = episodes[idx]
        order.extend(members[i] for i in rng.permutation(len(members)))
    return order


def fit(trainSet, valSet, modelConfig, trainConfig, outDir = None, resume = None):
    """Train with Adam and plateau decay; keep the checkpoint with the best validation AUC.

    With `outDir` the best and last checkpoints plus the metrics CSV are
    written after every epoch. `resume` continues from a last-epoch
    checkpoint; earlier metrics rows are taken from the existing CSV.
    For GCM models `initialValSim` and `valSim` hold the mean validation
    consistency loss of the starting and the final weights.
    """
    logger = Logger('Training')
    trainConfig.validate()
    modelConfig.validate()
    trainSet, valSet = list(trainSet), list(valSet)
    if not trainSet or not valSet:
        raise DataError("Training needs non-empty train and validation sets ({0} / {1} pairs).".format(len(trainSet), len(valSet)))

    with precision(trainConfig.precision):
        if resume is not None:
            if tuple(resume.modelConfig) != tuple(modelConfig):
                raise ConfigError("Checkpoint was trained with a different model configuration.")
            model = restoreModel(resume)
        else:
            model = MVCCL(modelConfig, seed = trainConfig.seed)
        rng = np.random.default_rng(trainConfig.seed)
        optimizer = Adam(model.params, trainConfig.lr, trainConfig.weightDecay, trainConfig.beta1, trainConfig.beta2, trainConfig.adamEps)
        scheduler = ReduceLROnPlateau(optimizer, trainConfig.plateauFactor, trainConfig.plateauPatience)
        metrics = []
        startEpoch = 0
        bestAuc = None
        best = None
        if resume is not None:
            if resume.adamM is not None:
                optimizer.loadState(resume.adamT, resume.adamM, resume.adamV)
                optimizer.lr = resume.lr
            scheduler.loadState(resume.schedulerBest, resume.schedulerBad, resume.reductions)
            if resume.rngState is not None:
                rng.bit_generator.state = resume.rngState
            startEpoch = resume.epoch
            bestAuc = resume.bestValAuc
            if outDir is not None:
                if os.path.exists(os.path.join(outDir, CHECKPOINT_FILE)):
                    best = loadCheckpoint(os.path.join(outDir, CHECKPOINT_FILE))
                if os.path.exists(os.path.join(outDir, METRICS_FILE)):
                    metrics = [m for m in readMetrics(os.path.join(outDir, METRICS_FILE)) if m.epoch <= startEpoch]
        last = snapshot(model, startEpoch, optimizer, scheduler, rng, bestAuc)
        if best is None:
            best = last
        if outDir is not None:
            if not os.path.isdir(outDir):
                os.makedirs(outDir)
            if resume is None:
                saveCheckpoint(os.path.join(outDir, CHECKPOINT_FILE), best)
                saveCheckpoint(os.path.join(outDir, LAST_CHECKPOINT_FILE), last)
                writeMetrics(os.path.join(outDir, METRICS_FILE), metrics)

        episodes = _groupEpisodes(trainSet)
        valSim = initialValSim = None
        if modelConfig.gcm:
            initialValSim = validate(model, valSet, trainConfig.workers).sim
            logger.info("epoch {0}: val_sim={1:.6f} before training.".format(startEpoch, initialValSim))
        for epoch in range(startEpoch + 1, trainConfig.epochs + 1):
            lr = optimizer.lr
            total = 0.0
            try:
                for batch in slicer(_epochOrder(episodes, rng), trainConfig.batchSize, list):
                    if trainConfig.augment:
                        batch = [augment(pair, rng) for pair in batch]
                    model.params.zeroGrad()
                    loss = totalLoss(model, batch)
                    if not np.isfinite(loss.item()):
                        raise NumericalError("Loss is {0}.".format(loss.item()))
                    backward(loss)
                    optimizer.step()
                    total += loss.item() * len(batch)
                val = validate(model, valSet, trainConfig.workers)
            except NumericalError as e:
                logger.error("training diverged in epoch {0}: {1}".format(epoch, e))
                if outDir is not None:
                    saveCheckpoint(os.path.join(outDir, LAST_CHECKPOINT_FILE), last)
                raise TrainingDivergedError("Training diverged in epoch {0}: {1}".format(epoch, e), last)
            trainLoss = total / len(trainSet)
            if val.auc is None:
                logger.warn("validation AUC undefined in epoch {0} (single-class validation set).".format(epoch))
            scheduler.step(val.bce)
            improved = val.auc is not None and (bestAuc is None or val.auc > bestAuc)
            if improved:
                bestAuc = val.auc
            metrics.append(EpochMetrics(epoch, trainLoss, val.bce, val.auc, lr))
            last = snapshot(model, epoch, optimizer, scheduler, rng, bestAuc)
            if improved:
                best = last
            valSim = val.sim
            logger.info("epoch {0}: train_loss={1:.6f} val_bce={2:.6f} val_auc={3} lr={4:.3e}".format(
                epoch, trainLoss, val.bce, "n/a" if val.auc is None else "{0:.4f}".format(val.auc), lr)
            )
            if valSim is not None:
                logger.debug("epoch {0}: val_sim={1:.6f}".format(epoch, valSim))
            if outDir is not None:
                if improved:
                    saveCheckpoint(os.path.join(outDir, CHECKPOINT_FILE), best)
                saveCheckpoint(os.path.join(outDir, LAST_CHECKPOINT_FILE), last)
                writeMetrics(os.path.join(outDir, METRICS_FILE), metrics)
    return FitResult(best, last, metrics, valSim, initialValSim)
