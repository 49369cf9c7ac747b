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

"""Two-view classifier: shared backbone, global consistency and local co-occurrence modules."""

__all__ = [
    'ConfigError', 'ModelConfig', 'ForwardOutput', 'MVCCL', 'VARIANTS', 'ABLATION_VARIANTS', 'VARIANT_ALIASES',
    'variantConfig', 'multiHeadAttention', 'positionCodes', 'cosine', 'consistencyLoss', 'bceLoss', 'totalLoss',
]

from collections import namedtuple, OrderedDict
import math

import numpy as np

from pyMVCCL.logger import Logger
from pyMVCCL.module import Module, ParameterStore
from pyMVCCL.tensor import (
    DimensionError, Pooling, Tensor, clip, concat, conv2d, getItem, log, maximum, mean, noGrad, permute, poolGlobal,
    relu, reshape, scale, sigmoid, softmaxRows, sqrt, sumAll, transpose,
)
from pyMVCCL.utils import formatShape


class ConfigError(ValueError): pass


SCALINGS = ('model', 'head')

_MODEL_DEFAULTS = OrderedDict((
    ('inputHeight', 96),
    ('inputWidth', 48),
    ('backboneStages', 4),
    ('stageWidths', (16, 32, 64, 64)),
    ('D', 64),
    ('DPrime', 32),
    ('heads', 4),
    ('fusion', True),
    ('sa', False),
    ('lcm', True),
    ('gcm', True),
    ('singleView', False),
    ('epsilon', 1e-8),
    ('lambdaSim', 1.0),
    ('scaling', 'model'),
    ('classifierHidden', 64),
    ('tokenPositions', True),
))


class ModelConfig(namedtuple('ModelConfig', list(_MODEL_DEFAULTS.keys()), defaults = list(_MODEL_DEFAULTS.values()))):
    """Architecture hyper-parameters and module switches.

    `scaling` selects the attention logit divisor: 'model' divides by sqrt(D),
    'head' by sqrt(DPrime / heads).

    `tokenPositions` adds fixed row / column codes to attention queries and keys
    (values stay position-free), so LCM and SA can relate findings by location.
    """

    __slots__ = ()

    def validate(self):
        for field in ('inputHeight', 'inputWidth', 'backboneStages', 'D', 'DPrime', 'heads', 'classifierHidden'):
            if int(getattr(self, field)) < 1:
                raise ConfigError("model.{0} must be positive, got {1}.".format(field, getattr(self, field)))
        factor = 2 ** self.backboneStages
        if self.inputHeight % factor or self.inputWidth % factor:
            raise ConfigError("Input {0}x{1} is not divisible by 2^{2}.".format(
                self.inputHeight, self.inputWidth, self.backboneStages)
            )
        if len(self.stageWidths) != self.backboneStages:
            raise ConfigError("model.stageWidths lists {0} widths for {1} stages.".format(
                len(self.stageWidths), self.backboneStages)
            )
        if any(int(w) < 1 for w in self.stageWidths):
            raise ConfigError("model.stageWidths must be positive, got {0}.".format(self.stageWidths))
        if self.DPrime % self.heads:
            raise ConfigError("model.DPrime={0} is not divisible by model.heads={1}.".format(self.DPrime, self.heads))
        if not self.epsilon > 0:
            raise ConfigError("model.epsilon must be positive, got {0}.".format(self.epsilon))
        if self.lambdaSim < 0:
            raise ConfigError("model.lambdaSim must be non-negative, got {0}.".format(self.lambdaSim))
        if self.scaling not in SCALINGS:
            raise ConfigError("model.scaling must be one of {0}, got '{1}'.".format(', '.join(SCALINGS), self.scaling))
        if self.sa and self.lcm:
            raise ConfigError("model.sa and model.lcm are alternatives and cannot both be enabled.")
        if self.singleView and (self.fusion or self.sa or self.lcm or self.gcm):
            raise ConfigError("model.singleView excludes fusion, sa, lcm and gcm.")
        if self.classifierWidth == 0:
            raise ConfigError("No classifier input: enable at least one of fusion, gcm, lcm, sa or singleView.")
        return self

    @property
    def featureShape(self):
        factor = 2 ** self.backboneStages
        return (self.inputHeight // factor, self.inputWidth // factor, self.D)

    @property
    def globalWidth(self):
        if self.gcm or self.singleView:
            return self.D
        if self.fusion:
            return 2 * self.D
        return 0

    @property
    def localWidth(self):
        return 2 * self.DPrime if (self.lcm or self.sa) else 0

    @property
    def classifierWidth(self):
        return self.globalWidth + self.localWidth

    @property
    def divisor(self):
        if self.scaling == 'head':
            return math.sqrt(self.DPrime / self.heads)
        return math.sqrt(self.D)


##
##  Module switches of the ablation study; 'single' is the one-view baseline.
##
VARIANTS = OrderedDict((
    ('fusion', dict(fusion = True, sa = False, lcm = False, gcm = False)),
    ('fusion+sa', dict(fusion = True, sa = True, lcm = False, gcm = False)),
    ('fusion+lcm', dict(fusion = True, sa = False, lcm = True, gcm = False)),
    ('fusion+gcm', dict(fusion = True, sa = False, lcm = False, gcm = True)),
    ('fusion+sa+gcm', dict(fusion = True, sa = True, lcm = False, gcm = True)),
    ('fusion+lcm+gcm', dict(fusion = True, sa = False, lcm = True, gcm = True)),
    ('single', dict(fusion = False, sa = False, lcm = False, gcm = False, singleView = True)),
))

ABLATION_VARIANTS = tuple(name for name in VARIANTS if name != 'single')

VARIANT_ALIASES = {'full': 'fusion+lcm+gcm'}


def variantConfig(base, name):
    name = VARIANT_ALIASES.get(name, name)
    try:
        flags = dict(VARIANTS[name])
    except KeyError:
        raise ConfigError("Unknown variant '{0}' (known: {1}).".format(name, ', '.join(list(VARIANTS) + list(VARIANT_ALIASES))))
    flags.setdefault('singleView', False)
    return base._replace(**flags).validate()


ForwardOutput = namedtuple('ForwardOutput', 'yHat zG zM zA gM gA gTildeM gTildeA attention')


##
##  Building blocks.
##
class Mlp(Module):
    """Two-layer perceptron inDim -> hidden -> outDim with relu hidden and linear output."""

    def __init__(self, config, store, rng, prefix, sizes):
        self.sizes = tuple(sizes)
        super(Mlp, self).__init__(config, store, rng, prefix)

    def parameterSpecs(self):
        inDim, hidden, outDim = self.sizes
        return (
            ('w1', (inDim, hidden), inDim),
            ('b1', (hidden, ), None),
            ('w2', (hidden, outDim), hidden),
            ('b2', (outDim, ), None),
        )

    def forward(self, x):
        """Apply row-wise to an n x inDim matrix, or to a single vector."""
        vector = x.ndim == 1
        if vector:
            x = reshape(x, (1, x.shape[0]))
        if x.shape[1] != self.sizes[0]:
            raise DimensionError("{0}: expected width {1}, got {2}.".format(self.PREFIX, self.sizes[0], formatShape(x.shape)))
        h = relu(x @ self.w1 + self.b1)
        y = h @ self.w2 + self.b2
        return reshape(y, (self.sizes[2], )) if vector else y


class Backbone(Module):
    """Stride-2 3x3 convolution stages followed by a 1x1 projection to D channels."""

    PREFIX = 'backbone'

    def parameterSpecs(self):
        specs = []
        cIn = 1
        for idx, width in enumerate(self.config.stageWidths):
            specs.append(("conv{0}_w".format(idx), (width, cIn, 3, 3), cIn * 9))
            specs.append(("conv{0}_b".format(idx), (width, 1, 1), None))
            cIn = width
        specs.append(('proj_w', (self.config.D, cIn, 1, 1), cIn))
        specs.append(('proj_b', (self.config.D, 1, 1), None))
        return specs

    def forward(self, x):
        cfg = self.config
        if x.shape != (1, cfg.inputHeight, cfg.inputWidth):
            raise DimensionError("Backbone expects input {0}, got {1}.".format(
                formatShape((1, cfg.inputHeight, cfg.inputWidth)), formatShape(x.shape))
            )
        h = x
        for idx in range(cfg.backboneStages):
            h = relu(conv2d(h, getattr(self, "conv{0}_w".format(idx)), stride = 2, padding = 1) + getattr(self, "conv{0}_b".format(idx)))
        u = conv2d(h, self.proj_w) + self.proj_b
        return permute(u, (1, 2, 0))


class Projections(Module):
    """Query / key / value matrices D x DPrime of one attention direction."""

    def parameterSpecs(self):
        shape = (self.config.D, self.config.DPrime)
        return (
            ('wq', shape, self.config.D),
            ('wk', shape, self.config.D),
            ('wv', shape, self.config.D),
        )

    def attend(self, q, k, v):
        return multiHeadAttention(q, k, v, self.wq, self.wk, self.wv, self.config.heads, self.config.divisor)


def multiHeadAttention(q, k, v, wq, wk, wv, heads, divisor = None):
    """Scaled dot-product attention split into `heads` column slices of the projections.

    Returns the n_q x DPrime output and the list of per-head n_q x n_k attention maps.
    `divisor` defaults to sqrt of the token width D.
    """
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DimensionError("Attention expects token matrices, got {0}, {1}, {2}.".format(
            formatShape(q.shape), formatShape(k.shape), formatShape(v.shape))
        )
    width = q.shape[1]
    if k.shape[1] != width or v.shape[1] != width:
        raise DimensionError("Attention token widths disagree: {0}, {1}, {2}.".format(
            formatShape(q.shape), formatShape(k.shape), formatShape(v.shape))
        )
    if k.shape[0] != v.shape[0]:
        raise DimensionError("Attention needs as many keys as values, got {0} and {1}.".format(
            formatShape(k.shape), formatShape(v.shape))
        )
    for w in (wq, wk, wv):
        if w.ndim != 2 or w.shape[0] != width or w.shape != wq.shape:
            raise DimensionError("Projection {0} does not map width {1}.".format(formatShape(w.shape), width))
    dPrime = wq.shape[1]
    if heads < 1 or dPrime % heads:
        raise ConfigError("Projection width {0} is not divisible by {1} heads.".format(dPrime, heads))
    if divisor is None:
        divisor = math.sqrt(width)
    qp, kp, vp = q @ wq, k @ wk, v @ wv
    headWidth = dPrime // heads
    outputs, maps = [], []
    for head in range(heads):
        cols = (slice(None), slice(head * headWidth, (head + 1) * headWidth))
        qh, kh, vh = getItem(qp, cols), getItem(kp, cols), getItem(vp, cols)
        weights = softmaxRows(scale(qh @ transpose(kh), 1.0 / divisor))
        maps.append(weights)
        outputs.append(weights @ vh)
    out = outputs[0] if heads == 1 else concat(outputs, axis = 1)
    return out, maps


def tokens(u):
    h, w, d = u.shape
    return reshape(u, (h * w, d))

def _sinusoid(positions, width):
    codes = np.zeros((len(positions), width))
    freqs = np.exp(np.arange(0, width, 2) * -(math.log(10000.0) / max(width, 1)))
    angles = np.outer(positions, freqs)
    codes[ : , 0::2] = np.sin(angles)
    codes[ : , 1::2] = np.cos(angles[ : , : width // 2])
    return codes

def positionCodes(height, width, d):
    """Fixed sinusoidal codes of the row-major token grid, (height * width) x d.

    The first d // 2 channels encode the row index, the remaining ones the column index.
    """
    rows = np.repeat(np.arange(height), width)
    cols = np.tile(np.arange(width), height)
    half = d // 2
    return np.concatenate([_sinusoid(rows, half), _sinusoid(cols, d - half)], axis = 1)

def withPositions(t, height, width):
    return t + Tensor(positionCodes(height, width, t.shape[1]), dtype = t.dtype)

def averageTokens(t, height, width):
    return poolGlobal(reshape(t, (height, width, t.shape[1])), Pooling.AVG)

def _checkSameShape(name, uM, uA):
    if uM.shape != uA.shape:
        raise DimensionError("{0}: view feature maps differ, {1} vs {2}.".format(name, formatShape(uM.shape), formatShape(uA.shape)))
    if uM.ndim != 3:
        raise DimensionError("{0}: expected H x W x D feature maps, got {1}.".format(name, formatShape(uM.shape)))


class GlobalConsistencyModule(Module):
    """Cross-view mappings between globally max-pooled features."""

    PREFIX = 'gcm'

    def __init__(self, config, store, rng = None):
        super(GlobalConsistencyModule, self).__init__(config, store, rng)
        sizes = (config.D, config.D, config.D)
        self.aToM = Mlp(config, store, rng, 'gcm.a2m', sizes)
        self.mToA = Mlp(config, store, rng, 'gcm.m2a', sizes)

    def forward(self, uM, uA):
        _checkSameShape('GCM', uM, uA)
        gM = poolGlobal(uM, Pooling.MAX)
        gA = poolGlobal(uA, Pooling.MAX)
        gTildeM = self.aToM.forward(gA)
        gTildeA = self.mToA.forward(gM)
        return gM + gTildeM, gM, gA, gTildeM, gTildeA


class LocalCooccurrenceModule(Module):
    """Each view's tokens query the other view's tokens; a shared token MLP follows."""

    PREFIX = 'lcm'

    def __init__(self, config, store, rng = None):
        super(LocalCooccurrenceModule, self).__init__(config, store, rng)
        self.main = Projections(config, store, rng, 'lcm.m')
        self.aux = Projections(config, store, rng, 'lcm.a')
        self.mlp = Mlp(config, store, rng, 'lcm.mlp', (config.DPrime, config.DPrime, config.DPrime))

    def forward(self, uM, uA):
        _checkSameShape('LCM', uM, uA)
        height, width, _ = uM.shape
        tokensM, tokensA = tokens(uM), tokens(uA)
        keysM, keysA = tokensM, tokensA
        if self.config.tokenPositions:
            keysM, keysA = withPositions(tokensM, height, width), withPositions(tokensA, height, width)
        attendedM, mapsM = self.main.attend(keysM, keysA, tokensA)
        attendedA, mapsA = self.aux.attend(keysA, keysM, tokensM)
        zM = averageTokens(self.mlp.forward(attendedM), height, width)
        zA = averageTokens(self.mlp.forward(attendedA), height, width)
        return zM, zA, {'main': mapsM, 'aux': mapsA}


class SelfAttentionModule(Module):
    """Self-attention over the joint token set of both views."""

    PREFIX = 'sa'

    def __init__(self, config, store, rng = None):
        super(SelfAttentionModule, self).__init__(config, store, rng)
        self.proj = Projections(config, store, rng, 'sa.proj')
        self.mlp = Mlp(config, store, rng, 'sa.mlp', (config.DPrime, config.DPrime, config.DPrime))

    def forward(self, uM, uA):
        _checkSameShape('SA', uM, uA)
        height, width, _ = uM.shape
        n = height * width
        tokensM, tokensA = tokens(uM), tokens(uA)
        joint = concat([tokensM, tokensA], axis = 0)
        keys = joint
        if self.config.tokenPositions:
            keys = concat([withPositions(tokensM, height, width), withPositions(tokensA, height, width)], axis = 0)
        attended, maps = self.proj.attend(keys, keys, joint)
        transformed = self.mlp.forward(attended)
        zM = averageTokens(getItem(transformed, slice(0, n)), height, width)
        zA = averageTokens(getItem(transformed, slice(n, 2 * n)), height, width)
        return zM, zA, {'joint': maps}


##
##  Network.
##
class MVCCL(object):
    """Paired-view classifier.

    A fresh network draws its parameters from `seed`; passing `store` binds the
    modules to existing parameters (checkpoint loading, evaluation replicas).
    """

    def __init__(self, config, store = None, seed = 0):
        self.config = config.validate()
        self.logger = Logger('MVCCL')
        rng = None
        if store is None:
            store = ParameterStore()
            rng = np.random.default_rng(seed)
        self.params = store
        try:
            self.backbone = Backbone(config, store, rng)
            self.gcm = GlobalConsistencyModule(config, store, rng) if config.gcm else None
            self.lcm = LocalCooccurrenceModule(config, store, rng) if config.lcm else None
            self.sa = SelfAttentionModule(config, store, rng) if config.sa else None
            self.classifier = Mlp(config, store, rng, 'classifier', (config.classifierWidth, config.classifierHidden, 1))
        except (KeyError, DimensionError) as e:
            raise ConfigError("Parameters do not fit the model configuration: {0}".format(e.args[0]))
        if rng is None:
            used = set(self.parameterNames())
            unused = [name for name in store if name not in used]
            if unused:
                raise ConfigError("Parameters not used by the model configuration: {0}.".format(', '.join(unused)))

    def parameterNames(self):
        modules = [self.backbone]
        if self.gcm:
            modules.extend([self.gcm.aToM, self.gcm.mToA])
        if self.lcm:
            modules.extend([self.lcm.main, self.lcm.aux, self.lcm.mlp])
        if self.sa:
            modules.extend([self.sa.proj, self.sa.mlp])
        modules.append(self.classifier)
        return [name for module in modules for name, _ in module.parameters()]

    @property
    def dtype(self):
        return self.backbone.conv0_w.dtype

    def asInput(self, image):
        cfg = self.config
        if isinstance(image, Tensor):
            data = image.data
        else:
            data = np.asarray(image)
        if data.shape not in ((cfg.inputHeight, cfg.inputWidth), (1, cfg.inputHeight, cfg.inputWidth)):
            raise DimensionError("Image {0} does not match the configured input {1}x{2}.".format(
                formatShape(data.shape), cfg.inputHeight, cfg.inputWidth)
            )
        return Tensor(data.reshape(1, cfg.inputHeight, cfg.inputWidth), dtype = self.dtype)

    def backboneForward(self, x):
        return self.backbone.forward(self.asInput(x))

    def gcmForward(self, uM, uA):
        if self.gcm is None:
            raise ConfigError("Global consistency module is disabled.")
        return self.gcm.forward(uM, uA)

    def lcmForward(self, uM, uA):
        if self.lcm is None:
            raise ConfigError("Local co-occurrence module is disabled.")
        zM, zA, _ = self.lcm.forward(uM, uA)
        return zM, zA

    def saForward(self, uM, uA):
        if self.sa is None:
            raise ConfigError("Self-attention module is disabled.")
        zM, zA, _ = self.sa.forward(uM, uA)
        return zM, zA

    def fusionClassify(self, zG = None, zM = None, zA = None, fallback = ()):
        """Concatenate the global slot (`zG`, else `fallback`) with the local features and classify."""
        features = [zG] if zG is not None else list(fallback)
        features.extend(z for z in (zM, zA) if z is not None)
        if not features:
            raise ConfigError("Classifier called without any features.")
        h = concat(features, axis = 0)
        if h.shape != (self.config.classifierWidth, ):
            raise DimensionError("Classifier expects {0} features, got {1}.".format(self.config.classifierWidth, formatShape(h.shape)))
        return sigmoid(reshape(self.classifier.forward(h), ()))

    def forward(self, xM, xA = None):
        cfg = self.config
        uM = self.backboneForward(xM)
        if cfg.singleView:
            uA = None
        elif xA is None:
            raise ConfigError("Two-view model called without the auxiliary view.")
        else:
            uA = self.backboneForward(xA)
        zG = gM = gA = gTildeM = gTildeA = zM = zA = None
        attention = {}
        fallback = ()
        if cfg.gcm:
            zG, gM, gA, gTildeM, gTildeA = self.gcm.forward(uM, uA)
        elif cfg.singleView:
            gM = poolGlobal(uM, Pooling.MAX)
            fallback = (gM, )
        elif cfg.fusion:
            gM, gA = poolGlobal(uM, Pooling.MAX), poolGlobal(uA, Pooling.MAX)
            fallback = (gM, gA)
        if cfg.lcm:
            zM, zA, attention = self.lcm.forward(uM, uA)
        elif cfg.sa:
            zM, zA, attention = self.sa.forward(uM, uA)
        yHat = self.fusionClassify(zG, zM, zA, fallback)
        self.logger.debug("forward: yHat={0:.6f}".format(yHat.item()))
        return ForwardOutput(yHat, zG, zM, zA, gM, gA, gTildeM, gTildeA, attention)

    def predict(self, xM, xA = None):
        with noGrad():
            return self.forward(xM, xA).yHat.item()


##
##  Losses.
##
def cosine(x1, x2, epsilon = 1e-8):
    if x1.shape != x2.shape:
        raise DimensionError("cosine: shapes {0} and {1} differ.".format(formatShape(x1.shape), formatShape(x2.shape)))
    norms = sqrt(sumAll(x1 * x1) * sumAll(x2 * x2))
    return sumAll(x1 * x2) / maximum(norms, epsilon)

def consistencyLoss(gM, gA, gTildeM, gTildeA, epsilon = 1e-8):
    return scale(cosine(gTildeM, gM, epsilon) + cosine(gTildeA, gA, epsilon), -0.5)

BCE_CLAMP = 1e-7

def bceLoss(y, yHat):
    y = float(y)
    p = clip(yHat, BCE_CLAMP, 1.0 - BCE_CLAMP)
    if y == 1.0:
        return -log(p)
    if y == 0.0:
        return -log(1.0 - p)
    return scale(log(p), -y) + scale(log(1.0 - p), y - 1.0)

def exampleLoss(model, pair, lambdaSim = None):
    lam = model.config.lambdaSim if lambdaSim is None else lambdaSim
    out = model.forward(pair.xM, pair.xA)
    loss = bceLoss(pair.y, out.yHat)
    if model.config.gcm and lam > 0:
        sim = consistencyLoss(out.gM, out.gA, out.gTildeM, out.gTildeA, model.config.epsilon)
        loss = loss + scale(sim, lam)
    return loss

def totalLoss(model, batch, lambdaSim = None):
    """Mean over the batch of BCE plus the weighted consistency term (GCM only)."""
    batch = list(batch)
    if not batch:
        raise ConfigError("Loss of an empty batch is undefined.")
    terms = [reshape(exampleLoss(model, pair, lambdaSim), (1, )) for pair in batch]
    return mean(concat(terms, axis = 0))
