"""Lightweight clothing-fashion classification network.

Five convolutions (BN + ReLU each), four ceil-mode 3x3/2 max-poolings, and
two inner-product layers ending in one logit per fashion-year class.
"""

from dataclasses import dataclass

import numpy as np

from . import nn, ops
from .errors import ShapeError, ValueRangeError
from .ops import _pool_extent
from .tensor import Tensor

# (kernel, stride, pad) per convolution; pads chosen so floor arithmetic
# yields the reference output extents
CONV_SCHEDULE = ((11, 4, 4), (5, 1, 2), (3, 1, 1), (3, 1, 1), (3, 1, 1))
POOL_K, POOL_S = 3, 2


@dataclass
class FashionNetConfig:
    input_h: int = 768
    input_w: int = 384
    class_count: int = 8
    channels: tuple = (64, 128, 256, 384, 512)
    ip1_units: int = 256
    preset: str = "full"

    @classmethod
    def full(cls):
        return cls()

    @classmethod
    def mini(cls):
        return cls(input_h=96, input_w=48, class_count=4,
                   channels=(8, 16, 16, 24, 32), ip1_units=32, preset="mini")

    @classmethod
    def from_preset(cls, name):
        if name == "full":
            return cls.full()
        if name == "mini":
            return cls.mini()
        raise ValueRangeError("unknown fashion-net preset %r" % name)

    def validate(self):
        if self.class_count < 2:
            raise ValueRangeError("class_count must be >= 2")
        if len(self.channels) != 5:
            raise ValueRangeError("channel schedule must list 5 convolutions")


@dataclass
class ClsPrediction:
    logits: np.ndarray
    probabilities: np.ndarray
    labels: np.ndarray


def shape_trace(config):
    """Per-layer output sizes as (layer_name, (H, W, C)) or (name, (units,))."""
    config.validate()
    h, w = config.input_h, config.input_w
    rows = []
    for i, ((k, s, p), c) in enumerate(zip(CONV_SCHEDULE, config.channels)):
        h = (h + 2 * p - k) // s + 1
        w = (w + 2 * p - k) // s + 1
        rows.append(("conv%d" % (i + 1), (h, w, c)))
        if i < 4:
            h = _pool_extent(h, POOL_K, POOL_S, ceil_mode=True)
            w = _pool_extent(w, POOL_K, POOL_S, ceil_mode=True)
            rows.append(("pool%d" % (i + 1), (h, w, c)))
    rows.append(("ip1", (config.ip1_units,)))
    rows.append(("ip2", (config.class_count,)))
    return rows


def flat_features(config):
    """Flattened feature length entering ip1."""
    h, w, c = shape_trace(config)[-3][1]
    return h * w * c


class FashionNet:
    """Built classifier instance: registry plus forward graph."""

    def __init__(self, config, seed=0, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        self.registry = nn.ParamRegistry()
        self._build(np.random.default_rng(seed))

    def _build(self, rng):
        cfg = self.config
        c_in = 3
        for i, ((k, _s, _p), c_out) in enumerate(zip(CONV_SCHEDULE, cfg.channels)):
            name = "conv%d" % (i + 1)
            # no conv bias: the following BN shift makes it inert
            nn.make_param(self.registry, name + "/weight",
                          nn.msra_init((c_out, c_in, k, k), rng), nn.WEIGHT, self.dtype)
            nn.make_param(self.registry, name + "/bn/gamma",
                          np.ones(c_out), nn.BN_GAMMA, self.dtype)
            nn.make_param(self.registry, name + "/bn/beta",
                          np.zeros(c_out), nn.BN_BETA, self.dtype)
            nn.make_param(self.registry, name + "/bn/running_mean",
                          np.zeros(c_out), nn.BN_RUNNING, self.dtype)
            nn.make_param(self.registry, name + "/bn/running_var",
                          np.ones(c_out), nn.BN_RUNNING, self.dtype)
            c_in = c_out
        d = flat_features(cfg)
        nn.make_param(self.registry, "ip1/weight",
                      nn.msra_init((cfg.ip1_units, d), rng), nn.WEIGHT, self.dtype)
        nn.make_param(self.registry, "ip1/bias",
                      np.zeros(cfg.ip1_units), nn.BIAS, self.dtype)
        nn.make_param(self.registry, "ip2/weight",
                      nn.msra_init((cfg.class_count, cfg.ip1_units), rng),
                      nn.WEIGHT, self.dtype)
        nn.make_param(self.registry, "ip2/bias",
                      np.zeros(cfg.class_count), nn.BIAS, self.dtype)

    def forward(self, x, mode="train"):
        cfg = self.config
        if x.ndim != 4 or x.shape[1:] != (3, cfg.input_h, cfg.input_w):
            raise ShapeError("fashion-net input must be N x 3 x %d x %d, got %s"
                             % (cfg.input_h, cfg.input_w, x.shape))
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype), requires_grad=x.requires_grad)
        r = self.registry
        out = x
        for i, (k, s, p) in enumerate(CONV_SCHEDULE):
            name = "conv%d" % (i + 1)
            out = ops.conv2d(out, r.get(name + "/weight"), stride=s, pad=p)
            out = ops.batchnorm2d(out, r.get(name + "/bn/gamma"),
                                  r.get(name + "/bn/beta"),
                                  r.get(name + "/bn/running_mean"),
                                  r.get(name + "/bn/running_var"), mode=mode)
            out = ops.relu(out)
            if i < 4:
                out, _ = ops.maxpool2d(out, POOL_K, POOL_S, ceil_mode=True)
        out = out.reshape(out.shape[0], -1)
        out = ops.inner_product(out, r.get("ip1/weight"), r.get("ip1/bias"))
        out = ops.relu(out)
        return ops.inner_product(out, r.get("ip2/weight"), r.get("ip2/bias"))

    def loss(self, logits, labels):
        return cls_loss(logits, labels)


def cls_loss(logits, labels):
    """Mean softmax cross-entropy over the batch."""
    return ops.softmax_ce_loss(logits, labels)


def predict_label(logits):
    """Argmax prediction with lowest-index tie-break."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    z = data - data.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    return ClsPrediction(logits=data, probabilities=probs,
                         labels=np.argmax(data, axis=1))
