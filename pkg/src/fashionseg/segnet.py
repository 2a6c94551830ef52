"""Human-body segmentation network: VGG-shaped encoder, index-unpooling
decoder, and multi-scale fusion of upsampled side branches.

Side branches tap the last convolution of each of the first four decoder
stages (deepest first), reduce to one channel with a 1x1 convolution, and
upsample to full resolution with learnable bilinear-initialized transposed
convolutions. The fused map is a 1x1 convolution over the concatenation of
all branches and the full-resolution main stream.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn, ops
from .errors import ShapeError, ValueRangeError
from .tensor import Tensor

MAX_SIDE_BRANCHES = 4


@dataclass
class SegNetConfig:
    stages: int = 5
    convs_per_stage: tuple = (2, 2, 3, 3, 3)
    base_channels: int = 64
    in_channels: int = 3
    fusion_branch_channels: int = 1
    channel_cap: int = 512
    preset: str = "full"

    @classmethod
    def full(cls):
        return cls()

    @classmethod
    def mini(cls):
        return cls(stages=2, convs_per_stage=(1, 1), base_channels=8,
                   channel_cap=64, preset="mini")

    @classmethod
    def from_preset(cls, name):
        if name == "full":
            return cls.full()
        if name == "mini":
            return cls.mini()
        raise ValueRangeError("unknown segnet preset %r" % name)

    def channels(self):
        return [min(self.base_channels * 2 ** s, self.channel_cap)
                for s in range(self.stages)]

    def validate(self):
        if self.stages < 2:
            raise ValueRangeError("segnet needs >= 2 stages")
        if len(self.convs_per_stage) != self.stages:
            raise ValueRangeError("convs_per_stage length %d != stages %d"
                                  % (len(self.convs_per_stage), self.stages))


@dataclass
class SegPrediction:
    prob_map: np.ndarray
    mask: np.ndarray
    threshold: float


def predict_mask(prob_map, threshold=0.5):
    """Binarize a probability map; ties at the threshold go to background."""
    probs = prob_map.data if isinstance(prob_map, Tensor) else np.asarray(prob_map)
    mask = (probs > threshold).astype(probs.dtype)
    return SegPrediction(prob_map=probs, mask=mask, threshold=threshold)


class SegNet:
    """Built model instance: parameter registry plus the forward graph."""

    def __init__(self, config, seed=0, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        self.registry = nn.ParamRegistry()
        self._build(np.random.default_rng(seed))

    # -- construction -------------------------------------------------------

    def _add_conv(self, name, c_in, c_out, k, rng, with_bn=True):
        nn.make_param(self.registry, name + "/weight",
                      nn.msra_init((c_out, c_in, k, k), rng), nn.WEIGHT, self.dtype)
        if not with_bn:
            # a per-channel bias before BN is inert; only BN-free convs get one
            nn.make_param(self.registry, name + "/bias",
                          np.zeros(c_out), nn.BIAS, self.dtype)
        if with_bn:
            nn.make_param(self.registry, name + "/bn/gamma",
                          np.ones(c_out), nn.BN_GAMMA, self.dtype)
            nn.make_param(self.registry, name + "/bn/beta",
                          np.zeros(c_out), nn.BN_BETA, self.dtype)
            nn.make_param(self.registry, name + "/bn/running_mean",
                          np.zeros(c_out), nn.BN_RUNNING, self.dtype)
            nn.make_param(self.registry, name + "/bn/running_var",
                          np.ones(c_out), nn.BN_RUNNING, self.dtype)

    def _build(self, rng):
        cfg = self.config
        ch = cfg.channels()
        for s in range(cfg.stages):
            c_in = cfg.in_channels if s == 0 else ch[s - 1]
            for i in range(cfg.convs_per_stage[s]):
                self._add_conv("enc/stage%d/conv%d" % (s + 1, i),
                               c_in if i == 0 else ch[s], ch[s], 3, rng)
        for s in range(cfg.stages - 1, -1, -1):
            n_convs = cfg.convs_per_stage[s]
            for i in range(n_convs):
                last = i == n_convs - 1
                c_out = (ch[s - 1] if s > 0 else 1) if last else ch[s]
                final_logit = last and s == 0
                self._add_conv("dec/stage%d/conv%d" % (s + 1, i),
                               ch[s], c_out, 3, rng, with_bn=not final_logit)
        self.branch_stages = [s for s in range(cfg.stages - 1, 0, -1)][:MAX_SIDE_BRANCHES]
        for s in self.branch_stages:
            c_tap = ch[s - 1]
            base = "branch/stage%d" % (s + 1)
            nn.make_param(self.registry, base + "/reduce/weight",
                          nn.msra_init((cfg.fusion_branch_channels, c_tap, 1, 1), rng),
                          nn.WEIGHT, self.dtype)
            nn.make_param(self.registry, base + "/reduce/bias",
                          np.zeros(cfg.fusion_branch_channels), nn.BIAS, self.dtype)
            factor = 2 ** s
            kern = nn.bilinear_deconv_init(factor)
            up = np.zeros((cfg.fusion_branch_channels, cfg.fusion_branch_channels,
                           2 * factor, 2 * factor))
            for c in range(cfg.fusion_branch_channels):
                up[c, c] = kern
            nn.make_param(self.registry, base + "/up/weight", up, nn.WEIGHT, self.dtype)
        fuse_in = len(self.branch_stages) * cfg.fusion_branch_channels + 1
        nn.make_param(self.registry, "fuse/conv/weight",
                      nn.msra_init((1, fuse_in, 1, 1), rng), nn.WEIGHT, self.dtype)
        nn.make_param(self.registry, "fuse/conv/bias", np.zeros(1), nn.BIAS, self.dtype)

    def describe(self):
        cfg = self.config
        return {
            "encoder_convs": sum(cfg.convs_per_stage),
            "poolings": cfg.stages,
            "decoder_convs": sum(cfg.convs_per_stage),
            "side_branches": len(self.branch_stages),
            "fusion_convs": 1,
            "branch_upsample_factors": [2 ** s for s in self.branch_stages],
        }

    # -- execution ----------------------------------------------------------

    def _conv_block(self, name, x, mode, with_bn=True, with_relu=True):
        r = self.registry
        bias = r.get(name + "/bias") if (name + "/bias") in r else None
        x = ops.conv2d(x, r.get(name + "/weight"), bias, stride=1, pad=1)
        if with_bn:
            x = ops.batchnorm2d(x, r.get(name + "/bn/gamma"), r.get(name + "/bn/beta"),
                                r.get(name + "/bn/running_mean"),
                                r.get(name + "/bn/running_var"), mode=mode)
        if with_relu:
            x = ops.relu(x)
        return x

    def forward(self, x, mode="train"):
        """Run the network; returns (fused score map, per-scale score maps).

        The fused map is pre-sigmoid; per-scale maps are the four branch
        outputs (coarsest first) followed by the main-stream map.
        """
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ShapeError("segnet input must be N x %d x H x W, got %s"
                             % (cfg.in_channels, x.shape))
        n, _, h, w = x.shape
        div = 2 ** cfg.stages
        if h % div or w % div:
            raise ShapeError("segnet input %dx%d not divisible by 2^%d"
                             % (h, w, cfg.stages))
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype), requires_grad=x.requires_grad)

        pool_indices = []
        pre_pool_hw = []
        out = x
        for s in range(cfg.stages):
            for i in range(cfg.convs_per_stage[s]):
                out = self._conv_block("enc/stage%d/conv%d" % (s + 1, i), out, mode)
            pre_pool_hw.append(out.shape[2:])
            out, idx = ops.maxpool2d(out, 2, 2)
            pool_indices.append(idx)

        branch_maps = {}
        for s in range(cfg.stages - 1, -1, -1):
            out = ops.max_unpool2d(out, pool_indices[s], pre_pool_hw[s])
            n_convs = cfg.convs_per_stage[s]
            for i in range(n_convs):
                final_logit = (i == n_convs - 1) and s == 0
                out = self._conv_block("dec/stage%d/conv%d" % (s + 1, i), out, mode,
                                       with_bn=not final_logit,
                                       with_relu=not final_logit)
            if s in self.branch_stages:
                base = "branch/stage%d" % (s + 1)
                b = ops.conv2d(out, self.registry.get(base + "/reduce/weight"),
                               self.registry.get(base + "/reduce/bias"))
                factor = 2 ** s
                b = ops.conv_transpose2d(b, self.registry.get(base + "/up/weight"),
                                         stride=factor, pad=factor // 2)
                branch_maps[s] = b

        main = out  # 1-channel full-resolution logits
        scales = [branch_maps[s] for s in self.branch_stages] + [main]
        fused = ops.conv2d(ops.concat_channels(scales),
                           self.registry.get("fuse/conv/weight"),
                           self.registry.get("fuse/conv/bias"))
        return fused, scales

    def loss(self, fused, y):
        return seg_loss(fused, y)

    def predict(self, x, threshold=0.5):
        fused, _ = self.forward(x, mode="infer")
        return predict_mask(ops.sigmoid(fused), threshold)


def seg_loss(f, y):
    """Summed sigmoid BCE over all pixels and batch items."""
    return ops.sigmoid_bce_loss(f, y)
