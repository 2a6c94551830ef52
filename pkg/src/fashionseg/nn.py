"""Parameter registry, weight initialization, SGD, and LR scheduling."""

import numpy as np

from .errors import ShapeError, ValueRangeError
from .tensor import Tensor

WEIGHT = "weight"
BIAS = "bias"
BN_GAMMA = "bn_gamma"
BN_BETA = "bn_beta"
BN_RUNNING = "bn_running"

_TRAINABLE = (WEIGHT, BIAS, BN_GAMMA, BN_BETA)


class ParamRegistry:
    """Ordered name -> (tensor, role) map with slash-delimited hierarchical names.

    bn_running buffers are registered but never optimized.
    """

    def __init__(self):
        self._items = {}

    def add(self, name, tensor, role):
        if name in self._items:
            raise ValueRangeError("duplicate parameter name %r" % name)
        if role in _TRAINABLE:
            tensor.requires_grad = True
        self._items[name] = (tensor, role)
        return tensor

    def __contains__(self, name):
        return name in self._items

    def __len__(self):
        return len(self._items)

    def get(self, name):
        return self._items[name][0]

    def role(self, name):
        return self._items[name][1]

    def items(self):
        return list(self._items.items())

    def names(self):
        return list(self._items)

    def trainable(self):
        """Ordered dict of trainable tensors (bn_running excluded)."""
        return {n: t for n, (t, r) in self._items.items() if r in _TRAINABLE}

    def zero_grads(self):
        for t, r in self._items.values():
            if r in _TRAINABLE:
                t.zero_grad()


def msra_init(shape, rng):
    """He-normal init: Normal(0, sqrt(2 / fan_in)), fan_in = prod(shape[1:])."""
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2:
        raise ShapeError("msra_init needs >= 2 dims, got %s" % (shape,))
    fan_in = int(np.prod(shape[1:]))
    if fan_in == 0:
        raise ValueRangeError("msra_init zero fan_in for shape %s" % (shape,))
    std = np.sqrt(2.0 / fan_in)
    return rng.standard_normal(shape, dtype=np.float64) * std


def bilinear_deconv_init(factor):
    """Bilinear upsampling kernel of size 2*factor, a partition of unity
    under stride = factor on interior pixels."""
    if factor < 1:
        raise ValueRangeError("bilinear factor must be >= 1, got %d" % factor)
    k = 2 * factor
    center = factor - 0.5 if k % 2 == 0 else float(factor)
    og = np.arange(k, dtype=np.float64)
    w1d = 1.0 - np.abs(og - center) / factor
    return np.outer(w1d, w1d)


def lr_at(iteration, base_lr, step_size, gamma):
    """Step schedule: base_lr * gamma ** floor(iteration / step_size)."""
    if step_size <= 0:
        return base_lr
    return base_lr * gamma ** (iteration // step_size)


class SgdState:
    """Heavy-ball SGD with L2 weight decay folded into the gradient."""

    def __init__(self, base_lr, momentum=0.9, weight_decay=0.0,
                 step_size=0, gamma=0.1):
        self.base_lr = base_lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.step_size = step_size
        self.gamma = gamma
        self.iteration = 0
        self.velocity = {}

    def lr(self):
        return lr_at(self.iteration, self.base_lr, self.step_size, self.gamma)


def sgd_step(registry, state):
    """v <- m*v + (grad + wd*param); param <- param - lr*v. One iteration."""
    lr = state.lr()
    for name, p in registry.trainable().items():
        if p.grad is None:
            raise ValueRangeError("parameter %r has no gradient; run backward first" % name)
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        g = p.grad + state.weight_decay * p.data
        v = state.momentum * v + g
        state.velocity[name] = v
        p.data -= (p.dtype.type(lr)) * v.astype(p.dtype, copy=False)
    state.iteration += 1


def param_count(registry, include_bn=False):
    """Element count over weights and biases; BN affine only when asked."""
    roles = {WEIGHT, BIAS}
    if include_bn:
        roles |= {BN_GAMMA, BN_BETA}
    return sum(t.size for t, r in (v for _, v in registry.items()) if r in roles)


def param_breakdown(registry):
    """Per-role element totals plus a per-layer weight listing."""
    totals = {WEIGHT: 0, BIAS: 0, BN_GAMMA: 0, BN_BETA: 0, BN_RUNNING: 0}
    layers = []
    for name, (t, r) in registry.items():
        totals[r] += t.size
        if r == WEIGHT:
            layers.append((name, tuple(t.shape), t.size))
    return {"totals": totals, "weights": totals[WEIGHT],
            "weights_plus_bias": totals[WEIGHT] + totals[BIAS],
            "layers": layers}


def jitter_params(registry, rng, scale=0.05):
    """Nudge trainable parameters off their exact init values.

    Zero-initialized biases/betas sit exactly on ReLU kinks where finite
    differences disagree with the subgradient; gradient checks jitter first.
    """
    for p in registry.trainable().values():
        p.data += rng.normal(0.0, scale, size=p.shape).astype(p.dtype)


def make_param(registry, name, data, role, dtype):
    """Register a parameter tensor built from raw float64 init data."""
    t = Tensor(np.asarray(data).astype(dtype), requires_grad=role in _TRAINABLE)
    return registry.add(name, t, role)
