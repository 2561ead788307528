"""Parameter containers and the 3D building blocks used by both stages."""

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .tensor import Tensor, relu


def _he_normal(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / max(fan_in, 1)), size=shape)


class Module:
    """Minimal parameter container.

    Parameters are :class:`Tensor` attributes; child modules are attributes
    or lists of modules. Non-trainable state (batch-norm statistics) lives in
    ``self.buffers``. Names are dotted attribute paths in definition order.
    """

    training = True

    def __init__(self):
        self.buffers = OrderedDict()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Tensor, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in self._children():
            if isinstance(value, Tensor):
                yield prefix + name, value
            else:
                yield from value.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix=""):
        for name, arr in self.buffers.items():
            yield prefix + name, arr
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")

    def parameters(self, trainable_only=True):
        return [p for _, p in self.named_parameters() if p.requires_grad or not trainable_only]

    def modules(self):
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def freeze(self):
        for _, p in self.named_parameters():
            p.requires_grad = False
        return self

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad = None

    def state_dict(self):
        state = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data.copy()
        for name, b in self.named_buffers():
            state[name] = b.copy()
        return state

    def load_state_dict(self, state):
        own = OrderedDict(self.named_parameters())
        bufs = OrderedDict(self.named_buffers())
        expected = list(own) + list(bufs)
        missing = [k for k in expected if k not in state]
        extra = [k for k in state if k not in own and k not in bufs]
        if missing or extra:
            raise ValueError(f"state dict mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, arr in state.items():
            target = own[name].data if name in own else bufs[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != target.shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint {arr.shape}, model {target.shape}")
            target[...] = arr


class Conv3d(Module):
    def __init__(self, cin, cout, kernel=3, stride=1, dilation=1, padding=None, bias=True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        k = F._ntuple(kernel, 3)
        d = F._ntuple(dilation, 3)
        self.stride = F._ntuple(stride, 3)
        self.dilation = d
        self.padding = (tuple(di * (ki - 1) // 2 for ki, di in zip(k, d))
                        if padding is None else F._ntuple(padding, 3))
        fan_in = cin * int(np.prod(k))
        self.weight = Tensor(_he_normal(rng, (cout, cin) + k, fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True) if bias else None

    def forward(self, x):
        return F.conv3d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel=3, stride=1, bias=True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        k = F._ntuple(kernel, 2)
        self.stride = F._ntuple(stride, 2)
        self.padding = tuple((ki - 1) // 2 for ki in k)
        self.weight = Tensor(_he_normal(rng, (cout, cin) + k, cin * int(np.prod(k))),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Deconv3d(Module):
    """Transposed convolution parameterized as (kernel size, upsample rate)."""

    def __init__(self, cin, cout, kernel=3, rate=2, bias=True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kernel = int(kernel)
        self.rate = int(rate)
        F.deconv_geometry(self.kernel, self.rate)
        fan_in = cin * self.kernel ** 3 / self.rate ** 3
        self.weight = Tensor(_he_normal(rng, (cin, cout) + (self.kernel,) * 3, fan_in),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True) if bias else None

    def forward(self, x):
        return F.deconv3d(x, self.weight, self.bias, self.kernel, self.rate)


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return F.batch_norm(x, self.gamma, self.beta, self.buffers["running_mean"],
                            self.buffers["running_var"], self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, cin, cout, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Tensor(rng.normal(0.0, np.sqrt(1.0 / cin), size=(cout, cin)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


@dataclass(frozen=True)
class DdrBlockConfig:
    in_channels: int
    out_channels: int
    bottleneck: int
    dilation: int = 1
    downsample_rate: int = 1

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "bottleneck", "dilation", "downsample_rate"):
            if getattr(self, name) < 1:
                raise ValueError(f"DdrBlockConfig.{name} must be >= 1")


class DDRBlock(Module):
    """Dimensional-decomposition residual block.

    1x1x1 reduce (strided when downsampling), then (1,1,3), (1,3,1), (3,1,1)
    dilated convolutions, each followed by ReLU, then a 1x1x1 expand. The
    result is added to the input, or to a strided 1x1x1 projection of it
    when channels or resolution change.
    """

    def __init__(self, cfg: DdrBlockConfig, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        d, r, b = cfg.dilation, cfg.downsample_rate, cfg.bottleneck
        self.reduce = Conv3d(cfg.in_channels, b, 1, stride=r, rng=rng)
        self.conv_w = Conv3d(b, b, (1, 1, 3), dilation=d, rng=rng)
        self.conv_h = Conv3d(b, b, (1, 3, 1), dilation=d, rng=rng)
        self.conv_d = Conv3d(b, b, (3, 1, 1), dilation=d, rng=rng)
        self.expand = Conv3d(b, cfg.out_channels, 1, rng=rng)
        if cfg.in_channels != cfg.out_channels or r != 1:
            self.shortcut = Conv3d(cfg.in_channels, cfg.out_channels, 1, stride=r, rng=rng)
        else:
            self.shortcut = None

    def branch_modules(self):
        return [self.reduce, self.conv_w, self.conv_h, self.conv_d, self.expand]

    def forward(self, x):
        r = self.cfg.downsample_rate
        if any(s % r for s in x.shape[2:]):
            raise ValueError(f"DDR block: spatial dims {x.shape[2:]} not divisible by {r}")
        h = relu(self.reduce(x))
        h = relu(self.conv_w(h))
        h = relu(self.conv_h(h))
        h = relu(self.conv_d(h))
        h = self.expand(h)
        skip = x if self.shortcut is None else self.shortcut(x)
        return h + skip


def ddr_block(x, cfg: DdrBlockConfig, params: DDRBlock):
    """Apply a DDR block with the given parameters; ``params.cfg`` must equal ``cfg``."""
    if params.cfg != cfg:
        raise ValueError("parameters were built for a different DdrBlockConfig")
    return params(x)
