"""CNN building blocks on top of the autodiff engine.

Layer set required by the transmitter/receiver pair: 1D separable convolution
with dilation and zero padding, batch normalization, ReLU, and pre-activation
residual blocks. Parameters live in a flat (name -> Tensor) registry per
module so checkpointing is a plain name/array dump.
"""

import numpy as np

from .autodiff import Tensor, depthwise_conv1d, parameter

CHECKPOINT_VERSION = 1


def he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Module:
    def __init__(self):
        self._params = {}
        self._children = {}

    def register(self, name, array):
        p = parameter(array)
        self._params[name] = p
        return p

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def parameters(self):
        for p in self._params.values():
            yield p
        for child in self._children.values():
            yield from child.parameters()

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def state_arrays(self):
        """Non-trainable state (running statistics), name -> array."""
        out = {}
        for cname, child in self._children.items():
            for k, v in child.state_arrays().items():
                out[cname + "." + k] = v
        return out


class SepConv1d(Module):
    """Depthwise dilated convolution followed by a 1x1 pointwise mix."""

    def __init__(self, in_channels, out_channels, kernel_size, dilation=1, rng=None):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")
        rng = rng or np.random.default_rng()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.depthwise = self.register(
            "depthwise", he_uniform(rng, (in_channels, kernel_size), kernel_size)
        )
        self.pointwise = self.register(
            "pointwise", he_uniform(rng, (in_channels, out_channels), in_channels)
        )
        self.bias = self.register("bias", np.zeros(out_channels))

    def forward(self, x):
        if x.shape[-1] != self.in_channels:
            raise ValueError(
                f"expected {self.in_channels} input channels, got {x.shape[-1]}"
            )
        h = x
        if self.kernel_size > 1:
            h = depthwise_conv1d(h, self.depthwise, self.dilation)
        else:
            h = h * self.depthwise[:, 0]
        return h.matmul(self.pointwise) + self.bias


class BatchNorm1d(Module):
    """Per-channel batch normalization over the (batch, length) axes."""

    def __init__(self, channels, momentum=0.99, eps=1e-3):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.scale = self.register("scale", np.ones(channels))
        self.shift = self.register("shift", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self._stats_seen = False

    def forward(self, x, train):
        if train:
            if x.shape[0] < 2:
                raise ValueError("batch normalization needs batch size >= 2 in train mode")
            mean = x.mean(axis=(0, 1), keepdims=True)
            centered = x - mean
            var = (centered**2).mean(axis=(0, 1), keepdims=True)
            # seed the running stats from the first batch so inference is
            # sensible long before 1/(1-momentum) updates have happened
            m = self.momentum if self._stats_seen else 0.0
            self._stats_seen = True
            self.running_mean = m * self.running_mean + (1 - m) * mean.data.ravel()
            self.running_var = m * self.running_var + (1 - m) * var.data.ravel()
            inv = (var + self.eps) ** -0.5
            normalized = centered * inv
        else:
            normalized = (x - self.running_mean) * (
                (self.running_var + self.eps) ** -0.5
            )
        return normalized * self.scale + self.shift

    def state_arrays(self):
        return {
            "running_mean": self.running_mean,
            "running_var": self.running_var,
        }


class ResNetBlock(Module):
    """Pre-activation residual block: two (BN -> ReLU -> SepConv) groups
    plus the identity skip."""

    def __init__(self, channels, kernel_size, dilation, rng=None):
        super().__init__()
        self.bn1 = self.add_child("bn1", BatchNorm1d(channels))
        self.conv1 = self.add_child(
            "conv1", SepConv1d(channels, channels, kernel_size, dilation, rng)
        )
        self.bn2 = self.add_child("bn2", BatchNorm1d(channels))
        self.conv2 = self.add_child(
            "conv2", SepConv1d(channels, channels, kernel_size, dilation, rng)
        )

    def forward(self, x, train):
        h = self.conv1.forward(self.bn1.forward(x, train).relu())
        h = self.conv2.forward(self.bn2.forward(h, train).relu())
        return x + h


# (kernel size, dilation) for the five residual blocks, mirrored by both ends
DEFAULT_BLOCKS = ((3, 1), (9, 2), (15, 4), (9, 2), (3, 1))


class ConvStack(Module):
    """Entry 1x1 separable conv, residual blocks, exit 1x1 separable conv."""

    def __init__(self, in_channels, out_channels, hidden, blocks=DEFAULT_BLOCKS, rng=None):
        super().__init__()
        self.entry = self.add_child("entry", SepConv1d(in_channels, hidden, 1, 1, rng))
        self.blocks = []
        for i, (k, d) in enumerate(blocks):
            self.blocks.append(
                self.add_child(f"block{i}", ResNetBlock(hidden, k, d, rng))
            )
        self.exit = self.add_child("exit", SepConv1d(hidden, out_channels, 1, 1, rng))

    def forward(self, x, train):
        h = self.entry.forward(x)
        for block in self.blocks:
            h = block.forward(h, train)
        return self.exit.forward(h)


def save_checkpoint(path, module, extra=None):
    """Write parameters and running statistics to an .npz file (bit-exact)."""
    arrays = {"__version__": np.array(CHECKPOINT_VERSION)}
    for name, p in module.named_parameters():
        arrays["param." + name] = p.data
    for name, arr in module.state_arrays().items():
        arrays["state." + name] = arr
    for name, arr in (extra or {}).items():
        arrays["extra." + name] = np.asarray(arr)
    np.savez(path, **arrays)


def load_checkpoint(path, module):
    """Restore parameters/state in place; returns the extra arrays."""
    with np.load(path) as blob:
        version = int(blob["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        params = dict(module.named_parameters())
        for key in blob.files:
            if key.startswith("param."):
                name = key[len("param.") :]
                if name not in params:
                    raise KeyError(f"unexpected parameter {name!r} in checkpoint")
                if params[name].data.shape != blob[key].shape:
                    raise ValueError(f"shape mismatch for {name!r}")
                params[name].data = blob[key].copy()
        state = module.state_arrays()
        for key in blob.files:
            if key.startswith("state."):
                name = key[len("state.") :]
                state[name][...] = blob[key]
        return {
            key[len("extra.") :]: blob[key].copy()
            for key in blob.files
            if key.startswith("extra.")
        }
