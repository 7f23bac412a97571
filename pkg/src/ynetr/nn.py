"""Minimal layer library on top of the autograd tensor.

A :class:`Module` registers child modules and parameters through plain
attribute assignment and can enumerate its parameters with hierarchical
names, which is what checkpointing and the branch-zeroing helpers key on.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, conv3d, conv_transpose3d, layer_norm


def trunc_normal(rng, shape, std=0.02):
    """Normal(0, std) resampled until inside two standard deviations."""
    vals = rng.normal(0.0, std, size=shape)
    bad = np.abs(vals) > 2 * std
    while bad.any():
        vals[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(vals) > 2 * std
    return vals.astype(np.float32)


def fanin_uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Module:
    def __setattr__(self, name, value):
        if isinstance(value, (Module, Tensor, ModuleList)):
            self.__dict__.setdefault("_children", {})[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, child in self.__dict__.get("_children", {}).items():
            full = f"{prefix}{name}"
            if isinstance(child, Tensor):
                if child.requires_grad:
                    yield full, child
            else:
                yield from child.named_parameters(prefix=full + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        self.items = list(modules)

    def append(self, module):
        self.items.append(module)

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def named_parameters(self, prefix=""):
        for i, m in enumerate(self.items):
            yield from m.named_parameters(prefix=f"{prefix}{i}.")


class Linear(Module):
    def __init__(self, rng, in_dim, out_dim, bias=True):
        self.weight = Tensor.param(trunc_normal(rng, (in_dim, out_dim)))
        self.bias = Tensor.param(np.zeros(out_dim, dtype=np.float32)) if bias else None

    def forward(self, x):
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.weight = Tensor.param(np.ones(dim, dtype=np.float32))
        self.bias = Tensor.param(np.zeros(dim, dtype=np.float32))
        self.eps = eps

    def forward(self, x):
        return layer_norm(x, self.weight, self.bias, axis=-1, eps=self.eps)


class Conv3d(Module):
    def __init__(self, rng, cin, cout, kernel, stride=1, padding=0, zero_init=False):
        shape = (cout, cin, kernel, kernel, kernel)
        if zero_init:
            w = np.zeros(shape, dtype=np.float32)
        else:
            w = fanin_uniform(rng, shape, cin * kernel**3)
        self.weight = Tensor.param(w)
        self.bias = Tensor.param(np.zeros(cout, dtype=np.float32))
        self.stride = stride
        self.padding = padding
        self.cout = cout

    def forward(self, x):
        out = conv3d(x, self.weight, stride=self.stride, padding=self.padding)
        return out + self.bias.reshape(self.cout, 1, 1, 1)


class ConvTranspose3d(Module):
    def __init__(self, rng, cin, cout, kernel, stride=1, padding=0):
        shape = (cin, cout, kernel, kernel, kernel)
        w = fanin_uniform(rng, shape, cin * kernel**3)
        self.weight = Tensor.param(w)
        self.bias = Tensor.param(np.zeros(cout, dtype=np.float32))
        self.stride = stride
        self.padding = padding
        self.cout = cout

    def forward(self, x):
        out = conv_transpose3d(x, self.weight, stride=self.stride, padding=self.padding)
        return out + self.bias.reshape(self.cout, 1, 1, 1)
