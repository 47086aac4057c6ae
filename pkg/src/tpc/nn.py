"""Dense layers, MLPs and a GRU cell built on :mod:`tpc.autodiff`."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Parameter container; walks attributes to collect named parameters."""

    def named_parameters(self, prefix=""):
        out = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{prefix}{name}/"))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{name}.{i}/"))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        if missing:
            raise KeyError(f"missing parameters: {missing}")
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
            p.data = arr.astype(p.data.dtype)


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Dense(Module):
    def __init__(self, n_in, n_out, rng, act=None, zero_init=False):
        w = np.zeros((n_in, n_out)) if zero_init else glorot(rng, n_in, n_out)
        self.W = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)
        self.act = act

    def __call__(self, x):
        y = ad.matmul(x, self.W) + self.b
        if self.act == "elu":
            return ad.elu(y)
        if self.act == "tanh":
            return ad.tanh(y)
        return y


class MLP(Module):
    """ELU hidden layers followed by a linear output layer."""

    def __init__(self, n_in, hidden, n_out, rng, zero_init_last=False):
        sizes = [n_in, *hidden]
        self.layers = [Dense(a, b, rng, act="elu") for a, b in zip(sizes[:-1], sizes[1:])]
        self.out = Dense(sizes[-1], n_out, rng, zero_init=zero_init_last)

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return self.out(x)


class GRUCell(Module):
    """Gated recurrent cell: h' = (1 - z) * n + z * h."""

    def __init__(self, n_in, n_hidden, rng):
        self.n_hidden = n_hidden
        self.W = Tensor(np.concatenate([glorot(rng, n_in, n_hidden) for _ in range(3)], axis=1),
                        requires_grad=True)
        self.U = Tensor(np.concatenate([glorot(rng, n_hidden, n_hidden) for _ in range(3)], axis=1),
                        requires_grad=True)
        self.b = Tensor(np.zeros(3 * n_hidden), requires_grad=True)
        self.bh = Tensor(np.zeros(3 * n_hidden), requires_grad=True)

    def __call__(self, x, h):
        n = self.n_hidden
        gx = ad.matmul(x, self.W) + self.b
        gh = ad.matmul(h, self.U) + self.bh
        rz = ad.sigmoid(gx[..., : 2 * n] + gh[..., : 2 * n])
        r, z = rz[..., :n], rz[..., n:]
        cand = ad.tanh(gx[..., 2 * n:] + r * gh[..., 2 * n:])
        return cand + z * (h - cand)
