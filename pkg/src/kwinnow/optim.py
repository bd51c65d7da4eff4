"""SGD and Adam with coupled L2 decay and strict mask discipline.

When a mask is supplied, gradients at pruned positions are zeroed
before any moment update, the moments themselves are kept at zero
there, and the weights are forced back to exactly 0.0 after every
step. Pruned means pruned; no epsilon dust accumulates.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericsError


class _Optimizer:
    def __init__(self, params: dict, lr: float, weight_decay: float = 0.0,
                 mask=None):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if weight_decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {weight_decay}")
        self.params = dict(params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.masks = {}
        if mask is not None:
            for name, m in mask.masks.items():
                if name in self.params:
                    self.masks[name] = m

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def _gradient(self, name, p):
        g = p.grad
        if g is None:
            return None
        if not np.isfinite(g).all():
            raise NumericsError(f"non-finite gradient for {name}")
        m = self.masks.get(name)
        if m is not None:
            g = g * m
        if self.weight_decay:
            g = g + self.weight_decay * p.data
        return g

    def _clamp(self, name, p):
        m = self.masks.get(name)
        if m is not None:
            p.data[~m] = 0.0


class SGD(_Optimizer):
    def step(self):
        for name, p in self.params.items():
            g = self._gradient(name, p)
            if g is None:
                continue
            p.data -= self.lr * g
            self._clamp(name, p)


class Adam(_Optimizer):
    def __init__(self, params, lr=1e-3, weight_decay=0.0, mask=None,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, lr, weight_decay, mask)
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ConfigError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = self._gradient(name, p)
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mask = self.masks.get(name)
            if mask is not None:
                m[~mask] = 0.0
                v[~mask] = 0.0
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            self._clamp(name, p)


def build_optimizer(kind: str, params, lr, weight_decay=0.0, mask=None):
    kind = kind.lower()
    if kind == "sgd":
        return SGD(params, lr, weight_decay, mask)
    if kind == "adam":
        return Adam(params, lr, weight_decay, mask)
    raise ConfigError(f"unknown optimizer {kind!r}")
