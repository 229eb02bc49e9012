"""Adam and exponential moving averages over lists of Tensors."""

from __future__ import annotations

import zlib

import numpy as np

from .tensor import grads_of, zero_grads


class Adam:
    """Adam with bias correction; epsilon sits outside the square root:

        step = -lr * m_hat / (sqrt(v_hat) + eps)

    With lr=0 the parameters are bitwise unchanged while the moment state
    still advances.
    """

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads_of(self.params), self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.lr != 0.0:
                m_hat = m / bc1
                v_hat = v / bc2
                p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        zero_grads(self.params)


class EMA:
    """Shadow copy of parameters: shadow <- beta*shadow + (1-beta)*current."""

    def __init__(self, params, beta: float):
        if not 0.0 < beta < 1.0:
            raise ValueError(f"EMA beta must lie in (0,1), got {beta}")
        self.params = list(params)
        self.beta = float(beta)
        self.shadow = [p.data.copy() for p in self.params]

    def update(self):
        b = self.beta
        for s, p in zip(self.shadow, self.params):
            s *= b
            s += (1.0 - b) * p.data

    def copy_to(self, params=None):
        """Overwrite params (default: the tracked ones) with the shadow."""
        for s, p in zip(self.shadow, params if params is not None else self.params):
            p.data[...] = s


def checksum(params) -> int:
    """CRC32 over the concatenated parameter payloads, order sensitive."""
    crc = 0
    for p in params:
        data = p if isinstance(p, np.ndarray) else p.data
        crc = zlib.crc32(np.ascontiguousarray(data).tobytes(), crc)
    return crc
