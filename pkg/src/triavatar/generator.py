"""Latent-modulated tri-plane generator.

A learned 4x4 constant seed runs through L conv stages. Each stage's channels
are modulated by an affine function (scale, shift) of one row of the W+ code,
so a d-dim latent steers the whole volume. The last log2(P/4) stages upsample
2x; a final 1x1 conv emits 3C channels that split into the xy/xz/yz planes.

Latent conventions: a W-space code is a (d,) Tensor; a W+ code is (L, d),
one row per modulated stage.
"""

from __future__ import annotations

import numpy as np

from . import engine as eg
from .triplane import TriPlaneVolume


def extend_to_wplus(w: eg.Tensor, n_layers: int) -> eg.Tensor:
    """Repeat a (d,) code into an (L, d) W+ code; every row equals w."""
    row = eg.reshape(w, (1, w.data.shape[0]))
    return eg.concat([row] * n_layers, axis=0)


class GeneratorNet:
    """Toy modulated deconvolutional generator; owns the Theta_eg parameters."""

    def __init__(self, latent_dim: int = 32, n_layers: int = 6, resolution: int = 32,
                 channels: int = 16, extent: float = 1.0, rng=None, dtype=None):
        if resolution < 4 or resolution & (resolution - 1):
            raise ValueError(f"resolution must be a power of two >= 4, got {resolution}")
        n_up = int(np.log2(resolution // 4))
        if n_layers < max(n_up, 1):
            raise ValueError(f"need at least {n_up} stages to reach {resolution}, got {n_layers}")
        rng = rng if rng is not None else np.random.default_rng(0)
        dt = dtype or eg.DEFAULT_DTYPE
        self.latent_dim = latent_dim
        self.n_layers = n_layers
        self.resolution = resolution
        self.channels = channels
        self.extent = extent
        width = 2 * channels
        self.width = width
        # upsampling happens in the last n_up stages so early stages stay 4x4
        self.upsample_at = [i >= n_layers - n_up for i in range(n_layers)]

        def t(arr):
            return eg.tensor(arr.astype(dt), requires_grad=True)

        self.seed = t(rng.standard_normal((width, 4, 4)))
        self.stages = []
        for _ in range(n_layers):
            self.stages.append({
                "conv_w": t(rng.standard_normal((width, width, 3, 3)) * np.sqrt(2.0 / (width * 9))),
                "conv_b": t(np.zeros(width)),
                # affine modulation starts near identity: gamma ~ 1, beta ~ 0
                "scale_map": t(rng.standard_normal((latent_dim, width)) * (0.01 / np.sqrt(latent_dim))),
                "scale_bias": t(np.ones(width)),
                "shift_map": t(rng.standard_normal((latent_dim, width)) * (0.01 / np.sqrt(latent_dim))),
                "shift_bias": t(np.zeros(width)),
            })
        self.out_w = t(rng.standard_normal((3 * channels, width, 1, 1)) * (0.1 * np.sqrt(2.0 / width)))
        self.out_b = t(np.zeros(3 * channels))

    def params(self):
        out = [self.seed]
        for s in self.stages:
            out.extend(s[k] for k in ("conv_w", "conv_b", "scale_map",
                                      "scale_bias", "shift_map", "shift_bias"))
        out.extend([self.out_w, self.out_b])
        return out

    def named_params(self) -> dict:
        named = {"generator.seed": self.seed}
        for i, s in enumerate(self.stages):
            for k in ("conv_w", "conv_b", "scale_map", "scale_bias",
                      "shift_map", "shift_bias"):
                named[f"generator.stage{i}.{k}"] = s[k]
        named["generator.out_w"] = self.out_w
        named["generator.out_b"] = self.out_b
        return named

    def load_state(self, blobs: dict):
        for name, t in self.named_params().items():
            if name not in blobs:
                raise eg.CheckpointError(f"missing generator tensor '{name}'")
            if blobs[name].shape != t.data.shape:
                raise eg.ShapeError(f"{name}: shape {blobs[name].shape} != {t.data.shape}")
            t.data[...] = blobs[name].astype(t.data.dtype)

    def stage_activation(self, h: eg.Tensor, w_row: eg.Tensor, stage: dict,
                         upsample: bool) -> eg.Tensor:
        """One modulated stage; used by forward, exposed for modulation tests."""
        if upsample:
            h = eg.upsample2x(h)
        h = eg.conv2d(h, stage["conv_w"], stage["conv_b"], stride=(1, 1), pad=(1, 1))
        row = eg.reshape(w_row, (1, self.latent_dim))
        gamma = eg.add(eg.matmul(row, stage["scale_map"]), stage["scale_bias"])
        beta = eg.add(eg.matmul(row, stage["shift_map"]), stage["shift_bias"])
        h = eg.add(eg.mul(h, eg.reshape(gamma, (self.width, 1, 1))),
                   eg.reshape(beta, (self.width, 1, 1)))
        return eg.leaky_relu(h, 0.2)


def generate_triplane(wp: eg.Tensor, net: GeneratorNet) -> TriPlaneVolume:
    """W+ code (L, d) -> TriPlaneVolume; differentiable w.r.t. wp and net."""
    if wp.data.ndim != 2 or wp.data.shape != (net.n_layers, net.latent_dim):
        raise eg.ShapeError(
            f"W+ code must be ({net.n_layers},{net.latent_dim}), got {wp.data.shape}")
    h = net.seed
    for i, stage in enumerate(net.stages):
        h = net.stage_activation(h, wp[i, :], stage, net.upsample_at[i])
    out = eg.conv2d(h, net.out_w, net.out_b, stride=(1, 1), pad=(0, 0))
    C = net.channels
    planes = [eg.permute(out[k * C:(k + 1) * C], (1, 2, 0)) for k in range(3)]
    return TriPlaneVolume(*planes, extent=net.extent)


def generate_from_w(w: eg.Tensor, net: GeneratorNet) -> TriPlaneVolume:
    return generate_triplane(extend_to_wplus(w, net.n_layers), net)


def average_latent(net: GeneratorNet, n_samples: int = 10_000, seed: int = 0) -> np.ndarray:
    """Mean of n standard-normal draws; the w_avg used to re-seed identity codes."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal((n_samples, net.latent_dim))
    return draws.mean(axis=0).astype(net.seed.data.dtype)
