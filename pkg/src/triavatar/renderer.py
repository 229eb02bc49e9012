"""Differentiable volume rendering: pinhole rays, stratified depths, quadrature.

Per ray with piecewise-constant samples (sigma_i, rgb_i, delta_i):

    T_i = exp(-sum_{j<i} sigma_j delta_j)
    w_i = T_i * (1 - exp(-sigma_i delta_i))
    pixel = sum_i w_i rgb_i + (1 - sum_i w_i) * background

The exclusive prefix sum is cumsum minus the element itself, so the whole
image composites as a few batched engine ops and stays differentiable
w.r.t. plane features and decoder weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as eg
from .triplane import FeatureDecoder, TriPlaneVolume, sample_features


@dataclass
class Camera:
    position: tuple
    look_at: tuple
    up: tuple = (0.0, 1.0, 0.0)
    fov_y: float = 0.8
    resolution: tuple = (32, 32)
    near: float = 1.0
    far: float = 3.5

    def __post_init__(self):
        if not (0.0 < self.fov_y < np.pi):
            raise ValueError(f"fov_y must lie in (0, pi), got {self.fov_y}")
        if not (0.0 < self.near < self.far):
            raise ValueError(f"need 0 < near < far, got near={self.near} far={self.far}")
        H, W = self.resolution
        if H < 1 or W < 1:
            raise ValueError(f"resolution must be positive, got {self.resolution}")


@dataclass
class RenderConfig:
    samples_per_ray: int = 48
    background: tuple = (1.0, 1.0, 1.0)
    stratified_jitter: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_ray < 2:
            raise ValueError(f"samples_per_ray must be >= 2, got {self.samples_per_ray}")


def generate_rays(cam: Camera):
    """Pinhole rays; returns (origins (H,W,3), unit directions (H,W,3))."""
    pos = np.asarray(cam.position, dtype=np.float64)
    fwd = np.asarray(cam.look_at, dtype=np.float64) - pos
    nf = np.linalg.norm(fwd)
    if nf < 1e-12:
        raise ValueError("camera position and look_at coincide")
    fwd = fwd / nf
    up = np.asarray(cam.up, dtype=np.float64)
    right = np.cross(fwd, up)
    nr = np.linalg.norm(right)
    if nr < 1e-8:
        raise ValueError("camera up is parallel to the view direction")
    right = right / nr
    up_cam = np.cross(right, fwd)

    H, W = cam.resolution
    tanf = np.tan(cam.fov_y / 2.0)
    aspect = W / H
    jj, ii = np.meshgrid(np.arange(W), np.arange(H))
    u = ((jj + 0.5) / W * 2.0 - 1.0) * tanf * aspect
    v = (1.0 - (ii + 0.5) / H * 2.0) * tanf
    dirs = fwd[None, None] + u[..., None] * right[None, None] + v[..., None] * up_cam[None, None]
    dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pos, dirs.shape).copy()
    return origins, dirs


def sample_depths(cam: Camera, cfg: RenderConfig, n_rays: int):
    """Depth values along each ray and the shared bin width delta.

    Without jitter every ray uses the bin midpoints, shape (S,). With jitter
    each ray draws one uniform offset per bin from cfg.seed, shape (n_rays, S).
    """
    S = cfg.samples_per_ray
    delta = (cam.far - cam.near) / S
    if cfg.stratified_jitter:
        rng = np.random.default_rng(cfg.seed)
        offs = rng.uniform(0.0, 1.0, size=(n_rays, S))
    else:
        offs = np.full((S,), 0.5)
    return cam.near + (np.arange(S) + offs) * delta, delta


def composite(rgb: eg.Tensor, density: eg.Tensor, deltas, background):
    """Batched quadrature. rgb (R,S,3), density (R,S) -> (pixels (R,3), weights (R,S))."""
    if np.any(density.data < 0):
        raise ValueError("negative density fed to compositor")
    deltas_arr = np.asarray(deltas, dtype=density.data.dtype)
    if np.any(deltas_arr <= 0):
        raise ValueError("sample spacing delta must be positive")
    R, S = density.data.shape
    sigma_delta = eg.mul(density, eg.tensor(np.broadcast_to(deltas_arr, (R, S)).copy(),
                                            dtype=density.data.dtype))
    cum = eg.cumsum(sigma_delta, axis=1)
    trans = eg.exp(eg.neg(eg.sub(cum, sigma_delta)))       # exclusive prefix: T_i
    alpha = eg.sub(1.0, eg.exp(eg.neg(sigma_delta)))
    w = eg.mul(trans, alpha)
    wsum = eg.sum_(w, axis=1)                              # (R,)
    acc = eg.sum_(eg.mul(eg.reshape(w, (R, S, 1)), rgb), axis=1)
    bg = eg.tensor(np.asarray(background, dtype=rgb.data.dtype))
    rest = eg.reshape(eg.sub(1.0, wsum), (R, 1))
    return eg.add(acc, eg.mul(rest, bg)), w


def composite_ray(samples, background=(1.0, 1.0, 1.0)) -> eg.Tensor:
    """Single-ray convenience over (rgb_i, density_i, delta_i) triples; returns (3,)."""
    if not samples:
        raise ValueError("composite_ray needs at least one sample")
    rgbs = np.stack([np.asarray(s[0], dtype=np.float64) for s in samples])[None]
    dens = np.asarray([s[1] for s in samples], dtype=np.float64)[None]
    deltas = np.asarray([s[2] for s in samples], dtype=np.float64)
    out, _ = composite(eg.tensor(rgbs, dtype=np.float64),
                       eg.tensor(dens, dtype=np.float64), deltas, background)
    return eg.reshape(out, (3,))


def render(vol: TriPlaneVolume, dec: FeatureDecoder, cam: Camera,
           cfg: RenderConfig = None) -> eg.Tensor:
    """Render an (H, W, 3) image Tensor; differentiable into vol and dec."""
    cfg = cfg if cfg is not None else RenderConfig()
    H, W = cam.resolution
    origins, dirs = generate_rays(cam)
    o = origins.reshape(-1, 3)
    d = dirs.reshape(-1, 3)
    R = o.shape[0]
    t, delta = sample_depths(cam, cfg, R)
    S = cfg.samples_per_ray
    if t.ndim == 1:
        pts = o[:, None, :] + t[None, :, None] * d[:, None, :]
    else:
        pts = o[:, None, :] + t[:, :, None] * d[:, None, :]
    dt = vol.plane_xy.data.dtype
    feats = sample_features(vol, eg.tensor(pts.reshape(-1, 3), dtype=dt))
    rgb, density = dec.decode(feats)
    pixels, _ = composite(eg.reshape(rgb, (R, S, 3)), eg.reshape(density, (R, S)),
                          delta, cfg.background)
    return eg.reshape(pixels, (H, W, 3))
