"""Animation loss suite with pluggable fixed extractors.

Terms: multi-scale perceptual L1, Gram style distance, region crop L1,
embedding cosine identity loss, tri-plane TV + density smoothness, and an L1
motion-code regularizer. Feature and embedding extractors are random-seeded
and frozen, standing in for pretrained perceptual/recognition networks while
keeping each term's mathematical structure intact.

Every L1 here is a mean of absolute values, so magnitudes stay comparable
across image sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as eg
from .triplane import TriPlaneVolume, sample_features

_BLUR = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 16.0


def _mean_abs(t: eg.Tensor) -> eg.Tensor:
    return eg.mean(eg.abs_(t))


def _chw(img: eg.Tensor) -> eg.Tensor:
    if img.data.ndim != 3 or img.data.shape[2] != 3:
        raise eg.ShapeError(f"expected an (H,W,3) image, got {img.data.shape}")
    return eg.permute(img, (2, 0, 1))


def _check_pair(a: eg.Tensor, b: eg.Tensor):
    if a.data.shape != b.data.shape:
        raise eg.ShapeError(f"image shapes differ: {a.data.shape} vs {b.data.shape}")


class FeatureExtractor:
    """Fixed multi-scale pyramid: (blur + 2x downsample)^j, then a conv bank.

    Never trained; bank weights are constants derived from `seed`.
    """

    def __init__(self, levels: int = 3, n_filters: int = 8, seed: int = 0, dtype=None):
        if levels < 1:
            raise ValueError(f"need at least one level, got {levels}")
        dt = dtype or eg.DEFAULT_DTYPE
        rng = np.random.default_rng(seed)
        blur = np.zeros((3, 3, 3, 3))
        for c in range(3):
            blur[c, c] = _BLUR
        self.blur_w = eg.tensor(blur.astype(dt))
        self.banks = [eg.tensor((rng.standard_normal((n_filters, 3, 3, 3))
                                 * np.sqrt(2.0 / 27)).astype(dt))
                      for _ in range(levels)]
        self.levels = levels
        self.n_filters = n_filters

    def frozen_params(self):
        return [self.blur_w] + list(self.banks)

    def extract(self, img: eg.Tensor):
        """(H,W,3) image -> list of (F, H_j, W_j) feature maps, one per level."""
        h = _chw(img)
        feats = []
        for bank in self.banks:
            h = eg.conv2d(h, self.blur_w, None, stride=(2, 2), pad=(1, 1))
            feats.append(eg.conv2d(h, bank, None, stride=(1, 1), pad=(1, 1)))
        return feats


class EmbeddingExtractor:
    """Fixed projection of the 16x16 grayscale image to a unit 64-d embedding."""

    def __init__(self, embed_dim: int = 64, grid: int = 16, seed: int = 100, dtype=None):
        dt = dtype or eg.DEFAULT_DTYPE
        rng = np.random.default_rng(seed)
        self.grid = grid
        self.proj = eg.tensor((rng.standard_normal((grid * grid, embed_dim))
                               / np.sqrt(grid * grid)).astype(dt))

    def frozen_params(self):
        return [self.proj]

    def embed(self, img: eg.Tensor) -> eg.Tensor:
        if img.data.ndim != 3 or img.data.shape[2] != 3:
            raise eg.ShapeError(f"expected an (H,W,3) image, got {img.data.shape}")
        H, W, _ = img.data.shape
        gray = eg.reshape(eg.mean(img, axis=2), (H, W, 1))
        g = self.grid
        ys = (np.arange(g) + 0.5) * H / g - 0.5
        xs = (np.arange(g) + 0.5) * W / g - 0.5
        coords = np.stack([np.repeat(ys, g), np.tile(xs, g)], axis=1)
        small = eg.bilinear_sample(gray, coords.astype(img.data.dtype))
        e = eg.matmul(eg.reshape(small, (1, g * g)), self.proj)
        e = eg.reshape(e, (-1,))
        norm = eg.sqrt(eg.add(eg.sum_(eg.square(e)), 1e-12))
        return eg.div(e, norm)


# ---------------------------------------------------------------- terms

def perceptual_loss(img: eg.Tensor, target: eg.Tensor, fx: FeatureExtractor) -> eg.Tensor:
    _check_pair(img, target)
    total = None
    for fa, fb in zip(fx.extract(img), fx.extract(target)):
        term = _mean_abs(eg.sub(fa, fb))
        total = term if total is None else eg.add(total, term)
    return total


def gram_matrix(feat: eg.Tensor) -> eg.Tensor:
    """(F,H,W) features -> (F,F) Gram normalized by H*W*F."""
    F, H, W = feat.data.shape
    f = eg.reshape(feat, (F, H * W))
    return eg.mul(eg.matmul(f, eg.permute(f, (1, 0))), 1.0 / (H * W * F))


def style_loss(img: eg.Tensor, target: eg.Tensor, fx: FeatureExtractor) -> eg.Tensor:
    _check_pair(img, target)
    total = None
    for fa, fb in zip(fx.extract(img), fx.extract(target)):
        term = _mean_abs(eg.sub(gram_matrix(fa), gram_matrix(fb)))
        total = term if total is None else eg.add(total, term)
    return total


def crop_resize(img: eg.Tensor, box, patch: int = 8) -> eg.Tensor:
    """Bilinear crop of box=(x0,y0,x1,y1) resized to (patch,patch,3).

    Box coordinates live in pixel units with pixel centers at half-integers;
    sample k reads the box at (k+0.5)/patch of its extent.
    """
    H, W, _ = img.data.shape
    x0, y0, x1, y1 = [float(v) for v in box]
    if not (0 <= x0 < x1 <= W and 0 <= y0 < y1 <= H):
        raise ValueError(f"box {box} degenerate or outside {W}x{H} image")
    xs = x0 + (np.arange(patch) + 0.5) * (x1 - x0) / patch
    ys = y0 + (np.arange(patch) + 0.5) * (y1 - y0) / patch
    coords = np.stack([np.repeat(ys, patch) - 0.5, np.tile(xs, patch) - 0.5], axis=1)
    out = eg.bilinear_sample(img, coords.astype(img.data.dtype))
    return eg.reshape(out, (patch, patch, 3))


def region_loss(img: eg.Tensor, target: eg.Tensor, boxes, patch: int = 8) -> eg.Tensor:
    _check_pair(img, target)
    if not boxes:
        raise ValueError("region_loss needs at least one box")
    total = None
    for box in boxes:
        term = _mean_abs(eg.sub(crop_resize(img, box, patch), crop_resize(target, box, patch)))
        total = term if total is None else eg.add(total, term)
    return total


def identity_from_embeddings(e_img: eg.Tensor, e_target: eg.Tensor) -> eg.Tensor:
    return eg.sub(1.0, eg.sum_(eg.mul(e_img, e_target)))


def identity_loss(img: eg.Tensor, target: eg.Tensor, ex: EmbeddingExtractor) -> eg.Tensor:
    _check_pair(img, target)
    return identity_from_embeddings(ex.embed(img), ex.embed(target))


def tv_term(vol: TriPlaneVolume) -> eg.Tensor:
    """Mean |finite difference| over both plane axes of all three planes."""
    diffs = []
    for plane in vol.planes:
        P = plane.data.shape[0]
        diffs.append(eg.reshape(eg.sub(plane[1:, :, :], plane[:-1, :, :]), (-1,)))
        diffs.append(eg.reshape(eg.sub(plane[:, 1:, :], plane[:, :-1, :]), (-1,)))
    return _mean_abs(eg.concat(diffs, axis=0))


def density_smoothness_term(vol: TriPlaneVolume, decoder, seed: int = 0,
                            n_samples: int = 64) -> eg.Tensor:
    """Mean |sigma(p) - sigma(p + eps u)| at random p, unit u, eps = extent/P."""
    rng = np.random.default_rng(seed)
    eps = vol.extent / vol.resolution
    p = rng.uniform(-vol.extent, vol.extent, (n_samples, 3))
    u = rng.standard_normal((n_samples, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    both = np.concatenate([p, p + eps * u]).astype(vol.plane_xy.data.dtype)
    _, density = decoder.decode(sample_features(vol, both))
    return _mean_abs(eg.sub(density[:n_samples], density[n_samples:]))


def triplane_regularizers(vol: TriPlaneVolume, decoder, seed: int = 0,
                          n_samples: int = 64):
    return tv_term(vol), density_smoothness_term(vol, decoder, seed, n_samples)


def motion_code_regularizer(w_x: eg.Tensor) -> eg.Tensor:
    return _mean_abs(w_x)


def params_regularizer(params) -> eg.Tensor:
    parts = [eg.reshape(eg.abs_(p), (-1,)) for p in params]
    return eg.mean(eg.concat(parts, axis=0))


# ---------------------------------------------------------------- suite

@dataclass
class LossWeights:
    perceptual: float = 1.0
    style: float = 250.0
    region: float = 1.0
    identity: float = 1.0
    tv: float = 0.1
    motion_reg: float = 0.01

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"loss weight {name} must be nonnegative, got {v}")


class LossSuite:
    """Bundles extractors + weights; returns (scalar loss, per-term floats).

    reg_target selects what the motion regularizer penalizes: "code" applies
    it to w_x, "params" to the controller parameters.
    """

    def __init__(self, weights: LossWeights = None, levels: int = 3, n_filters: int = 8,
                 patch: int = 8, seed: int = 0, reg_target: str = "code",
                 smooth_samples: int = 64, dtype=None):
        if reg_target not in ("code", "params"):
            raise ValueError(f"reg_target must be 'code' or 'params', got {reg_target!r}")
        self.weights = weights if weights is not None else LossWeights()
        self.features = FeatureExtractor(levels=levels, n_filters=n_filters,
                                         seed=seed, dtype=dtype)
        self.embedding = EmbeddingExtractor(seed=seed + 100, dtype=dtype)
        self.patch = patch
        self.reg_target = reg_target
        self.smooth_samples = smooth_samples

    def frozen_params(self):
        return self.features.frozen_params() + self.embedding.frozen_params()

    def total(self, img: eg.Tensor, target: eg.Tensor, w_x=None, vol=None,
              decoder=None, boxes=None, controller_params=None, seed: int = 0):
        """Weighted sum; returns (loss Tensor, {term: float})."""
        w = self.weights
        terms = {}
        acc = None

        def take(name, weight, tensor):
            nonlocal acc
            terms[name] = float(tensor.data)
            if weight != 0.0:
                weighted = eg.mul(tensor, float(weight))
                acc = weighted if acc is None else eg.add(acc, weighted)

        take("perceptual", w.perceptual, perceptual_loss(img, target, self.features))
        take("style", w.style, style_loss(img, target, self.features))
        if boxes:
            take("region", w.region, region_loss(img, target, boxes, self.patch))
        take("identity", w.identity, identity_loss(img, target, self.embedding))
        if vol is not None:
            tv, smooth = triplane_regularizers(vol, decoder, seed=seed,
                                               n_samples=self.smooth_samples)
            take("tv", w.tv, tv)
            take("smooth", w.tv, smooth)
        if self.reg_target == "code":
            if w_x is not None:
                take("motion_reg", w.motion_reg, motion_code_regularizer(w_x))
        elif controller_params:
            take("motion_reg", w.motion_reg, params_regularizer(controller_params))
        if acc is None:
            acc = eg.tensor(np.zeros((), dtype=img.data.dtype))
        terms["total"] = float(acc.data)
        return acc, terms
