"""Tri-plane neural volume: three axis-aligned feature maps plus a tiny decoder.

A 3-D point is dropped onto the xy, xz and yz planes, each plane is sampled
bilinearly, and the three features are summed. One small MLP evaluation then
turns the summed feature into color and density, so the per-point cost stays
a bilinear gather plus a fixed-size matmul.
"""

from __future__ import annotations

import numpy as np

from . import engine as eg


class TriPlaneVolume:
    """Three P x P x C feature planes covering the cube [-extent, extent]^3.

    Plane u/v conventions: plane_xy stores world (x, y), plane_xz world
    (x, z), plane_yz world (y, z); texel (0, 0) sits at (-extent, -extent).
    """

    def __init__(self, plane_xy, plane_xz, plane_yz, extent: float = 1.0):
        planes = []
        for p in (plane_xy, plane_xz, plane_yz):
            planes.append(p if isinstance(p, eg.Tensor) else eg.tensor(p))
        shapes = {t.data.shape for t in planes}
        if len(shapes) != 1 or planes[0].data.ndim != 3:
            raise eg.ShapeError(f"planes must share one P x P x C shape, got {[t.data.shape for t in planes]}")
        if planes[0].data.shape[0] != planes[0].data.shape[1]:
            raise eg.ShapeError(f"planes must be square, got {planes[0].data.shape}")
        if not extent > 0:
            raise ValueError(f"extent must be positive, got {extent}")
        self.plane_xy, self.plane_xz, self.plane_yz = planes
        self.extent = float(extent)

    @classmethod
    def zeros(cls, P: int, C: int, extent: float = 1.0, dtype=None, requires_grad=False):
        dt = dtype or eg.DEFAULT_DTYPE
        mk = lambda: eg.tensor(np.zeros((P, P, C), dtype=dt), requires_grad=requires_grad)
        return cls(mk(), mk(), mk(), extent)

    @classmethod
    def random(cls, P: int, C: int, extent: float = 1.0, rng=None, scale: float = 0.1,
               dtype=None, requires_grad=False):
        rng = rng if rng is not None else np.random.default_rng(0)
        dt = dtype or eg.DEFAULT_DTYPE
        mk = lambda: eg.tensor(scale * rng.standard_normal((P, P, C)).astype(dt),
                               requires_grad=requires_grad)
        return cls(mk(), mk(), mk(), extent)

    @property
    def resolution(self) -> int:
        return self.plane_xy.data.shape[0]

    @property
    def channels(self) -> int:
        return self.plane_xy.data.shape[2]

    @property
    def planes(self):
        return (self.plane_xy, self.plane_xz, self.plane_yz)

    def named_params(self) -> dict:
        return {"plane_xy": self.plane_xy, "plane_xz": self.plane_xz,
                "plane_yz": self.plane_yz}


# world-axis pairs feeding each plane, in (plane_xy, plane_xz, plane_yz) order
_AXIS_PAIRS = ((0, 1), (0, 2), (1, 2))


def project_point(p, extent: float = 1.0):
    """(x,y,z) -> plane coordinates ((x,y), (x,z), (y,z)) / extent.

    Accepts a single point or an (N,3) array; out-of-cube coordinates pass
    through unclamped (sampling clamps later).
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    pts = p[None, :] if single else p
    outs = tuple(pts[:, list(pair)] / extent for pair in _AXIS_PAIRS)
    if single:
        return tuple(o[0] for o in outs)
    return outs


def _plane_coords(points: eg.Tensor, pair, extent: float, P: int) -> eg.Tensor:
    i, j = pair
    cols = eg.concat([points[:, i:i + 1], points[:, j:j + 1]], axis=1)
    # normalized [-1,1] -> texel [0, P-1]
    return eg.mul(eg.add(eg.mul(cols, 1.0 / extent), 1.0), (P - 1) / 2.0)


def sample_features(vol: TriPlaneVolume, points) -> eg.Tensor:
    """Sum of the three bilinear plane samples at each point; (N, C).

    Differentiable w.r.t. plane features always, and w.r.t. the points when
    they arrive as a requires_grad Tensor.
    """
    pts = points if isinstance(points, eg.Tensor) else eg.tensor(
        np.asarray(points), dtype=vol.plane_xy.data.dtype)
    if pts.data.ndim != 2 or pts.data.shape[1] != 3:
        raise eg.ShapeError(f"points must be (N,3), got {pts.data.shape}")
    P = vol.resolution
    total = None
    for plane, pair in zip(vol.planes, _AXIS_PAIRS):
        feat = eg.bilinear_sample(plane, _plane_coords(pts, pair, vol.extent, P))
        total = feat if total is None else eg.add(total, feat)
    return total


class FeatureDecoder:
    """Two-hidden-layer MLP: C-dim feature -> (rgb in [0,1]^3, density >= 0).

    The density bias starts at -1.0 so fresh volumes render near transparent.
    Tracks how many points it has decoded (`points_decoded`) so rendering
    efficiency claims can be audited.
    """

    def __init__(self, channels: int, hidden: int = 32, rng=None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        dt = dtype or eg.DEFAULT_DTYPE
        self.channels = channels
        self.hidden = hidden

        def lin(fan_in, fan_out):
            w = (rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)).astype(dt)
            return eg.tensor(w, requires_grad=True), eg.tensor(
                np.zeros(fan_out, dtype=dt), requires_grad=True)

        self.w1, self.b1 = lin(channels, hidden)
        self.w2, self.b2 = lin(hidden, hidden)
        self.w3, self.b3 = lin(hidden, 4)
        self.b3.data[3] = -1.0
        self.points_decoded = 0
        self.calls = 0

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def named_params(self) -> dict:
        return {f"decoder.{n}": t for n, t in
                zip(("w1", "b1", "w2", "b2", "w3", "b3"), self.params())}

    def reset_counter(self):
        self.points_decoded = 0
        self.calls = 0

    def decode(self, features: eg.Tensor):
        """features (N, C) -> (rgb (N,3), density (N,)). One MLP pass per point."""
        f = features if isinstance(features, eg.Tensor) else eg.tensor(features)
        if f.data.ndim != 2 or f.data.shape[1] != self.channels:
            raise eg.ShapeError(
                f"decoder expects (N,{self.channels}) features, got {f.data.shape}")
        self.points_decoded += f.data.shape[0]
        self.calls += 1
        h = eg.leaky_relu(eg.add(eg.matmul(f, self.w1), self.b1), 0.2)
        h = eg.leaky_relu(eg.add(eg.matmul(h, self.w2), self.b2), 0.2)
        out = eg.add(eg.matmul(h, self.w3), self.b3)
        rgb = eg.sigmoid(out[:, 0:3])
        density = eg.softplus(eg.reshape(out[:, 3:4], (-1,)))
        return rgb, density


def save_volume(path, vol: TriPlaneVolume, extra=None):
    entries = dict(vol.named_params())
    if extra:
        entries.update(extra)
    eg.save_checkpoint(path, entries)


def load_volume(path, extent: float = 1.0, requires_grad=False) -> TriPlaneVolume:
    blobs = eg.load_checkpoint(path)
    planes = []
    for name in ("plane_xy", "plane_xz", "plane_yz"):
        if name not in blobs:
            raise eg.CheckpointError(f"{path}: missing tensor '{name}'")
        planes.append(eg.tensor(blobs[name], requires_grad=requires_grad))
    return TriPlaneVolume(*planes, extent=extent)
