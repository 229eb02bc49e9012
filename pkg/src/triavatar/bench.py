"""Throughput measurements and the tri-plane vs dense-MLP efficiency check.

The point of the tri-plane representation is that each sampled point costs
three bilinear lookups plus one lightweight MLP instead of a deep coordinate
network. `count_point_macs` makes that argument analytically from the
configured layer widths; the timing numbers are informational only.
"""

from __future__ import annotations

import time

import numpy as np

from . import engine as eg
from .inversion import AvatarSystem, animation_volume
from .renderer import render


def triplane_point_macs(channels: int, hidden: int) -> int:
    """Multiply-accumulates per sampled point on the tri-plane path."""
    bilinear = 3 * (4 * channels + 4)       # corner blends + weight products
    mlp = channels * hidden + hidden * hidden + hidden * 4
    return bilinear + mlp


def dense_point_macs(width: int = 64, depth: int = 8) -> int:
    """Per-point cost of a coordinate MLP: 3 -> width x(depth-1) -> 4."""
    return 3 * width + (depth - 2) * width * width + width * 4


class DenseBaseline:
    """Plain numpy coordinate MLP (depth layers, fixed width), timing only."""

    def __init__(self, width: int = 64, depth: int = 8, seed: int = 0):
        rng = np.random.default_rng(seed)
        dims = [3] + [width] * (depth - 1) + [4]
        self.layers = [(rng.standard_normal((a, b)).astype(np.float32) / np.sqrt(a),
                        np.zeros(b, dtype=np.float32)) for a, b in zip(dims, dims[1:])]

    def decode(self, points: np.ndarray) -> np.ndarray:
        h = points.astype(np.float32)
        for i, (w, b) in enumerate(self.layers):
            h = h @ w + b
            if i < len(self.layers) - 1:
                h = np.where(h > 0, h, 0.2 * h)
        return h


def _time(fn, repeats: int = 3) -> float:
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_benchmark(sys: AvatarSystem, cam, x_window, repeats: int = 3) -> dict:
    """Measure generator/renderer/end-to-end throughput plus the decode audit."""
    wp = np.tile(sys.w_avg, (sys.generator.n_layers, 1))
    vol, _ = animation_volume(sys, wp, x_window)
    H, W = cam.resolution
    S = sys.render_cfg.samples_per_ray
    n_rays = H * W
    n_points = n_rays * S

    with eg.frozen(sys.all_params()):
        t_vol = _time(lambda: animation_volume(sys, wp, x_window), repeats)
        sys.decoder.reset_counter()
        img = render(vol, sys.decoder, cam, sys.render_cfg)
        decoded_once = sys.decoder.points_decoded
        t_render = _time(lambda: render(vol, sys.decoder, cam, sys.render_cfg), repeats)

        def end_to_end():
            v, _ = animation_volume(sys, wp, x_window)
            render(v, sys.decoder, cam, sys.render_cfg)
        t_frame = _time(end_to_end, repeats)

    baseline = DenseBaseline()
    pts = np.random.default_rng(0).standard_normal((n_points, 3)).astype(np.float32)
    t_dense = _time(lambda: baseline.decode(pts), repeats)

    tri_macs = triplane_point_macs(sys.generator.channels, sys.decoder.hidden)
    dense_macs = dense_point_macs()
    return {
        "resolution": (H, W),
        "samples_per_ray": S,
        "points_per_frame": n_points,
        "decodes_per_render": decoded_once,
        "one_decode_per_point": decoded_once == n_points,
        "volumes_per_sec": 1.0 / t_vol,
        "rays_per_sec": n_rays / t_render,
        "frames_per_sec": 1.0 / t_frame,
        "dense_points_per_sec": n_points / t_dense,
        "triplane_points_per_sec": n_points / t_render,
        "triplane_point_macs": tri_macs,
        "dense_point_macs": dense_macs,
        "mac_ratio": dense_macs / tri_macs,
    }


def format_report(r: dict) -> str:
    lines = [
        f"resolution          {r['resolution'][0]}x{r['resolution'][1]}"
        f" at {r['samples_per_ray']} samples/ray",
        f"decode audit        {r['decodes_per_render']} decodes for"
        f" {r['points_per_frame']} points"
        f" ({'exactly one per point' if r['one_decode_per_point'] else 'MISMATCH'})",
        f"generator           {r['volumes_per_sec']:.2f} volumes/sec",
        f"renderer            {r['rays_per_sec']:.0f} rays/sec",
        f"end-to-end          {r['frames_per_sec']:.2f} frames/sec",
        f"per-point cost      tri-plane {r['triplane_point_macs']} MACs"
        f" vs dense baseline {r['dense_point_macs']} MACs"
        f" ({r['mac_ratio']:.1f}x)",
        f"dense baseline      {r['dense_points_per_sec']:.0f} points/sec"
        f" vs tri-plane path {r['triplane_points_per_sec']:.0f} points/sec",
    ]
    return "\n".join(lines)
