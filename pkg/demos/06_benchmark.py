"""
Why tri-planes: the per-point cost argument
===========================================

A dense coordinate MLP pays its full depth for every sampled point.
The tri-plane path replaces that with three bilinear lookups plus one
two-layer decoder, so the per-point multiply-accumulate count collapses.
`run_benchmark` verifies the decoder really is hit exactly once per
sampled point and measures wall-clock throughput alongside the analytic
MAC counts.
"""

import tempfile

import numpy as np

from triavatar import synthetic
from triavatar.bench import (dense_point_macs, format_report, run_benchmark,
                             triplane_point_macs)
from triavatar.config import default_run_config

# MAC arithmetic needs no model at all.
print("per-point MACs across decoder sizes (dense baseline: 8 layers, width 64)")
dense = dense_point_macs(width=64, depth=8)
for channels, hidden in [(4, 8), (16, 32), (32, 64)]:
    tri = triplane_point_macs(channels, hidden)
    print(f"  channels={channels:<3d} hidden={hidden:<3d} "
          f"tri-plane {tri:>5d} vs dense {dense} ({dense / tri:.1f}x cheaper)")

# Now time a real render at a small working size.
root = tempfile.mkdtemp(prefix="bench_")
cfg = default_run_config([
    "model.latent_dim=8", "model.n_layers=3", "model.n_bases=4",
    "model.plane_resolution=32", "model.channels=8", "model.window=3",
    "model.decoder_hidden=16", "model.avg_samples=200",
    "renderer.samples=16",
    "data.n_identities=1", "data.n_frames=2", "data.resolution=32",
    "data.train_samples=4", f"paths.data={root}/data",
])
system = cfg.build_system()

rng = np.random.default_rng(cfg.seed)
cam = synthetic.sample_camera(rng, cfg.data_resolution)
x_window = np.zeros((system.controller.in_width, cfg.window), dtype=np.float32)

report = run_benchmark(system, cam, x_window, repeats=3)
print()
print(format_report(report))

# The audit line above is the load-bearing claim: every sampled point is
# decoded exactly once, and each of those decodes is an order of magnitude
# cheaper than the dense alternative.
assert report["one_decode_per_point"]
assert report["triplane_point_macs"] < report["dense_point_macs"]
print()
print("decode audit passed: one decode per point, tri-plane strictly cheaper")
