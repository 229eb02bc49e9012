"""
One-shot animation
==================

Given a single portrait frame, recover the subject's identity latent by
inversion, then drive it with motion windows from any clip.  The motion
pathway never sees the latent, so the same windows produce byte-identical
motion codes for every identity, and two identities blend by linear
interpolation in latent space.

To show real convergence without a long training run, the target frame
is rendered from a planted latent: inversion then has an exact solution
to find.
"""

import tempfile

import numpy as np

from triavatar import synthetic
from triavatar.config import default_run_config
from triavatar.inversion import (animate, interpolate_identity, invert_identity, psnr)

root = tempfile.mkdtemp(prefix="one_shot_")

cfg = default_run_config([
    "model.latent_dim=8", "model.n_layers=3", "model.n_bases=4",
    "model.plane_resolution=16", "model.channels=4", "model.window=3",
    "model.decoder_hidden=8", "model.avg_samples=200",
    "renderer.samples=4", "loss.levels=1", "loss.filters=4",
    "loss.patch=4", "loss.smooth_samples=8",
    "data.n_identities=2", "data.n_frames=5", "data.resolution=12",
    "data.train_samples=4", f"paths.data={root}/data",
])

synthetic.make_dataset(cfg.data_dir, cfg.data_identities, cfg.data_frames,
                       seed=cfg.seed, resolution=cfg.data_resolution,
                       train_samples=cfg.data_train_samples)
clips = synthetic.ClipSet(cfg.data_dir)
system = cfg.build_system()

# --- Plant two identities and render reference frames -----------------
rng = np.random.default_rng(7)
L, d = system.generator.n_layers, system.generator.latent_dim
planted_a = np.tile(system.w_avg + 0.4 * rng.standard_normal(d), (L, 1))
planted_b = np.tile(system.w_avg + 0.4 * rng.standard_normal(d), (L, 1))

driver = clips.train_clips[0]
cam0 = driver["cameras"][0]
win0 = synthetic.motion_window(driver["motions"], 0, cfg.window)
target_a, _ = animate(system, planted_a, win0, cam0)
target_b, _ = animate(system, planted_b, win0, cam0)

# --- Invert frame A: one image in, identity latent out ----------------
history = []
wp_a = invert_identity(system, target_a, win0, cam0, steps=40,
                       lr=cfg.lr_latent, seed=cfg.seed, log=history.append)
recon, _ = animate(system, wp_a, win0, cam0)
print(f"inverted latent shape {wp_a.shape}, "
      f"loss {history[0]['loss']:.3f} -> {history[-1]['loss']:.3f}")
print(f"reconstruction psnr {psnr(recon, target_a):.1f} dB")

# --- Drive the recovered identity with the clip's motion --------------
frames_a, codes_a = [], []
for t in range(3):
    win = synthetic.motion_window(driver["motions"], t, cfg.window)
    img, wx = animate(system, wp_a, win, driver["cameras"][t])
    frames_a.append(img)
    codes_a.append(wx)
print(f"animated {len(frames_a)} frames of shape {frames_a[0].shape}")

# --- The second identity gets byte-identical motion codes -------------
wp_b = invert_identity(system, target_b, win0, cam0, steps=40,
                       lr=cfg.lr_latent, seed=cfg.seed + 1)
img_b, wx_b = animate(system, wp_b, win0, cam0)
print("motion codes identical across identities:",
      codes_a[0].tobytes() == wx_b.tobytes())
print("rendered frames differ across identities:",
      not np.array_equal(frames_a[0], img_b))

# --- Blend the two identities -----------------------------------------
# alpha=1 is pure A; sliding toward 0 morphs the render into B.  The
# untrained generator reacts only faintly to the latent, so the drift is
# small here; after training, identities differ macroscopically.
ref = frames_a[0]
for alpha in (1.0, 0.5, 0.0):
    mid = interpolate_identity(wp_a, wp_b, alpha)
    img, _ = animate(system, mid, win0, cam0)
    print(f"alpha={alpha:.1f} mean |frame - pure A| = {np.abs(img - ref).mean():.2e}")
