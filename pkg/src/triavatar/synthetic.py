"""Procedural ground-truth oracle: analytic blob heads with exact labels.

A "head" is a sum of smooth ellipsoidal density blobs (head, mouth, two eyes,
brow) in a canonical frame. Identity parameters set geometry and palette,
expression parameters deform feature blobs (mouth aperture/width, brow lift,
eye openness), pose applies a rigid yaw/pitch/roll/scale warp. Everything is
closed form, so datasets ship with exact motion, camera, and region labels.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import engine as eg
from . import imgio
from .renderer import Camera, RenderConfig, composite, generate_rays

EXPR_DIMS = 4
POSE_DIMS = 4


@dataclass
class SceneParams:
    identity: np.ndarray          # 6 values in [0,1]
    expression: np.ndarray = None  # 4 values, roughly [-1,1]
    pose: np.ndarray = None        # yaw, pitch, roll (radians), log-ish scale
    ambient_density: float = 0.0   # uniform fill, used by slab configurations
    ambient_color: tuple = (0.5, 0.5, 0.5)
    blob_gain: float = 1.0

    def __post_init__(self):
        self.identity = np.asarray(self.identity, dtype=np.float64)
        self.expression = (np.zeros(EXPR_DIMS) if self.expression is None
                           else np.asarray(self.expression, dtype=np.float64))
        self.pose = (np.zeros(POSE_DIMS) if self.pose is None
                     else np.asarray(self.pose, dtype=np.float64))
        if self.identity.shape != (6,):
            raise ValueError(f"identity must have 6 dims, got {self.identity.shape}")
        if self.expression.shape != (EXPR_DIMS,) or self.pose.shape != (POSE_DIMS,):
            raise ValueError("expression/pose dims must be 4 + 4")

    @property
    def motion(self) -> np.ndarray:
        return np.concatenate([self.expression, self.pose])

    def with_motion(self, coeffs) -> "SceneParams":
        coeffs = np.asarray(coeffs, dtype=np.float64)
        return SceneParams(self.identity, coeffs[:EXPR_DIMS], coeffs[EXPR_DIMS:],
                           self.ambient_density, self.ambient_color, self.blob_gain)


def _rotation(yaw: float, pitch: float, roll: float) -> np.ndarray:
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return ry @ rx @ rz


def pose_to_canonical(points: np.ndarray, pose) -> np.ndarray:
    """World points -> canonical frame (undo rotation, then scale)."""
    yaw, pitch, roll, s = [float(v) for v in pose]
    R = _rotation(yaw, pitch, roll)
    return (points @ R) / np.exp(0.15 * s)  # p @ R == R.T @ p per point


def mouth_center_world(params: SceneParams) -> np.ndarray:
    c = _blob_table(params)[1][0]
    yaw, pitch, roll, s = [float(v) for v in params.pose]
    return _rotation(yaw, pitch, roll) @ c * np.exp(0.15 * s)


def _blob_table(params: SceneParams):
    """(center, inverse axes, amplitude, color) per blob, canonical frame."""
    u = params.identity
    e = params.expression
    ax = 0.40 + 0.15 * u[0]
    ay = 0.50 + 0.15 * u[1]
    az = 0.42
    head_col = np.array([0.35 + 0.50 * u[2], 0.30 + 0.40 * u[3], 0.30 + 0.30 * (1 - u[2])])
    mouth_w = np.clip(0.17 + 0.05 * e[1], 0.05, 0.30)
    mouth_h = np.clip(0.05 + 0.045 * e[0], 0.010, 0.12)
    mouth_c = np.array([0.0, -0.24 - 0.08 * u[4], 0.30])
    eye_sep = 0.14 + 0.07 * u[5]
    eye_ry = np.clip(0.05 + 0.03 * e[3], 0.008, 0.10)
    brow_y = 0.30 + 0.06 * e[2]
    return [
        (np.zeros(3), np.array([1 / ax, 1 / ay, 1 / az]), 4.0, 2.5, head_col),
        (mouth_c, np.array([1 / mouth_w, 1 / mouth_h, 1 / 0.08]), 1.0, 4.0,
         np.array([0.55, 0.15, 0.15])),
        (np.array([-eye_sep, 0.15, 0.32]), np.array([1 / 0.055, 1 / eye_ry, 1 / 0.05]),
         1.0, 4.0, np.array([0.08, 0.08, 0.12])),
        (np.array([eye_sep, 0.15, 0.32]), np.array([1 / 0.055, 1 / eye_ry, 1 / 0.05]),
         1.0, 4.0, np.array([0.08, 0.08, 0.12])),
        (np.array([0.0, brow_y, 0.30]), np.array([1 / 0.26, 1 / 0.035, 1 / 0.06]),
         1.0, 3.0, np.array([0.20, 0.15, 0.10])),
    ]


def analytic_field(params: SceneParams, points: np.ndarray):
    """Closed-form (rgb (N,3), density (N,)) of the posed scene at world points."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    q = pose_to_canonical(pts, params.pose)
    density = np.full(pts.shape[0], params.ambient_density, dtype=np.float64)
    color_acc = params.ambient_density * np.asarray(params.ambient_color)[None, :] \
        * np.ones((pts.shape[0], 1))
    if params.blob_gain != 0.0:
        for center, inv_ax, k, amp, col in _blob_table(params):
            r2 = np.sum(((q - center) * inv_ax) ** 2, axis=1)
            d = params.blob_gain * amp * np.exp(-k * r2)
            density += d
            color_acc += d[:, None] * col[None, :]
    rgb = color_acc / (density[:, None] + 1e-8)
    return rgb, density


def oracle_render(params: SceneParams, cam: Camera, cfg: RenderConfig = None,
                  oversample: int = 4) -> np.ndarray:
    """Volume-render the analytic field at oversample x the configured samples."""
    cfg = cfg if cfg is not None else RenderConfig()
    H, W = cam.resolution
    origins, dirs = generate_rays(cam)
    o = origins.reshape(-1, 3)
    d = dirs.reshape(-1, 3)
    S = cfg.samples_per_ray * oversample
    delta = (cam.far - cam.near) / S
    t = cam.near + (np.arange(S) + 0.5) * delta
    pts = (o[:, None, :] + t[None, :, None] * d[:, None, :]).reshape(-1, 3)
    rgb, density = analytic_field(params, pts)
    R = o.shape[0]
    img, _ = composite(eg.tensor(rgb.reshape(R, S, 3)),
                       eg.tensor(density.reshape(R, S)), delta, cfg.background)
    return img.data.reshape(H, W, 3)


# ---------------------------------------------------------------- trajectories

def motion_trajectory(rng, n_frames: int) -> np.ndarray:
    """Smooth bounded random walk over the 8 motion coefficients, (T, 8)."""
    x = np.zeros(EXPR_DIMS + POSE_DIMS)
    out = np.empty((n_frames, EXPR_DIMS + POSE_DIMS))
    scale = np.array([1.0, 1.0, 1.0, 1.0, 0.5, 0.3, 0.3, 0.5])
    for t in range(n_frames):
        x = np.clip(0.88 * x + 0.35 * rng.standard_normal(8), -1.0, 1.0)
        out[t] = x * scale
    return out


def sample_camera(rng, resolution: int, radius: float = 2.2, fov_y: float = 0.8,
                  near: float = 1.0, far: float = 3.5) -> Camera:
    """Camera on a +-45 degree azimuth/elevation cap looking at the origin."""
    az = rng.uniform(-np.pi / 4, np.pi / 4)
    el = rng.uniform(-np.pi / 4, np.pi / 4)
    pos = radius * np.array([np.sin(az) * np.cos(el), np.sin(el),
                             np.cos(az) * np.cos(el)])
    return Camera(position=tuple(pos), look_at=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0),
                  fov_y=fov_y, resolution=(resolution, resolution), near=near, far=far)


def project_to_pixel(cam: Camera, point: np.ndarray):
    """World point -> (row, col) pixel coordinates under the pinhole model."""
    pos = np.asarray(cam.position, dtype=np.float64)
    fwd = np.asarray(cam.look_at, dtype=np.float64) - pos
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(cam.up, dtype=np.float64))
    right /= np.linalg.norm(right)
    up_cam = np.cross(right, fwd)
    v = np.asarray(point, dtype=np.float64) - pos
    z = v @ fwd
    if z <= 0:
        raise ValueError("point is behind the camera")
    H, W = cam.resolution
    tanf = np.tan(cam.fov_y / 2.0)
    u = (v @ right) / (z * tanf * (W / H))
    w = (v @ up_cam) / (z * tanf)
    return (1.0 - w) * H / 2.0 - 0.5, (u + 1.0) * W / 2.0 - 0.5


def mouth_box(params: SceneParams, cam: Camera, half: int = None):
    """Axis-aligned box around the projected mouth analog, clamped to bounds."""
    H, W = cam.resolution
    half = half if half is not None else max(2, round(0.12 * W))
    row, col = project_to_pixel(cam, mouth_center_world(params))
    row = float(np.clip(row, 0.5, H - 0.5))
    col = float(np.clip(col, 0.5, W - 0.5))
    x0 = int(np.clip(np.floor(col) - half, 0, W - 2))
    y0 = int(np.clip(np.floor(row) - half, 0, H - 2))
    x1 = int(np.clip(np.ceil(col) + half, x0 + 1, W))
    y1 = int(np.clip(np.ceil(row) + half, y0 + 1, H))
    return (x0, y0, x1, y1)


# ---------------------------------------------------------------- dataset files

def _write_text(path, text: str):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".txt.tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def camera_to_line(cam: Camera) -> str:
    vals = [*cam.position, *cam.look_at, *cam.up, cam.fov_y, cam.near, cam.far]
    return " ".join(repr(float(v)) for v in vals)


def camera_from_line(line: str, resolution) -> Camera:
    vals = [float(tok) for tok in line.split()]
    if len(vals) != 12:
        raise ValueError(f"camera line needs 12 numbers, got {len(vals)}")
    return Camera(position=tuple(vals[0:3]), look_at=tuple(vals[3:6]),
                  up=tuple(vals[6:9]), fov_y=vals[9],
                  resolution=tuple(resolution), near=vals[10], far=vals[11])


def make_dataset(out_dir, n_identities: int, n_frames: int, seed: int = 0,
                 resolution: int = 32, train_samples: int = 24,
                 holdout_fraction: float = 0.25) -> dict:
    """Write clips (PPM frames + motion/camera/box text files) and a manifest."""
    if n_identities < 1 or n_frames < 1:
        raise ValueError("need at least one identity and one frame")
    os.makedirs(out_dir, exist_ok=True)
    cfg = RenderConfig(samples_per_ray=train_samples)
    seeds = np.random.SeedSequence(seed).spawn(n_identities)
    n_held = int(np.floor(n_identities * holdout_fraction)) if n_identities > 1 else 0
    clips = []
    for ci in range(n_identities):
        rng = np.random.default_rng(seeds[ci])
        identity = rng.uniform(0.0, 1.0, 6)
        motions = motion_trajectory(rng, n_frames)
        clip_name = f"clip_{ci:03d}"
        clip_dir = os.path.join(out_dir, clip_name)
        os.makedirs(clip_dir, exist_ok=True)
        frames = []
        cam_lines = []
        box_lines = []
        for t in range(n_frames):
            params = SceneParams(identity).with_motion(motions[t])
            cam = sample_camera(rng, resolution)
            img = oracle_render(params, cam, cfg)
            rel = f"{clip_name}/frame_{t:03d}.ppm"
            imgio.write_ppm(os.path.join(out_dir, rel), img)
            box = mouth_box(params, cam)
            frames.append({
                "image": rel,
                "motion": [float(v) for v in motions[t]],
                "camera": {"position": list(cam.position), "look_at": list(cam.look_at),
                           "up": list(cam.up), "fov_y": cam.fov_y,
                           "near": cam.near, "far": cam.far},
                "box": list(box),
            })
            cam_lines.append(camera_to_line(cam))
            box_lines.append(" ".join(str(v) for v in box))
        _write_text(os.path.join(clip_dir, "motion.txt"),
                    "\n".join(" ".join(repr(float(v)) for v in row) for row in motions) + "\n")
        _write_text(os.path.join(clip_dir, "cameras.txt"), "\n".join(cam_lines) + "\n")
        _write_text(os.path.join(clip_dir, "boxes.txt"), "\n".join(box_lines) + "\n")
        clips.append({
            "name": clip_name,
            "identity": [float(v) for v in identity],
            "held_out": ci >= n_identities - n_held,
            "frames": frames,
        })
    manifest = {
        "seed": seed,
        "resolution": resolution,
        "train_samples": train_samples,
        "expr_dims": EXPR_DIMS,
        "pose_dims": POSE_DIMS,
        "clips": clips,
    }
    _write_text(os.path.join(out_dir, "manifest.json"),
                json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def load_manifest(root) -> dict:
    with open(os.path.join(root, "manifest.json")) as f:
        return json.load(f)


def camera_from_frame(frame: dict, resolution: int) -> Camera:
    c = frame["camera"]
    return Camera(position=tuple(c["position"]), look_at=tuple(c["look_at"]),
                  up=tuple(c["up"]), fov_y=c["fov_y"],
                  resolution=(resolution, resolution), near=c["near"], far=c["far"])


def motion_matrix(clip: dict) -> np.ndarray:
    return np.array([f["motion"] for f in clip["frames"]], dtype=np.float64)


def motion_window(motions: np.ndarray, t: int, window: int) -> np.ndarray:
    """Centered (F, window) slice of a (T, F) trajectory, edge-padded by repetition."""
    if window % 2 == 0:
        raise ValueError(f"window must be odd, got {window}")
    T = motions.shape[0]
    idx = np.clip(np.arange(t - window // 2, t + window // 2 + 1), 0, T - 1)
    return motions[idx].T.copy()


class ClipSet:
    """A dataset directory loaded into memory: one entry per clip.

    Each clip dict carries images (T,H,W,3) float32 in [0,1], motions (T,F),
    cameras (list), boxes (T,4) int, identity (6,), and held_out flag.
    """

    def __init__(self, root):
        self.root = str(root)
        self.manifest = load_manifest(root)
        self.resolution = int(self.manifest["resolution"])
        self.clips = []
        for clip in self.manifest["clips"]:
            images = np.stack([
                imgio.read_ppm(os.path.join(self.root, fr["image"])).astype(np.float32) / 255.0
                for fr in clip["frames"]])
            self.clips.append({
                "name": clip["name"],
                "identity": np.asarray(clip["identity"], dtype=np.float64),
                "held_out": bool(clip["held_out"]),
                "images": images,
                "motions": motion_matrix(clip),
                "cameras": [camera_from_frame(fr, self.resolution) for fr in clip["frames"]],
                "boxes": np.array([fr["box"] for fr in clip["frames"]], dtype=np.int64),
            })

    @property
    def train_clips(self):
        return [c for c in self.clips if not c["held_out"]]

    @property
    def held_out_clips(self):
        return [c for c in self.clips if c["held_out"]]

    def __len__(self):
        return len(self.clips)


def load_motion_file(path) -> np.ndarray:
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split()])
    if not rows:
        raise ValueError(f"{path}: empty motion file")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: inconsistent coefficient counts {sorted(widths)}")
    return np.array(rows, dtype=np.float64)
