"""Run configuration: flat `section.key=value` text files plus overrides.

The format is deliberately primitive (one assignment per line, `#` comments,
no nesting) so any tool or language can read and patch it. Unknown keys are
rejected to catch typos early.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .inversion import AvatarSystem, TrainConfig
from .losses import LossWeights
from .renderer import RenderConfig


class ConfigError(ValueError):
    pass


def _parse_floats(s: str):
    return tuple(float(tok) for tok in s.split(","))


@dataclass
class RunConfig:
    # model dims
    latent_dim: int = 32
    n_layers: int = 6
    n_bases: int = 20
    plane_resolution: int = 32
    channels: int = 8
    expr_dims: int = 4
    pose_dims: int = 4
    window: int = 5
    extent: float = 1.0
    decoder_hidden: int = 24
    avg_samples: int = 10_000
    # renderer
    samples_per_ray: int = 12
    background: tuple = (1.0, 1.0, 1.0)
    # losses
    loss_levels: int = 2
    loss_filters: int = 8
    patch: int = 8
    smooth_samples: int = 32
    reg_target: str = "code"
    w_perceptual: float = 1.0
    w_style: float = 250.0
    w_region: float = 1.0
    w_identity: float = 1.0
    w_tv: float = 0.1
    w_motion_reg: float = 0.01
    # training
    n_id: int = 90
    n_mo: int = 10
    iterations: int = 200
    lr_latent: float = 0.01
    lr_nets: float = 1e-4
    ema_beta: float = 0.99
    batch: int = 4
    # inversion
    invert_steps: int = 100
    # dataset
    data_identities: int = 8
    data_frames: int = 16
    data_resolution: int = 32
    data_train_samples: int = 12
    data_holdout: float = 0.25
    # plumbing
    seed: int = 0
    data_dir: str = "runs/data"
    checkpoint: str = "runs/model.ckpt"
    log_path: str = "runs/train.jsonl"
    out_dir: str = "runs/out"

    def __post_init__(self):
        for name in ("latent_dim", "n_layers", "n_bases", "plane_resolution",
                     "channels", "expr_dims", "pose_dims", "window",
                     "decoder_hidden", "samples_per_ray", "loss_levels",
                     "loss_filters", "patch", "batch", "data_identities",
                     "data_frames", "data_resolution", "data_train_samples"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.extent <= 0:
            raise ConfigError("extent must be positive")
        if self.invert_steps < 0 or self.iterations < 0:
            raise ConfigError("step counts must be >= 0")

    # -- factories -------------------------------------------------------------

    def render_config(self) -> RenderConfig:
        return RenderConfig(samples_per_ray=self.samples_per_ray,
                            background=self.background)

    def loss_weights(self) -> LossWeights:
        return LossWeights(perceptual=self.w_perceptual, style=self.w_style,
                           region=self.w_region, identity=self.w_identity,
                           tv=self.w_tv, motion_reg=self.w_motion_reg)

    def build_system(self) -> AvatarSystem:
        return AvatarSystem.build(
            latent_dim=self.latent_dim, n_layers=self.n_layers,
            plane_resolution=self.plane_resolution, channels=self.channels,
            extent=self.extent, expr_dims=self.expr_dims, pose_dims=self.pose_dims,
            window=self.window, n_bases=self.n_bases,
            decoder_hidden=self.decoder_hidden, render_cfg=self.render_config(),
            weights=self.loss_weights(), loss_levels=self.loss_levels,
            smooth_samples=self.smooth_samples, reg_target=self.reg_target,
            avg_samples=self.avg_samples, seed=self.seed)

    def train_config(self, joint: bool = False, iterations=None) -> TrainConfig:
        return TrainConfig(
            n_id=self.n_id, n_mo=self.n_mo,
            iterations=self.iterations if iterations is None else int(iterations),
            lr_latent=self.lr_latent, lr_nets=self.lr_nets, ema_beta=self.ema_beta,
            batch=self.batch, joint_mode=joint, seed=self.seed)


_KEY_MAP = {
    "model.latent_dim": ("latent_dim", int),
    "model.n_layers": ("n_layers", int),
    "model.n_bases": ("n_bases", int),
    "model.plane_resolution": ("plane_resolution", int),
    "model.channels": ("channels", int),
    "model.expr_dims": ("expr_dims", int),
    "model.pose_dims": ("pose_dims", int),
    "model.window": ("window", int),
    "model.extent": ("extent", float),
    "model.decoder_hidden": ("decoder_hidden", int),
    "model.avg_samples": ("avg_samples", int),
    "renderer.samples": ("samples_per_ray", int),
    "renderer.background": ("background", _parse_floats),
    "loss.levels": ("loss_levels", int),
    "loss.filters": ("loss_filters", int),
    "loss.patch": ("patch", int),
    "loss.smooth_samples": ("smooth_samples", int),
    "loss.reg_target": ("reg_target", str),
    "loss.perceptual": ("w_perceptual", float),
    "loss.style": ("w_style", float),
    "loss.region": ("w_region", float),
    "loss.identity": ("w_identity", float),
    "loss.tv": ("w_tv", float),
    "loss.motion_reg": ("w_motion_reg", float),
    "train.n_id": ("n_id", int),
    "train.n_mo": ("n_mo", int),
    "train.iterations": ("iterations", int),
    "train.lr_latent": ("lr_latent", float),
    "train.lr_nets": ("lr_nets", float),
    "train.ema_beta": ("ema_beta", float),
    "train.batch": ("batch", int),
    "invert.steps": ("invert_steps", int),
    "data.n_identities": ("data_identities", int),
    "data.n_frames": ("data_frames", int),
    "data.resolution": ("data_resolution", int),
    "data.train_samples": ("data_train_samples", int),
    "data.holdout_fraction": ("data_holdout", float),
    "seed": ("seed", int),
    "paths.data": ("data_dir", str),
    "paths.checkpoint": ("checkpoint", str),
    "paths.log": ("log_path", str),
    "paths.out": ("out_dir", str),
}


def parse_assignments(lines) -> dict:
    """key=value lines -> {field: parsed value}; '#' starts a comment."""
    out = {}
    for ln, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value, got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _KEY_MAP:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        field_name, conv = _KEY_MAP[key]
        try:
            out[field_name] = conv(val)
        except ValueError as e:
            raise ConfigError(f"line {ln}: bad value for {key}: {val!r}") from e
    return out


def load_run_config(path, overrides=()) -> RunConfig:
    """Parse a config file, then apply 'section.key=value' override strings."""
    try:
        with open(path) as f:
            values = parse_assignments(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    values.update(parse_assignments(overrides))
    return RunConfig(**values)


def default_run_config(overrides=()) -> RunConfig:
    return RunConfig(**parse_assignments(overrides))


def config_summary(cfg: RunConfig) -> str:
    pairs = []
    for f in fields(cfg):
        pairs.append(f"{f.name}={getattr(cfg, f.name)}")
    return "\n".join(pairs)
