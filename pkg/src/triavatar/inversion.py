"""Avatar training and one-shot identity inversion.

Every training iteration re-estimates a fresh identity latent for a sampled
clip with the motion controller frozen, then trains the controller with the
identity frozen. Because the identity code is re-initialized from the average
latent each iteration, it cannot memorize the clip's motion: whatever the
controller can explain from the motion signal stays out of the identity code.
An EMA shadow of the controller carries progress across iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine as eg
from .controller import ControllerNet
from .generator import GeneratorNet, average_latent, extend_to_wplus, generate_triplane
from .losses import LossSuite, LossWeights
from .renderer import Camera, RenderConfig, render
from .synthetic import ClipSet, motion_window
from .triplane import FeatureDecoder, TriPlaneVolume


@dataclass
class TrainConfig:
    n_id: int = 90
    n_mo: int = 10
    iterations: int = 200
    lr_latent: float = 0.01
    lr_nets: float = 1e-4
    ema_beta: float = 0.99
    batch: int = 4
    joint_mode: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_id < 0 or self.n_mo < 0 or self.n_id + self.n_mo == 0:
            raise ValueError("need n_id, n_mo >= 0 with a positive total")
        if self.iterations < 0 or self.batch < 1:
            raise ValueError("iterations must be >= 0 and batch >= 1")
        if not 0.0 < self.ema_beta < 1.0:
            raise ValueError(f"ema_beta must lie in (0, 1), got {self.ema_beta}")

    @property
    def n_steps(self) -> int:
        return self.n_id + self.n_mo


@dataclass
class FramePair:
    """Source and driving frames sampled from one clip (shared identity)."""
    source_image: np.ndarray
    source_motion: np.ndarray     # (coeffs, window)
    source_camera: Camera
    driving_image: np.ndarray
    driving_motion: np.ndarray
    driving_camera: Camera
    source_box: tuple = None
    driving_box: tuple = None


class AvatarSystem:
    """Generator + decoder + controller + average latent under one roof."""

    def __init__(self, generator: GeneratorNet, decoder: FeatureDecoder,
                 controller: ControllerNet, w_avg: np.ndarray,
                 render_cfg: RenderConfig = None, losses: LossSuite = None):
        if controller.latent_dim != generator.latent_dim \
                or controller.n_layers != generator.n_layers:
            raise ValueError("controller and generator disagree on latent layout")
        self.generator = generator
        self.decoder = decoder
        self.controller = controller
        self.w_avg = np.asarray(w_avg, dtype=generator.seed.data.dtype).reshape(-1)
        if self.w_avg.shape != (generator.latent_dim,):
            raise ValueError(f"w_avg must have {generator.latent_dim} dims")
        self.render_cfg = render_cfg if render_cfg is not None else RenderConfig()
        self.losses = losses if losses is not None else LossSuite()

    @classmethod
    def build(cls, latent_dim: int = 32, n_layers: int = 6, plane_resolution: int = 32,
              channels: int = 16, extent: float = 1.0, expr_dims: int = 4,
              pose_dims: int = 4, window: int = 5, n_bases: int = 20,
              decoder_hidden: int = 32, render_cfg=None, weights: LossWeights = None,
              loss_levels: int = 3, smooth_samples: int = 64, reg_target: str = "code",
              avg_samples: int = 10_000, seed: int = 0) -> "AvatarSystem":
        rng = np.random.default_rng(seed)
        gen = GeneratorNet(latent_dim=latent_dim, n_layers=n_layers,
                           resolution=plane_resolution, channels=channels,
                           extent=extent, rng=rng)
        dec = FeatureDecoder(channels, hidden=decoder_hidden, rng=rng)
        ctl = ControllerNet(expr_dims=expr_dims, pose_dims=pose_dims, window=window,
                            latent_dim=latent_dim, n_layers=n_layers,
                            n_bases=n_bases, rng=rng)
        w_avg = average_latent(gen, n_samples=avg_samples, seed=seed)
        losses = LossSuite(weights, levels=loss_levels, smooth_samples=smooth_samples,
                           reg_target=reg_target)
        return cls(gen, dec, ctl, w_avg, render_cfg, losses)

    def eg_params(self):
        """Volume-producing parameters: generator plus feature decoder."""
        return self.generator.params() + self.decoder.params()

    def all_params(self):
        return self.eg_params() + self.controller.params()

    def named_params(self) -> dict:
        named = dict(self.generator.named_params())
        named.update({f"decoder.{k}": v for k, v in self.decoder.named_params().items()})
        named.update(self.controller.named_params())
        return named

    def save(self, path, extra: dict = None):
        entries = {k: v.data for k, v in self.named_params().items()}
        entries["w_avg"] = self.w_avg
        if extra:
            entries.update(extra)
        eg.save_checkpoint(path, entries)

    def load(self, path) -> dict:
        """Restore parameters in place; returns entries the system does not own."""
        blobs = eg.load_checkpoint(path)
        self.generator.load_state(blobs)
        self.controller.load_state(blobs)
        for k, t in self.decoder.named_params().items():
            name = f"decoder.{k}"
            if name not in blobs:
                raise eg.CheckpointError(f"missing decoder tensor '{name}'")
            t.data[...] = blobs[name].astype(t.data.dtype)
        if "w_avg" not in blobs:
            raise eg.CheckpointError("missing 'w_avg'")
        self.w_avg = blobs["w_avg"].astype(self.w_avg.dtype).reshape(-1)
        owned = set(self.named_params()) | {"w_avg"}
        return {k: v for k, v in blobs.items() if k not in owned}


def _const(t: eg.Tensor) -> eg.Tensor:
    return eg.tensor(t.data.copy())


def _derive_seed(base: int, it: int, step: int) -> int:
    return (base * 1_000_003 + it * 1009 + step) % (2**31 - 1)


def motion_code(sys: AvatarSystem, x_window) -> eg.Tensor:
    return sys.controller.compute_motion_code(x_window)


def render_wplus(sys: AvatarSystem, wplus: eg.Tensor, cam: Camera):
    vol = generate_triplane(wplus, sys.generator)
    img = render(vol, sys.decoder, cam, sys.render_cfg)
    return img, vol


def frame_loss(sys: AvatarSystem, wplus: eg.Tensor, w_x, image, cam: Camera,
               box=None, seed: int = 0):
    img, vol = render_wplus(sys, wplus, cam)
    target = eg.tensor(np.asarray(image, dtype=img.data.dtype))
    boxes = [tuple(int(v) for v in box)] if box is not None else None
    return sys.losses.total(img, target, w_x=w_x, vol=vol, decoder=sys.decoder,
                            boxes=boxes, controller_params=sys.controller.params(),
                            seed=seed)


def dual_objective(sys: AvatarSystem, w_id: eg.Tensor, pair: FramePair,
                   seed: int = 0, codes=None):
    """Shared identity latent must reconstruct both frames of the pair."""
    wp = extend_to_wplus(w_id, sys.generator.n_layers)
    if codes is None:
        wx_s = motion_code(sys, pair.source_motion)
        wx_d = motion_code(sys, pair.driving_motion)
    else:
        wx_s, wx_d = codes
    loss_s, t_s = frame_loss(sys, eg.add(wp, wx_s), wx_s, pair.source_image,
                             pair.source_camera, pair.source_box, seed)
    loss_d, t_d = frame_loss(sys, eg.add(wp, wx_d), wx_d, pair.driving_image,
                             pair.driving_camera, pair.driving_box, seed + 1)
    terms = {k: t_s.get(k, 0.0) + t_d.get(k, 0.0) for k in set(t_s) | set(t_d)}
    return eg.add(loss_s, loss_d), terms


def sample_pair(clip: dict, rng, window: int) -> FramePair:
    T = clip["images"].shape[0]
    s = int(rng.integers(T))
    d = int(rng.integers(T))
    return FramePair(
        source_image=clip["images"][s],
        source_motion=motion_window(clip["motions"], s, window),
        source_camera=clip["cameras"][s],
        driving_image=clip["images"][d],
        driving_motion=motion_window(clip["motions"], d, window),
        driving_camera=clip["cameras"][d],
        source_box=tuple(clip["boxes"][s]),
        driving_box=tuple(clip["boxes"][d]),
    )


def _batch_objective(sys, w_id, pairs, seed, codes=None):
    total, agg = None, {}
    for i, pair in enumerate(pairs):
        loss, terms = dual_objective(sys, w_id, pair, seed + 7 * i,
                                     codes[i] if codes is not None else None)
        total = loss if total is None else eg.add(total, loss)
        for k, v in terms.items():
            agg[k] = agg.get(k, 0.0) + v
    scale = 1.0 / len(pairs)
    return eg.mul(total, scale), {k: v * scale for k, v in agg.items()}


def _step_record(it, step, phase, terms, sys, w_id) -> dict:
    return {
        "iter": it,
        "step": step,
        "phase": phase,
        "loss": terms["total"],
        "terms": {k: v for k, v in terms.items() if k != "total"},
        "checksum_latent": eg.checksum([w_id]),
        "checksum_controller": eg.checksum(sys.controller.params()),
        "checksum_generator": eg.checksum(sys.eg_params()),
        "codebook_max_dot": sys.controller.codebook.max_cross_dot(),
    }


def train_controller(sys: AvatarSystem, clips, cfg: TrainConfig, log=None) -> dict:
    """Run the alternating (or joint, for the ablation) training loop.

    `clips` is a ClipSet or a list of clip dicts; held-out clips are skipped.
    Emits one record per optimization step plus one EMA record per iteration
    through `log`. Returns the EMA state and final loss terms.
    """
    if isinstance(clips, ClipSet):
        train = clips.train_clips
    else:
        train = [c for c in clips if not c.get("held_out")]
    if not train:
        raise ValueError("training set is empty")
    emit = log if log is not None else (lambda rec: None)
    rng = np.random.default_rng(cfg.seed)
    ctl_params = sys.controller.params()
    eg_params = sys.eg_params()
    ema = eg.EMA(ctl_params, cfg.ema_beta)
    opt_eg = eg.Adam(eg_params, lr=cfg.lr_nets)
    window = sys.controller.window
    last_terms = {}

    for it in range(1, cfg.iterations + 1):
        clip = train[int(rng.integers(len(train)))]
        pairs = [sample_pair(clip, rng, window) for _ in range(cfg.batch)]
        ema.copy_to(ctl_params)
        sys.controller.codebook.reorthogonalize()
        w_id = eg.tensor(np.array(sys.w_avg, copy=True), requires_grad=True)
        opt_id = eg.Adam([w_id], lr=cfg.lr_latent)
        opt_c = eg.Adam(ctl_params, lr=cfg.lr_nets)
        step = 0

        if cfg.joint_mode:
            with eg.frozen(eg_params):
                for _ in range(cfg.n_steps):
                    step += 1
                    loss, terms = _batch_objective(
                        sys, w_id, pairs, _derive_seed(cfg.seed, it, step))
                    eg.zero_grads([w_id] + ctl_params)
                    eg.backward(loss)
                    opt_id.step()
                    opt_c.step()
                    sys.controller.codebook.reorthogonalize()
                    emit(_step_record(it, step, "joint", terms, sys, w_id))
        else:
            with eg.frozen(ctl_params + eg_params):
                codes = [(_const(motion_code(sys, p.source_motion)),
                          _const(motion_code(sys, p.driving_motion))) for p in pairs]
                for _ in range(cfg.n_id):
                    step += 1
                    loss, terms = _batch_objective(
                        sys, w_id, pairs, _derive_seed(cfg.seed, it, step), codes)
                    eg.zero_grads([w_id])
                    eg.backward(loss)
                    opt_id.step()
                    emit(_step_record(it, step, "id", terms, sys, w_id))
            w_fixed = _const(w_id)
            with eg.frozen(eg_params):
                for _ in range(cfg.n_mo):
                    step += 1
                    loss, terms = _batch_objective(
                        sys, w_fixed, pairs, _derive_seed(cfg.seed, it, step))
                    eg.zero_grads(ctl_params)
                    eg.backward(loss)
                    opt_c.step()
                    sys.controller.codebook.reorthogonalize()
                    emit(_step_record(it, step, "mo", terms, sys, w_id))

        # one generator/decoder finetune step at the iteration's final latents
        step += 1
        with eg.frozen(ctl_params):
            codes = [(_const(motion_code(sys, p.source_motion)),
                      _const(motion_code(sys, p.driving_motion))) for p in pairs]
            loss, terms = _batch_objective(
                sys, _const(w_id), pairs, _derive_seed(cfg.seed, it, step), codes)
            eg.zero_grads(eg_params)
            eg.backward(loss)
            opt_eg.step()
        emit(_step_record(it, step, "joint" if cfg.joint_mode else "finetune",
                          terms, sys, w_id))

        ema.update()
        emit({
            "iter": it,
            "phase": "ema",
            "checksum_controller": eg.checksum(ctl_params),
            "checksum_ema": eg.checksum(ema.shadow),
        })
        last_terms = terms

    return {"iterations": cfg.iterations, "final_terms": last_terms, "ema": ema}


def invert_identity(sys: AvatarSystem, image, x_window, cam: Camera, box=None,
                    steps: int = 100, lr: float = 0.01, seed: int = 0,
                    log=None) -> np.ndarray:
    """Fit an identity latent to one reference frame; model weights untouched.

    Phase one optimizes a single d-vector from the average latent; phase two
    refines its per-layer extension row-wise. Returns the (layers, d) code.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    emit = log if log is not None else (lambda rec: None)
    L = sys.generator.n_layers
    with eg.frozen(sys.all_params()):
        wx = _const(motion_code(sys, x_window))
        w = eg.tensor(np.array(sys.w_avg, copy=True), requires_grad=True)
        opt = eg.Adam([w], lr=lr)
        for k in range(steps):
            wp = eg.add(extend_to_wplus(w, L), wx)
            loss, terms = frame_loss(sys, wp, wx, image, cam, box,
                                     _derive_seed(seed, 1, k))
            eg.zero_grads([w])
            eg.backward(loss)
            opt.step()
            emit({"phase": "invert_w", "step": k + 1, "loss": terms["total"]})
        wplus = eg.tensor(np.tile(w.data, (L, 1)), requires_grad=True)
        opt2 = eg.Adam([wplus], lr=lr)
        for k in range(steps):
            loss, terms = frame_loss(sys, eg.add(wplus, wx), wx, image, cam, box,
                                     _derive_seed(seed, 2, k))
            eg.zero_grads([wplus])
            eg.backward(loss)
            opt2.step()
            emit({"phase": "invert_wplus", "step": k + 1, "loss": terms["total"]})
    return wplus.data.copy()


def animation_volume(sys: AvatarSystem, w_id_plus, x_window):
    """Volume for one identity+motion; render it from any number of views."""
    wp = np.asarray(w_id_plus, dtype=sys.w_avg.dtype)
    if wp.shape != (sys.generator.n_layers, sys.generator.latent_dim):
        raise ValueError(f"identity code must be "
                         f"({sys.generator.n_layers}, {sys.generator.latent_dim})")
    with eg.frozen(sys.all_params()):
        wx = motion_code(sys, x_window)
        vol = generate_triplane(eg.add(eg.tensor(wp), wx), sys.generator)
    planes = [eg.tensor(p.data.copy()) for p in vol.planes]
    return TriPlaneVolume(*planes, extent=vol.extent), wx.data.copy()


def animate(sys: AvatarSystem, w_id_plus, x_window, cam: Camera):
    """Render one animated frame; returns (image (H,W,3), motion code (L,d))."""
    vol, wx = animation_volume(sys, w_id_plus, x_window)
    img = render(vol, sys.decoder, cam, sys.render_cfg)
    return img.data, wx


def interpolate_identity(w_a, w_b, alpha: float) -> np.ndarray:
    """Convex blend of two identity codes: alpha=1 gives w_a, alpha=0 gives w_b."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    a = np.asarray(w_a)
    b = np.asarray(w_b)
    if a.shape != b.shape:
        raise ValueError(f"code shapes differ: {a.shape} vs {b.shape}")
    if alpha == 1.0:
        return a.copy()
    if alpha == 0.0:
        return b.copy()
    return alpha * a + (1.0 - alpha) * b


def psnr(a, b, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
