"""Training alternation, EMA, one-shot inversion, animation, interpolation."""

import numpy as np
import pytest

from conftest import TINY, tiny_config
from triavatar import engine as eg
from triavatar import inversion as inv
from triavatar import synthetic
from triavatar.inversion import TrainConfig


def collect(records):
    return records.append


def run_tiny_training(sys_, clips, log, **over):
    kw = dict(n_id=TINY["n_id"], n_mo=TINY["n_mo"], iterations=TINY["iterations"],
              batch=1, seed=0)
    kw.update(over)
    return inv.train_controller(sys_, clips, TrainConfig(**kw), log=log)


def first_pair(clips, window):
    return inv.sample_pair(clips.train_clips[0], np.random.default_rng(0), window)


# -- objectives ------------------------------------------------------------------


def test_dual_objective_is_sum_of_frame_losses(tiny_system, tiny_clips):
    pair = first_pair(tiny_clips, tiny_system.controller.window)
    w_id = eg.tensor(tiny_system.w_avg.copy(), requires_grad=True)
    total, terms = inv.dual_objective(tiny_system, w_id, pair, seed=5)

    wp = inv.extend_to_wplus(w_id, tiny_system.generator.n_layers)
    wx_s = inv.motion_code(tiny_system, pair.source_motion)
    wx_d = inv.motion_code(tiny_system, pair.driving_motion)
    ls, ts = inv.frame_loss(tiny_system, eg.add(wp, wx_s), wx_s, pair.source_image,
                            pair.source_camera, pair.source_box, seed=5)
    ld, td = inv.frame_loss(tiny_system, eg.add(wp, wx_d), wx_d, pair.driving_image,
                            pair.driving_camera, pair.driving_box, seed=6)
    assert abs(float(total.data) - (float(ls.data) + float(ld.data))) < 1e-6
    assert abs(terms["total"] - (ts["total"] + td["total"])) < 1e-6
    for k in ts:
        assert k in terms


def test_batch_objective_averages_pairs(tiny_system, tiny_clips):
    rng = np.random.default_rng(1)
    window = tiny_system.controller.window
    pairs = [inv.sample_pair(tiny_clips.train_clips[0], rng, window) for _ in range(2)]
    w_id = eg.tensor(tiny_system.w_avg.copy(), requires_grad=True)
    total, _ = inv._batch_objective(tiny_system, w_id, pairs, seed=3)
    a, _ = inv.dual_objective(tiny_system, w_id, pairs[0], seed=3)
    b, _ = inv.dual_objective(tiny_system, w_id, pairs[1], seed=10)
    assert np.isclose(float(total.data), (float(a.data) + float(b.data)) / 2, rtol=1e-6)


# -- training loop ---------------------------------------------------------------


def test_alternation_freezes_the_inactive_blocks(tiny_clips):
    sys_ = tiny_config().build_system()
    records = []
    run_tiny_training(sys_, tiny_clips, records.append, iterations=2)

    for it in (1, 2):
        steps = [r for r in records if r.get("iter") == it and "step" in r]
        ids = [r for r in steps if r["phase"] == "id"]
        mos = [r for r in steps if r["phase"] == "mo"]
        fts = [r for r in steps if r["phase"] == "finetune"]
        assert (len(ids), len(mos), len(fts)) == (TINY["n_id"], TINY["n_mo"], 1)
        assert [r["step"] for r in steps] == list(range(1, len(steps) + 1))

        # identity phase: only the latent moves
        assert len({r["checksum_controller"] for r in ids}) == 1
        assert len({r["checksum_generator"] for r in ids}) == 1
        assert len({r["checksum_latent"] for r in ids}) == len(ids)

        # motion phase: only the controller moves
        assert len({r["checksum_latent"] for r in mos}) == 1
        assert mos[0]["checksum_latent"] == ids[-1]["checksum_latent"]
        assert len({r["checksum_generator"] for r in mos}) == 1
        assert mos[0]["checksum_generator"] == ids[0]["checksum_generator"]
        assert len({r["checksum_controller"] for r in mos}) == len(mos)

        # finetune: only the volume networks move
        ft = fts[0]
        assert ft["checksum_latent"] == mos[-1]["checksum_latent"]
        assert ft["checksum_controller"] == mos[-1]["checksum_controller"]
        assert ft["checksum_generator"] != mos[-1]["checksum_generator"]


def test_codebook_stays_orthogonal_through_training(tiny_clips):
    sys_ = tiny_config().build_system()
    records = []
    run_tiny_training(sys_, tiny_clips, records.append, iterations=2)
    dots = [r["codebook_max_dot"] for r in records if "step" in r]
    assert dots and max(dots) <= 1e-4


def test_joint_mode_tags_every_step(tiny_clips):
    sys_ = tiny_config().build_system()
    records = []
    run_tiny_training(sys_, tiny_clips, records.append, iterations=1, joint_mode=True)
    steps = [r for r in records if "step" in r]
    assert len(steps) == TINY["n_id"] + TINY["n_mo"] + 1
    assert all(r["phase"] == "joint" for r in steps)
    # latent and controller move together; the volume nets only on the last step
    assert len({r["checksum_latent"] for r in steps[:-1]}) == len(steps) - 1
    assert len({r["checksum_controller"] for r in steps[:-1]}) == len(steps) - 1
    assert len({r["checksum_generator"] for r in steps[:-1]}) == 1
    assert steps[-1]["checksum_generator"] != steps[0]["checksum_generator"]
    ema_recs = [r for r in records if r["phase"] == "ema"]
    assert len(ema_recs) == 1 and "step" not in ema_recs[0]


def test_ema_update_matches_hand_recurrence(tiny_clips):
    sys_ = tiny_config().build_system()
    beta = 0.9
    before = [p.data.copy() for p in sys_.controller.params()]
    records = []
    out = run_tiny_training(sys_, tiny_clips, records.append, iterations=1, ema_beta=beta)
    after = [p.data.copy() for p in sys_.controller.params()]
    worst = max(np.max(np.abs(s - (beta * b + (1 - beta) * a)))
                for s, b, a in zip(out["ema"].shadow, before, after))
    assert worst <= 1e-6
    ema_recs = [r for r in records if r["phase"] == "ema"]
    assert ema_recs[0]["checksum_ema"] == eg.checksum(out["ema"].shadow)


def test_ema_is_fixed_point_when_motion_phase_is_empty(tiny_clips):
    sys_ = tiny_config().build_system()
    before = [p.data.copy() for p in sys_.controller.params()]
    out = run_tiny_training(sys_, tiny_clips, None, iterations=3, n_mo=0)
    worst = max(np.max(np.abs(s - b)) for s, b in zip(out["ema"].shadow, before))
    assert worst <= 1e-5


def test_training_needs_non_heldout_clips(tiny_system, tiny_clips):
    with pytest.raises(ValueError, match="empty"):
        inv.train_controller(tiny_system, tiny_clips.held_out_clips,
                             TrainConfig(n_id=1, n_mo=1, iterations=1))


# -- one-shot inversion ------------------------------------------------------------


def test_invert_descends_without_touching_model(tiny_system, tiny_clips):
    clip = tiny_clips.clips[0]
    x = synthetic.motion_window(clip["motions"], 0, tiny_system.controller.window)
    model_sum = eg.checksum(tiny_system.all_params())
    records = []
    wp = inv.invert_identity(tiny_system, clip["images"][0], x, clip["cameras"][0],
                             box=tuple(clip["boxes"][0]), steps=8, seed=0,
                             log=records.append)
    assert wp.shape == (tiny_system.generator.n_layers, tiny_system.generator.latent_dim)
    assert eg.checksum(tiny_system.all_params()) == model_sum
    phases = [r["phase"] for r in records]
    assert phases == ["invert_w"] * 8 + ["invert_wplus"] * 8
    assert records[-1]["loss"] < records[0]["loss"]


def test_invert_zero_steps_returns_average_extension(tiny_system, tiny_clips):
    clip = tiny_clips.clips[0]
    x = synthetic.motion_window(clip["motions"], 0, tiny_system.controller.window)
    wp = inv.invert_identity(tiny_system, clip["images"][0], x, clip["cameras"][0],
                             steps=0)
    want = np.tile(tiny_system.w_avg, (tiny_system.generator.n_layers, 1))
    assert np.array_equal(wp, want)


def test_planted_code_is_recovered_to_high_psnr(tiny_system):
    rng = np.random.default_rng(4)
    L, d = tiny_system.generator.n_layers, tiny_system.generator.latent_dim
    planted = np.tile(tiny_system.w_avg + 0.4 * rng.standard_normal(d).astype(np.float32),
                      (L, 1))
    x = np.zeros((tiny_system.controller.in_width, tiny_system.controller.window))
    cam = synthetic.sample_camera(np.random.default_rng(2), TINY["data_resolution"])
    target, _ = inv.animate(tiny_system, planted, x, cam)
    wp = inv.invert_identity(tiny_system, target, x, cam, steps=40, seed=1)
    recon, _ = inv.animate(tiny_system, wp, x, cam)
    assert inv.psnr(recon, target) >= 30.0


# -- animation and interpolation ----------------------------------------------------


def test_motion_codes_are_identity_independent(tiny_system):
    rng = np.random.default_rng(0)
    L, d = tiny_system.generator.n_layers, tiny_system.generator.latent_dim
    x = rng.standard_normal((tiny_system.controller.in_width, tiny_system.controller.window))
    cam = synthetic.sample_camera(rng, TINY["data_resolution"])
    wa = np.tile(tiny_system.w_avg + 0.3, (L, 1))
    wb = rng.standard_normal((L, d)).astype(np.float32)
    img_a, wx_a = inv.animate(tiny_system, wa, x, cam)
    img_b, wx_b = inv.animate(tiny_system, wb, x, cam)
    assert wx_a.tobytes() == wx_b.tobytes()
    assert not np.array_equal(img_a, img_b)


def test_animate_is_deterministic(tiny_system):
    rng = np.random.default_rng(3)
    L = tiny_system.generator.n_layers
    x = rng.standard_normal((tiny_system.controller.in_width, tiny_system.controller.window))
    cam = synthetic.sample_camera(rng, TINY["data_resolution"])
    wp = np.tile(tiny_system.w_avg, (L, 1))
    a, _ = inv.animate(tiny_system, wp, x, cam)
    b, _ = inv.animate(tiny_system, wp, x, cam)
    assert a.tobytes() == b.tobytes()


def test_animation_volume_is_reusable_across_views(tiny_system):
    from triavatar.renderer import render
    rng = np.random.default_rng(5)
    L = tiny_system.generator.n_layers
    wp = np.tile(tiny_system.w_avg - 0.2, (L, 1))
    x = rng.standard_normal((tiny_system.controller.in_width, tiny_system.controller.window))
    cams = [synthetic.sample_camera(rng, TINY["data_resolution"]) for _ in range(2)]
    vol, _ = inv.animation_volume(tiny_system, wp, x)
    for cam in cams:
        via_vol = render(vol, tiny_system.decoder, cam, tiny_system.render_cfg).data
        direct, _ = inv.animate(tiny_system, wp, x, cam)
        assert np.array_equal(via_vol, direct)


def test_interpolation_endpoints_midpoint_and_errors():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((3, 8)).astype(np.float32)
    b = rng.standard_normal((3, 8)).astype(np.float32)
    assert inv.interpolate_identity(a, b, 1.0).tobytes() == a.tobytes()
    assert inv.interpolate_identity(a, b, 0.0).tobytes() == b.tobytes()
    mid = inv.interpolate_identity(a, b, 0.5)
    assert np.allclose(mid, (a + b) / 2, atol=1e-7)
    with pytest.raises(ValueError, match="alpha"):
        inv.interpolate_identity(a, b, 1.5)
    with pytest.raises(ValueError, match="shapes"):
        inv.interpolate_identity(a, b[:2], 0.5)


def test_psnr_infinite_on_identical_images():
    img = np.full((4, 4, 3), 0.25)
    assert inv.psnr(img, img) == np.inf
    assert inv.psnr(np.zeros((2, 2, 3)), np.ones((2, 2, 3))) == 0.0
