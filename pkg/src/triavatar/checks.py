"""Canonical gradient-check suite: every op, then module-level compositions.

Each check pairs a set of parameter tensors with a zero-argument loss thunk;
`engine.check_gradients` rebuilds the loss while perturbing entries to compare
analytic gradients against central finite differences at the per-dtype
tolerance (1e-3 float32, 1e-6 float64). In float32 the end-to-end render check
differentiates the tri-plane features; float64 tightens the net to every
parameter, decoder and controller included.
"""

from __future__ import annotations

import numpy as np

from . import engine as eg
from .controller import ControllerNet
from .losses import LossSuite, LossWeights
from .renderer import Camera, RenderConfig, render
from .triplane import FeatureDecoder, TriPlaneVolume


def _scalar(t: eg.Tensor) -> eg.Tensor:
    return eg.mean(eg.square(t))


def _op_cases(rng, dt):
    """name -> (params to check, loss thunk over those exact tensors)."""

    def mk(shape, scale=1.0, shift=0.0):
        return eg.tensor((rng.standard_normal(shape) * scale + shift).astype(dt),
                         requires_grad=True)

    cases = {}

    def case(name, params, thunk):
        cases[name] = (params, thunk)

    a, b = mk((2, 3)), mk((2, 3))
    case("add", [a, b], lambda a=a, b=b: _scalar(eg.add(a, b)))
    a, b = mk((2, 3)), mk((2, 3))
    case("sub", [a, b], lambda a=a, b=b: _scalar(eg.sub(a, b)))
    a, b = mk((2, 3)), mk((2, 3))
    case("mul", [a, b], lambda a=a, b=b: _scalar(eg.mul(a, b)))
    a, b = mk((2, 3)), mk((2, 3), 0.2, 2.0)
    case("div", [a, b], lambda a=a, b=b: _scalar(eg.div(a, b)))
    a = mk((2, 3))
    case("neg", [a], lambda a=a: _scalar(eg.neg(a)))
    a = mk((2, 3), 0.3, 3.0)
    case("pow", [a], lambda a=a: eg.mean(eg.pow_(a, 3.0)))
    a = mk((2, 3))
    case("square", [a], lambda a=a: eg.mean(eg.square(a)))
    a = mk((2, 3), 0.3, 2.0)
    case("abs", [a], lambda a=a: eg.mean(eg.abs_(a)))
    a = mk((2, 3), 0.5)
    case("exp", [a], lambda a=a: eg.mean(eg.exp(a)))
    a = mk((2, 3), 0.4, 3.0)
    case("sqrt", [a], lambda a=a: eg.mean(eg.sqrt(a)))
    a = mk((2, 3), 0.4, 1.1)
    case("leaky_relu", [a], lambda a=a: _scalar(eg.leaky_relu(a, 0.2)))
    a = mk((2, 3))
    case("softplus", [a], lambda a=a: eg.mean(eg.softplus(a)))
    a = mk((2, 3))
    case("sigmoid", [a], lambda a=a: eg.mean(eg.sigmoid(a)))
    a = mk((2, 3))
    case("reshape", [a], lambda a=a: _scalar(eg.reshape(a, (3, 2))))
    a = mk((2, 3))
    case("permute", [a], lambda a=a: _scalar(eg.permute(a, (1, 0))))
    a = mk((3, 3))
    case("getitem", [a], lambda a=a: _scalar(a[1:, :2]))
    a, b = mk((2, 3)), mk((2, 3))
    case("concat", [a, b], lambda a=a, b=b: _scalar(eg.concat([a, b], axis=0)))
    a = mk((2, 3))
    case("sum", [a], lambda a=a: eg.square(eg.sum_(a)))
    a = mk((2, 3))
    case("sum_axis", [a], lambda a=a: _scalar(eg.sum_(a, axis=1)))
    a = mk((2, 3))
    case("mean", [a], lambda a=a: eg.square(eg.mean(a)))
    a = mk((4, 2))
    case("cumsum", [a], lambda a=a: _scalar(eg.cumsum(a, axis=0)))
    a, b = mk((3, 4)), mk((4, 2))
    case("matmul", [a, b], lambda a=a, b=b: _scalar(eg.matmul(a, b)))
    x, w, v = mk((2, 6)), mk((3, 2, 3)), mk((3,))
    case("conv1d", [x, w, v],
         lambda x=x, w=w, v=v: _scalar(eg.conv1d(x, w, v, stride=2, pad=1)))
    x, w, v = mk((2, 4, 4)), mk((3, 2, 3, 3)), mk((3,))
    case("conv2d", [x, w, v],
         lambda x=x, w=w, v=v: _scalar(eg.conv2d(x, w, v, stride=(1, 1), pad=(1, 1))))
    a = mk((2, 3, 3))
    case("upsample2x", [a], lambda a=a: _scalar(eg.upsample2x(a)))
    p = mk((5, 5, 2))
    c = eg.tensor(rng.uniform(0.2, 3.8, (6, 2)).astype(dt))
    case("bilinear_plane", [p], lambda p=p, c=c: _scalar(eg.bilinear_sample(p, c)))
    p2 = eg.tensor(rng.standard_normal((5, 5, 2)).astype(dt))
    c2 = eg.tensor((rng.standard_normal((6, 2)) * 0.9 + 2.0).astype(dt),
                   requires_grad=True)
    case("bilinear_coords", [c2], lambda p2=p2, c2=c2: _scalar(eg.bilinear_sample(p2, c2)))
    return cases


def op_checks(dtype=np.float32, seed: int = 0):
    """Finite-difference report for every differentiable op on tiny shapes."""
    dt = np.dtype(dtype)
    out = []
    for name, (params, thunk) in _op_cases(np.random.default_rng(seed), dt).items():
        out.append((f"op.{name}", eg.check_gradients(thunk, params)))
    return out


def render_check(dtype=np.float32, seed: int = 0, max_entries: int = 25):
    """End-to-end 4x4 render: pixels differentiated back into the volume.

    float32 checks the tri-plane features (their gradients are the production
    path); float64 widens to the feature-decoder weights as well.
    """
    dt = np.dtype(dtype)
    rng = np.random.default_rng(seed)
    vol = TriPlaneVolume.random(8, 4, rng=rng, scale=0.5, dtype=dt,
                                requires_grad=True)
    dec = FeatureDecoder(4, hidden=8, rng=rng, dtype=dt)
    cam = Camera(position=(0.0, 0.0, 2.2), look_at=(0.0, 0.0, 0.0),
                 resolution=(4, 4))
    cfg = RenderConfig(samples_per_ray=4, background=(0.3, 0.3, 0.3))
    params = list(vol.planes)
    if dt == np.float64:
        params = params + dec.params()

    def thunk():
        return _scalar(render(vol, dec, cam, cfg))

    return [(f"render.end_to_end", eg.check_gradients(
        thunk, params, max_entries=max_entries, rng=np.random.default_rng(seed + 1)))]


def controller_check(dtype=np.float32, seed: int = 0, max_entries: int = 20):
    """Motion window -> motion code, differentiated through every parameter."""
    dt = np.dtype(dtype)
    rng = np.random.default_rng(seed)
    net = ControllerNet(expr_dims=2, pose_dims=2, window=3, latent_dim=8,
                        n_layers=3, n_bases=4, rng=rng, dtype=dt)
    x = rng.standard_normal((4, 3)).astype(dt)

    def thunk():
        return _scalar(net.compute_motion_code(x))

    return [("controller.motion_code", eg.check_gradients(
        thunk, net.params(), max_entries=max_entries,
        rng=np.random.default_rng(seed + 1)))]


def loss_check(dtype=np.float32, seed: int = 0, max_entries: int = 30):
    """Full loss suite differentiated w.r.t. the rendered image and volume."""
    dt = np.dtype(dtype)
    rng = np.random.default_rng(seed)
    img = eg.tensor(rng.uniform(0.1, 0.9, (6, 6, 3)).astype(dt), requires_grad=True)
    target = eg.tensor(rng.uniform(0.1, 0.9, (6, 6, 3)).astype(dt))
    vol = TriPlaneVolume.random(6, 4, rng=rng, scale=0.5, dtype=dt,
                                requires_grad=True)
    dec = FeatureDecoder(4, hidden=8, rng=rng, dtype=dt)
    wx = eg.tensor(rng.standard_normal((3, 8)).astype(dt), requires_grad=True)
    suite = LossSuite(LossWeights(), levels=1, n_filters=4, patch=2,
                      smooth_samples=4, dtype=dt)

    def thunk():
        loss, _ = suite.total(img, target, w_x=wx, vol=vol, decoder=dec,
                              boxes=[(1, 1, 5, 5)], seed=seed)
        return loss

    return [("losses.total", eg.check_gradients(
        thunk, [img, wx] + list(vol.planes), max_entries=max_entries,
        rng=np.random.default_rng(seed + 1)))]


def run_all(dtype=np.float32, seed: int = 0):
    """The whole suite; returns [(name, GradCheckReport), ...]."""
    return (op_checks(dtype, seed) + render_check(dtype, seed)
            + controller_check(dtype, seed) + loss_check(dtype, seed))


def format_results(results) -> str:
    lines = []
    for name, rep in results:
        status = "pass" if rep.ok else "FAIL"
        lines.append(f"{status:4s}  {name:24s} max rel err {rep.max_rel_err:.3e}"
                     f"  (tol {rep.tol:.0e}, {rep.n_checked} entries)")
    n_bad = sum(1 for _, r in results if not r.ok)
    lines.append(f"{len(results) - n_bad}/{len(results)} checks passed")
    return "\n".join(lines)
