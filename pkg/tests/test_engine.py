"""Tensor engine: op gradients vs central differences, Adam/EMA, checkpoints."""

import numpy as np
import pytest

from triavatar import engine as eg


# ---------------------------------------------------------------- oracles

def conv2d_loop(x, w, b=None, stride=(1, 1), pad=(1, 1)):
    """Nested-loop cross-correlation, the independent reference."""
    Cin, H, W = x.shape
    Cout, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    xp = np.zeros((Cin, H + 2 * ph, W + 2 * pw), dtype=np.float64)
    xp[:, ph:ph + H, pw:pw + W] = x
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    out = np.zeros((Cout, Ho, Wo))
    for co in range(Cout):
        for i in range(Ho):
            for j in range(Wo):
                patch = xp[:, i * sh:i * sh + kh, j * sw:j * sw + kw]
                out[co, i, j] = (patch * w[co]).sum()
                if b is not None:
                    out[co, i, j] += b[co]
    return out


def bilinear_loop(plane, u, v):
    P, Q, _ = plane.shape
    u = min(max(u, 0.0), P - 1.0)
    v = min(max(v, 0.0), Q - 1.0)
    i0 = min(int(np.floor(u)), max(P - 2, 0))
    j0 = min(int(np.floor(v)), max(Q - 2, 0))
    fu, fv = u - i0, v - j0
    i1, j1 = min(i0 + 1, P - 1), min(j0 + 1, Q - 1)
    return ((1 - fu) * (1 - fv) * plane[i0, j0] + fu * (1 - fv) * plane[i1, j0]
            + (1 - fu) * fv * plane[i0, j1] + fu * fv * plane[i1, j1])


def adam_loop(p0, grads, lr, betas=(0.9, 0.999), eps=1e-8):
    p = p0.astype(np.float64).copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, 1):
        g = g.astype(np.float64)
        m = betas[0] * m + (1 - betas[0]) * g
        v = betas[1] * v + (1 - betas[1]) * g * g
        mh = m / (1 - betas[0] ** t)
        vh = v / (1 - betas[1] ** t)
        p = p - lr * mh / (np.sqrt(vh) + eps)
    return p


def fd_check(fn, params, tol=None, max_entries=None, rng=None):
    rep = eg.check_gradients(fn, params, tol=tol, max_entries=max_entries, rng=rng)
    assert rep.ok, str(rep) + f" first failures: {rep.failures[:3]}"
    return rep


# ---------------------------------------------------------------- op gradients

ELEMENTWISE = [
    ("add", lambda a, b: eg.add(a, b), 2, None),
    ("sub", lambda a, b: eg.sub(a, b), 2, None),
    ("mul", lambda a, b: eg.mul(a, b), 2, None),
    ("div", lambda a, b: eg.div(a, b), 2, "denom"),
    ("neg", lambda a: eg.neg(a), 1, None),
    ("abs", lambda a: eg.abs_(a), 1, "away_from_zero"),
    ("exp", lambda a: eg.exp(a), 1, None),
    ("sqrt", lambda a: eg.sqrt(a), 1, "positive"),
    ("pow3", lambda a: eg.pow_(a, 3.0), 1, None),
    ("square", lambda a: eg.square(a), 1, None),
    ("leaky_relu", lambda a: eg.leaky_relu(a, 0.2), 1, "away_from_zero"),
    ("softplus", lambda a: eg.softplus(a), 1, None),
    ("sigmoid", lambda a: eg.sigmoid(a), 1, None),
]


def _draw(rng, shape, constraint):
    x = rng.standard_normal(shape)
    if constraint == "positive":
        x = np.abs(x) + 0.5
    elif constraint == "away_from_zero":
        x = np.where(np.abs(x) < 0.2, np.sign(x) * 0.5 + x, x)
    elif constraint == "denom":
        x = np.sign(x) * (np.abs(x) + 0.5)
    return x


@pytest.mark.parametrize("name,fn,arity,constraint", ELEMENTWISE)
def test_elementwise_gradients_match_finite_differences(name, fn, arity, constraint):
    rng = np.random.default_rng(hash(name) % 2 ** 31)
    for _ in range(100):
        args = [eg.tensor(_draw(rng, (2, 3), constraint if i == arity - 1 else None),
                          requires_grad=True) for i in range(arity)]
        fd_check(lambda: eg.sum_(fn(*args)), args)


def test_gradients_in_f64_meet_tight_tolerance():
    rng = np.random.default_rng(7)
    for _ in range(100):
        a = eg.tensor(rng.standard_normal((3, 2)), requires_grad=True, dtype=np.float64)
        b = eg.tensor(rng.standard_normal((2, 4)), requires_grad=True, dtype=np.float64)

        def fn():
            h = eg.sigmoid(eg.matmul(a, b))
            return eg.mean(eg.mul(h, h))

        rep = fd_check(fn, [a, b])
        assert rep.tol == 1e-6


def test_broadcasting_reduces_gradients_to_operand_shape():
    rng = np.random.default_rng(11)
    a = eg.tensor(rng.standard_normal((3, 1)), requires_grad=True)
    b = eg.tensor(rng.standard_normal((1, 4)), requires_grad=True)
    c = eg.tensor(rng.standard_normal((4,)), requires_grad=True)
    fd_check(lambda: eg.sum_(eg.mul(eg.add(a, b), c)), [a, b, c])
    eg.zero_grads([a, b, c])
    loss = eg.sum_(eg.mul(eg.add(a, b), c))
    eg.backward(loss)
    assert a.grad.shape == (3, 1) and b.grad.shape == (1, 4) and c.grad.shape == (4,)


def test_matmul_gradient_and_shape_errors():
    rng = np.random.default_rng(13)
    for _ in range(25):
        a = eg.tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = eg.tensor(rng.standard_normal((4, 2)), requires_grad=True)
        fd_check(lambda: eg.sum_(eg.matmul(a, b)), [a, b])
    with pytest.raises(eg.ShapeError):
        eg.matmul(eg.tensor(np.ones((2, 3))), eg.tensor(np.ones((2, 3))))
    with pytest.raises(eg.ShapeError):
        eg.matmul(eg.tensor(np.ones(3)), eg.tensor(np.ones((3, 2))))


def test_reduction_and_cumsum_gradients():
    rng = np.random.default_rng(17)
    for axis, keep in [(None, False), (0, False), (1, True), ((0, 1), False)]:
        a = eg.tensor(rng.standard_normal((3, 4)), requires_grad=True)
        fd_check(lambda: eg.sum_(eg.square(eg.mean(a, axis=axis, keepdims=keep))), [a])
    for axis in (0, 1):
        a = eg.tensor(rng.standard_normal((4, 3)), requires_grad=True)
        fd_check(lambda: eg.sum_(eg.square(eg.cumsum(a, axis=axis))), [a])
    # cumsum backward is reversed cumulative sum: d(sum of cumsum)/dx_i = n - i
    a = eg.tensor(np.zeros(5), requires_grad=True)
    eg.backward(eg.sum_(eg.cumsum(a, 0)))
    assert np.allclose(a.grad, [5, 4, 3, 2, 1])


def test_shape_op_gradients():
    rng = np.random.default_rng(19)
    a = eg.tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
    fd_check(lambda: eg.sum_(eg.square(eg.reshape(a, (6, 4)))), [a])
    fd_check(lambda: eg.sum_(eg.square(eg.permute(a, (2, 0, 1)))), [a])
    fd_check(lambda: eg.sum_(eg.square(a[1, :, 1:3])), [a])
    b = eg.tensor(rng.standard_normal((2, 2, 4)), requires_grad=True)
    fd_check(lambda: eg.sum_(eg.square(eg.concat([a, b], axis=1))), [a, b])


def test_conv2d_matches_loop_oracle():
    rng = np.random.default_rng(23)
    for stride, pad in [((1, 1), (1, 1)), ((2, 2), (1, 1)), ((1, 2), (0, 1))]:
        x = rng.standard_normal((3, 6, 5)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        got = eg.conv2d(eg.tensor(x), eg.tensor(w), eg.tensor(b), stride=stride, pad=pad)
        want = conv2d_loop(x, w, b, stride=stride, pad=pad)
        assert got.data.shape == want.shape
        assert np.max(np.abs(got.data - want)) < 1e-4


def test_conv2d_gradients_match_finite_differences():
    rng = np.random.default_rng(29)
    x = eg.tensor(rng.standard_normal((2, 5, 4)), requires_grad=True)
    w = eg.tensor(0.3 * rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
    b = eg.tensor(rng.standard_normal(3), requires_grad=True)
    fd_check(lambda: eg.mean(eg.square(eg.conv2d(x, w, b, stride=(2, 1), pad=(1, 1)))),
             [x, w, b], max_entries=40, rng=rng)


def test_conv1d_matches_loop_oracle_and_finite_differences():
    rng = np.random.default_rng(31)
    x = rng.standard_normal((3, 9)).astype(np.float32)
    w = rng.standard_normal((5, 3, 3)).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    got = eg.conv1d(eg.tensor(x), eg.tensor(w), eg.tensor(b), stride=2, pad=1)
    want = conv2d_loop(x[:, None, :], w[:, :, None, :], b, stride=(1, 2), pad=(0, 1))[:, 0, :]
    assert np.max(np.abs(got.data - want)) < 1e-4
    xt = eg.tensor(x, requires_grad=True)
    wt = eg.tensor(w, requires_grad=True)
    bt = eg.tensor(b, requires_grad=True)
    fd_check(lambda: eg.mean(eg.square(eg.conv1d(xt, wt, bt, stride=2, pad=1))),
             [xt, wt, bt], max_entries=40, rng=rng)


def test_upsample2x_forward_and_gradient():
    rng = np.random.default_rng(37)
    x = rng.standard_normal((2, 3, 2)).astype(np.float32)
    got = eg.upsample2x(eg.tensor(x)).data
    want = np.stack([np.kron(x[c], np.ones((2, 2), dtype=np.float32)) for c in range(2)])
    assert np.array_equal(got, want)
    xt = eg.tensor(x, requires_grad=True)
    fd_check(lambda: eg.mean(eg.square(eg.upsample2x(xt))), [xt])


def test_bilinear_sample_center_of_two_by_two_plane():
    plane = eg.tensor(np.array([[[0.0], [1.0]], [[2.0], [3.0]]]))
    out = eg.bilinear_sample(plane, np.array([[0.5, 0.5]]))
    assert abs(out.data[0, 0] - 1.5) < 1e-7  # mean of the four corner texels


def test_bilinear_sample_matches_loop_oracle_and_clamps_border():
    rng = np.random.default_rng(41)
    plane = rng.standard_normal((5, 4, 3)).astype(np.float32)
    coords = np.stack([rng.uniform(-2, 7, 50), rng.uniform(-2, 6, 50)], axis=1)
    got = eg.bilinear_sample(eg.tensor(plane), coords.astype(np.float32)).data
    for n in range(50):
        want = bilinear_loop(plane, coords[n, 0], coords[n, 1])
        assert np.max(np.abs(got[n] - want)) < 1e-5
    far = eg.bilinear_sample(eg.tensor(plane), np.array([[-100.0, 1.5]], dtype=np.float32))
    assert np.allclose(far.data[0], bilinear_loop(plane, 0.0, 1.5), atol=1e-6)


def test_bilinear_sample_gradients_away_from_cell_boundaries():
    rng = np.random.default_rng(43)
    plane = eg.tensor(rng.standard_normal((4, 4, 2)), requires_grad=True)
    frac = rng.uniform(0.2, 0.8, (20, 2))
    cell = rng.integers(0, 3, (20, 2))
    coords = eg.tensor(cell + frac, requires_grad=True)
    fd_check(lambda: eg.mean(eg.square(eg.bilinear_sample(plane, coords))),
             [plane, coords], max_entries=30, rng=rng)


def test_composite_graph_matches_finite_differences_in_both_dtypes():
    for dtype in (np.float32, np.float64):
        rng = np.random.default_rng(47)
        a = eg.tensor(rng.standard_normal((3, 3)), requires_grad=True, dtype=dtype)
        b = eg.tensor(rng.standard_normal((3, 3)), requires_grad=True, dtype=dtype)
        c = eg.tensor(rng.standard_normal((3,)), requires_grad=True, dtype=dtype)

        def fn():
            h = eg.leaky_relu(eg.matmul(a, b), 0.2)
            h = eg.add(h, c)
            h = eg.sigmoid(h)
            g = eg.softplus(eg.cumsum(h, axis=1))
            return eg.mean(eg.mul(g, g))

        fd_check(fn, [a, b, c])


# ---------------------------------------------------------------- backward plumbing

def test_constant_loss_leaves_all_gradients_zero():
    a = eg.tensor(np.ones((2, 2)), requires_grad=True)
    loss = eg.sum_(eg.tensor(np.ones((2, 2))))
    eg.backward(loss)
    assert np.array_equal(eg.grads_of([a])[0], np.zeros((2, 2)))


def test_unused_parameter_gets_zero_gradient():
    a = eg.tensor(np.ones(3), requires_grad=True)
    unused = eg.tensor(np.ones(4), requires_grad=True)
    eg.backward(eg.sum_(eg.square(a)))
    ga, gu = eg.grads_of([a, unused])
    assert np.allclose(ga, 2.0) and np.array_equal(gu, np.zeros(4))


def test_backward_rejects_nonscalar_loss():
    a = eg.tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(eg.ShapeError):
        eg.backward(eg.square(a))


def test_interior_node_without_backward_rule_is_an_error():
    a = eg.tensor(np.ones(3), requires_grad=True)
    bad = eg.make_node(a.data * 2.0, (a,), None, "mystery")
    with pytest.raises(eg.UnsupportedOpError, match="mystery"):
        eg.backward(eg.sum_(bad))


def test_gradcheck_reports_corrupted_backward_as_failure():
    a = eg.tensor(np.full(4, 2.0), requires_grad=True)

    def fn():
        def bwd(g):
            eg.accumulate(a, 3.0 * g * a.data)  # wrong: claims d(x^2)/dx = 3x
        return eg.sum_(eg.make_node(a.data ** 2, (a,), bwd, "bad_square"))

    rep = eg.check_gradients(fn, [a])
    assert not rep.ok and rep.failures


def test_shared_subgraph_gradient_accumulates_once_per_use():
    a = eg.tensor(np.array([3.0]), requires_grad=True)
    h = eg.square(a)            # used twice below
    loss = eg.sum_(eg.add(h, h))
    eg.backward(loss)
    assert np.allclose(a.grad, 2 * 2 * 3.0)


def test_graph_outputs_are_deterministic_across_rebuilds():
    def build():
        rng = np.random.default_rng(53)
        x = eg.tensor(rng.standard_normal((3, 8, 8)).astype(np.float32))
        w = eg.tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32))
        h = eg.conv2d(x, w, None, stride=(2, 2), pad=(1, 1))
        return eg.sum_(eg.sigmoid(h)).data.tobytes()

    assert build() == build()


# ---------------------------------------------------------------- Adam / EMA

def test_first_adam_step_moves_each_weight_by_lr_times_sign():
    p = eg.tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    opt = eg.Adam([p], lr=0.01)
    p.grad = np.array([3.0, -0.25, 1e-3], dtype=p.data.dtype)
    opt.step()
    # m_hat = g, v_hat = g^2  =>  step = -lr * g / (|g| + eps)
    expect = np.array([1.0, -2.0, 0.5]) - 0.01 * np.array([3.0, -0.25, 1e-3]) / (
        np.abs([3.0, -0.25, 1e-3]) + 1e-8)
    assert np.allclose(p.data, expect, atol=1e-7)


def test_adam_trajectory_matches_reference_loop():
    rng = np.random.default_rng(59)
    p0 = rng.standard_normal(6).astype(np.float32)
    grads = [rng.standard_normal(6).astype(np.float32) for _ in range(10)]
    p = eg.tensor(p0.copy(), requires_grad=True)
    opt = eg.Adam([p], lr=0.05)
    for g in grads:
        p.grad = g.copy()
        opt.step()
    assert np.max(np.abs(p.data - adam_loop(p0, grads, 0.05))) < 1e-5


def test_adam_with_zero_learning_rate_is_bitwise_identity():
    rng = np.random.default_rng(61)
    p = eg.tensor(rng.standard_normal(8), requires_grad=True)
    before = p.data.tobytes()
    opt = eg.Adam([p], lr=0.0)
    for _ in range(3):
        p.grad = rng.standard_normal(8).astype(p.data.dtype)
        opt.step()
    assert p.data.tobytes() == before
    assert opt.t == 3 and np.any(opt.m[0] != 0)


def test_ema_tracks_with_hand_computed_blend():
    p = eg.tensor(np.array([1.0]))
    ema = eg.EMA([p], beta=0.9)
    p.data[...] = 2.0
    ema.update()
    p.data[...] = 3.0
    ema.update()
    # 0.9*(0.9*1 + 0.1*2) + 0.1*3 = 1.29
    assert abs(ema.shadow[0][0] - 1.29) < 1e-12
    ema.copy_to()
    assert p.data[0] == ema.shadow[0][0]


def test_ema_rejects_beta_outside_open_interval():
    p = eg.tensor(np.ones(2))
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            eg.EMA([p], beta=bad)


def test_checksum_is_order_and_value_sensitive():
    a = eg.tensor(np.arange(4, dtype=np.float32))
    b = eg.tensor(np.ones(3, dtype=np.float32))
    c1 = eg.checksum([a, b])
    assert c1 == eg.checksum([a, b])
    assert c1 != eg.checksum([b, a])
    a.data[0] += 1
    assert c1 != eg.checksum([a, b])


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip_preserves_names_shapes_payloads(tmp_path):
    rng = np.random.default_rng(67)
    params = {
        "plane_xy": rng.standard_normal((4, 4, 2)).astype(np.float32),
        "decoder.weight": rng.standard_normal((3, 5)).astype(np.float32),
        "générateur.bias": rng.standard_normal(7).astype(np.float32),
        "scalar": np.float32(2.5) * np.ones((), dtype=np.float32),
    }
    path = tmp_path / "model.ckpt"
    eg.save_checkpoint(path, params)
    back = eg.load_checkpoint(path)
    assert list(back) == list(params)
    for k in params:
        assert back[k].shape == np.asarray(params[k]).shape
        assert np.array_equal(back[k], params[k])


def test_checkpoint_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(eg.CheckpointError, match="magic"):
        eg.load_checkpoint(path)
    good = tmp_path / "good.ckpt"
    eg.save_checkpoint(good, {"w": np.ones((2, 2), dtype=np.float32)})
    clipped = good.read_bytes()[:-5]
    trunc = tmp_path / "trunc.ckpt"
    trunc.write_bytes(clipped)
    with pytest.raises(eg.CheckpointError, match="truncated"):
        eg.load_checkpoint(trunc)
