"""Finite-difference gradient checking.

Central differences with per-element step h = h_scale * max(1, |x|). The
relative error metric is

    max|analytic - numeric| / max(1, max|analytic|, max|numeric|)

which behaves for both tiny and large gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, backward, grads_of, zero_grads

H_SCALE = {np.dtype(np.float32): 1e-3, np.dtype(np.float64): 1e-5}
TOL = {np.dtype(np.float32): 1e-3, np.dtype(np.float64): 1e-6}


@dataclass
class GradCheckReport:
    ok: bool
    max_rel_err: float
    tol: float
    n_checked: int
    failures: list = field(default_factory=list)  # (param_idx, flat_idx, analytic, numeric)

    def __str__(self):
        status = "pass" if self.ok else "FAIL"
        return (f"gradcheck {status}: max rel err {self.max_rel_err:.3e} "
                f"(tol {self.tol:.0e}, {self.n_checked} entries)")


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(1.0, float(np.max(np.abs(a)) if a.size else 0.0),
                float(np.max(np.abs(n)) if n.size else 0.0))
    return float(np.max(np.abs(a - n)) / denom) if a.size else 0.0


def fd_gradient(fn, t: Tensor, flat_idx: int, h_scale=None) -> float:
    """Central-difference d fn() / d t.data.flat[flat_idx]."""
    scale = h_scale if h_scale is not None else H_SCALE[t.data.dtype]
    x0 = float(t.data.flat[flat_idx])
    h = scale * max(1.0, abs(x0))
    t.data.flat[flat_idx] = x0 + h
    f_plus = float(fn().data)
    t.data.flat[flat_idx] = x0 - h
    f_minus = float(fn().data)
    t.data.flat[flat_idx] = x0
    return (f_plus - f_minus) / (2.0 * h)


def check_gradients(fn, params, tol=None, h_scale=None, max_entries=None,
                    rng=None) -> GradCheckReport:
    """Compare analytic gradients of the scalar fn() against central differences.

    fn is a zero-argument callable rebuilding the loss from the params' current
    data. When max_entries is given, that many elements per parameter are
    sampled with rng instead of sweeping all of them.
    """
    params = list(params)
    if not params:
        raise ValueError("check_gradients needs at least one parameter")
    dt = params[0].data.dtype
    tol = tol if tol is not None else TOL[dt]

    zero_grads(params)
    loss = fn()
    backward(loss)
    analytic = grads_of(params)

    failures = []
    max_err = 0.0
    n_checked = 0
    for pi, (p, ga) in enumerate(zip(params, analytic)):
        idxs = range(p.data.size)
        if max_entries is not None and p.data.size > max_entries:
            r = rng if rng is not None else np.random.default_rng(0)
            idxs = r.choice(p.data.size, size=max_entries, replace=False)
        ga_flat = ga.reshape(-1)
        denom_scale = max(1.0, float(np.max(np.abs(ga))) if ga.size else 0.0)
        for fi in idxs:
            gn = fd_gradient(fn, p, int(fi), h_scale=h_scale)
            err = abs(float(ga_flat[fi]) - gn) / max(denom_scale, abs(gn), 1.0)
            n_checked += 1
            if err > max_err:
                max_err = err
            if err > tol:
                failures.append((pi, int(fi), float(ga_flat[fi]), gn))
    return GradCheckReport(ok=not failures, max_rel_err=max_err, tol=tol,
                           n_checked=n_checked, failures=failures)
