"""Motion controller: coefficient window -> orthogonal-codebook motion code.

Pipeline: three strided 1-D convolutions smooth the (E+Pd) x (2T+1) window
over time (replicate-padded, matching the loader's edge handling), a global
mean removes the frame axis, a five-layer MLP emits K x (L+1) scalars whose
last column is broadcast-added onto the rest, and the resulting K x L
magnitudes weight the rows of an orthogonal K x d codebook:

    w_x[l] = sum_k magnitudes[k, l] * bases[k]

so the motion code always lies in the codebook's span.
"""

from __future__ import annotations

import numpy as np

from . import engine as eg


def orthogonalize(bases: np.ndarray) -> np.ndarray:
    """Gram-Schmidt in index order; residuals keep their own norms.

    Raises on rank deficiency (residual norm < 1e-8).
    """
    K, d = bases.shape
    if K > d:
        raise ValueError(f"codebook needs K <= d, got K={K} d={d}")
    out = bases.astype(np.float64).copy()
    for i in range(K):
        for j in range(i):
            qj = out[j]
            out[i] -= (out[i] @ qj) / (qj @ qj) * qj
        norm = np.linalg.norm(out[i])
        if norm < 1e-8:
            raise ValueError(f"codebook basis {i} is linearly dependent on earlier bases")
    return out.astype(bases.dtype)


class Codebook:
    """K learnable d-dim bases kept pairwise orthogonal between steps."""

    def __init__(self, n_bases: int, dim: int, rng=None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        dt = dtype or eg.DEFAULT_DTYPE
        raw = (rng.standard_normal((n_bases, dim)) / np.sqrt(dim)).astype(dt)
        self.bases = eg.tensor(orthogonalize(raw), requires_grad=True)

    @property
    def n_bases(self):
        return self.bases.data.shape[0]

    @property
    def dim(self):
        return self.bases.data.shape[1]

    def reorthogonalize(self):
        self.bases.data[...] = orthogonalize(self.bases.data)

    def max_cross_dot(self) -> float:
        g = self.bases.data.astype(np.float64)
        gram = g @ g.T
        np.fill_diagonal(gram, 0.0)
        return float(np.max(np.abs(gram)))


def _replicate_pad_time(x: eg.Tensor) -> eg.Tensor:
    return eg.concat([x[:, 0:1], x, x[:, -1:]], axis=1)


class ControllerNet:
    """Theta_c: temporal convs + magnitude MLP + codebook."""

    def __init__(self, expr_dims: int = 4, pose_dims: int = 4, window: int = 5,
                 latent_dim: int = 32, n_layers: int = 6, n_bases: int = 20,
                 rng=None, dtype=None, temporal_layers: int = 3,
                 temporal_activation: bool = True, mlp_width_mult: int = 4):
        if window % 2 == 0 or window < 1:
            raise ValueError(f"window length must be odd and positive, got {window}")
        rng = rng if rng is not None else np.random.default_rng(0)
        dt = dtype or eg.DEFAULT_DTYPE
        self.expr_dims = expr_dims
        self.pose_dims = pose_dims
        self.window = window
        self.latent_dim = latent_dim
        self.n_layers = n_layers
        self.n_bases = n_bases
        self.temporal_activation = temporal_activation
        self.dtype = np.dtype(dt)
        F = expr_dims + pose_dims
        self.in_width = F
        self.feat_width = 2 * F

        def t(arr):
            return eg.tensor(arr.astype(dt), requires_grad=True)

        self.tconvs = []
        c_in = F
        for _ in range(temporal_layers):
            w = rng.standard_normal((self.feat_width, c_in, 3)) * np.sqrt(2.0 / (c_in * 3))
            self.tconvs.append((t(w), t(np.zeros(self.feat_width))))
            c_in = self.feat_width

        hidden = mlp_width_mult * latent_dim
        sizes = [self.feat_width] + [hidden] * 4 + [n_bases * (n_layers + 1)]
        self.mlp = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            w = rng.standard_normal((a, b)) * np.sqrt(2.0 / a)
            self.mlp.append((t(w), t(np.zeros(b))))
        self.codebook = Codebook(n_bases, latent_dim, rng=rng, dtype=dt)

    def params(self):
        out = []
        for w, b in self.tconvs:
            out.extend([w, b])
        for w, b in self.mlp:
            out.extend([w, b])
        out.append(self.codebook.bases)
        return out

    def named_params(self) -> dict:
        named = {}
        for i, (w, b) in enumerate(self.tconvs):
            named[f"controller.temporal{i}.w"] = w
            named[f"controller.temporal{i}.b"] = b
        for i, (w, b) in enumerate(self.mlp):
            named[f"controller.mlp{i}.w"] = w
            named[f"controller.mlp{i}.b"] = b
        named["controller.codebook"] = self.codebook.bases
        return named

    def load_state(self, blobs: dict):
        for name, t in self.named_params().items():
            if name not in blobs:
                raise eg.CheckpointError(f"missing controller tensor '{name}'")
            if blobs[name].shape != t.data.shape:
                raise eg.ShapeError(f"{name}: shape {blobs[name].shape} != {t.data.shape}")
            t.data[...] = blobs[name].astype(t.data.dtype)

    # -- forward pieces -------------------------------------------------------

    def temporal_smooth(self, x) -> eg.Tensor:
        """(E+Pd, window) signal -> (2(E+Pd),) feature; frame axis fully reduced."""
        xt = x if isinstance(x, eg.Tensor) else eg.tensor(np.asarray(x), dtype=self.dtype)
        if xt.data.shape != (self.in_width, self.window):
            raise eg.ShapeError(
                f"motion window must be ({self.in_width},{self.window}), got {xt.data.shape}")
        h = xt
        for w, b in self.tconvs:
            h = eg.conv1d(_replicate_pad_time(h), w, b, stride=2, pad=0)
            if self.temporal_activation:
                h = eg.leaky_relu(h, 0.2)
        return eg.mean(h, axis=1)

    def compute_magnitudes(self, feature: eg.Tensor) -> eg.Tensor:
        """feature -> K x L magnitudes via the K x (L+1) broadcast-add trick."""
        h = eg.reshape(feature, (1, self.feat_width))
        for i, (w, b) in enumerate(self.mlp):
            h = eg.add(eg.matmul(h, w), b)
            if i < len(self.mlp) - 1:
                h = eg.leaky_relu(h, 0.2)
        raw = eg.reshape(h, (self.n_bases, self.n_layers + 1))
        return eg.add(raw[:, :self.n_layers], raw[:, self.n_layers:])

    def compute_motion_code(self, x) -> eg.Tensor:
        """Motion window -> (L, d) motion code in the codebook span."""
        feature = self.temporal_smooth(x)
        mags = self.compute_magnitudes(feature)
        return eg.matmul(eg.permute(mags, (1, 0)), self.codebook.bases)
