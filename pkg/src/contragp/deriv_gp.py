"""Scalar-function regression from gradient data.

This is the non-standard use of GP regression that makes contraction-based
design tractable: the feedback law u = m(x) is the posterior mean of a GP
conditioned on *derivative* observations, so prescribing gradient values at
data points simultaneously prescribes an integrable feedback law.  The
posterior mean and its gradient are linear in the observed data, which is
what turns the design conditions into affine matrix constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .errors import DataError, DimensionError, FactorizationError
from .kernels import Kernel
from .linalg import chol_with_jitter

__all__ = [
    "DerivativeDataset",
    "DerivativeController",
    "build_gram_K0",
    "fit",
    "fit_with_values",
]


@dataclass
class DerivativeDataset:
    """Gradient observations: row i of ``targets`` is the prescribed value of
    the gradient at ``points[i]``; ``sigma_p`` is the observation noise std.
    """

    points: np.ndarray
    targets: np.ndarray
    sigma_p: float = 0.0

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if self.points.shape[0] < 1:
            raise DataError("dataset needs at least one point")
        if self.targets.shape != self.points.shape:
            raise DimensionError("targets", self.points.shape, self.targets.shape)
        if not np.all(np.isfinite(self.targets)):
            raise DataError("targets contain NaN or infinite entries")
        if not np.all(np.isfinite(self.points)):
            raise DataError("points contain NaN or infinite entries")
        if self.sigma_p < 0.0:
            raise DataError("sigma_p must be nonnegative")

    @property
    def n_points(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def stacked_targets(self):
        """Targets stacked block-wise into a vector of length n*N."""
        return self.targets.reshape(-1)


def build_gram_K0(kernel: Kernel, points, return_info=False):
    """Block Gram matrix of cross-second kernel derivatives.

    Block (i, j) of the returned (nN, nN) matrix is the cross Hessian of the
    kernel at (points[i], points[j]); the result is symmetric by
    construction.  With ``return_info`` a small metadata dict is attached,
    flagging duplicate points (which make the matrix singular).
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if X.shape[0] < 1:
        raise DataError("points must be non-empty")
    if X.shape[1] != kernel.dim:
        raise DimensionError("points", f"(*, {kernel.dim})", X.shape)
    blocks = kernel.hess_cross_outer(X, X)  # (N, N, n, n)
    N, _, n, _ = blocks.shape
    K = blocks.transpose(0, 2, 1, 3).reshape(N * n, N * n)
    K = 0.5 * (K + K.T)
    if not return_info:
        return K
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(dist, np.inf)
    min_spacing = float(dist.min()) if N > 1 else np.inf
    info = {"duplicate_points": bool(min_spacing < 1e-12),
            "min_spacing": min_spacing}
    return K, info


class DerivativeController:
    """A fitted feedback law u(x) with closed-form gradient.

    The law is the GP posterior mean given gradient observations (weights
    ``weights``) and optionally value observations (``value_points`` /
    ``value_weights``), minus a stored offset so that the control vanishes
    at a designated equilibrium.
    """

    def __init__(self, kernel, points, weights, value_points=None,
                 value_weights=None, offset=0.0, offset_point=None,
                 metric=None, diagnostics=None):
        self.kernel = kernel
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.weights = np.asarray(weights, dtype=float).reshape(-1)
        n = self.kernel.dim
        if self.weights.shape[0] != self.points.shape[0] * n:
            raise DimensionError("weights", self.points.shape[0] * n,
                                 self.weights.shape[0])
        if value_points is not None and len(value_points) > 0:
            self.value_points = np.atleast_2d(np.asarray(value_points, dtype=float))
            self.value_weights = np.asarray(value_weights, dtype=float).reshape(-1)
        else:
            self.value_points = None
            self.value_weights = None
        self.offset = float(offset)
        self.offset_point = (None if offset_point is None
                             else np.asarray(offset_point, dtype=float).reshape(-1))
        self.metric = None if metric is None else np.asarray(metric, dtype=float)
        self.diagnostics = dict(diagnostics or {})

    # -- evaluation ----------------------------------------------------

    def _raw_batch(self, X):
        X = self.kernel._check_stack(X, "x")
        rows = self.kernel.grad_x2_outer(X, self.points)  # (B, N, n)
        vals = rows.reshape(X.shape[0], -1) @ self.weights
        if self.value_points is not None:
            kv = self.kernel.value_outer(X, self.value_points)
            vals = vals + kv @ self.value_weights
        return vals

    def control_batch(self, X):
        """Control values at a stack of states, shape (B,)."""
        return self._raw_batch(X) - self.offset

    def control(self, x):
        """Scalar control value at a single state."""
        x = self.kernel._check_point(x, "x")
        return float(self.control_batch(x[None, :])[0])

    def control_grad_batch(self, X):
        """Control gradients (rows) at a stack of states, shape (B, n)."""
        X = self.kernel._check_stack(X, "x")
        n = self.kernel.dim
        H = self.kernel.hess_cross_outer(X, self.points)  # (B, N, n, n)
        grads = np.einsum("bNij,Nj->bi", H, self.weights.reshape(-1, n))
        if self.value_points is not None:
            # d/dx of sum_j w_j k(x, xv_j): first-argument kernel gradient
            g1 = self.kernel.grad_x2_outer(self.value_points, X)  # (M, B, n)
            grads = grads + np.einsum("mbj,m->bj", g1, self.value_weights)
        return grads

    def control_grad(self, x):
        """Gradient row of the control at a single state (offset-free)."""
        x = self.kernel._check_point(x, "x")
        return self.control_grad_batch(x[None, :])[0]

    # -- equilibrium handling -------------------------------------------

    def with_offset_at(self, x_star):
        """Return a copy whose control is exactly zero at ``x_star``.

        Shifting by a constant leaves the gradient (hence the certificate)
        untouched.
        """
        x_star = self.kernel._check_point(x_star, "x_star")
        raw = float(self._raw_batch(x_star[None, :])[0])
        return DerivativeController(
            self.kernel, self.points, self.weights,
            value_points=self.value_points, value_weights=self.value_weights,
            offset=raw, offset_point=x_star, metric=self.metric,
            diagnostics=self.diagnostics)

    # -- serialization ---------------------------------------------------

    def to_dict(self):
        out = {
            "kernel": self.kernel.to_dict(),
            "points": [[float(v) for v in row] for row in self.points],
            "weights": [float(v) for v in self.weights],
            "offset": self.offset,
        }
        if self.offset_point is not None:
            out["offset_point"] = [float(v) for v in self.offset_point]
        if self.value_points is not None:
            out["value_points"] = [[float(v) for v in row] for row in self.value_points]
            out["value_weights"] = [float(v) for v in self.value_weights]
        if self.metric is not None:
            out["metric"] = [[float(v) for v in row] for row in self.metric]
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(
            Kernel.from_dict(data["kernel"]),
            np.asarray(data["points"], dtype=float),
            np.asarray(data["weights"], dtype=float),
            value_points=(np.asarray(data["value_points"], dtype=float)
                          if "value_points" in data else None),
            value_weights=(np.asarray(data["value_weights"], dtype=float)
                           if "value_weights" in data else None),
            offset=data.get("offset", 0.0),
            offset_point=data.get("offset_point"),
            metric=(np.asarray(data["metric"], dtype=float)
                    if data.get("metric") is not None else None),
        )


def fit(kernel: Kernel, dataset: DerivativeDataset, jitter=None):
    """Fit a controller to gradient data.

    Solves ``(K0 + sigma_p^2 I) h = Y`` through a symmetric factorization;
    jitter is added only if the factorization fails (default scale
    ``1e-10 * trace(K0) / (nN)``).  With ``sigma_p == 0`` and K0 positive
    definite the fitted gradient interpolates the targets exactly.
    """
    if dataset.dim != kernel.dim:
        raise DimensionError("dataset", f"dim {kernel.dim}", f"dim {dataset.dim}")
    K0 = build_gram_K0(kernel, dataset.points)
    A = K0 + dataset.sigma_p ** 2 * np.eye(K0.shape[0])
    y = dataset.stacked_targets()
    try:
        L, used = chol_with_jitter(A, jitter=jitter)
    except FactorizationError as exc:
        raise FactorizationError(
            f"gradient Gram factorization failed ({exc}); pass a jitter or "
            "use sigma_p > 0") from exc
    h = cho_solve((L, True), y)
    resid = float(np.linalg.norm(A @ h - y))
    scale = 1.0 + float(np.linalg.norm(y))
    diagnostics = {"jitter_used": used, "residual": resid}
    if resid > 1e-6 * scale:
        raise FactorizationError(
            f"weight solve residual {resid:.3e} too large; the Gram matrix "
            "is badly conditioned, add jitter or sigma_p")
    return DerivativeController(kernel, dataset.points, h,
                                diagnostics=diagnostics)


def fit_with_values(kernel: Kernel, dataset: DerivativeDataset, value_points,
                    sigma=0.0, jitter=None):
    """Posterior mean conditioned on gradient data plus value observations.

    ``value_points`` is a sequence of ``(x, y)`` pairs with noise std
    ``sigma``; with ``sigma == 0`` the mean passes through each pair
    exactly.  An empty list reduces to :func:`fit`.
    """
    value_points = list(value_points)
    if len(value_points) == 0:
        return fit(kernel, dataset, jitter=jitter)
    if sigma < 0.0:
        raise DataError("sigma must be nonnegative")
    Xv = np.atleast_2d(np.asarray([p for p, _ in value_points], dtype=float))
    yv = np.asarray([v for _, v in value_points], dtype=float).reshape(-1)
    if Xv.shape[1] != kernel.dim:
        raise DimensionError("value_points", f"(*, {kernel.dim})", Xv.shape)
    if not np.all(np.isfinite(yv)):
        raise DataError("value targets contain NaN or infinite entries")

    X = dataset.points
    N, n = X.shape
    M = Xv.shape[0]
    K0 = build_gram_K0(kernel, X)
    Kvv = kernel.value_outer(Xv, Xv)
    # cov(p(xv_i), grad p(x_j)) rows: dk(xv_i, x_j)/dx_j
    Kvd = kernel.grad_x2_outer(Xv, X).reshape(M, N * n)
    G = np.zeros((M + N * n, M + N * n))
    G[:M, :M] = Kvv + sigma ** 2 * np.eye(M)
    G[:M, M:] = Kvd
    G[M:, :M] = Kvd.T
    G[M:, M:] = K0 + dataset.sigma_p ** 2 * np.eye(N * n)
    rhs = np.concatenate([yv, dataset.stacked_targets()])
    try:
        L, used = chol_with_jitter(G, jitter=jitter)
    except FactorizationError as exc:
        raise FactorizationError(
            f"joint Gram factorization failed ({exc}); add jitter or "
            "observation noise") from exc
    alpha = cho_solve((L, True), rhs)
    return DerivativeController(kernel, X, alpha[M:],
                                value_points=Xv, value_weights=alpha[:M],
                                diagnostics={"jitter_used": used})
