"""Dual-domain objective: data term, smoothed regularizers, gradients.

f(x, z) = 1/2 ||Ax - z||^2 + lambda/2 ||P0 z - s||^2, with smoothed
group-sparsity regularizers added per domain. All gradients are exact for
the discretized operators (matched projector pair, backprop through the
extractors).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import regularizer as reg
from .errors import ConfigError
from .tomo import Image, ScanGeometry, Sinogram, ViewMask, system_matrix

@dataclass
class DualState:
    """Joint iterate: image x and full-view sinogram z."""

    x: Image
    z: Sinogram

    def __post_init__(self):
        if not self.z.is_full_view:
            raise ConfigError("state sinogram must be full-view")

    def copy(self) -> "DualState":
        return DualState(self.x.copy(), self.z.copy())


@dataclass
class ProblemSpec:
    """One reconstruction problem instance.

    ``image_weights`` / ``sino_weights`` may be None to disable the
    corresponding regularizer (equivalent to all-zero weights).
    """

    geometry: ScanGeometry
    mask: ViewMask
    measured: Sinogram
    lam: float = 10.0
    image_weights: reg.ConvStack | None = None
    sino_weights: reg.ConvStack | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("consistency weight lambda must be nonnegative")
        if self.mask.n_views_full != self.geometry.n_views_full:
            raise ConfigError("mask does not match geometry view count")
        if not np.array_equal(self.measured.view_indices, self.mask.indices()):
            raise ConfigError("measured sinogram does not conform to the mask")

    def sino_shape(self) -> tuple[int, int]:
        return (self.geometry.n_views_full, self.geometry.n_dets)


def _check_state(state: DualState, spec: ProblemSpec) -> None:
    if state.x.grid != spec.geometry.grid:
        raise ConfigError("state image grid does not match geometry")
    if state.z.geometry != spec.geometry:
        raise ConfigError("state sinogram geometry does not match")


def _residuals(state: DualState, spec: ProblemSpec):
    """(Ax - z, P0 z - s) as flat/structured arrays."""
    a = system_matrix(spec.geometry)
    ax = a @ state.x.values.ravel()
    proj_res = ax.reshape(spec.sino_shape()) - state.z.values
    sel = spec.mask.indices()
    data_res = state.z.values[sel] - spec.measured.values
    return proj_res, data_res


def data_term(state: DualState, spec: ProblemSpec) -> float:
    """1/2 ||Ax - z||^2 + lambda/2 ||P0 z - s||^2."""
    _check_state(state, spec)
    proj_res, data_res = _residuals(state, spec)
    return float(0.5 * np.sum(proj_res**2) + 0.5 * spec.lam * np.sum(data_res**2))


def grad_f_x(state: DualState, spec: ProblemSpec) -> np.ndarray:
    """A^T (Ax - z), returned on the image grid."""
    _check_state(state, spec)
    a = system_matrix(spec.geometry)
    proj_res, _ = _residuals(state, spec)
    return (a.T @ proj_res.ravel()).reshape(spec.geometry.grid.shape)


def grad_f_z(state: DualState, spec: ProblemSpec) -> np.ndarray:
    """-(Ax - z) + lambda P0^T (P0 z - s), on the full-view sinogram grid."""
    _check_state(state, spec)
    proj_res, data_res = _residuals(state, spec)
    g = -proj_res
    g[spec.mask.indices()] += spec.lam * data_res
    return g


def _reg_value(y: np.ndarray, weights: reg.ConvStack | None, eps: float) -> float:
    if weights is None:
        return 0.0
    return reg.smoothed_value(y, weights, eps)


def _reg_grad(y: np.ndarray, weights: reg.ConvStack | None, eps: float) -> np.ndarray:
    if weights is None:
        return np.zeros_like(y)
    return reg.smoothed_grad(y, weights, eps)


def phi_eps(state: DualState, spec: ProblemSpec, eps: float) -> float:
    """Smoothed objective value f + R_eps(x) + Q_eps(z)."""
    val = data_term(state, spec)
    val += _reg_value(state.x.values, spec.image_weights, eps)
    val += _reg_value(state.z.values, spec.sino_weights, eps)
    return val


def phi_unsmoothed(state: DualState, spec: ProblemSpec) -> float:
    """Original nonsmooth objective (plain l2,1 regularizers)."""
    val = data_term(state, spec)
    if spec.image_weights is not None:
        val += reg.l21_norm(reg.feature_forward(state.x.values, spec.image_weights))
    if spec.sino_weights is not None:
        val += reg.l21_norm(reg.feature_forward(state.z.values, spec.sino_weights))
    return val


def grad_phi_eps(state: DualState, spec: ProblemSpec, eps: float):
    """(d/dx, d/dz) of the smoothed objective, as two arrays."""
    gx = grad_f_x(state, spec) + _reg_grad(state.x.values, spec.image_weights, eps)
    gz = grad_f_z(state, spec) + _reg_grad(state.z.values, spec.sino_weights, eps)
    return gx, gz


def grad_norm(gx: np.ndarray, gz: np.ndarray) -> float:
    """Euclidean norm of the concatenated (image, sinogram) gradient."""
    return float(np.sqrt(np.sum(gx**2) + np.sum(gz**2)))


def lipschitz_data(spec: ProblemSpec, power_iters: int = 50, seed: int = 0) -> float:
    """Power-iteration estimate of the spectral norm of the Hessian of f.

    The Hessian is the constant block matrix
    [[A^T A, -A^T], [-A, I + lambda P0^T P0]].
    """
    a = system_matrix(spec.geometry)
    sel = spec.mask.indices()
    shape = spec.sino_shape()
    rng = np.random.default_rng(seed)
    vx = rng.standard_normal(spec.geometry.grid.shape)
    vz = rng.standard_normal(shape)
    nrm = np.sqrt(np.sum(vx**2) + np.sum(vz**2))
    vx /= nrm
    vz /= nrm
    lam_est = 0.0
    for _ in range(power_iters):
        av = (a @ vx.ravel()).reshape(shape)
        hx = (a.T @ (av - vz).ravel()).reshape(vx.shape)
        hz = -(av - vz)
        hz[sel] += spec.lam * vz[sel]
        nrm = np.sqrt(np.sum(hx**2) + np.sum(hz**2))
        if nrm == 0.0:
            return 0.0
        lam_est = nrm
        vx = hx / nrm
        vz = hz / nrm
    return float(lam_est)


def block_lipschitz(spec: ProblemSpec, power_iters: int = 50, seed: int = 0):
    """Per-block Hessian spectral norms of f: (z-block, x-block).

    The z-block Hessian is I + lambda P0^T P0, whose norm is exactly
    1 + lambda; the x-block Hessian A^T A is estimated by power iteration.
    """
    a = system_matrix(spec.geometry)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(a.shape[1])
    v /= np.linalg.norm(v)
    lam_est = 0.0
    for _ in range(power_iters):
        w = a.T @ (a @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            break
        lam_est = nrm
        v = w / nrm
    return 1.0 + spec.lam, float(lam_est)


def lipschitz_regularizers(spec: ProblemSpec, eps: float, seed: int = 0):
    """(image, sinogram) regularizer gradient Lipschitz estimates at eps."""
    lr = 0.0
    lq = 0.0
    if spec.image_weights is not None and not spec.image_weights.is_zero():
        lr = reg.lipschitz_estimate(spec.image_weights, eps,
                                    spec.geometry.grid.shape, seed=seed)
    if spec.sino_weights is not None and not spec.sino_weights.is_zero():
        lq = reg.lipschitz_estimate(spec.sino_weights, eps,
                                    spec.sino_shape(), seed=seed)
    return lr, lq


def composite_lipschitz(spec: ProblemSpec, eps: float, seed: int = 0) -> float:
    """Estimate of the Lipschitz constant of the full smoothed gradient."""
    lr, lq = lipschitz_regularizers(spec, eps, seed=seed)
    return lipschitz_data(spec, seed=seed) + lr + lq
