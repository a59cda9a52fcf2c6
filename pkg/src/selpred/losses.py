"""SiCoVa and batch-all triplet objectives with hand-derived gradients.

SiCoVa sums per-view variance/covariance penalties (VICReg style) with an
invariance MSE and a Barlow-Twins style cross-correlation term. Every
component uses the population (1/N) convention.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import kernels
from .errors import DimensionError, InsufficientSamplesError, UsageError
from .numeric_core import as_matrix

LOSS_IDS = ("sicova", "triplet")


@dataclass(frozen=True)
class SicovaWeights:
    lambda_intra: float = 25.0
    lambda_inv: float = 25.0
    lambda_corr: float = 1.0
    gamma: float = 1.0
    eps_var: float = 1e-4
    eps_norm: float = 1e-6

    def __post_init__(self):
        for name in ("lambda_intra", "lambda_inv", "lambda_corr"):
            if not getattr(self, name) >= 0:
                raise UsageError(f"{name} must be non-negative")
        for name in ("gamma", "eps_var", "eps_norm"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive")


@dataclass(frozen=True)
class TripletParams:
    margin: float = 1.0
    # average the view-1-anchored loss with its view-2-anchored mirror
    symmetric: bool = False

    def __post_init__(self):
        if not self.margin > 0:
            raise UsageError("margin must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    var_z: float
    var_zp: float
    cov_z: float
    cov_zp: float
    inv: float
    corr: float
    total: float

    @property
    def intra(self) -> float:
        return self.var_z + self.var_zp + self.cov_z + self.cov_zp

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class GradPair:
    d_z: np.ndarray
    d_zp: np.ndarray


def _pair(z, zp, min_rows=1):
    z = as_matrix(z, "z")
    zp = as_matrix(zp, "zp")
    if z.shape != zp.shape:
        raise DimensionError(f"view shapes differ: {z.shape} vs {zp.shape}")
    if z.shape[0] < min_rows:
        raise InsufficientSamplesError(
            f"need at least {min_rows} rows, got {z.shape[0]}"
        )
    return z, zp


# ---------------------------------------------------------------- components

def variance_loss(z, gamma=1.0, eps_var=1e-4) -> float:
    """Mean hinge ``max(0, gamma - sqrt(var_j + eps_var))`` over columns."""
    z = as_matrix(z, "z")
    if z.shape[0] < 1:
        raise InsufficientSamplesError("variance_loss needs at least one row")
    std = np.sqrt(z.var(axis=0) + eps_var)
    return float(np.mean(np.maximum(0.0, gamma - std)))


def _variance_grad(z, gamma, eps_var):
    n, d = z.shape
    zc = z - z.mean(axis=0)
    std = np.sqrt((zc**2).mean(axis=0) + eps_var)
    active = (gamma - std) > 0.0
    return -(zc * (active / std)) / (n * d)


def _covariance(zc):
    return zc.T @ zc / zc.shape[0]


def covariance_loss(z) -> float:
    """Sum of squared off-diagonal covariances divided by the dimension."""
    z = as_matrix(z, "z")
    if z.shape[0] < 2:
        raise InsufficientSamplesError("covariance_loss needs at least two rows")
    c = _covariance(z - z.mean(axis=0))
    off = c - np.diag(np.diag(c))
    return float(np.sum(off**2) / z.shape[1])


def _covariance_grad(z):
    n, d = z.shape
    zc = z - z.mean(axis=0)
    c = _covariance(zc)
    np.fill_diagonal(c, 0.0)
    # zc @ c already has zero column means, so the centering Jacobian drops out
    return (4.0 / (n * d)) * (zc @ c)


def intra_loss(z, zp, w: SicovaWeights = SicovaWeights()):
    """The four unweighted intra-view terms ``(var_z, var_zp, cov_z, cov_zp)``."""
    z, zp = _pair(z, zp)
    return (
        variance_loss(z, w.gamma, w.eps_var),
        variance_loss(zp, w.gamma, w.eps_var),
        covariance_loss(z),
        covariance_loss(zp),
    )


def invariance_loss(z, zp) -> float:
    z, zp = _pair(z, zp)
    return float(np.sum((z - zp) ** 2) / z.shape[0])


def _standardize(z, eps_norm):
    """Centered columns divided by their population std; flat columns -> 0."""
    zc = z - z.mean(axis=0)
    std = np.sqrt((zc**2).mean(axis=0))
    keep = std >= eps_norm
    safe = np.where(keep, std, 1.0)
    return zc * (keep / safe), std, keep


def cross_correlation(z, zp, eps_norm=1e-6) -> np.ndarray:
    """Pearson cross-correlation matrix between the columns of two views."""
    z, zp = _pair(z, zp, min_rows=2)
    zt, _, _ = _standardize(z, eps_norm)
    ztp, _, _ = _standardize(zp, eps_norm)
    return zt.T @ ztp / z.shape[0]


def correlation_loss(z, zp, eps_norm=1e-6) -> float:
    r = cross_correlation(z, zp, eps_norm)
    diag = np.diag(r)
    off = r - np.diag(diag)
    return float(np.sum((1.0 - diag) ** 2) + np.sum(off**2))


def _standardize_backward(g, zt, std, keep):
    # y = (x - mean) / std  =>  dx = (g - mean(g) - y * mean(g * y)) / std
    safe = np.where(keep, std, 1.0)
    dx = (g - g.mean(axis=0) - zt * (g * zt).mean(axis=0)) / safe
    return dx * keep


def _correlation_grad(z, zp, eps_norm):
    n = z.shape[0]
    zt, s, keep = _standardize(z, eps_norm)
    ztp, sp, keepp = _standardize(zp, eps_norm)
    r = zt.T @ ztp / n
    g = 2.0 * (r - np.eye(r.shape[0]))
    d_zt = ztp @ g.T / n
    d_ztp = zt @ g / n
    return (
        _standardize_backward(d_zt, zt, s, keep),
        _standardize_backward(d_ztp, ztp, sp, keepp),
    )


def sicova_loss(z, zp, w: SicovaWeights = SicovaWeights()) -> LossBreakdown:
    z, zp = _pair(z, zp, min_rows=2)
    var_z, var_zp, cov_z, cov_zp = intra_loss(z, zp, w)
    inv = invariance_loss(z, zp)
    corr = correlation_loss(z, zp, w.eps_norm)
    total = (
        w.lambda_intra * (var_z + var_zp + cov_z + cov_zp)
        + w.lambda_inv * inv
        + w.lambda_corr * corr
    )
    return LossBreakdown(var_z, var_zp, cov_z, cov_zp, inv, corr, float(total))


def _sicova_grad(z, zp, w):
    n = z.shape[0]
    d_z = w.lambda_intra * (_variance_grad(z, w.gamma, w.eps_var) + _covariance_grad(z))
    d_zp = w.lambda_intra * (_variance_grad(zp, w.gamma, w.eps_var) + _covariance_grad(zp))
    d_inv = (2.0 / n) * (z - zp)
    d_z += w.lambda_inv * d_inv
    d_zp -= w.lambda_inv * d_inv
    if w.lambda_corr:
        gz, gzp = _correlation_grad(z, zp, w.eps_norm)
        d_z += w.lambda_corr * gz
        d_zp += w.lambda_corr * gzp
    return GradPair(d_z, d_zp)


def triplet_loss(z, zp, margin=1.0, symmetric=False) -> float:
    """Batch-all triplet hinge averaged over the N(N-1) anchor/negative pairs.

    Anchors come from ``z``; positives and negatives from ``zp``. With
    ``symmetric`` the mirrored loss (anchors from ``zp``) is averaged in.
    """
    z, zp = _pair(z, zp, min_rows=2)
    if not margin > 0:
        raise UsageError("margin must be positive")
    loss, _, _ = kernels.triplet_loss_grad(z, zp, margin, want_grad=False)
    if symmetric:
        mirror, _, _ = kernels.triplet_loss_grad(zp, z, margin, want_grad=False)
        loss = 0.5 * (loss + mirror)
    return loss


def _triplet_grad(z, zp, p: TripletParams):
    _, dz, dzp = kernels.triplet_loss_grad(z, zp, p.margin)
    if p.symmetric:
        _, dzp2, dz2 = kernels.triplet_loss_grad(zp, z, p.margin)
        dz = 0.5 * (dz + dz2)
        dzp = 0.5 * (dzp + dzp2)
    return GradPair(dz, dzp)


# ------------------------------------------------------------------ dispatch

def default_params(loss_id):
    if loss_id == "sicova":
        return SicovaWeights()
    if loss_id == "triplet":
        return TripletParams()
    raise UsageError(f"unknown loss {loss_id!r}; expected one of {LOSS_IDS}")


def _check_params(loss_id, params):
    if params is None:
        return default_params(loss_id)
    if loss_id == "sicova" and isinstance(params, SicovaWeights):
        return params
    if loss_id == "triplet":
        if isinstance(params, TripletParams):
            return params
        if isinstance(params, (int, float)):
            return TripletParams(margin=float(params))
    if loss_id not in LOSS_IDS:
        raise UsageError(f"unknown loss {loss_id!r}; expected one of {LOSS_IDS}")
    raise UsageError(f"parameters of type {type(params).__name__} do not fit loss {loss_id!r}")


def loss_value(loss_id, z, zp, params=None) -> float:
    """Scalar objective for ``loss_id``."""
    params = _check_params(loss_id, params)
    if loss_id == "sicova":
        return sicova_loss(z, zp, params).total
    return triplet_loss(z, zp, params.margin, params.symmetric)


def loss_gradient(loss_id, z, zp, params=None) -> GradPair:
    """Analytic partial derivatives of the scalar loss w.r.t. both views."""
    params = _check_params(loss_id, params)
    if loss_id == "sicova":
        z, zp = _pair(z, zp, min_rows=2)
        return _sicova_grad(z, zp, params)
    z, zp = _pair(z, zp, min_rows=2)
    return _triplet_grad(z, zp, params)


def loss_and_gradient(loss_id, z, zp, params=None):
    """``(value, GradPair)`` in one call; used by the trainer."""
    params = _check_params(loss_id, params)
    z, zp = _pair(z, zp, min_rows=2)
    if loss_id == "sicova":
        return sicova_loss(z, zp, params).total, _sicova_grad(z, zp, params)
    loss, dz, dzp = kernels.triplet_loss_grad(z, zp, params.margin)
    if params.symmetric:
        mirror, dzp2, dz2 = kernels.triplet_loss_grad(zp, z, params.margin)
        return 0.5 * (loss + mirror), GradPair(0.5 * (dz + dz2), 0.5 * (dzp + dzp2))
    return loss, GradPair(dz, dzp)
