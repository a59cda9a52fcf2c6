"""Central-difference verification of the analytic loss gradients."""
from __future__ import annotations

import numpy as np

from .errors import UsageError
from .losses import _check_params, loss_gradient, loss_value
from .numeric_core import Rng, as_matrix

KINK_PERTURBATION = 1e-3


def numeric_gradient(f, x, h):
    """Central differences of scalar ``f`` over every entry of ``x``."""
    g = np.empty_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        up = f()
        flat[idx] = orig - h
        down = f()
        flat[idx] = orig
        gf[idx] = (up - down) / (2.0 * h)
    return g


def max_relative_error(analytic, numeric) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def finite_diff_check(loss_id, z, zp, params=None, h=1e-5, *, seed=0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Triplet inputs are first shifted by Gaussian noise of scale 1e-3 (seeded)
    so that no sample sits exactly on a hinge or norm kink, e.g. all-zero
    embeddings where every distance is 0.
    """
    if not h > 0:
        raise UsageError("finite-difference step h must be positive")
    params = _check_params(loss_id, params)
    z = as_matrix(z, "z").copy()
    zp = as_matrix(zp, "zp").copy()
    if loss_id == "triplet":
        rng = Rng(seed).split(0x6B696E6B)
        z += KINK_PERTURBATION * rng.normal(z.shape)
        zp += KINK_PERTURBATION * rng.normal(zp.shape)

    grads = loss_gradient(loss_id, z, zp, params)

    def f():
        return loss_value(loss_id, z, zp, params)

    num_z = numeric_gradient(f, z, h)
    num_zp = numeric_gradient(f, zp, h)
    return max(
        max_relative_error(grads.d_z, num_z),
        max_relative_error(grads.d_zp, num_zp),
    )


def gradcheck_suite(loss_id, params=None, *, n_pairs=100, n=8, d=4, seed=0, h=1e-5):
    """Worst ``finite_diff_check`` error over ``n_pairs`` seeded random pairs."""
    root = Rng(seed)
    worst = 0.0
    for trial in range(n_pairs):
        rng = root.split(trial)
        z = rng.normal((n, d))
        zp = z + 0.5 * rng.normal((n, d))
        worst = max(worst, finite_diff_check(loss_id, z, zp, params, h, seed=seed + trial))
    return worst
