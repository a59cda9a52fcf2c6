"""Pure-numpy kernels; reference behaviour for the compiled versions."""
import numpy as np


def triplet_loss_grad(z, zp, margin, want_grad=True):
    """Batch-all triplet hinge with view-1 anchors.

    Returns ``(loss, dz, dzp)``; the gradients are ``None`` when
    ``want_grad`` is false. Subgradient 0 is used at hinge and norm kinks.
    """
    n = z.shape[0]
    diff = z[:, None, :] - zp[None, :, :]
    dist = np.sqrt(np.einsum("ikd,ikd->ik", diff, diff))
    pos = np.diag(dist)
    hinge = pos[:, None] - dist + margin
    active = hinge > 0.0
    np.fill_diagonal(active, False)
    scale = 1.0 / (n * (n - 1))
    loss = float(np.sum(hinge[active])) * scale
    if not want_grad:
        return loss, None, None
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(dist[:, :, None] > 0.0, diff / dist[:, :, None], 0.0)
    a = active.astype(np.float64)
    counts = a.sum(axis=1)
    u_pos = unit[np.arange(n), np.arange(n)]
    dz = scale * (counts[:, None] * u_pos - np.einsum("ik,ikd->id", a, unit))
    dzp = scale * (np.einsum("ik,ikd->kd", a, unit) - counts[:, None] * u_pos)
    return loss, dz, dzp


def confusion_matrix(labels, preds, mask, n_classes):
    idx = labels[mask] * n_classes + preds[mask]
    return np.bincount(idx, minlength=n_classes * n_classes).reshape(
        n_classes, n_classes
    ).astype(np.int64)


def sweep_confusion(pmax, labels, preds, grid, n_classes):
    """Confusion counts of the samples with ``pmax >= t`` for each ``t`` in grid.

    Output has shape ``(len(grid), K, K)``, rows indexed by true label.
    """
    k2 = n_classes * n_classes
    order = np.argsort(-pmax, kind="stable")
    sorted_desc = pmax[order]
    onehot = np.zeros((pmax.shape[0] + 1, k2), dtype=np.int64)
    onehot[np.arange(1, pmax.shape[0] + 1), labels[order] * n_classes + preds[order]] = 1
    cum = np.cumsum(onehot, axis=0)
    # number of samples with pmax >= t, via the ascending copy
    n_ret = pmax.shape[0] - np.searchsorted(sorted_desc[::-1], grid, side="left")
    return cum[n_ret].reshape(len(grid), n_classes, n_classes)
