"""Classical reconstructors and quantitative surface metrics."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ZeroSignal
from .forward import ForwardOperator
from .geometry import AlbedoVolume, PhotonHistogram, SurfaceG
from .pipeline import init_tau

__all__ = [
    "back_projection",
    "log_bp",
    "ls_cg_reconstruct",
    "peak_surface",
    "metrics",
    "rel_misfit",
]


def back_projection(hist: PhotonHistogram, op: ForwardOperator) -> AlbedoVolume:
    """Adjoint applied to the raw count-rate estimate d / N."""
    return AlbedoVolume(op.grid, op.apply_adjoint(init_tau(hist).values))


def log_bp(hist: PhotonHistogram, op: ForwardOperator, sigma: float = 1.0) -> AlbedoVolume:
    """Laplacian-of-Gaussian sharpened back-projection.

    Gaussian blur (sigma in voxels, zero-padded borders), then the
    discrete 6-neighbor Laplacian, negated so surface ridges come out
    positive; negative responses are clamped to zero.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    bp = back_projection(hist, op).values
    smooth = ndimage.gaussian_filter(bp, sigma=sigma, mode="constant", cval=0.0)
    neigh = np.zeros_like(smooth)
    for ax in range(3):
        for shift in (1, -1):
            neigh += _zero_pad_shift(smooth, ax, shift)
    lap = neigh - 6.0 * smooth
    return AlbedoVolume(op.grid, np.maximum(-lap, 0.0))


def _zero_pad_shift(a, axis, shift):
    out = np.zeros_like(a)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if shift > 0:
        src[axis] = slice(0, a.shape[axis] - shift)
        dst[axis] = slice(shift, None)
    else:
        src[axis] = slice(-shift, None)
        dst[axis] = slice(0, a.shape[axis] + shift)
    out[tuple(dst)] = a[tuple(src)]
    return out


def ls_cg_reconstruct(hist: PhotonHistogram, op: ForwardOperator, iters: int = 1000):
    """Regularization-free least squares by conjugate gradient.

    Solves ``A^T A u = A^T tau`` starting from the back-projection and
    records, per iteration, the relative normal-equation residual
    ``||A^T A u - A^T tau|| / ||A^T tau||`` and the relative data misfit
    ``||A u - tau|| / ||tau||``. Returns (volume, curves dict).
    """
    if iters < 1:
        raise ValueError("need at least one iteration")
    a = op.as_linear_map()
    tau = init_tau(hist).values.reshape(-1)
    atb = a.apply_adjoint(tau)
    atb_norm = float(np.linalg.norm(atb))
    tau_norm = float(np.linalg.norm(tau))
    if atb_norm == 0.0 or tau_norm == 0.0:
        zero = AlbedoVolume.zeros(op.grid)
        return zero, {"normal_residual": [0.0], "data_misfit": [0.0 if tau_norm == 0 else 1.0]}

    gram = a.gram()
    x = atb.copy()
    r = atb - gram.apply(x)
    p = r.copy()
    rs = float(r @ r)
    normal_curve = [np.sqrt(rs) / atb_norm]
    misfit_curve = [float(np.linalg.norm(a.apply(x) - tau)) / tau_norm]
    for _ in range(iters):
        ap = gram.apply(p)
        pap = float(p @ ap)
        if pap <= 0 or not np.isfinite(pap):
            break
        alpha = rs / pap
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(r @ r)
        normal_curve.append(np.sqrt(rs_new) / atb_norm)
        misfit_curve.append(float(np.linalg.norm(a.apply(x) - tau)) / tau_norm)
        beta = rs_new / rs
        rs = rs_new
        p = r + beta * p
    vol = AlbedoVolume(op.grid, x.reshape(op.grid.dims))
    return vol, {"normal_residual": normal_curve, "data_misfit": misfit_curve}


def peak_surface(u: AlbedoVolume, rel_threshold: float = 0.5) -> SurfaceG:
    """Thresholded per-column peak surface of a volume.

    Each pixel takes the depth of its column maximum; pixels whose peak
    is below ``rel_threshold`` times the global maximum are background.
    The standard way to read a surface off a back-projection volume.
    """
    if not 0.0 <= rel_threshold <= 1.0:
        raise ValueError("rel_threshold must lie in [0, 1]")
    vals = u.values
    peak = vals.max(axis=2)
    top = float(vals.max())
    if top <= 0:
        return SurfaceG.empty(u.grid)
    e = peak >= rel_threshold * top
    e &= peak > 0
    d = np.where(e, vals.argmax(axis=2), -1)
    return SurfaceG(u.grid, e, d, np.where(e, peak, 0.0))


def metrics(recon: SurfaceG, truth: SurfaceG) -> dict:
    """Foreground IoU, depth RMSE (voxel units), precision and recall.

    Depth RMSE is evaluated over the intersection of the two foreground
    masks. An empty truth yields all-zero metrics with ``empty_truth``
    set; an empty intersection yields ``depth_rmse_voxels = inf``.
    """
    if recon.grid.dims[:2] != truth.grid.dims[:2]:
        raise ValueError("surfaces live on different pixel lattices")
    out = {"iou": 0.0, "depth_rmse_voxels": 0.0, "precision": 0.0, "recall": 0.0,
           "empty_truth": False}
    t = truth.e
    r = recon.e
    if not t.any():
        out["empty_truth"] = True
        return out
    inter = int((r & t).sum())
    union = int((r | t).sum())
    out["iou"] = inter / union if union else 0.0
    out["precision"] = inter / int(r.sum()) if r.any() else 0.0
    out["recall"] = inter / int(t.sum())
    if inter:
        dd = (recon.d[r & t] - truth.d[r & t]).astype(float)
        out["depth_rmse_voxels"] = float(np.sqrt(np.mean(dd**2)))
    else:
        out["depth_rmse_voxels"] = float("inf")
    return out


def rel_misfit(u: AlbedoVolume, tau_values: np.ndarray, op: ForwardOperator) -> float:
    """Relative data misfit ``||A u - tau|| / ||tau||``."""
    tau = np.asarray(tau_values, float)
    denom = float(np.linalg.norm(tau))
    if denom == 0.0:
        raise ZeroSignal("reference signal is identically zero")
    return float(np.linalg.norm(op.apply(u.values) - tau.reshape(
        op.geometry.num_pairs, op.geometry.num_bins))) / denom
