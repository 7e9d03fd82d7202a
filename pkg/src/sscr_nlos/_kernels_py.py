"""Pure-numpy fallback for the hot accumulation kernels.

The compiled twin (``_kernels.pyx``) implements the same contracts with
fused loops; this module is selected when the extension is unavailable.
All kernels are single-threaded and deterministic.
"""

import numpy as np

BACKEND = "numpy"


def forward_apply(u_flat, vox, bins, weights, offsets, out):
    """Scatter voxel contributions into time bins, one row per pair.

    ``vox``, ``bins`` and ``weights`` are per-pair concatenated tables of
    in-range (voxel, bin, weight) triples with ``offsets`` delimiting the
    pairs; voxel indices are unique within a pair.
    """
    q = out.shape[1]
    for p in range(out.shape[0]):
        seg = slice(offsets[p], offsets[p + 1])
        if seg.start == seg.stop:
            continue
        out[p] += np.bincount(bins[seg], weights=u_flat[vox[seg]] * weights[seg], minlength=q)
    return out


def adjoint_apply(tau, vox, bins, weights, offsets, out_flat):
    """Exact transpose of :func:`forward_apply`."""
    for p in range(tau.shape[0]):
        seg = slice(offsets[p], offsets[p + 1])
        if seg.start == seg.stop:
            continue
        out_flat[vox[seg]] += tau[p, bins[seg]] * weights[seg]
    return out_flat


def _cubic(x, s1, lin, con):
    return ((x - s1) * x + lin) * x + con


def solve_bins(counts, pulses, mu, s, out, poly_tol=1e-12, max_iter=200):
    """Minimize the per-bin penalized negative log-likelihood, batched.

    Each bin solves ``min (d - N) ln(1 - t) - d ln t + mu (t - s)^2`` on
    [0, 1]. Interior bins (0 < d < N) take the unique root of the cubic
    ``x^3 - (s+1) x^2 + (s - N/(2 mu)) x + d/(2 mu)`` inside (0, 1) via
    safeguarded Newton; boundary counts use their closed forms.
    """
    counts = np.asarray(counts, float)
    mu = np.asarray(mu, float)
    s = np.asarray(s, float)
    n = float(pulses)
    half_ratio = n / (2.0 * mu)

    empty = counts == 0
    full = counts == n
    interior = ~(empty | full)

    if empty.any():
        se = s[empty]
        root = 1.0 - 0.5 * ((1.0 - se) + np.sqrt((1.0 - se) ** 2 + 2.0 * n / mu[empty]))
        out[empty] = np.maximum(0.0, root)
    if full.any():
        sf = s[full]
        root = 0.5 * (sf + np.sqrt(sf**2 + 2.0 * n / mu[full]))
        out[full] = np.minimum(1.0, root)
    if not interior.any():
        return out

    eps = 1e-15
    s1 = s[interior] + 1.0
    lin = s[interior] - half_ratio[interior]
    con = counts[interior] / (2.0 * mu[interior])

    lo = np.full(con.shape, eps)
    hi = np.full(con.shape, 1.0 - eps)
    # p(0+) > 0 and p(1-) < 0, so the sign of p picks the half interval
    x = np.clip(s[interior], 0.25, 0.75)
    for _ in range(max_iter):
        px = _cubic(x, s1, lin, con)
        done = np.abs(px) <= poly_tol
        if done.all():
            break
        pos = px > 0
        lo = np.where(pos & ~done, x, lo)
        hi = np.where(~pos & ~done, x, hi)
        dpx = (3.0 * x - 2.0 * s1) * x + lin
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(dpx != 0, px / dpx, 0.0)
        xn = x - step
        bad = (dpx == 0) | (xn <= lo) | (xn >= hi) | ~np.isfinite(xn)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        x = np.where(done, x, xn)
    out[interior] = x
    return out
