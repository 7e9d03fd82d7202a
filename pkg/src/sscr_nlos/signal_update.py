"""Per-bin signal update: decoupled strictly convex 1D problems.

Blending the count-data term with a quadratic pull toward a target makes
every bin an independent problem ``min (d - N) ln(1 - t) - d ln t +
mu (t - s)^2`` on [0, 1], solved in closed form for d = 0 and d = N and
through the unique interior root of a cubic otherwise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import ConfigError
from .geometry import PhotonHistogram, TransientSignal
from .patches import PatchConfig, SignalDictionary, aggregate_patches
from .photon import nll_terms

__all__ = ["BinProblem", "solve_bin", "solve_bin_batch", "update_tau", "adaptive_lambda"]


@dataclass(frozen=True)
class BinProblem:
    """One bin's objective ``(d - N) ln(1 - t) - d ln t + mu (t - s)^2``."""

    d: int
    n: int
    mu: float
    s: float

    def __post_init__(self):
        if not 0 <= self.d <= self.n:
            raise ValueError(f"need 0 <= d <= N, got d={self.d}, N={self.n}")
        if self.mu <= 0:
            raise ValueError("mu must be positive")

    def objective(self, t):
        return float(nll_terms(np.asarray(t, float), self.d, self.n)
                     + self.mu * (np.asarray(t, float) - self.s) ** 2)

    def cubic(self, x):
        """The stationarity polynomial for the interior case 0 < d < N."""
        half = self.n / (2.0 * self.mu)
        return ((x - (self.s + 1.0)) * x + (self.s - half)) * x + self.d / (2.0 * self.mu)


def solve_bin(problem: BinProblem) -> float:
    """Global minimizer of a bin problem on [0, 1]."""
    out = np.zeros(1)
    _accel.solve_bins(
        np.array([float(problem.d)]),
        problem.n,
        np.array([problem.mu]),
        np.array([problem.s]),
        out,
    )
    return float(out[0])


def solve_bin_batch(counts, pulses, mu, s) -> np.ndarray:
    """Vectorized :func:`solve_bin` over arrays of equal shape."""
    counts = np.asarray(counts, float)
    mu_arr = np.broadcast_to(np.asarray(mu, float), counts.shape)
    s_arr = np.broadcast_to(np.asarray(s, float), counts.shape)
    out = np.zeros(counts.size)
    _accel.solve_bins(
        counts.reshape(-1).astype(float),
        pulses,
        np.ascontiguousarray(mu_arr, float).reshape(-1),
        np.ascontiguousarray(s_arr, float).reshape(-1),
        out,
    )
    return out.reshape(counts.shape)


def update_tau(hist: PhotonHistogram, coeffs: np.ndarray,
               dictionary: SignalDictionary, patch_cfg: PatchConfig,
               au: np.ndarray, lambda_t: float, lam: float) -> TransientSignal:
    """Minimize the blended signal objective bin by bin.

    ``coeffs`` are the shared sparse patch coefficients; their synthesis
    is aggregated back onto the scan tensor (exact for the required
    non-overlapping tiling) and blended with the simulated signal ``au``
    into the quadratic pull ``mu = lambda_t + lam``,
    ``s = (lambda_t * recon + lam * au) / mu``.
    """
    if not patch_cfg.non_overlapping:
        raise ConfigError("signal update requires a non-overlapping patch tiling")
    if lambda_t <= 0 or lam <= 0:
        raise ValueError("lambda_t and lam must be positive")
    geo = hist.geometry
    nx, ny = geo.scan_shape
    dims = (nx, ny, geo.num_bins)
    recon = aggregate_patches(dictionary.synthesize(coeffs), patch_cfg, dims)
    recon = recon.reshape(geo.num_pairs, geo.num_bins)
    au = np.asarray(au, float).reshape(geo.num_pairs, geo.num_bins)
    mu = lambda_t + lam
    target = (lambda_t * recon + lam * au) / mu
    values = solve_bin_batch(hist.counts, hist.pulses, mu, target)
    return TransientSignal(geo, values)


def adaptive_lambda(hist: PhotonHistogram, tau0: TransientSignal,
                    recon1: np.ndarray, au0: np.ndarray) -> float:
    """Data-driven quadratic weight balancing the count NLL at tau0
    against the blended prediction residual.

    Returns ``nll(tau0) / ||tau0 - (recon1 + au0) / 2||^2``; degenerate
    numerators or denominators fall back to 1 with a warning (tau0
    already matches the blend, any weight is stationary).
    """
    num = float(nll_terms(tau0.values, hist.counts, hist.pulses).sum())
    blend = 0.5 * (np.asarray(recon1, float) + np.asarray(au0, float))
    den = float(((tau0.values - blend.reshape(tau0.values.shape)) ** 2).sum())
    if den <= 0.0 or num <= 0.0 or not np.isfinite(num):
        warnings.warn(
            f"degenerate adaptive weight (nll={num:.3g}, residual={den:.3g}); "
            "falling back to 1.0",
            stacklevel=2,
        )
        return 1.0
    return num / den
