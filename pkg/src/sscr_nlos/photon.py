"""Photon-event simulation and the count-data fidelity term.

Detection of a photon event in one pulse is Bernoulli with success
probability ``eta * tau + dark_rate`` (the first-order approximation of
the exponential detection law), independent across pulses and bins, so a
bin's count over N pulses is binomial. Sampling uses one counter-keyed
Philox stream per bin: results are reproducible and independent of any
iteration or parallelization order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ProbabilityOverflow
from .geometry import PhotonHistogram, TransientSignal

RNG_ID = "philox4x64:bin-keyed:v1"

__all__ = ["NoiseModel", "RNG_ID", "sample_histogram", "nll", "nll_terms"]


@dataclass(frozen=True)
class NoiseModel:
    """Detection efficiency and (optional, default-off) dark counts."""

    eta: float = 1.0
    dark_rate: float = 0.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"detection efficiency must be positive, got {self.eta}")
        if self.dark_rate < 0:
            raise ValueError(f"dark rate must be nonnegative, got {self.dark_rate}")


def _bin_stream(seed: int, flat_index: int):
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(flat_index)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_histogram(tau: TransientSignal, pulses: int, model: NoiseModel = NoiseModel(),
                     seed: int = 0) -> PhotonHistogram:
    """Draw a photon-event histogram for a signal.

    counts[p, q] ~ Binomial(N, eta * tau[p, q] + dark_rate), independent
    across bins; bit-identical for identical (tau, pulses, model, seed).

    Raises
    ------
    ProbabilityOverflow
        If any per-pulse success probability reaches 1.
    """
    prob = model.eta * tau.values + model.dark_rate
    if prob.min(initial=0.0) < 0:
        p, q = np.argwhere(prob < 0)[0]
        raise ValueError(f"negative success probability at pair {p}, bin {q}")
    if prob.max(initial=0.0) >= 1:
        p, q = np.argwhere(prob >= 1)[0]
        raise ProbabilityOverflow(
            f"success probability {prob[p, q]:.6g} >= 1 at pair {p}, bin {q}"
        )
    counts = np.zeros(prob.shape, dtype=np.int64)
    flat_prob = prob.reshape(-1)
    flat_counts = counts.reshape(-1)
    for idx in np.nonzero(flat_prob > 0)[0]:
        flat_counts[idx] = _bin_stream(seed, int(idx)).binomial(pulses, flat_prob[idx])
    return PhotonHistogram(tau.geometry, counts, pulses, RNG_ID, seed)


def nll_terms(tau_values: np.ndarray, counts: np.ndarray, pulses: int) -> np.ndarray:
    """Per-bin negative log-likelihood ``(d - N) ln(1 - t) - d ln t``.

    Conventions: 0 * ln 0 = 0; a bin returns +inf when d > 0 with t = 0
    or d < N with t = 1.
    """
    t = np.asarray(tau_values, float)
    d = np.asarray(counts, float)
    n = float(pulses)
    with np.errstate(divide="ignore", invalid="ignore"):
        miss = np.where(d < n, (d - n) * np.log1p(-t), 0.0)
        hit = np.where(d > 0, -d * np.log(t), 0.0)
    out = miss + hit
    out[np.isnan(out)] = np.inf
    return out


def nll(tau: TransientSignal, hist: PhotonHistogram) -> float:
    """Total count-data negative log-likelihood of a signal estimate."""
    terms = nll_terms(tau.values, hist.counts, hist.pulses)
    return float(terms.sum())


def nll_hessian_diag(tau_values, counts, pulses):
    """Second derivative of each bin's term; nonnegative on (0, 1)."""
    t = np.asarray(tau_values, float)
    d = np.asarray(counts, float)
    return (pulses - d) / (1.0 - t) ** 2 + d / t**2
