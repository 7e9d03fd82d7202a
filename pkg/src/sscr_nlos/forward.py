"""Transient forward operator and its exact adjoint.

The scene is modeled as a field of isotropic scatterers: a voxel at
distance ``r_i`` from the illumination point and ``r_d`` from the
detection point contributes ``u * dV / (r_i^2 * r_d^2)`` to the time bin
holding the optical path length ``r_i + r_d``. This is the only module
that discretizes the physics; everything downstream treats A as a black
box linear map.

Discretization choices (pinned):

* one quadrature sample per voxel, at the voxel center;
* nearest-bin assignment, half-bin boundaries rounding up, so the
  adjoint is the exact transpose of the forward map;
* optional wall-foreshortening factor ``cos(theta_i) * cos(theta_d)``
  (angles against the relay wall normal +z), off by default. It exists
  so model mismatch between a finer simulator and this reconstructor
  can be exercised.
"""

from __future__ import annotations

import numpy as np

from . import _accel
from .errors import DimensionMismatch
from .geometry import AlbedoVolume, MeasurementGeometry, TransientSignal, VoxelGrid

__all__ = ["ForwardOperator", "bin_of", "forward", "adjoint"]


def bin_of(path_length: float, geometry: MeasurementGeometry):
    """Time-bin index for an optical path length, or None when out of range.

    ``q = round((path_length / c - time_origin) / bin_width)`` with halves
    rounding up; None signals the contribution lands outside [0, Q).
    """
    if path_length < 0:
        raise ValueError("path_length must be nonnegative")
    x = (path_length / geometry.c - geometry.time_origin) / geometry.bin_width
    q = int(np.floor(x + 0.5))
    if 0 <= q < geometry.num_bins:
        return q
    return None


class ForwardOperator:
    """Matrix-free map from albedo volumes to transient signals.

    Per-pair (voxel, bin, weight) tables are precomputed once at
    construction; applying the operator or its adjoint is then a pure
    gather/scatter pass handled by the kernel backend. Memory cost is
    O(P * I * J * K) table entries.
    """

    def __init__(self, grid: VoxelGrid, geometry: MeasurementGeometry,
                 cosine_factor: bool = False):
        self.grid = grid
        self.geometry = geometry
        self.cosine_factor = bool(cosine_factor)
        self._build_tables()

    def _build_tables(self):
        grid, geo = self.grid, self.geometry
        centers = grid.centers().reshape(-1, 3)
        dv = grid.voxel_volume
        vox_all = np.arange(centers.shape[0], dtype=np.int64)

        vox_parts, bin_parts, w_parts = [], [], []
        counts = np.zeros(geo.num_pairs + 1, dtype=np.int64)
        for p in range(geo.num_pairs):
            di = centers - geo.illum[p]
            dd = centers - geo.detect[p]
            ri = np.sqrt(np.einsum("ij,ij->i", di, di))
            rd = np.sqrt(np.einsum("ij,ij->i", dd, dd))
            path = ri + rd
            x = (path / geo.c - geo.time_origin) / geo.bin_width
            q = np.floor(x + 0.5).astype(np.int64)
            keep = (q >= 0) & (q < geo.num_bins) & (ri > 0) & (rd > 0)
            w = np.zeros(centers.shape[0])
            w[keep] = dv / (ri[keep] ** 2 * rd[keep] ** 2)
            if self.cosine_factor:
                cos_i = np.maximum(di[:, 2], 0.0) / np.where(ri > 0, ri, 1.0)
                cos_d = np.maximum(dd[:, 2], 0.0) / np.where(rd > 0, rd, 1.0)
                w *= cos_i * cos_d
            keep &= w > 0
            vox_parts.append(vox_all[keep])
            bin_parts.append(q[keep])
            w_parts.append(w[keep])
            counts[p + 1] = counts[p] + int(keep.sum())

        self._vox = np.concatenate(vox_parts) if vox_parts else np.empty(0, np.int64)
        self._bins = np.concatenate(bin_parts) if bin_parts else np.empty(0, np.int64)
        self._w = np.concatenate(w_parts) if w_parts else np.empty(0)
        self._offsets = counts

    @property
    def shape(self):
        return (self.geometry.num_pairs * self.geometry.num_bins, self.grid.num_voxels)

    def as_linear_map(self):
        """Flat-vector view of the operator for the generic solvers."""
        from .solvers import LinearMap

        p, q = self.geometry.num_pairs, self.geometry.num_bins
        return LinearMap(
            self.shape,
            lambda x: self.apply(x).reshape(-1),
            lambda y: self.apply_adjoint(np.asarray(y).reshape(p, q)).reshape(-1),
        )

    def apply(self, u_values: np.ndarray) -> np.ndarray:
        """A @ u for a raw (I, J, K) or flat value array; returns (P, Q)."""
        u_flat = np.ascontiguousarray(u_values, dtype=float).reshape(-1)
        if u_flat.size != self.grid.num_voxels:
            raise DimensionMismatch(
                f"volume has {u_flat.size} voxels, operator expects {self.grid.num_voxels}"
            )
        out = np.zeros((self.geometry.num_pairs, self.geometry.num_bins))
        _accel.forward_apply(u_flat, self._vox, self._bins, self._w, self._offsets, out)
        return out

    def apply_adjoint(self, tau_values: np.ndarray) -> np.ndarray:
        """A^T @ tau for a raw (P, Q) array; returns (I, J, K)."""
        tau = np.ascontiguousarray(tau_values, dtype=float)
        if tau.shape != (self.geometry.num_pairs, self.geometry.num_bins):
            raise DimensionMismatch(
                f"signal shape {tau.shape} does not match "
                f"({self.geometry.num_pairs}, {self.geometry.num_bins})"
            )
        out = np.zeros(self.grid.num_voxels)
        _accel.adjoint_apply(tau, self._vox, self._bins, self._w, self._offsets, out)
        return out.reshape(self.grid.dims)


def forward(u: AlbedoVolume, op: ForwardOperator) -> TransientSignal:
    """Simulate the transient signal of an albedo volume."""
    if u.grid != op.grid:
        raise DimensionMismatch("volume grid does not match the operator grid")
    return TransientSignal(op.geometry, op.apply(u.values))


def adjoint(tau: TransientSignal, op: ForwardOperator) -> AlbedoVolume:
    """Back-project a transient signal; the exact transpose of forward."""
    if tau.geometry != op.geometry:
        raise DimensionMismatch("signal geometry does not match the operator geometry")
    return AlbedoVolume(op.grid, op.apply_adjoint(tau.values))
