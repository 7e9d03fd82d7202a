"""Domain types: voxel grids, albedo volumes, single-surface elements,
measurement layouts, photon histograms and transient signals.

All types are immutable value objects; their array payloads are marked
read-only so instances can be shared freely between threads.

Conventions
-----------
* Axes: x horizontal, y vertical, z depth away from the relay wall
  (the wall lives in the z = 0 plane, the scene at z > 0).
* The voxel ``(i, j, k)`` has its center at
  ``origin + ((i + 1/2) sx, (j + 1/2) sy, (k + 1/2) sz)``.
* Depth indices are 0-based: a surface depth ``d`` is a plane index in
  ``[0, K)``.
* Measurement pairs of a rectangular scan are stored row-major in scan
  order, ``p = ix * ny + iy`` for ``scan_shape = (nx, ny)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, MembershipError

SPEED_OF_LIGHT = 299792458.0  # m/s

__all__ = [
    "SPEED_OF_LIGHT",
    "VoxelGrid",
    "AlbedoVolume",
    "SurfaceG",
    "MeasurementGeometry",
    "PhotonHistogram",
    "TransientSignal",
    "surface_to_volume",
    "volume_to_surface",
    "make_plane_scene",
    "make_pyramid_scene",
]


def _frozen(arr, dtype=None):
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class VoxelGrid:
    """Axis-aligned voxel discretization of the reconstruction domain."""

    dims: tuple[int, int, int]
    origin: np.ndarray
    voxel_size: np.ndarray

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) != 3 or any(n < 1 for n in dims):
            raise GeometryError(f"grid dims must be three positive ints, got {self.dims}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", _frozen(self.origin, float))
        object.__setattr__(self, "voxel_size", _frozen(self.voxel_size, float))
        if self.origin.shape != (3,) or self.voxel_size.shape != (3,):
            raise GeometryError("origin and voxel_size must be 3-vectors")
        if not np.all(self.voxel_size > 0):
            raise GeometryError(f"voxel_size must be positive, got {self.voxel_size}")

    @property
    def shape(self):
        return self.dims

    @property
    def num_voxels(self):
        i, j, k = self.dims
        return i * j * k

    @property
    def voxel_volume(self):
        """Volume of one voxel in cubic meters."""
        return float(np.prod(self.voxel_size))

    @property
    def extent(self):
        """Physical bounding box as (lower corner, upper corner)."""
        upper = self.origin + np.asarray(self.dims) * self.voxel_size
        return self.origin.copy(), upper

    def centers(self):
        """Voxel center coordinates as an (I, J, K, 3) array."""
        i, j, k = self.dims
        xs = self.origin[0] + (np.arange(i) + 0.5) * self.voxel_size[0]
        ys = self.origin[1] + (np.arange(j) + 0.5) * self.voxel_size[1]
        zs = self.origin[2] + (np.arange(k) + 0.5) * self.voxel_size[2]
        out = np.empty((i, j, k, 3))
        out[..., 0] = xs[:, None, None]
        out[..., 1] = ys[None, :, None]
        out[..., 2] = zs[None, None, :]
        return out

    def plane_depths(self):
        """Depth coordinate (meters) of each voxel-center plane, length K."""
        return self.origin[2] + (np.arange(self.dims[2]) + 0.5) * self.voxel_size[2]

    def nearest_plane(self, depth_m):
        """Index of the voxel plane whose center is closest to ``depth_m``.

        Half-way ties snap toward the wall (the lower index).
        """
        rel = (depth_m - self.origin[2]) / self.voxel_size[2] - 0.5
        k = int(np.ceil(rel - 0.5))
        return min(max(k, 0), self.dims[2] - 1)

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (
            self.dims == other.dims
            and np.array_equal(self.origin, other.origin)
            and np.array_equal(self.voxel_size, other.voxel_size)
        )

    def __hash__(self):
        return hash((self.dims, self.origin.tobytes(), self.voxel_size.tobytes()))


@dataclass(frozen=True)
class AlbedoVolume:
    """Voxelized albedo field over a :class:`VoxelGrid`."""

    grid: VoxelGrid
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values, float)
        if vals.shape != self.grid.dims:
            raise GeometryError(
                f"values shape {vals.shape} does not match grid dims {self.grid.dims}"
            )
        if not np.all(np.isfinite(vals)):
            raise GeometryError("albedo values must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.dims))

    def replace_values(self, values):
        return AlbedoVolume(self.grid, values)


@dataclass(frozen=True)
class SurfaceG:
    """Single-surface element: per-pixel indicator, depth index and albedo.

    Background pixels (``e == False``) carry the canonical placeholders
    ``d == -1`` and ``alpha == 0.0``; these are tags, never operated on
    arithmetically. Foreground pixels satisfy ``0 <= d < K`` and
    ``alpha > 0``.
    """

    grid: VoxelGrid
    e: np.ndarray
    d: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        ij = self.grid.dims[:2]
        e = _frozen(self.e, bool)
        d = np.array(self.d, dtype=np.int64, copy=True)
        alpha = np.array(self.alpha, dtype=float, copy=True)
        if e.shape != ij or d.shape != ij or alpha.shape != ij:
            raise GeometryError(f"surface matrices must have shape {ij}")
        # normalize the background placeholders
        d[~e] = -1
        alpha[~e] = 0.0
        if e.any():
            dk = d[e]
            if dk.min() < 0 or dk.max() >= self.grid.dims[2]:
                raise GeometryError("foreground depth index out of [0, K)")
            if not np.all(alpha[e] > 0):
                raise GeometryError("foreground albedo must be strictly positive")
        if not np.all(np.isfinite(alpha)):
            raise GeometryError("albedo matrix must be finite")
        d.flags.writeable = False
        alpha.flags.writeable = False
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def empty(cls, grid):
        ij = grid.dims[:2]
        return cls(grid, np.zeros(ij, bool), -np.ones(ij, np.int64), np.zeros(ij))

    @property
    def num_foreground(self):
        return int(self.e.sum())

    def same_surface(self, other):
        """Exact equality of (e, d, alpha) on a shared grid."""
        return (
            self.grid == other.grid
            and np.array_equal(self.e, other.e)
            and np.array_equal(self.d, other.d)
            and np.array_equal(self.alpha, other.alpha)
        )


@dataclass(frozen=True)
class MeasurementGeometry:
    """Illumination/detection points on the relay wall plus timing bins.

    ``time_origin`` is the arrival time (seconds) mapped to bin 0.
    ``scan_shape = (nx, ny)`` records the rectangular scan layout used to
    arrange the P pairs as a 2D grid; it defaults to a square layout when
    P is a perfect square and to ``(P, 1)`` otherwise.
    """

    illum: np.ndarray
    detect: np.ndarray
    bin_width: float
    num_bins: int
    time_origin: float = 0.0
    c: float = SPEED_OF_LIGHT
    scan_shape: tuple[int, int] | None = None

    def __post_init__(self):
        illum = _frozen(np.atleast_2d(self.illum), float)
        detect = _frozen(np.atleast_2d(self.detect), float)
        if illum.ndim != 2 or illum.shape[1] != 3 or illum.shape != detect.shape:
            raise GeometryError("illum/detect must be matching (P, 3) arrays")
        if illum.shape[0] < 1:
            raise GeometryError("need at least one measurement pair")
        if self.num_bins < 1 or self.bin_width <= 0 or self.c <= 0:
            raise GeometryError("need num_bins >= 1, bin_width > 0 and c > 0")
        object.__setattr__(self, "illum", illum)
        object.__setattr__(self, "detect", detect)
        object.__setattr__(self, "bin_width", float(self.bin_width))
        object.__setattr__(self, "num_bins", int(self.num_bins))
        object.__setattr__(self, "time_origin", float(self.time_origin))
        object.__setattr__(self, "c", float(self.c))
        p = illum.shape[0]
        shape = self.scan_shape
        if shape is None:
            root = int(round(p**0.5))
            shape = (root, root) if root * root == p else (p, 1)
        shape = (int(shape[0]), int(shape[1]))
        if shape[0] * shape[1] != p:
            raise GeometryError(f"scan_shape {shape} incompatible with P={p}")
        object.__setattr__(self, "scan_shape", shape)

    @property
    def num_pairs(self):
        return self.illum.shape[0]

    @property
    def is_confocal(self):
        return bool(np.array_equal(self.illum, self.detect))

    @classmethod
    def confocal_grid(cls, xs, ys, bin_width, num_bins, time_origin=0.0, z=0.0, c=SPEED_OF_LIGHT):
        """Confocal rectangular scan at wall height z, x-major pair order."""
        pts = np.array([(x, y, z) for x in np.asarray(xs, float) for y in np.asarray(ys, float)])
        return cls(pts, pts, bin_width, num_bins, time_origin, c, (len(xs), len(ys)))

    def __eq__(self, other):
        if not isinstance(other, MeasurementGeometry):
            return NotImplemented
        return (
            np.array_equal(self.illum, other.illum)
            and np.array_equal(self.detect, other.detect)
            and self.bin_width == other.bin_width
            and self.num_bins == other.num_bins
            and self.time_origin == other.time_origin
            and self.c == other.c
            and self.scan_shape == other.scan_shape
        )

    def __hash__(self):
        return hash((self.illum.tobytes(), self.bin_width, self.num_bins))


@dataclass(frozen=True)
class PhotonHistogram:
    """Per-pair, per-bin photon event counts over N pulses."""

    geometry: MeasurementGeometry
    counts: np.ndarray
    pulses: int
    rng_id: str = ""
    seed: int = 0

    def __post_init__(self):
        counts = _frozen(self.counts, np.int64)
        p, q = self.geometry.num_pairs, self.geometry.num_bins
        if counts.shape != (p, q):
            raise GeometryError(f"counts shape {counts.shape} != ({p}, {q})")
        if self.pulses < 1:
            raise GeometryError("pulse count must be positive")
        if counts.min(initial=0) < 0 or counts.max(initial=0) > self.pulses:
            bad = np.argwhere((counts < 0) | (counts > self.pulses))[0]
            raise GeometryError(
                f"count at pair {bad[0]}, bin {bad[1]} outside [0, N={self.pulses}]"
            )
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "pulses", int(self.pulses))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class TransientSignal:
    """Per-pair, per-bin real-valued signal (estimated or simulated)."""

    geometry: MeasurementGeometry
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values, float)
        p, q = self.geometry.num_pairs, self.geometry.num_bins
        if vals.shape != (p, q):
            raise GeometryError(f"values shape {vals.shape} != ({p}, {q})")
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, geometry):
        return cls(geometry, np.zeros((geometry.num_pairs, geometry.num_bins)))

    def as_scan_tensor(self):
        """Values reshaped to (nx, ny, Q) following the scan layout."""
        nx, ny = self.geometry.scan_shape
        return self.values.reshape(nx, ny, self.geometry.num_bins)

    def replace_values(self, values):
        return TransientSignal(self.geometry, values)


def surface_to_volume(g: SurfaceG) -> AlbedoVolume:
    """Embed a surface element into its voxel volume.

    The result holds ``alpha[i, j]`` at ``(i, j, d[i, j])`` for foreground
    pixels and zero elsewhere.
    """
    values = np.zeros(g.grid.dims)
    ii, jj = np.nonzero(g.e)
    values[ii, jj, g.d[ii, jj]] = g.alpha[ii, jj]
    return AlbedoVolume(g.grid, values)


def volume_to_surface(u: AlbedoVolume) -> SurfaceG:
    """Invert :func:`surface_to_volume` on volumes with single-entry columns.

    Raises
    ------
    MembershipError
        If some pixel column carries two or more nonzero values, or any
        negative value.
    """
    vals = u.values
    neg = vals < 0
    if neg.any():
        i, j, _ = np.argwhere(neg)[0]
        raise MembershipError(
            (i, j), int(np.count_nonzero(vals[i, j])),
            f"pixel ({i}, {j}) column has a negative albedo entry",
        )
    nonzero = vals > 0
    per_pixel = nonzero.sum(axis=2)
    if per_pixel.max(initial=0) > 1:
        i, j = np.argwhere(per_pixel > 1)[0]
        raise MembershipError((i, j), int(per_pixel[i, j]))
    e = per_pixel == 1
    d = np.where(e, nonzero.argmax(axis=2), -1)
    ii, jj = np.nonzero(e)
    alpha = np.zeros(e.shape)
    alpha[ii, jj] = vals[ii, jj, d[ii, jj]]
    return SurfaceG(u.grid, e, d, alpha)


def make_plane_scene(grid: VoxelGrid, extent, depth_m: float, albedo: float = 1.0) -> SurfaceG:
    """Rectangular constant-depth plate.

    Parameters
    ----------
    extent : ((x0, x1), (y0, y1))
        Lateral bounds in meters; pixels whose centers fall inside are
        foreground. A zero-area extent yields an empty surface.
    depth_m : float
        Plate depth in meters, snapped to the nearest voxel plane.
    """
    (x0, x1), (y0, y1) = extent
    lo, hi = grid.extent
    if not (lo[2] <= depth_m <= hi[2]):
        raise GeometryError(f"plane depth {depth_m} m outside grid z range [{lo[2]}, {hi[2]}]")
    if albedo <= 0:
        raise GeometryError("plane albedo must be positive")
    k = grid.nearest_plane(depth_m)
    centers = grid.centers()[:, :, 0, :2]
    inside = (
        (centers[..., 0] >= x0) & (centers[..., 0] <= x1)
        & (centers[..., 1] >= y0) & (centers[..., 1] <= y1)
    )
    d = np.where(inside, k, -1)
    alpha = np.where(inside, float(albedo), 0.0)
    return SurfaceG(grid, inside, d, alpha)


def make_pyramid_scene(grid: VoxelGrid, base: float, height: float, standoff: float,
                       albedo: float = 1.0) -> SurfaceG:
    """Square pyramid facing the relay wall, apex toward the wall.

    The apex sits at depth ``standoff`` on the grid's lateral center; the
    square base (side ``base``) lies at ``standoff + height``. Pixels under
    the base take the depth of the pyramid face snapped to the nearest
    voxel plane; the rest are background.
    """
    lo, hi = grid.extent
    cx = 0.5 * (lo[0] + hi[0])
    cy = 0.5 * (lo[1] + hi[1])
    half = base / 2.0
    if half < 0 or height < 0:
        raise GeometryError("base and height must be nonnegative")
    if cx - half < lo[0] or cx + half > hi[0] or cy - half < lo[1] or cy + half > hi[1]:
        raise GeometryError("pyramid base exceeds the grid's lateral extent")
    if standoff < lo[2] or standoff + height > hi[2]:
        raise GeometryError("pyramid depth range exceeds the grid's z extent")
    centers = grid.centers()[:, :, 0, :2]
    cheb = np.maximum(np.abs(centers[..., 0] - cx), np.abs(centers[..., 1] - cy))
    inside = cheb <= half
    if half > 0:
        face_depth = standoff + height * cheb / half
    else:
        face_depth = np.full(cheb.shape, standoff)
    rel = (face_depth - grid.origin[2]) / grid.voxel_size[2] - 0.5
    k = np.clip(np.ceil(rel - 0.5).astype(np.int64), 0, grid.dims[2] - 1)
    d = np.where(inside, k, -1)
    alpha = np.where(inside, float(albedo), 0.0)
    return SurfaceG(grid, inside, d, alpha)
