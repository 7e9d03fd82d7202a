"""Signal patch machinery and the two sparse-transform updates.

The signal side works on the (nx, ny, Q) scan tensor: ``extract_patches``
tiles it into vectorized patches (zero-padding each axis up to a stride
multiple first) and ``aggregate_patches`` maps a patch matrix back,
averaging overlapping contributions. With stride equal to the patch shape
the two are exact inverses, which the per-bin signal update relies on.

The volume side stacks each reference block with its best-matching
neighbors and represents the stacks in a pair of orthogonal dictionaries
with hard-thresholded coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .errors import ConfigError

__all__ = [
    "PatchConfig",
    "SignalDictionary",
    "BlockConfig",
    "DictionaryTriplet",
    "extract_patches",
    "aggregate_patches",
    "hard_threshold_keep",
    "update_S",
    "block_match",
    "update_triplet",
    "triplet_residual",
]


@dataclass(frozen=True)
class PatchConfig:
    """Patch shape and strides for the scan tensor, zero-padded tiling."""

    shape: tuple[int, int, int]
    strides: tuple[int, int, int] | None = None

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        strides = shape if self.strides is None else tuple(int(n) for n in self.strides)
        if len(shape) != 3 or any(n < 1 for n in shape):
            raise ConfigError(f"patch shape must be three positive ints, got {shape}")
        if len(strides) != 3 or any(n < 1 for n in strides):
            raise ConfigError(f"strides must be three positive ints, got {strides}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "strides", strides)

    @property
    def non_overlapping(self):
        return self.shape == self.strides

    def padded_dims(self, dims):
        out = []
        for dim, r, s in zip(dims, self.shape, self.strides):
            if dim <= r:
                out.append(r)
            else:
                out.append(r + -(-(dim - r) // s) * s)
        return tuple(out)

    def origins(self, dims):
        """Lexicographic patch origins over the padded tensor."""
        padded = self.padded_dims(dims)
        return [
            range(0, padded[ax] - self.shape[ax] + 1, self.strides[ax])
            for ax in range(3)
        ]

    @classmethod
    def default_for(cls, scan_dims, time_patch=64):
        """Non-overlapping default: min(nx,3) x min(ny,3) x time_patch."""
        nx, ny, q = scan_dims
        return cls((min(nx, 3), min(ny, 3), min(q, time_patch)))


def _check_dims(cfg, dims):
    if len(dims) != 3:
        raise ConfigError(f"signal tensor must be 3D, got shape {dims}")


def extract_patches(tensor: np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """Vectorize all patches of the scan tensor into matrix columns.

    Column order is lexicographic in the patch origin; within a column
    the patch is laid out time-major with the x axis fastest, matching
    the Kronecker factor order of :class:`SignalDictionary`.
    """
    tensor = np.asarray(tensor, float)
    _check_dims(cfg, tensor.shape)
    padded = cfg.padded_dims(tensor.shape)
    work = np.zeros(padded)
    work[: tensor.shape[0], : tensor.shape[1], : tensor.shape[2]] = tensor
    rx, ry, rq = cfg.shape
    cols = []
    for i in cfg.origins(tensor.shape)[0]:
        for j in cfg.origins(tensor.shape)[1]:
            for k in cfg.origins(tensor.shape)[2]:
                patch = work[i : i + rx, j : j + ry, k : k + rq]
                cols.append(patch.transpose(2, 1, 0).reshape(-1))
    return np.stack(cols, axis=1)


def aggregate_patches(patches: np.ndarray, cfg: PatchConfig, dims) -> np.ndarray:
    """Map a patch matrix back onto a scan tensor of the given dims.

    Each entry receives the average of all patch contributions covering
    it; with a non-overlapping tiling this inverts
    :func:`extract_patches` bit-exactly. The padding region is discarded.
    """
    patches = np.asarray(patches, float)
    _check_dims(cfg, dims)
    origins = cfg.origins(dims)
    expected = len(origins[0]) * len(origins[1]) * len(origins[2])
    rx, ry, rq = cfg.shape
    if patches.shape != (rx * ry * rq, expected):
        raise ConfigError(
            f"patch matrix shape {patches.shape} does not match tiling "
            f"({rx * ry * rq}, {expected})"
        )
    padded = cfg.padded_dims(dims)
    acc = np.zeros(padded)
    cover = np.zeros(padded)
    col = 0
    for i in origins[0]:
        for j in origins[1]:
            for k in origins[2]:
                patch = patches[:, col].reshape(rq, ry, rx).transpose(2, 1, 0)
                acc[i : i + rx, j : j + ry, k : k + rq] += patch
                cover[i : i + rx, j : j + ry, k : k + rq] += 1.0
                col += 1
    out = acc[: dims[0], : dims[1], : dims[2]]
    cov = cover[: dims[0], : dims[1], : dims[2]]
    if (cov == 0).any():
        raise ConfigError("tiling leaves uncovered entries")
    return out / cov


def _dct_synthesis(n):
    # columns are the orthonormal DCT-II basis vectors
    return dct(np.eye(n), type=2, norm="ortho", axis=0).T


@dataclass(frozen=True)
class SignalDictionary:
    """Separable orthogonal transform ``D = D_q (x) D_y (x) D_x``."""

    d_x: np.ndarray
    d_y: np.ndarray
    d_q: np.ndarray

    @classmethod
    def dct_for(cls, patch_shape):
        rx, ry, rq = patch_shape
        return cls(_dct_synthesis(rx), _dct_synthesis(ry), _dct_synthesis(rq))

    @property
    def matrix(self):
        return np.kron(self.d_q, np.kron(self.d_y, self.d_x))

    def analyze(self, cols):
        """D^T @ cols."""
        return self.matrix.T @ cols

    def synthesize(self, coeffs):
        """D @ coeffs."""
        return self.matrix @ coeffs


def hard_threshold_keep(values: np.ndarray, keep_fraction: float):
    """Keep the ``round(keep_fraction * size)`` largest-magnitude entries.

    Returns the thresholded array and the magnitude of the smallest kept
    entry (0.0 when nothing is dropped, +inf when nothing is kept) --
    the threshold that realizes this sparsity as a hard-threshold rule.
    """
    if not 0.0 <= keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in [0, 1]")
    flat = np.abs(values).reshape(-1)
    k = int(round(keep_fraction * flat.size))
    if k == 0:
        return np.zeros_like(values), np.inf
    if k >= flat.size:
        return np.array(values, copy=True), 0.0
    idx = np.argpartition(flat, flat.size - k)[flat.size - k :]
    mask = np.zeros(flat.size, bool)
    mask[idx] = True
    out = np.where(mask.reshape(values.shape), values, 0.0)
    return out, float(flat[idx].min())


def update_S(ptau: np.ndarray, pau: np.ndarray, dictionary: SignalDictionary,
             keep_fraction: float):
    """Shared sparse coefficients of the estimated and simulated signals.

    With equal weights on the two quadratic terms the optimum analyzes the
    patch-average ``m = (ptau + pau) / 2``; the L0 penalty then keeps the
    largest-magnitude coefficients (the exact minimizer for an orthogonal
    dictionary at the induced threshold). Returns (S, threshold).
    """
    if ptau.shape != pau.shape:
        raise ValueError("patch matrices must have the same shape")
    coeffs = dictionary.analyze(0.5 * (ptau + pau))
    return hard_threshold_keep(coeffs, keep_fraction)


@dataclass(frozen=True)
class BlockConfig:
    """Volume block matching configuration."""

    block: int = 4
    neighbors: int = 16
    window: int = 5  # search half-width in voxels
    stride: int | None = None

    def __post_init__(self):
        if self.block < 1 or self.neighbors < 1 or self.window < 0:
            raise ConfigError("block, neighbors must be >= 1 and window >= 0")
        object.__setattr__(self, "stride", self.block if self.stride is None else int(self.stride))
        if self.stride < 1:
            raise ConfigError("stride must be positive")


def block_match(u_values: np.ndarray, cfg: BlockConfig):
    """Match each reference block with its closest blocks in a local window.

    Reference blocks tile the volume with the configured stride; for each
    one, every block origin within the Chebyshev window is ranked by
    squared distance (ties by lexicographic origin) and the best
    ``neighbors`` origins are kept. The reference block itself is at
    distance zero, so it leads the ranking unless tied.

    Returns (ref_origins (n, 3), matches (n, y, 3)) integer arrays.
    """
    u = np.asarray(u_values, float)
    b = cfg.block
    if any(dim < b for dim in u.shape):
        raise ConfigError(f"volume {u.shape} smaller than block size {b}")
    views = np.lib.stride_tricks.sliding_window_view(u, (b, b, b))
    limits = views.shape[:3]
    refs = [
        (i, j, k)
        for i in range(0, limits[0], cfg.stride)
        for j in range(0, limits[1], cfg.stride)
        for k in range(0, limits[2], cfg.stride)
    ]
    ref_arr = np.array(refs, np.int64).reshape(-1, 3)
    matches = np.empty((len(refs), cfg.neighbors, 3), np.int64)
    for n, (i, j, k) in enumerate(refs):
        sl = tuple(
            slice(max(0, o - cfg.window), min(limits[ax], o + cfg.window + 1))
            for ax, o in enumerate((i, j, k))
        )
        cand = views[sl]
        diff = cand - views[i, j, k]
        dist = np.einsum("...abc,...abc->...", diff, diff).reshape(-1)
        if dist.size < cfg.neighbors:
            raise ConfigError(
                f"window holds {dist.size} candidate blocks, need {cfg.neighbors}"
            )
        ii, jj, kk = np.meshgrid(
            np.arange(sl[0].start, sl[0].stop),
            np.arange(sl[1].start, sl[1].stop),
            np.arange(sl[2].start, sl[2].stop),
            indexing="ij",
        )
        order = np.lexsort((kk.reshape(-1), jj.reshape(-1), ii.reshape(-1), dist))
        top = order[: cfg.neighbors]
        matches[n, :, 0] = ii.reshape(-1)[top]
        matches[n, :, 1] = jj.reshape(-1)[top]
        matches[n, :, 2] = kk.reshape(-1)[top]
    return ref_arr, matches


def gather_block_stacks(u_values: np.ndarray, matches: np.ndarray, block: int):
    """Stack matched blocks column by column: (n_refs, b^3, y)."""
    u = np.asarray(u_values, float)
    n, y, _ = matches.shape
    out = np.empty((n, block**3, y))
    for r in range(n):
        for c in range(y):
            i, j, k = matches[r, c]
            out[r, :, c] = u[i : i + block, j : j + block, k : k + block].reshape(-1)
    return out


@dataclass(frozen=True)
class DictionaryTriplet:
    """Orthogonal block/stack transforms with sparse coefficients."""

    d_s: np.ndarray  # (x, x) orthogonal, local structure
    d_n: np.ndarray  # (y, y) orthogonal, non-local correlation
    c: np.ndarray  # (n_refs, x, y) sparse coefficients
    threshold: float = 0.0

    def __post_init__(self):
        for name in ("d_s", "d_n"):
            m = np.asarray(getattr(self, name), float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} must be square")
            if np.abs(m @ m.T - np.eye(m.shape[0])).max() > 1e-10:
                raise ValueError(f"{name} is not orthogonal")
            object.__setattr__(self, name, m)
        object.__setattr__(self, "c", np.asarray(self.c, float))

    @classmethod
    def initial(cls, x: int, y: int):
        """Deterministic DCT start before any data-driven sweep."""
        return cls(_dct_synthesis(x), _dct_synthesis(y), np.zeros((0, x, y)))


def _procrustes(m: np.ndarray, prev: np.ndarray) -> np.ndarray:
    """Orthogonal factor maximizing ``tr(D^T m)``; rank-deficient
    directions are filled to stay as close to ``prev`` as possible."""
    u, sig, vt = np.linalg.svd(m)
    tol = max(m.shape) * np.finfo(float).eps * (sig[0] if sig.size else 0.0)
    rank = int((sig > tol).sum())
    if rank == m.shape[0]:
        return u @ vt
    u0 = u[:, rank:]
    v0 = vt[rank:, :].T
    uf, _, vft = np.linalg.svd(u0.T @ prev @ v0)
    fill = uf @ vft
    core = np.zeros_like(m)
    core[: rank, : rank] = np.eye(rank)
    core[rank :, rank :] = fill
    return u @ core @ vt


def update_triplet(stacks: np.ndarray, prev: DictionaryTriplet,
                   keep_fraction: float, sweeps: int = 1) -> DictionaryTriplet:
    """Alternating sparse-coefficient / orthogonal-factor update.

    Per sweep: hard-threshold the analysis coefficients (one global
    magnitude quantile across all stacks), then refit ``d_s`` and ``d_n``
    by orthogonal Procrustes against the accumulated cross terms. The
    stack reconstruction residual is non-increasing along the sweep.
    """
    stacks = np.asarray(stacks, float)
    if stacks.ndim != 3 or stacks.shape[0] == 0:
        raise ValueError("need a nonempty (n, x, y) stack array")
    d_s, d_n = prev.d_s, prev.d_n
    c = prev.c
    threshold = prev.threshold
    for _ in range(sweeps):
        coeffs = np.einsum("xa,nab,by->nxy", d_s.T, stacks, d_n)
        c, threshold = hard_threshold_keep(coeffs, keep_fraction)
        m_s = np.einsum("nab,bc,nxc->ax", stacks, d_n, c)
        d_s = _procrustes(m_s, d_s)
        m_n = np.einsum("nab,ax,nxy->by", stacks, d_s, c)
        d_n = _procrustes(m_n, d_n)
    return DictionaryTriplet(d_s, d_n, c, threshold)


def triplet_residual(stacks: np.ndarray, triplet: DictionaryTriplet) -> float:
    """Sum of squared stack reconstruction errors."""
    recon = np.einsum("xa,nab,yb->nxy", triplet.d_s, triplet.c, triplet.d_n)
    return float(((np.asarray(stacks, float) - recon) ** 2).sum())
