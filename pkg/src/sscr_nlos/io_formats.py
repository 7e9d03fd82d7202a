"""On-disk formats: volumes, histograms, surfaces and PGM renders.

All three formats pair a short human-readable text header with a binary
or line-oriented payload and round-trip losslessly; writes are
deterministic byte streams. Numbers in headers use shortest
round-trip decimal (repr).
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError
from .geometry import (
    AlbedoVolume,
    MeasurementGeometry,
    PhotonHistogram,
    SurfaceG,
    VoxelGrid,
    surface_to_volume,
)

VOLUME_MAGIC = b"NLOSVOL1"
HIST_MAGIC = b"NLOSHIST1"
SURFACE_MAGIC = b"NLOSSURF1"

__all__ = [
    "write_volume",
    "read_volume",
    "write_histogram",
    "read_histogram",
    "write_surface",
    "read_surface",
    "render_view",
    "write_pgm",
    "read_pgm",
]


def _fmt(x):
    return repr(float(x))


class _Reader:
    """Byte-offset-tracking reader for the text header + binary payload."""

    def __init__(self, data: bytes, path=""):
        self.data = data
        self.pos = 0
        self.path = path

    def fail(self, message):
        raise FormatError(f"{self.path}: {message}", offset=self.pos)

    def line(self, what):
        end = self.data.find(b"\n", self.pos)
        if end < 0:
            self.fail(f"unterminated {what} line")
        raw = self.data[self.pos : end]
        self.pos = end + 1
        try:
            return raw.decode("ascii")
        except UnicodeDecodeError:
            self.fail(f"{what} line is not ASCII")

    def fields(self, what, count, conv):
        parts = self.line(what).split()
        if len(parts) != count:
            self.fail(f"{what} line needs {count} fields, got {len(parts)}")
        try:
            return [conv(p) for p in parts]
        except ValueError:
            self.fail(f"{what} line holds a malformed value")

    def payload(self, nbytes, what):
        if len(self.data) - self.pos < nbytes:
            missing = nbytes - (len(self.data) - self.pos)
            self.pos = len(self.data)
            self.fail(f"truncated {what} payload ({missing} bytes missing)")
        out = self.data[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return out

    def magic(self, expected):
        got = self.line("magic")
        if got.encode() != expected:
            self.pos = 0
            self.fail(f"bad magic {got!r}, expected {expected.decode()!r}")


def write_volume(path, volume: AlbedoVolume):
    g = volume.grid
    header = (
        VOLUME_MAGIC.decode()
        + "\n"
        + " ".join(str(n) for n in g.dims)
        + "\n"
        + " ".join(_fmt(v) for v in g.voxel_size)
        + "\n"
        + " ".join(_fmt(v) for v in g.origin)
        + "\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(volume.values, "<f8").tobytes())


def read_volume(path) -> AlbedoVolume:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), str(path))
    r.magic(VOLUME_MAGIC)
    i, j, k = r.fields("dims", 3, int)
    voxel = r.fields("voxel_size", 3, float)
    origin = r.fields("origin", 3, float)
    raw = r.payload(8 * i * j * k, "volume")
    if r.pos != len(r.data):
        r.fail(f"{len(r.data) - r.pos} trailing bytes after payload")
    values = np.frombuffer(raw, "<f8").reshape(i, j, k)
    return AlbedoVolume(VoxelGrid((i, j, k), origin, voxel), values)


def write_histogram(path, hist: PhotonHistogram):
    geo = hist.geometry
    lines = [
        HIST_MAGIC.decode(),
        f"{geo.num_pairs} {geo.num_bins} {hist.pulses}",
        f"{_fmt(geo.bin_width)} {_fmt(geo.time_origin)}",
        f"{hist.rng_id or 'unknown'} {hist.seed}",
    ]
    for p in range(geo.num_pairs):
        ix, iy, iz = geo.illum[p]
        dx, dy, dz = geo.detect[p]
        lines.append(" ".join(_fmt(v) for v in (ix, iy, iz, dx, dy, dz)))
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(hist.counts, "<u4").tobytes())


def read_histogram(path) -> PhotonHistogram:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), str(path))
    r.magic(HIST_MAGIC)
    p, q, pulses = r.fields("P Q N", 3, int)
    bin_width, time_origin = r.fields("timing", 2, float)
    rng_parts = r.fields("rng", 2, str)
    rng_id, seed = rng_parts[0], int(rng_parts[1])
    illum = np.empty((p, 3))
    detect = np.empty((p, 3))
    for n in range(p):
        vals = r.fields(f"pair {n}", 6, float)
        illum[n] = vals[:3]
        detect[n] = vals[3:]
    payload_start = r.pos
    raw = r.payload(4 * p * q, "count")
    if r.pos != len(r.data):
        r.fail(f"{len(r.data) - r.pos} trailing bytes after payload")
    counts = np.frombuffer(raw, "<u4").reshape(p, q).astype(np.int64)
    over = np.argwhere(counts > pulses)
    if over.size:
        bp, bq = over[0]
        raise FormatError(
            f"{path}: count {counts[bp, bq]} at pair {bp}, bin {bq} exceeds N={pulses}",
            offset=payload_start + 4 * (int(bp) * q + int(bq)),
        )
    geo = MeasurementGeometry(illum, detect, bin_width, q, time_origin)
    return PhotonHistogram(geo, counts, pulses, rng_id, seed)


def write_surface(path, surface: SurfaceG):
    ni, nj = surface.grid.dims[:2]
    lines = [SURFACE_MAGIC.decode(), f"{ni} {nj}"]
    for i in range(ni):
        for j in range(nj):
            if surface.e[i, j]:
                lines.append(f"1 {surface.d[i, j]} {_fmt(surface.alpha[i, j])}")
            else:
                lines.append("0 - -")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))


def read_surface(path, grid: VoxelGrid | None = None) -> SurfaceG:
    """Parse a surface file.

    The format does not carry the volume grid; pass ``grid`` to attach
    one, otherwise a nominal unit-spacing grid just deep enough for the
    stored depth indices is used.
    """
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), str(path))
    r.magic(SURFACE_MAGIC)
    ni, nj = r.fields("I J", 2, int)
    e = np.zeros((ni, nj), bool)
    d = -np.ones((ni, nj), np.int64)
    alpha = np.zeros((ni, nj))
    for i in range(ni):
        for j in range(nj):
            parts = r.fields(f"pixel ({i}, {j})", 3, str)
            if parts[0] == "0":
                if parts[1] != "-" or parts[2] != "-":
                    r.fail(f"background pixel ({i}, {j}) must read '0 - -'")
            elif parts[0] == "1":
                if parts[1] == "-" or parts[2] == "-":
                    r.fail(f"foreground pixel ({i}, {j}) is missing depth or albedo")
                e[i, j] = True
                try:
                    d[i, j] = int(parts[1])
                    alpha[i, j] = float(parts[2])
                except ValueError:
                    r.fail(f"malformed depth/albedo at pixel ({i}, {j})")
            else:
                r.fail(f"indicator at pixel ({i}, {j}) must be 0 or 1")
    if r.pos != len(r.data):
        r.fail("trailing bytes after pixel records")
    if grid is None:
        k = int(d.max()) + 1 if e.any() else 1
        grid = VoxelGrid((ni, nj, max(k, 1)), np.zeros(3), np.ones(3))
    elif grid.dims[:2] != (ni, nj):
        raise FormatError(f"{path}: surface is {ni}x{nj}, grid expects {grid.dims[:2]}")
    try:
        return SurfaceG(grid, e, d, alpha)
    except Exception as exc:
        raise FormatError(f"{path}: invalid surface payload: {exc}") from exc


def render_view(obj, view: str) -> np.ndarray:
    """Maximum-intensity projection of a volume (or embedded surface).

    front: x right, y up; top: x right, depth downward; side: depth
    right, y up. Values are scaled linearly onto 16-bit gray.
    """
    if isinstance(obj, SurfaceG):
        obj = surface_to_volume(obj)
    vals = obj.values
    if view == "front":
        img = vals.max(axis=2)[:, ::-1].T  # rows: y top-down, cols: x
    elif view == "top":
        img = vals.max(axis=1).T  # rows: depth away from wall, cols: x
    elif view == "side":
        img = vals.max(axis=0)[::-1, :]  # rows: y top-down, cols: depth
    else:
        raise ValueError(f"unknown view {view!r}, expected front, top or side")
    top_val = float(img.max())
    if top_val <= 0:
        return np.zeros(img.shape, np.uint16)
    return np.round(np.clip(img, 0, None) / top_val * 65535.0).astype(np.uint16)


def write_pgm(path, image: np.ndarray):
    """16-bit binary PGM (P5), big-endian samples per the netpbm spec."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("image must be 2D")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.astype(">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), str(path))
    if r.line("magic") != "P5":
        r.pos = 0
        r.fail("not a binary PGM file")
    w, h = r.fields("size", 2, int)
    maxval = r.fields("maxval", 1, int)[0]
    if maxval != 65535:
        r.fail(f"expected 16-bit PGM, got maxval {maxval}")
    raw = r.payload(2 * w * h, "pixel")
    return np.frombuffer(raw, ">u2").reshape(h, w)
