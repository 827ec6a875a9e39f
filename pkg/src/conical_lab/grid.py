"""Discrete model of the flat torus and of fields on its upper half space.

Everything downstream lives on the periodic box [0,1)^n sampled at N^n cell
centers (midpoint rule), n in {1,2,3}, N a power of two, mesh width h = 1/N.
Time scales form a geometric ladder t_{k+1} = ratio * t_k confined to
[h/2, 1/2], so that a cone of aperture alpha truncated at the top level still
fits inside the torus when alpha * t_max <= 1/2.

Distances are torus distances (minimum over integer shifts). Balls are open:
a cell belongs to B(c, r) when the distance from its center to c is < r.
Radii above 1/2 are rejected, everything on the torus is within sqrt(n)/2.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

MAGIC = b"CLGF"
HEADER_BYTES = 16


def _is_power_of_two(m):
    return m >= 1 and (m & (m - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [0,1)^n with cells centered at (i + 1/2) h.

    Attributes:
        n: spatial dimension, 1, 2 or 3.
        N: cells per axis, a power of two, at least 8.
    """

    n: int
    N: int

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.n}")
        if self.N < 8 or not _is_power_of_two(self.N):
            raise ValueError(f"N must be a power of two >= 8, got {self.N}")

    @property
    def h(self):
        return 1.0 / self.N

    @property
    def shape(self):
        return (self.N,) * self.n

    @property
    def ncells(self):
        return self.N**self.n

    def cell_centers(self):
        """Array of shape (*shape, n) with the center of every cell."""
        axes = np.indices(self.shape).astype(float)
        return np.stack([(ax + 0.5) * self.h for ax in axes], axis=-1)

    def coarsen(self):
        """The grid with half the resolution (N/2 per axis)."""
        return Grid(self.n, self.N // 2)


def torus_distance(x, y):
    """Torus (min image) Euclidean distance between points of [0,1)^n.

    Broadcasts over leading axes; the trailing axis holds coordinates.
    Always <= sqrt(n)/2.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.abs(x - y) % 1.0
    d = np.minimum(d, 1.0 - d)
    return np.sqrt(np.sum(d * d, axis=-1))


def torus_distance_chebyshev(x, y):
    """Torus distance in the max (l-infinity) metric."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.abs(x - y) % 1.0
    d = np.minimum(d, 1.0 - d)
    return np.max(d, axis=-1)


@dataclass
class GridFunction:
    """Complex scalar field sampled at the cell centers of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values.view(float))):
            raise ValueError("values must be finite")

    def copy(self):
        return GridFunction(self.grid, self.values.copy())


def ball_cells(grid, center, radius):
    """Flat indices (row major, ascending) of cells with centers in B(center, radius).

    The ball is open; radius must lie in (0, 1/2]. radius = 1/2 keeps every
    cell except those at distance exactly 1/2 or more.
    """
    if not 0.0 < radius <= 0.5:
        raise ValueError(f"radius must be in (0, 1/2], got {radius}")
    center = np.asarray(center, dtype=float).reshape(grid.n)
    d = torus_distance(grid.cell_centers(), center)
    return np.flatnonzero(d.ravel() < radius)


def lp_norm_weighted(f, w, p):
    """Weighted norm (sum |f|^p w h^n)^(1/p) for p > 0.

    f may be a GridFunction or a plain array over the grid; w is a positive
    array over the same cells (pass 1.0 for Lebesgue measure).
    """
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    if isinstance(f, GridFunction):
        grid, vals = f.grid, f.values
    else:
        raise TypeError("f must be a GridFunction; use lp_norm_array for raw arrays")
    return lp_norm_array(vals, w, p, grid)


def lp_norm_array(values, w, p, grid):
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    w = np.asarray(w, dtype=float)
    if w.ndim and np.any(w <= 0):
        raise ValueError("weight must be strictly positive")
    return float(np.sum(np.abs(values) ** p * w) * grid.h**grid.n) ** (1.0 / p)


@dataclass(frozen=True)
class TimeGrid:
    """Geometric ladder of time scales tied to a grid.

    levels is strictly increasing with t_{k+1}/t_k constant (relative
    deviation below 1e-12), t_0 >= h/2 and t_{J-1} <= 1/2. The logarithmic
    measure element dt/t is constant: log(ratio) per level.
    """

    grid: Grid
    levels: tuple = field()

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if lv.ndim != 1 or lv.size < 2:
            raise ValueError("need at least two time levels")
        if np.any(np.diff(lv) <= 0):
            raise ValueError("levels must be strictly increasing")
        ratios = lv[1:] / lv[:-1]
        if np.max(np.abs(ratios / ratios[0] - 1.0)) > 1e-12:
            raise ValueError("levels must be geometric")
        h = self.grid.h
        if lv[0] < h / 2 - 1e-15:
            raise ValueError(f"t_0 = {lv[0]} below h/2 = {h / 2}")
        if lv[-1] > 0.5 + 1e-15:
            raise ValueError(f"t_max = {lv[-1]} above 1/2")
        object.__setattr__(self, "levels", tuple(float(t) for t in lv))

    @property
    def ratio(self):
        return self.levels[1] / self.levels[0]

    @property
    def dlog(self):
        """Measure of one level under dt/t, equal to log(ratio)."""
        return float(np.log(self.ratio))

    @property
    def times(self):
        return np.asarray(self.levels)

    def __len__(self):
        return len(self.levels)

    @classmethod
    def geometric(cls, grid, t0, ratio, count):
        if ratio <= 1:
            raise ValueError("ratio must exceed 1")
        return cls(grid, tuple(t0 * ratio**k for k in range(count)))

    @classmethod
    def spanning(cls, grid, t_min=None, t_max=0.5, per_octave=3):
        """Ladder from t_min (default h/2) up to at most t_max."""
        t0 = grid.h / 2 if t_min is None else t_min
        ratio = 2.0 ** (1.0 / per_octave)
        count = int(np.floor(np.log(t_max / t0) / np.log(ratio))) + 1
        return cls.geometric(grid, t0, ratio, max(count, 2))


@dataclass
class UpperHalfField:
    """Field F(y, t) on grid cells x time levels, stored as (J, *shape)."""

    grid: Grid
    tgrid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        want = (len(self.tgrid),) + self.grid.shape
        if self.values.shape != want:
            raise ValueError(f"values shape {self.values.shape}, expected {want}")
        if not np.all(np.isfinite(self.values.view(float) if np.iscomplexobj(self.values) else self.values)):
            raise ValueError("values must be finite")


# ---------------------------------------------------------------------------
# displacement kernels shared by the averaging and cone machinery


@lru_cache(maxsize=None)
def _displacement_distance(n, N):
    # distance from the zero displacement class to every class, offsets taken
    # in the minimal image; entry [j] is |min-image(j h)|_2
    shape = (N,) * n
    idx = np.indices(shape)
    d2 = np.zeros(shape)
    h = 1.0 / N
    for ax in range(n):
        m = np.minimum(idx[ax], N - idx[ax]) * h
        d2 = d2 + m * m
    return np.sqrt(d2)


@lru_cache(maxsize=None)
def ball_kernel(n, N, radius):
    """Indicator of the open ball over displacement classes, plus cell count.

    Returns (kernel, count): kernel has shape (N,)*n with kernel[j] = 1 when
    the min-image displacement j*h has length < radius. Circular convolution
    of a cell field with this kernel sums the field over each ball.
    """
    if not 0.0 < radius <= 0.5:
        raise ValueError(f"radius must be in (0, 1/2], got {radius}")
    ker = (_displacement_distance(n, N) < radius).astype(float)
    return ker, int(ker.sum())


@lru_cache(maxsize=None)
def ball_kernel_fft(n, N, radius):
    ker, cnt = ball_kernel(n, N, radius)
    return np.fft.rfftn(ker), cnt


def ball_sum(field, radius):
    """Sum of a real cell field over the ball around every cell center.

    Exact up to FFT roundoff; clipped below at the true minimum of 0 when the
    input is nonnegative.
    """
    n = field.ndim
    N = field.shape[0]
    kf, _ = ball_kernel_fft(n, N, radius)
    axes = tuple(range(field.ndim))
    out = np.fft.irfftn(np.fft.rfftn(field) * kf, s=field.shape, axes=axes)
    if np.all(field >= 0):
        np.maximum(out, 0.0, out=out)
    return out


@lru_cache(maxsize=None)
def ball_footprint(n, N, radius):
    """Boolean max-filter footprint for the open ball, one entry per class.

    Offsets run over -N/2 .. N/2-1 per axis so each displacement class
    appears exactly once; center of the window is the zero offset.
    """
    d = _displacement_distance(n, N)
    ker = d < radius
    # reorder classes so index N/2 + j holds displacement j
    return np.fft.fftshift(ker)


def ball_max(field, radius):
    """Max of a real cell field over the ball around every cell center."""
    from scipy.ndimage import maximum_filter

    n = field.ndim
    N = field.shape[0]
    fp = ball_footprint(n, N, radius)
    # fftshift puts the zero offset at index N/2, which is where the filter
    # centers an even window, so the default origin is already correct
    return maximum_filter(field, footprint=fp, mode="wrap")


# ---------------------------------------------------------------------------
# serialization: 16-byte header (magic, u32 n, u32 N, 4 reserved bytes), then
# row-major float64 little-endian (re, im) pairs


def write_gridfunction(f, path):
    """Write a GridFunction to the flat binary format."""
    header = MAGIC + struct.pack("<IIxxxx", f.grid.n, f.grid.N)
    payload = np.ascontiguousarray(f.values.astype("<c16")).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_gridfunction(path):
    """Read a GridFunction written by write_gridfunction."""
    with open(path, "rb") as fh:
        raw = fh.read()
    grid, payload = _parse_header(raw, path)
    want = grid.ncells * 16
    if len(payload) != want:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, expected {want}")
    vals = np.frombuffer(payload, dtype="<c16").reshape(grid.shape)
    return GridFunction(grid, vals.astype(complex))


def _parse_header(raw, path):
    if len(raw) < HEADER_BYTES or raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a grid function file (bad magic)")
    n, N = struct.unpack("<II", raw[4:12])
    return Grid(int(n), int(N)), raw[HEADER_BYTES:]
