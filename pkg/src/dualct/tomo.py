"""Scan geometry, ray-driven projection, view masking and FBP.

The forward projector traverses each ray through the pixel grid
(Siddon-style), recording exact chord lengths. The weights are assembled
once per geometry into a sparse matrix, so the back-projector is the exact
transpose of the forward projector by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, InputError

PARALLEL = "parallel"
FAN = "fan"


@dataclass(frozen=True)
class GridSpec:
    """Regular isotropic pixel grid, centered at ``origin``."""

    nx: int
    ny: int
    pixel_size: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigError(f"grid needs nx, ny >= 1, got ({self.nx}, {self.ny})")
        if not self.pixel_size > 0:
            raise ConfigError(f"pixel_size must be positive, got {self.pixel_size}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the physical bounding box."""
        ox, oy = self.origin
        hx = 0.5 * self.nx * self.pixel_size
        hy = 0.5 * self.ny * self.pixel_size
        return (ox - hx, ox + hx, oy - hy, oy + hy)

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical x and y coordinates of pixel centers (1-D each)."""
        xmin, _, ymin, _ = self.extent
        h = self.pixel_size
        xs = xmin + (np.arange(self.nx) + 0.5) * h
        ys = ymin + (np.arange(self.ny) + 0.5) * h
        return xs, ys


@dataclass(frozen=True)
class ScanGeometry:
    """Acquisition geometry: view angles, detector array, and the image grid.

    ``det_spacing`` is a length for parallel beam and an angular increment
    (radians) for the equiangular fan. ``source_radius`` and
    ``source_to_detector`` are only meaningful for the fan.
    """

    kind: str
    angles: tuple[float, ...]
    n_dets: int
    det_spacing: float
    grid: GridSpec
    source_radius: float = 0.0
    source_to_detector: float = 0.0

    def __post_init__(self):
        if self.kind not in (PARALLEL, FAN):
            raise ConfigError(f"unknown geometry kind {self.kind!r}")
        if self.n_dets < 1:
            raise ConfigError("n_dets must be >= 1")
        if not self.det_spacing > 0:
            raise ConfigError("det_spacing must be positive")
        a = np.asarray(self.angles, dtype=float)
        if a.ndim != 1 or a.size == 0:
            raise ConfigError("angles must be a non-empty 1-D sequence")
        if np.any(np.diff(a) <= 0):
            raise ConfigError("angles must be strictly increasing")
        if self.kind == FAN:
            if not (self.source_radius > 0 and self.source_to_detector > 0):
                raise ConfigError("fan beam needs positive source_radius and source_to_detector")

    @property
    def n_views_full(self) -> int:
        return len(self.angles)

    @property
    def angular_period(self) -> float:
        return np.pi if self.kind == PARALLEL else 2.0 * np.pi

    def angles_array(self) -> np.ndarray:
        return np.asarray(self.angles, dtype=float)

    def fingerprint(self) -> tuple:
        return (
            self.kind,
            self.angles,
            self.n_dets,
            self.det_spacing,
            self.grid,
            self.source_radius,
            self.source_to_detector,
        )


def parallel_geometry(n_views, n_dets, grid, det_spacing=None):
    """Evenly spaced parallel-beam geometry covering [0, pi).

    Default detector pitch covers the grid diagonal.
    """
    if det_spacing is None:
        xmin, xmax, ymin, ymax = grid.extent
        diag = np.hypot(xmax - xmin, ymax - ymin)
        det_spacing = diag / n_dets
    angles = tuple(np.arange(n_views) * (np.pi / n_views))
    return ScanGeometry(PARALLEL, angles, n_dets, det_spacing, grid)


def fan_geometry(n_views, n_dets, grid, det_spacing=None, source_radius=None, source_to_detector=None):
    """Evenly spaced equiangular fan-beam geometry covering [0, 2*pi)."""
    xmin, xmax, ymin, ymax = grid.extent
    radius = 0.5 * np.hypot(xmax - xmin, ymax - ymin)
    if source_radius is None:
        source_radius = 2.0 * radius
    if source_to_detector is None:
        source_to_detector = 2.0 * source_radius
    if det_spacing is None:
        # full fan angle subtending the grid circle, small safety margin
        half_fan = np.arcsin(min(0.999, radius / source_radius)) * 1.05
        det_spacing = 2.0 * half_fan / n_dets
    angles = tuple(np.arange(n_views) * (2.0 * np.pi / n_views))
    return ScanGeometry(FAN, angles, n_dets, det_spacing, grid,
                        source_radius=source_radius, source_to_detector=source_to_detector)


@dataclass
class Image:
    """Scalar field on a pixel grid; ``values`` has shape (ny, nx)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(self.values)):
            raise InputError("image contains non-finite values")

    def copy(self) -> "Image":
        return Image(self.grid, self.values.copy())


@dataclass
class Sinogram:
    """Projection data on a (view x detector) grid.

    ``view_indices`` names the subset of the geometry's full view set this
    sinogram holds; a full-view sinogram has ``view_indices == range(n_views)``.
    """

    geometry: ScanGeometry
    view_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.view_indices = np.asarray(self.view_indices, dtype=int)
        n = self.view_indices.size
        if n == 0:
            raise InputError("sinogram must hold at least one view")
        if np.any(np.diff(self.view_indices) <= 0):
            raise InputError("view_indices must be sorted and unique")
        if self.view_indices[-1] >= self.geometry.n_views_full:
            raise InputError("view index out of range for geometry")
        self.values = np.asarray(self.values, dtype=float).reshape(n, self.geometry.n_dets)
        if not np.all(np.isfinite(self.values)):
            raise InputError("sinogram contains non-finite values")

    @property
    def n_views(self) -> int:
        return self.view_indices.size

    @property
    def is_full_view(self) -> bool:
        return self.n_views == self.geometry.n_views_full

    def copy(self) -> "Sinogram":
        return Sinogram(self.geometry, self.view_indices.copy(), self.values.copy())


@dataclass(frozen=True)
class ViewMask:
    """Selection operator over the full view set (the subsampler P0)."""

    n_views_full: int
    selected: tuple[int, ...]

    def __post_init__(self):
        s = np.asarray(self.selected, dtype=int)
        if s.size == 0:
            raise ConfigError("view mask must select at least one view")
        if np.any(np.diff(s) <= 0):
            raise ConfigError("mask indices must be sorted and unique")
        if s[0] < 0 or s[-1] >= self.n_views_full:
            raise ConfigError("mask index out of range")

    @property
    def n_selected(self) -> int:
        return len(self.selected)

    def indices(self) -> np.ndarray:
        return np.asarray(self.selected, dtype=int)


def uniform_mask(n_views_full: int, n_keep: int) -> ViewMask:
    """Keep ``n_keep`` uniformly strided views out of ``n_views_full``.

    When the stride does not divide evenly the nearest round-robin indices
    are used.
    """
    if n_keep < 1 or n_keep > n_views_full:
        raise ConfigError(f"cannot keep {n_keep} of {n_views_full} views")
    if n_views_full % n_keep == 0:
        idx = np.arange(n_keep) * (n_views_full // n_keep)
    else:
        idx = np.unique(np.round(np.arange(n_keep) * n_views_full / n_keep).astype(int))
    return ViewMask(n_views_full, tuple(int(i) for i in idx))


# ---------------------------------------------------------------------------
# Ray tracing and the system matrix
# ---------------------------------------------------------------------------

def _trace_segment(p0, p1, grid: GridSpec):
    """Exact chord lengths of the segment p0 -> p1 through the grid cells.

    Returns (flat pixel indices, lengths). Parametrize p(a) = p0 + a*(p1-p0),
    collect all axis-plane crossings inside [0, 1], and read off the cell of
    each inter-crossing midpoint.
    """
    xmin, xmax, ymin, ymax = grid.extent
    h = grid.pixel_size
    d = p1 - p0
    seg_len = float(np.hypot(d[0], d[1]))
    if seg_len == 0.0:
        return np.empty(0, dtype=int), np.empty(0)

    a_lo, a_hi = 0.0, 1.0
    for axis, (lo, hi) in enumerate(((xmin, xmax), (ymin, ymax))):
        if d[axis] != 0.0:
            a1 = (lo - p0[axis]) / d[axis]
            a2 = (hi - p0[axis]) / d[axis]
            a_lo = max(a_lo, min(a1, a2))
            a_hi = min(a_hi, max(a1, a2))
        elif not (lo <= p0[axis] <= hi):
            return np.empty(0, dtype=int), np.empty(0)
    if a_lo >= a_hi:
        return np.empty(0, dtype=int), np.empty(0)

    crossings = [np.array([a_lo, a_hi])]
    for axis, lo, n in ((0, xmin, grid.nx), (1, ymin, grid.ny)):
        if d[axis] != 0.0:
            a = (lo + np.arange(n + 1) * h - p0[axis]) / d[axis]
            crossings.append(a[(a > a_lo) & (a < a_hi)])
    alphas = np.unique(np.concatenate(crossings))

    lengths = np.diff(alphas) * seg_len
    mids = p0[None, :] + 0.5 * (alphas[:-1] + alphas[1:])[:, None] * d[None, :]
    ix = np.floor((mids[:, 0] - xmin) / h).astype(int)
    iy = np.floor((mids[:, 1] - ymin) / h).astype(int)
    ok = (ix >= 0) & (ix < grid.nx) & (iy >= 0) & (iy < grid.ny) & (lengths > 1e-12 * h)
    return (iy[ok] * grid.nx + ix[ok]), lengths[ok]


def _ray_endpoints(geo: ScanGeometry, view: int, det: int, t_offset=0.0):
    """Start and end points of the center ray for (view, detector bin)."""
    theta = geo.angles[view]
    t = (det - 0.5 * (geo.n_dets - 1)) * geo.det_spacing + t_offset
    ox, oy = geo.grid.origin
    xmin, xmax, ymin, ymax = geo.grid.extent
    diag = np.hypot(xmax - xmin, ymax - ymin)
    if geo.kind == PARALLEL:
        n = np.array([np.cos(theta), np.sin(theta)])
        d = np.array([-np.sin(theta), np.cos(theta)])
        base = np.array([ox, oy]) + t * n
        return base - diag * d, base + diag * d
    # equiangular fan: t is the fan angle of the ray within the fan
    src = np.array([ox + geo.source_radius * np.cos(theta),
                    oy + geo.source_radius * np.sin(theta)])
    direction = -np.array([np.cos(theta + t), np.sin(theta + t)])
    reach = geo.source_radius + geo.source_to_detector + diag
    return src, src + reach * direction


_MATRIX_CACHE: dict[tuple, sp.csr_matrix] = {}


def system_matrix(geo: ScanGeometry, supersample: int = 1) -> sp.csr_matrix:
    """Sparse (n_views*n_dets, nx*ny) matrix of ray/pixel chord lengths.

    ``supersample`` > 1 averages that many evenly offset sub-rays per
    detector bin. Cached per geometry.
    """
    if supersample < 1:
        raise ConfigError("supersample must be >= 1")
    key = geo.fingerprint() + (supersample,)
    cached = _MATRIX_CACHE.get(key)
    if cached is not None:
        return cached

    grid = geo.grid
    n_rows = geo.n_views_full * geo.n_dets
    offsets = ((np.arange(supersample) + 0.5) / supersample - 0.5) * geo.det_spacing
    w_sub = 1.0 / supersample

    rows, cols, vals = [], [], []
    for v in range(geo.n_views_full):
        for j in range(geo.n_dets):
            r = v * geo.n_dets + j
            for off in offsets:
                p0, p1 = _ray_endpoints(geo, v, j, t_offset=off)
                idx, ln = _trace_segment(p0, p1, grid)
                if idx.size:
                    rows.append(np.full(idx.size, r))
                    cols.append(idx)
                    vals.append(ln * w_sub)
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    else:
        rows = cols = np.empty(0, dtype=int)
        vals = np.empty(0)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, grid.nx * grid.ny))
    mat.sum_duplicates()
    _MATRIX_CACHE[key] = mat
    return mat


def forward_project(img: Image, geo: ScanGeometry, supersample: int = 1) -> Sinogram:
    """Line-integral projection of ``img`` over every view of ``geo``."""
    if img.grid != geo.grid:
        raise ConfigError("image grid does not match geometry grid")
    a = system_matrix(geo, supersample)
    vals = a @ img.values.ravel()
    return Sinogram(geo, np.arange(geo.n_views_full), vals.reshape(geo.n_views_full, geo.n_dets))


def back_project(sino: Sinogram, geo: ScanGeometry, supersample: int = 1) -> Image:
    """Exact transpose of :func:`forward_project`.

    Sparse-view input is zero-filled onto the full view set first, so this
    also realizes A^T P0^T.
    """
    if sino.geometry != geo:
        raise ConfigError("sinogram geometry does not match")
    a = system_matrix(geo, supersample)
    full = np.zeros((geo.n_views_full, geo.n_dets))
    full[sino.view_indices] = sino.values
    vals = a.T @ full.ravel()
    return Image(geo.grid, vals.reshape(geo.grid.shape))


# ---------------------------------------------------------------------------
# View subsampling / upsampling
# ---------------------------------------------------------------------------

def subsample_views(sino: Sinogram, mask: ViewMask) -> Sinogram:
    """Restrict a full-view sinogram to the masked views (apply P0)."""
    if mask.n_views_full != sino.geometry.n_views_full:
        raise ConfigError("mask does not match geometry view count")
    if not sino.is_full_view:
        raise InputError("subsample_views expects a full-view sinogram")
    idx = mask.indices()
    return Sinogram(sino.geometry, idx, sino.values[idx])


def zero_fill_views(sparse: Sinogram) -> Sinogram:
    """Scatter a sparse-view sinogram onto the full view set (apply P0^T)."""
    geo = sparse.geometry
    full = np.zeros((geo.n_views_full, geo.n_dets))
    full[sparse.view_indices] = sparse.values
    return Sinogram(geo, np.arange(geo.n_views_full), full)


def upsample_sinogram_linear(sparse: Sinogram, n_views_full: int | None = None) -> Sinogram:
    """Per-detector-bin linear interpolation along the view axis.

    Views are treated as periodic in the angular index; retained views are
    reproduced exactly.
    """
    geo = sparse.geometry
    if n_views_full is None:
        n_views_full = geo.n_views_full
    if n_views_full != geo.n_views_full:
        raise ConfigError("target view count must match the geometry")
    if sparse.n_views < 2:
        raise InputError("need at least 2 views to interpolate")
    sel = sparse.view_indices.astype(float)
    # wrap the first retained view past the end so every gap is bracketed
    xp = np.concatenate([sel, [sel[0] + n_views_full]])
    fp = np.vstack([sparse.values, sparse.values[:1]])
    targets = (np.arange(n_views_full) - sel[0]) % n_views_full + sel[0]
    out = np.empty((n_views_full, geo.n_dets))
    for d in range(geo.n_dets):
        out[:, d] = np.interp(targets, xp, fp[:, d])
    return Sinogram(geo, np.arange(n_views_full), out)


# ---------------------------------------------------------------------------
# FBP
# ---------------------------------------------------------------------------

def _ramp_filter(n_pad: int, spacing: float, window: str) -> np.ndarray:
    """Frequency response of the band-limited ramp (optionally Hann-apodized)."""
    # real-space ramp taps, wrap-around layout
    f = np.zeros(n_pad)
    f[0] = 1.0 / (4.0 * spacing**2)
    odd = np.arange(1, n_pad // 2 + 1, 2)
    f[odd] = -1.0 / (np.pi * odd * spacing) ** 2
    f[-odd] = f[odd]
    resp = np.real(np.fft.fft(f)) * spacing
    if window == "hann":
        resp *= 0.5 * (1.0 + np.cos(2.0 * np.pi * np.fft.fftfreq(n_pad)))
    elif window != "ram-lak":
        raise ConfigError(f"unknown FBP window {window!r}")
    return resp


def _view_weights(angles: np.ndarray, period: float) -> np.ndarray:
    """Angular quadrature weight per view: half the gap to each neighbor."""
    if angles.size == 1:
        return np.array([period])
    ext = np.concatenate([[angles[-1] - period], angles, [angles[0] + period]])
    return 0.5 * (ext[2:] - ext[:-2])


def fbp_reconstruct(sino: Sinogram, geo: ScanGeometry, window: str = "ram-lak") -> Image:
    """Filtered back-projection (parallel beam only).

    Views are ramp-filtered in the frequency domain (zero-padded to the next
    power of two >= 2*n_dets) and back-projected with per-view angular
    weights, so sparse view sets are handled by their angular gaps.
    """
    if geo.kind != PARALLEL:
        raise ConfigError("FBP supports parallel-beam geometry only")
    if sino.geometry != geo:
        raise ConfigError("sinogram geometry does not match")
    n_dets = geo.n_dets
    n_pad = 1 << int(np.ceil(np.log2(max(2 * n_dets, 2))))
    resp = _ramp_filter(n_pad, geo.det_spacing, window)

    padded = np.zeros((sino.n_views, n_pad))
    padded[:, :n_dets] = sino.values
    filtered = np.real(np.fft.ifft(np.fft.fft(padded, axis=1) * resp[None, :], axis=1))[:, :n_dets]

    angles = geo.angles_array()[sino.view_indices]
    weights = _view_weights(angles, geo.angular_period)

    xs, ys = geo.grid.pixel_centers()
    ox, oy = geo.grid.origin
    xg, yg = np.meshgrid(xs - ox, ys - oy)
    recon = np.zeros(geo.grid.shape)
    half = 0.5 * (n_dets - 1)
    for v in range(sino.n_views):
        th = angles[v]
        t = (xg * np.cos(th) + yg * np.sin(th)) / geo.det_spacing + half
        lo = np.floor(t).astype(int)
        frac = t - lo
        lo0 = np.clip(lo, 0, n_dets - 1)
        lo1 = np.clip(lo + 1, 0, n_dets - 1)
        inside = (t >= 0) & (t <= n_dets - 1)
        prof = filtered[v]
        recon += weights[v] * inside * ((1.0 - frac) * prof[lo0] + frac * prof[lo1])
    return Image(geo.grid, recon)
