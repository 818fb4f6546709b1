"""Periodic grids, two-component real fields and Fourier-collocation primitives.

Conventions used throughout the package:

* a field is the pair (real part, imaginary part) of a complex-valued function,
  stored as a (2, N) float64 array on a uniform periodic grid;
* the grid covers M cells of length T, so the domain length is L = M*T and the
  co-periodic one-cell grid is simply the M=1 case with the same spacing;
* wavenumbers are k_j = 2*pi*j/L in numpy fft ordering; the Nyquist mode is
  zeroed for odd derivative orders;
* discrete L2 products use the rectangle rule h*sum(...), which on a periodic
  grid is the trapezoid rule and is Parseval-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import UnsupportedOrderError

__all__ = [
    "PeriodicGrid",
    "RealPairField",
    "spectral_derivative",
    "norm",
    "interpolate",
    "compose_shift",
    "dealias_modes",
    "resolvedness_tail",
    "write_field",
    "read_field",
]

MAX_DERIVATIVE_ORDER = 4


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic grid over M cells of length T (N points total, N even)."""

    num_points: int
    cell_period: float
    num_cells: int = 1

    def __post_init__(self):
        if self.num_points <= 0 or self.num_points % 2 != 0:
            raise ValueError("num_points must be a positive even integer")
        if self.num_cells <= 0 or self.num_points % self.num_cells != 0:
            raise ValueError("num_points must be an integer multiple of num_cells")
        if not self.cell_period > 0:
            raise ValueError("cell_period must be positive")

    @property
    def length(self):
        return self.num_cells * self.cell_period

    @property
    def spacing(self):
        return self.length / self.num_points

    @property
    def points_per_cell(self):
        return self.num_points // self.num_cells

    @property
    def x(self):
        return self.spacing * np.arange(self.num_points)

    @property
    def wavenumbers(self):
        """k_j = 2*pi*j/L in fft ordering (Nyquist at -N/2)."""
        return 2.0 * np.pi * np.fft.fftfreq(self.num_points, d=self.spacing)

    def cell_grid(self):
        """The one-cell (M=1) grid with the same spacing."""
        return PeriodicGrid(self.points_per_cell, self.cell_period, 1)

    def compatible(self, other):
        return (
            self.num_points == other.num_points
            and self.num_cells == other.num_cells
            and np.isclose(self.cell_period, other.cell_period, rtol=1e-14, atol=0.0)
        )


@dataclass
class RealPairField:
    """Two real components (u_r, u_i) sampled on a periodic grid."""

    grid: PeriodicGrid
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=float)
        if self.data.shape != (2, self.grid.num_points):
            raise ValueError(
                f"field data must have shape (2, {self.grid.num_points}), got {self.data.shape}"
            )

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((2, grid.num_points)))

    @classmethod
    def from_complex(cls, grid, values):
        values = np.asarray(values)
        return cls(grid, np.stack([values.real.astype(float), values.imag.astype(float)]))

    @classmethod
    def from_components(cls, grid, real, imag):
        return cls(grid, np.stack([np.asarray(real, float), np.asarray(imag, float)]))

    def as_complex(self):
        return self.data[0] + 1j * self.data[1]

    @property
    def is_finite(self):
        return bool(np.all(np.isfinite(self.data)))

    def copy(self):
        return RealPairField(self.grid, self.data.copy())

    def tile(self, num_cells):
        """Periodic extension of a one-cell field to num_cells cells (exact)."""
        if self.grid.num_cells != 1:
            raise ValueError("tile expects a one-cell field")
        grid = PeriodicGrid(self.grid.num_points * num_cells, self.grid.cell_period, num_cells)
        return RealPairField(grid, np.tile(self.data, (1, num_cells)))

    def __add__(self, other):
        return RealPairField(self.grid, self.data + other.data)

    def __sub__(self, other):
        return RealPairField(self.grid, self.data - other.data)

    def __mul__(self, scalar):
        return RealPairField(self.grid, self.data * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return RealPairField(self.grid, -self.data)


def _derivative_multiplier(grid, order):
    k = grid.wavenumbers
    mult = (1j * k) ** order
    if order % 2 == 1:
        # the Nyquist mode has no well-defined odd derivative on an even grid
        mult[grid.num_points // 2] = 0.0
    return mult


def spectral_derivative(f, order=1):
    """order-th spatial derivative computed mode-wise in Fourier space."""
    if not 0 <= order <= MAX_DERIVATIVE_ORDER:
        raise UnsupportedOrderError(f"derivative order {order} not supported (max {MAX_DERIVATIVE_ORDER})")
    if order == 0:
        return f.copy()
    mult = _derivative_multiplier(f.grid, order)
    out = np.empty_like(f.data)
    for c in range(2):
        out[c] = np.fft.ifft(mult * np.fft.fft(f.data[c])).real
    return RealPairField(f.grid, out)


_SOBOLEV_ORDER = {"L2": 0, "H1": 1, "H2": 2, "H3": 3}


def norm(f, kind="L2"):
    """Discrete L2 / Hk / Linf norm of a pair field.

    Hk is the literal sum-of-derivatives form sqrt(sum_{j<=k} ||d^j f||_L2^2);
    Linf is the grid maximum of the pointwise Euclidean norm of the pair.
    """
    if kind == "Linf":
        return float(np.sqrt((f.data**2).sum(axis=0)).max())
    if kind == "L2":
        return float(np.sqrt(f.grid.spacing * (f.data**2).sum()))
    if kind in _SOBOLEV_ORDER:
        total = 0.0
        for j in range(_SOBOLEV_ORDER[kind] + 1):
            total += norm(spectral_derivative(f, j), "L2") ** 2
        return float(np.sqrt(total))
    raise ValueError(f"unknown norm kind {kind!r}")


def inner_l2(f, g):
    """Real L2 pairing h*sum(f.g) of two pair fields on the same grid."""
    return float(f.grid.spacing * (f.data * g.data).sum())


def scalar_derivative(grid, values, order=1):
    """Spectral derivative of a real scalar field (orders up to 4)."""
    if not 0 <= order <= MAX_DERIVATIVE_ORDER:
        raise UnsupportedOrderError(f"derivative order {order} not supported (max {MAX_DERIVATIVE_ORDER})")
    if order == 0:
        return np.asarray(values, float).copy()
    mult = _derivative_multiplier(grid, order)
    return np.fft.ifft(mult * np.fft.fft(values)).real


def scalar_norm(grid, values, kind="L2"):
    """L2 / H1..H4 / Linf norm of a real scalar field."""
    values = np.asarray(values, float)
    if kind == "Linf":
        return float(np.abs(values).max())
    if kind == "L2":
        return float(np.sqrt(grid.spacing * (values**2).sum()))
    orders = {"H1": 1, "H2": 2, "H3": 3, "H4": 4}
    if kind not in orders:
        raise ValueError(f"unknown norm kind {kind!r}")
    total = 0.0
    for j in range(orders[kind] + 1):
        total += scalar_norm(grid, scalar_derivative(grid, values, j), "L2") ** 2
    return float(np.sqrt(total))


def _component_coefficients(row, grid):
    """Fourier coefficients of one real component with the Nyquist mode split
    symmetrically over +-k_nyq (exact real trigonometric interpolant)."""
    n = grid.num_points
    c = np.fft.fft(row) / n
    k = grid.wavenumbers
    k_ext = np.concatenate([k, [-k[n // 2]]])
    c_ext = np.concatenate([c, [0.5 * c[n // 2]]])
    c_ext[n // 2] *= 0.5
    return c_ext, k_ext


def _eval_real_component(row, grid, points, chunk=2048):
    coeff, k = _component_coefficients(row, grid)
    points = np.asarray(points, dtype=float)
    out = np.empty(points.shape, dtype=float)
    flat = points.ravel()
    res = np.empty(flat.shape, dtype=float)
    for start in range(0, flat.size, chunk):
        sl = slice(start, min(start + chunk, flat.size))
        phase = np.exp(1j * np.outer(flat[sl], k))
        res[sl] = (phase @ coeff).real
    out.ravel()[:] = res
    return out


def interpolate(f, points):
    """Trigonometric interpolation of a pair field at arbitrary real points.

    Points are wrapped periodically; returns an array of shape (2, len(points)).
    Exact for resolved modes, O(N*len(points)) via chunked evaluation.
    """
    pts = np.asarray(points, dtype=float)
    return np.stack(
        [_eval_real_component(f.data[c], f.grid, pts) for c in range(2)]
    )


def compose_shift(f, shift, tol=1e-13, max_order=18):
    """Evaluate f(x - shift(x)) on the grid.

    Uses the Taylor series in the shift (each term one spectral derivative),
    which converges rapidly when ||shift||_inf * k_typ is small; falls back to
    exact off-grid interpolation otherwise. shift may be a scalar or an array
    on the same grid.
    """
    s = np.broadcast_to(np.asarray(shift, dtype=float), (f.grid.num_points,))
    smax = np.abs(s).max()
    if smax == 0.0:
        return f.copy()
    scale = max(np.abs(f.data).max(), 1e-300)
    kmax = np.abs(f.grid.wavenumbers).max()
    if smax * kmax < 6.0:
        out = f.data.copy()
        term = f
        power = np.ones_like(s)
        fact = 1.0
        for m in range(1, max_order + 1):
            term = spectral_derivative(term, 1)
            power = power * (-s)
            fact *= m
            contrib = term.data * (power / fact)
            out += contrib
            if np.abs(contrib).max() < tol * scale:
                return RealPairField(f.grid, out)
    # exact fallback: evaluate the trigonometric interpolant at x - s
    return RealPairField(f.grid, interpolate(f, f.grid.x - s))


def translate(f, shift):
    """f(x - shift) for a constant shift, exact via Fourier phase twist."""
    k = f.grid.wavenumbers
    phase = np.exp(-1j * k * float(shift))
    n = f.grid.num_points
    phase[n // 2] = np.cos(k[n // 2] * float(shift))
    out = np.empty_like(f.data)
    for c in range(2):
        out[c] = np.fft.ifft(phase * np.fft.fft(f.data[c])).real
    return RealPairField(f.grid, out)


def dealias_modes(grid):
    """Boolean mask of Fourier modes kept by the 2/3 rule."""
    k = np.abs(np.fft.fftfreq(grid.num_points) * grid.num_points)
    return k <= (2.0 / 3.0) * (grid.num_points // 2)


def resolvedness_tail(f, fraction=2.0 / 3.0):
    """Relative magnitude of Fourier content beyond `fraction` of Nyquist.

    Used to monitor that fields stay spectrally resolved (the numerical stand-in
    for the Sobolev regularity classes of the underlying analysis).
    """
    c = np.fft.fft(f.as_complex())
    k = np.abs(np.fft.fftfreq(f.grid.num_points) * f.grid.num_points)
    tail = np.abs(c[k > fraction * (f.grid.num_points // 2)])
    scale = np.abs(c).max()
    if scale == 0.0:
        return 0.0
    return float(tail.max() / scale) if tail.size else 0.0


def write_field(path, f, time=0.0):
    """Snapshot format: one JSON header line {N, M, T, t}, then the two
    components as little-endian float64, concatenated."""
    header = {
        "N": f.grid.num_points,
        "M": f.grid.num_cells,
        "T": f.grid.cell_period,
        "t": float(time),
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("ascii"))
        fh.write(f.data.astype("<f8").tobytes())


def read_field(path):
    """Inverse of write_field; returns (field, time)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        raw = np.frombuffer(fh.read(), dtype="<f8")
    n = int(header["N"])
    grid = PeriodicGrid(n, float(header["T"]), int(header["M"]))
    data = raw.reshape(2, n).astype(float)
    return RealPairField(grid, data), float(header["t"])
