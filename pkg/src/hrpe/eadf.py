"""Effective Aperture Distribution Function: Fourier modeling of beam patterns.

A complex beam pattern sampled on a regular (azimuth x elevation) grid is
transformed into 2-D Fourier coefficients over integer modes.  The
coefficients evaluate the pattern (and its analytic angle derivatives) at
arbitrary continuous directions, and truncating them to a window around DC
("mode gating") suppresses calibration noise.

Elevation is sampled on [0, pi] and extended to the full period [0, 2pi)
with the usual mirror rule P(az, 2pi - el) = P(az + pi, el) before the
transform; a single-row elevation axis marks an azimuth-only cut.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ComplexPattern:
    """Complex gain per beam on a regular angle grid, shape (beams, az, el).

    The azimuth grid must cover one full period uniformly; the elevation
    grid must be uniform over [0, pi] inclusive, or hold the single cut
    angle for azimuth-only calibrations.
    """

    values: np.ndarray
    azimuth: np.ndarray
    elevation: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        az = np.asarray(self.azimuth, dtype=float)
        el = np.asarray(self.elevation, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "azimuth", az)
        object.__setattr__(self, "elevation", el)
        if values.ndim != 3:
            raise ValueError("values must have shape (beams, azimuth, elevation)")
        if values.shape[1:] != (az.size, el.size):
            raise ValueError("grid sizes do not match values")
        if az.size < 2:
            raise ValueError("azimuth grid needs at least 2 samples")
        _check_uniform(az, 2.0 * np.pi / az.size, "azimuth")
        if el.size > 1:
            _check_uniform(el, np.pi / (el.size - 1), "elevation")
            if abs(el[0]) > 1e-12 or abs(el[-1] - np.pi) > 1e-12:
                raise ValueError("elevation grid must span [0, pi]")

    @property
    def n_beams(self) -> int:
        return self.values.shape[0]


def _check_uniform(grid: np.ndarray, step: float, name: str) -> None:
    diffs = np.diff(grid)
    if diffs.size and (np.any(diffs <= 0) or np.max(np.abs(diffs - step)) > 1e-9):
        raise ValueError(f"{name} grid must be uniform with step {step:.6g}")


@dataclass(frozen=True)
class Eadf:
    """Centered 2-D Fourier coefficients of a beam pattern.

    ``coefficients`` has shape (beams, azimuth modes, elevation modes) with
    the integer mode numbers in ``mode_az`` / ``mode_el``; a pattern value is
    sum_{m,n} G[b,m,n] exp(j(m*az + n*el)).
    """

    coefficients: np.ndarray
    mode_az: np.ndarray
    mode_el: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coefficients",
                           np.asarray(self.coefficients, dtype=complex))
        object.__setattr__(self, "mode_az", np.asarray(self.mode_az, dtype=int))
        object.__setattr__(self, "mode_el", np.asarray(self.mode_el, dtype=int))
        if self.coefficients.shape[1:] != (self.mode_az.size, self.mode_el.size):
            raise ValueError("mode axes do not match coefficient shape")

    @property
    def n_beams(self) -> int:
        return self.coefficients.shape[0]

    @property
    def azimuth_only(self) -> bool:
        return self.mode_el.size == 1

    def gated(self, gate: tuple[int, int]) -> "Eadf":
        "Truncate to a centered window of (gate_az, gate_el) modes."
        g_az, g_el = gate
        if g_az < 1 or g_el < 1:
            raise ValueError("gate sizes must be >= 1")
        keep_az = np.abs(self.mode_az) <= (g_az - 1) // 2
        keep_el = np.abs(self.mode_el) <= (g_el - 1) // 2
        return Eadf(self.coefficients[:, keep_az][:, :, keep_el],
                    self.mode_az[keep_az], self.mode_el[keep_el])


def default_gate(n_y: int, n_z: int) -> tuple[int, int]:
    "Default mode window matched to the physical aperture."
    return 2 * n_y + 1, 2 * n_z + 1


def _centered_modes(n: int) -> np.ndarray:
    return np.arange(n) - n // 2


def _axis_dft(values: np.ndarray, grid_start: float, axis: int) -> tuple[np.ndarray, np.ndarray]:
    # Forward DFT normalized so the inverse is a plain Fourier series, with
    # the phase referenced to angle 0 rather than the first grid point.
    n = values.shape[axis]
    modes = _centered_modes(n)
    spec = np.fft.fftshift(np.fft.fft(values, axis=axis), axes=axis) / n
    shape = [1] * values.ndim
    shape[axis] = n
    ref = np.exp(-1j * modes * grid_start).reshape(shape)
    return spec * ref, modes


def _extend_elevation(pattern: ComplexPattern) -> np.ndarray:
    """Mirror-extend values over the elevation axis to cover [0, 2pi)."""
    values = pattern.values
    n_az = pattern.azimuth.size
    if n_az % 2 != 0:
        raise ValueError("mirror extension needs an even azimuth count")
    segments = pattern.elevation.size - 1
    extended = np.empty(values.shape[:2] + (2 * segments,), dtype=complex)
    extended[:, :, : segments + 1] = values
    mirror = values[:, :, segments - 1:0:-1]
    extended[:, :, segments + 1:] = np.roll(mirror, n_az // 2, axis=1)
    return extended


def compute_eadf(pattern: ComplexPattern, gate: tuple[int, int] | None = None) -> Eadf:
    """Transform a sampled pattern into its Fourier coefficient model.

    The ungated result reproduces the samples exactly at the grid points;
    ``gate`` optionally truncates to (azimuth, elevation) mode counts.
    """
    if pattern.elevation.size == 1:
        spec, modes_az = _axis_dft(pattern.values, pattern.azimuth[0], axis=1)
        eadf = Eadf(spec, modes_az, np.array([0]))
    else:
        extended = _extend_elevation(pattern)
        spec, modes_az = _axis_dft(extended, pattern.azimuth[0], axis=1)
        spec, modes_el = _axis_dft(spec, 0.0, axis=2)
        eadf = Eadf(spec, modes_az, modes_el)
    if gate is not None:
        eadf = eadf.gated(gate)
    return eadf


def evaluate_eadf(eadf: Eadf, azimuth, elevation) -> np.ndarray:
    """Evaluate all beams at the given direction(s).

    Scalars give a (beams,) vector; arrays of K directions give (beams, K).
    """
    az = np.atleast_1d(np.asarray(azimuth, dtype=float))
    el = np.atleast_1d(np.asarray(elevation, dtype=float))
    az, el = np.broadcast_arrays(az, el)
    basis_az = np.exp(1j * np.outer(eadf.mode_az, az.ravel()))
    basis_el = np.exp(1j * np.outer(eadf.mode_el, el.ravel()))
    out = np.einsum("bmn,mk,nk->bk", eadf.coefficients, basis_az, basis_el)
    if np.isscalar(azimuth) and np.isscalar(elevation):
        return out[:, 0]
    return out.reshape(eadf.n_beams, *az.shape)


def eadf_derivative(eadf: Eadf, azimuth, elevation) -> tuple[np.ndarray, np.ndarray]:
    """Analytic pattern gradients (d/d azimuth, d/d elevation) per beam."""
    az = np.atleast_1d(np.asarray(azimuth, dtype=float))
    el = np.atleast_1d(np.asarray(elevation, dtype=float))
    az, el = np.broadcast_arrays(az, el)
    basis_az = np.exp(1j * np.outer(eadf.mode_az, az.ravel()))
    basis_el = np.exp(1j * np.outer(eadf.mode_el, el.ravel()))
    ramp_az = (1j * eadf.mode_az)[:, None] * basis_az
    ramp_el = (1j * eadf.mode_el)[:, None] * basis_el
    d_az = np.einsum("bmn,mk,nk->bk", eadf.coefficients, ramp_az, basis_el)
    d_el = np.einsum("bmn,mk,nk->bk", eadf.coefficients, basis_az, ramp_el)
    if np.isscalar(azimuth) and np.isscalar(elevation):
        return d_az[:, 0], d_el[:, 0]
    shape = (eadf.n_beams, *az.shape)
    return d_az.reshape(shape), d_el.reshape(shape)


@dataclass(frozen=True)
class ShiftMatrix:
    """Phase-shift matrix: entry (m, p) = exp(j (m - (M-1)/2) mu_p)."""

    size: int
    mu: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.atleast_1d(np.asarray(self.mu, dtype=float)))
        if self.size < 1:
            raise ValueError("size must be >= 1")

    @property
    def exponents(self) -> np.ndarray:
        return np.arange(self.size) - (self.size - 1) / 2.0

    @property
    def values(self) -> np.ndarray:
        return np.exp(1j * np.outer(self.exponents, self.mu))


def shift_matrix(size: int, mu) -> ShiftMatrix:
    "Build the phase-shift matrix for parameter vector ``mu`` (radians/step)."
    return ShiftMatrix(size=size, mu=mu)


def ambiguity(pattern_a, pattern_b, dir_a, dir_b) -> complex:
    """Normalized inner product of two steered pattern vectors.

    ``pattern_a``/``pattern_b`` map a direction to a beam vector (any
    callable, e.g. a closure over ``evaluate_eadf``); with identical
    arguments this is the auto-ambiguity, which equals 1.
    """
    vec_a = np.asarray(pattern_a(dir_a), dtype=complex).ravel()
    vec_b = np.asarray(pattern_b(dir_b), dtype=complex).ravel()
    norm_a = np.linalg.norm(vec_a)
    norm_b = np.linalg.norm(vec_b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("ambiguity undefined for a zero-norm pattern vector")
    return complex(np.vdot(vec_a, vec_b) / (norm_a * norm_b))


def save_eadf(path, eadf: Eadf) -> None:
    "Write an EADF to the package tensor format (mode offsets in axis names)."
    from . import tensorio

    axes = [("beam", eadf.n_beams),
            (f"az_mode@{eadf.mode_az[0]}", eadf.mode_az.size),
            (f"el_mode@{eadf.mode_el[0]}", eadf.mode_el.size)]
    tensorio.write_tensor(path, eadf.coefficients, axes)


def load_eadf(path) -> Eadf:
    from . import tensorio

    data, axes = tensorio.read_tensor(path)
    starts = []
    for name, length in axes[1:]:
        base, _, offset = name.partition("@")
        if base not in ("az_mode", "el_mode") or not offset:
            raise ValueError(f"not an EADF tensor: unexpected axis {name!r}")
        starts.append(int(offset))
    mode_az = starts[0] + np.arange(axes[1][1])
    mode_el = starts[1] + np.arange(axes[2][1])
    return Eadf(data, mode_az, mode_el)
