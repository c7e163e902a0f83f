"""Uniform rectangular array geometry, beam ports, and chamber rotations.

All angles are radians. Directions use (azimuth, elevation) with azimuth in
[-pi, pi), elevation in [0, pi] measured from zenith; boresight of the array
is (0, pi/2) looking along +x, with the elements in the y-z plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
"""Speed of light in vacuum, m/s."""


def isotropic_element(azimuth, elevation):
    "Unit-gain element pattern, the default for all simulations."
    return np.ones(np.broadcast(np.asarray(azimuth), np.asarray(elevation)).shape,
                   dtype=complex)


@dataclass(frozen=True)
class Direction:
    """A propagation direction: azimuth in [-pi, pi), elevation in [0, pi]."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        if not -np.pi <= self.azimuth < np.pi:
            raise ValueError(f"azimuth {self.azimuth} outside [-pi, pi)")
        if not 0.0 <= self.elevation <= np.pi:
            raise ValueError(f"elevation {self.elevation} outside [0, pi]")

    @property
    def unit_vector(self) -> np.ndarray:
        "Unit vector pointing from the array toward the source."
        az, el = self.azimuth, self.elevation
        return np.array([np.cos(az) * np.sin(el),
                         np.sin(az) * np.sin(el),
                         np.cos(el)])


BORESIGHT = Direction(0.0, np.pi / 2)


@dataclass(frozen=True)
class UraGeometry:
    """Uniform rectangular array in the y-z plane, centered at the origin.

    ``spacing`` is the element pitch in wavelengths (0.5 = half-wavelength).
    ``element_pattern`` is a scalar complex function of (azimuth, elevation);
    None means isotropic.
    """

    n_y: int
    n_z: int
    wavelength: float
    spacing: float = 0.5
    element_pattern: Callable | None = None

    def __post_init__(self):
        if self.n_y < 1 or self.n_z < 1:
            raise ValueError("element counts must be >= 1")
        if self.spacing <= 0 or self.wavelength <= 0:
            raise ValueError("spacing and wavelength must be positive")

    @classmethod
    def from_carrier(cls, n_y: int, n_z: int, carrier_hz: float,
                     spacing: float = 0.5) -> "UraGeometry":
        return cls(n_y=n_y, n_z=n_z, wavelength=SPEED_OF_LIGHT / carrier_hz,
                   spacing=spacing)

    @property
    def n_elements(self) -> int:
        return self.n_y * self.n_z

    def pattern_gain(self, azimuth, elevation):
        fn = self.element_pattern or isotropic_element
        return np.asarray(fn(azimuth, elevation), dtype=complex)


@dataclass(frozen=True)
class BeamWeights:
    """Phase-shifter weight matrix of one beam port; ``label`` is 1-based."""

    weights: np.ndarray
    label: int

    def matches(self, geom: UraGeometry) -> bool:
        return self.weights.shape == (geom.n_y, geom.n_z)

    @property
    def flat(self) -> np.ndarray:
        "Weights vectorized row-major with the z index fastest."
        return self.weights.reshape(-1)


@dataclass(frozen=True)
class ProbeSetup:
    """Chamber probe location and the array's mounting offset.

    ``offset`` is the misalignment of the array center from the rotation
    axis at the initial orientation; zero means perfectly aligned.
    ``schedule`` lists the (azimuth, elevation) orientations swept during
    calibration, in acquisition order.
    """

    probe_position: np.ndarray
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    schedule: Sequence[tuple[float, float]] = ()

    def __post_init__(self):
        object.__setattr__(self, "probe_position",
                           np.asarray(self.probe_position, dtype=float))
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))
        if self.probe_position.shape != (3,) or self.offset.shape != (3,):
            raise ValueError("probe_position and offset must be 3-vectors")


def element_positions(geom: UraGeometry) -> np.ndarray:
    """Element coordinates, shape (n_y*n_z, 3), in meters.

    Ordering is row-major over (n_y, n_z) with the z index fastest; this is
    the single vectorization order used throughout the package.
    """
    pitch = geom.spacing * geom.wavelength
    iy = np.arange(1, geom.n_y + 1) - (geom.n_y + 1) / 2.0
    iz = np.arange(1, geom.n_z + 1) - (geom.n_z + 1) / 2.0
    yy, zz = np.meshgrid(iy * pitch, iz * pitch, indexing="ij")
    pos = np.zeros((geom.n_elements, 3))
    pos[:, 1] = yy.reshape(-1)
    pos[:, 2] = zz.reshape(-1)
    return pos


def wave_vector(direction: Direction, wavelength: float) -> np.ndarray:
    "Wave vector of a plane wave arriving from ``direction``, rad/m."
    return (2.0 * np.pi / wavelength) * direction.unit_vector


def steering_response(geom: UraGeometry, direction: Direction) -> np.ndarray:
    """Per-element plane-wave response, shape (n_y, n_z).

    Entry (iy, iz) is exp(j k.p) times the element pattern gain, for a
    unit-gain wave arriving from ``direction``.
    """
    k = wave_vector(direction, geom.wavelength)
    pos = element_positions(geom)
    phases = pos @ k
    gain = geom.pattern_gain(direction.azimuth, direction.elevation)
    return (np.exp(1j * phases) * gain).reshape(geom.n_y, geom.n_z)


def beam_port_response(geom: UraGeometry, weights: BeamWeights,
                       direction: Direction) -> complex:
    """Response of one beam port: vec(W)^T vec(X) = trace(W^T X)."""
    if not weights.matches(geom):
        raise ValueError(
            f"weight shape {weights.weights.shape} does not match array "
            f"({geom.n_y}, {geom.n_z})")
    return complex(np.sum(weights.weights * steering_response(geom, direction)))


def dft_beam_bank(geom: UraGeometry, count_y: int, count_z: int = 1
                  ) -> list[BeamWeights]:
    """Bank of DFT beams: count_y azimuth progressions times count_z
    elevation progressions, phase-only weights.

    Labels run 1..count_y*count_z with the z progression fastest; the center
    label carries zero phase progression (boresight).
    """
    if count_y < 1 or count_z < 1:
        raise ValueError("beam counts must be >= 1")
    iy = np.arange(1, geom.n_y + 1) - (geom.n_y + 1) / 2.0
    iz = np.arange(1, geom.n_z + 1) - (geom.n_z + 1) / 2.0
    qy = np.arange(1, count_y + 1) - (count_y + 1) / 2.0
    qz = np.arange(1, count_z + 1) - (count_z + 1) / 2.0
    bank = []
    label = 1
    for py in qy:
        phase_y = np.exp(2j * np.pi * py * iy / count_y)
        for pz in qz:
            phase_z = np.exp(2j * np.pi * pz * iz / count_z)
            bank.append(BeamWeights(np.outer(phase_y, phase_z), label))
            label += 1
    return bank


def _rot_z(angle: float) -> np.ndarray:
    # Active rotation about z; sign chosen so that after rotating the array
    # by ``angle`` the fixed probe on +x appears at azimuth +angle in the
    # array frame (the stage turns the array clockwise seen from above).
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(angle: float) -> np.ndarray:
    # Active rotation about y, mirrored likewise: the probe appears at
    # elevation (pi/2 + angle) in the array frame.
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def orientation_matrix(orientation: tuple[float, float]) -> np.ndarray:
    """Composite stage rotation for a calibration orientation (az, el).

    Positions map as p -> R_y(el - pi/2) R_z(az) p, with the rotation senses
    fixed so the probe on the +x axis sits at exactly (az, el) in the array
    frame afterwards.  Regression-tested: these signs fail silently.
    """
    az, el = orientation
    return _rot_y(el - np.pi / 2.0) @ _rot_z(az)


def rotated_positions(geom: UraGeometry, probe: ProbeSetup,
                      orientation: tuple[float, float]) -> np.ndarray:
    """Element positions after mounting offset and stage rotation, (N, 3)."""
    rot = orientation_matrix(orientation)
    return (element_positions(geom) + probe.offset) @ rot.T


def distorted_calibration_pattern(geom: UraGeometry, probe: ProbeSetup,
                                  weights: BeamWeights, frequency: float,
                                  orientation: tuple[float, float]) -> complex:
    """Beam-port response measured with a finite-distance probe.

    Spherical-wave model: each element contributes exp(-j 2 pi f d / c0)
    with d its exact distance to the probe after rotation.  No far-field
    approximation; with a nonzero mounting offset this is what distorts the
    calibrated pattern.
    """
    if not weights.matches(geom):
        raise ValueError("weight shape does not match array")
    pos = rotated_positions(geom, probe, orientation)
    dist = np.linalg.norm(pos - probe.probe_position, axis=1)
    if np.any(dist == 0.0):
        raise ValueError("probe coincides with an element position")
    gain = geom.pattern_gain(*orientation)
    phases = np.exp(-2j * np.pi * frequency * dist / SPEED_OF_LIGHT)
    return complex(np.sum(weights.flat * gain * phases))
