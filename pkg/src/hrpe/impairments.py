"""Calibration impairments: center misalignment and residual phase noise.

Phase noise has two parts.  A fast term varies i.i.d. between switched
beams at one rotation angle; a slow term is shared by all beams at one
angle and drifts across angles (random walk by default, low-pass filtered
Gaussian as an alternative).  A frequency sweep is faster than either
process, so all frequency points inside one sweep share a single draw.
All impairments are unit-modulus multiplicative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arraymodel import ProbeSetup, UraGeometry, element_positions, \
    orientation_matrix, SPEED_OF_LIGHT
from .calibration import AcquisitionOrder, CalibrationTensor
from .synth import Observation

# re-exported: the acquisition-order semantics live with the tensor type
__all__ = [
    "AcquisitionOrder", "PhaseNoiseModel", "apply_phase_noise",
    "generate_misaligned_calibration", "measurement_fast_pn",
]


@dataclass(frozen=True)
class PhaseNoiseModel:
    """Two-component residual phase noise of the sounder LO chain.

    Defaults follow the measured statistics: fast i.i.d. Gaussian with
    4.8 deg standard deviation and -0.01 deg mean.  ``slow_kind`` selects
    "walk" (Gaussian random walk, ``slow_step_deg`` per orientation),
    "lowpass" (filtered Gaussian, ``slow_step_deg`` std with
    ``slow_coherence`` orientations of smoothing), or "off".
    """

    fast_std_deg: float = 4.8
    fast_mean_deg: float = -0.01
    slow_kind: str = "walk"
    slow_step_deg: float = 2.0
    slow_coherence: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.fast_std_deg < 0:
            raise ValueError("fast_std_deg must be >= 0")
        if self.slow_kind not in ("walk", "lowpass", "off"):
            raise ValueError(f"unknown slow_kind {self.slow_kind!r}")
        if self.slow_coherence <= 0:
            raise ValueError("slow_coherence must be positive")

    @property
    def disabled(self) -> bool:
        return self.fast_std_deg == 0.0 and self.fast_mean_deg == 0.0 \
            and self.slow_kind == "off"


def _slow_profile(model: PhaseNoiseModel, count: int,
                  rng: np.random.Generator) -> np.ndarray:
    if model.slow_kind == "off":
        return np.zeros(count)
    if model.slow_kind == "walk":
        steps = np.radians(model.slow_step_deg) * rng.standard_normal(count)
        steps[0] = 0.0
        return np.cumsum(steps)
    kernel_half = int(np.ceil(3 * model.slow_coherence))
    taps = np.exp(-0.5 * (np.arange(-kernel_half, kernel_half + 1)
                          / model.slow_coherence) ** 2)
    taps /= np.linalg.norm(taps)
    raw = rng.standard_normal(count + 2 * kernel_half)
    smooth = np.convolve(raw, taps, mode="valid")
    return np.radians(model.slow_step_deg) * smooth


def apply_phase_noise(calib: CalibrationTensor,
                      model: PhaseNoiseModel) -> CalibrationTensor:
    """Multiply each sweep block by its fast and slow phase draws.

    One fast draw per (beam [, gain], orientation) block, one slow value per
    orientation, no frequency dependence within a sweep.
    """
    if model.disabled:
        return calib.with_data(calib.data.copy())
    rng = np.random.default_rng(model.seed)
    n_orient = calib.n_orientations
    slow = _slow_profile(model, n_orient, rng)
    block_shape = calib.data.shape[:-2] + (n_orient,)
    fast = np.radians(model.fast_mean_deg) + np.radians(model.fast_std_deg) \
        * rng.standard_normal(block_shape)
    phase = fast + slow
    return calib.with_data(calib.data * np.exp(1j * phase)[..., None])


def generate_misaligned_calibration(geom: UraGeometry, probe: ProbeSetup,
                                    beams, frequencies) -> CalibrationTensor:
    """Sweep the probe schedule and record spherical-wave beam responses.

    With a zero mounting offset this is the ideal calibration tensor; a
    nonzero offset produces the distorted one.  Output axes are
    (beam, orientation, freq) with the baseline acquisition order.
    """
    frequencies = np.atleast_1d(np.asarray(frequencies, dtype=float))
    orientations = np.asarray([(az, el) for az, el in probe.schedule], dtype=float)
    if orientations.size == 0:
        raise ValueError("probe schedule is empty")
    pos0 = element_positions(geom) + probe.offset
    weights = np.stack([w.flat for w in beams])          # (B, N)
    data = np.empty((len(beams), len(orientations), frequencies.size),
                    dtype=complex)
    wavenumber = 2.0 * np.pi * frequencies / SPEED_OF_LIGHT   # (F,)
    for j, orientation in enumerate(orientations):
        rot = orientation_matrix(orientation)
        dist = np.linalg.norm(pos0 @ rot.T - probe.probe_position, axis=1)
        if np.any(dist == 0.0):
            raise ValueError("probe coincides with an element position")
        gain = geom.pattern_gain(orientation[0], orientation[1])
        phasor = np.exp(-1j * np.outer(wavenumber, dist)) * gain   # (F, N)
        data[:, j, :] = weights @ phasor.T
    return CalibrationTensor(data, AcquisitionOrder.BASELINE, orientations,
                             frequencies)


def measurement_fast_pn(obs: Observation, model: PhaseNoiseModel,
                        seed: int | None = None) -> Observation:
    """Corrupt a MIMO snapshot with only the fast phase component.

    A snapshot completes far inside the slow-drift coherence time, so each
    (snapshot, tx beam, rx beam) slot gets one i.i.d. draw, shared across
    the frequency sweep.
    """
    if model.fast_std_deg == 0.0 and model.fast_mean_deg == 0.0:
        return obs.with_y(obs.y.copy())
    rng = np.random.default_rng(model.seed if seed is None else seed)
    canon = obs.canonical()
    dims = obs.dims
    draws = np.radians(model.fast_mean_deg) + np.radians(model.fast_std_deg) \
        * rng.standard_normal((dims.t, dims.m_t, dims.m_r))
    tensor = canon.as_tensor() * np.exp(1j * draws)[..., None]
    return canon.with_y(tensor.reshape(-1))
