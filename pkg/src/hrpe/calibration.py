"""Two-step pattern/frequency calibration solvers plus preprocessing.

Step one jointly extracts the TX and RX beam patterns, the shared system
frequency response, and the inter-experiment offset scalar from a pair of
swept-beam chamber data sets, as the best rank-1 factorization of the
row-stacked data (SVD).  Step two fits per-gain frequency responses under a
fixed amplitude-pattern constraint by alternating a linear solve with a
Levenberg-Marquardt phase update.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class AcquisitionOrder(enum.Enum):
    """Sweep nesting from the innermost loop outward."""

    BASELINE = ("freq", "beam", "orientation")
    MULTIGAIN = ("freq", "beam", "gain", "orientation")


_AXIS_LAYOUT = {
    # storage layout, slowest axis first
    AcquisitionOrder.BASELINE: ("beam", "orientation", "freq"),
    AcquisitionOrder.MULTIGAIN: ("gain", "beam", "orientation", "freq"),
}


@dataclass(frozen=True)
class CalibrationTensor:
    """Chamber S21 samples with their acquisition-order metadata.

    ``data`` is complex with axes (beam, orientation, freq), or
    (gain, beam, orientation, freq) for multi-gain sweeps.  ``orientations``
    holds the (azimuth, elevation) pairs of the rotation schedule in radians.
    """

    data: np.ndarray
    order: AcquisitionOrder
    orientations: np.ndarray
    frequencies: np.ndarray
    gains: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "orientations",
                           np.asarray(self.orientations, dtype=float))
        object.__setattr__(self, "frequencies",
                           np.asarray(self.frequencies, dtype=float))
        layout = _AXIS_LAYOUT[self.order]
        if data.ndim != len(layout):
            raise ValueError(
                f"{self.order.name} tensor needs {len(layout)} axes {layout}")
        if np.any(np.isnan(data.view(float))):
            raise ValueError("calibration data contains NaN")
        if self.orientations.shape != (data.shape[-2], 2):
            raise ValueError("orientation table does not match data axis")
        if self.frequencies.shape != (data.shape[-1],):
            raise ValueError("frequency axis does not match data axis")

    @property
    def n_beams(self) -> int:
        return self.data.shape[-3]

    @property
    def n_orientations(self) -> int:
        return self.data.shape[-2]

    def with_data(self, data: np.ndarray) -> "CalibrationTensor":
        return CalibrationTensor(data, self.order, self.orientations,
                                 self.frequencies, self.gains)


@dataclass
class BaselineResult:
    """Joint rank-1 extraction output.

    ``rx_pattern`` / ``tx_pattern`` are the beam-by-orientation responses
    flattened beam-fastest; both are normalized so their center element is
    exactly 1 (the boresight probe gauge).  ``offset_scale`` models the gain
    and reference-phase offset between the two chamber experiments.
    """

    rx_pattern: np.ndarray
    tx_pattern: np.ndarray
    freq_response: np.ndarray
    offset_scale: complex
    singular_values: np.ndarray
    residual_sq: float

    @property
    def sigma_ratio(self) -> float:
        s = self.singular_values
        return float(s[0] / s[1]) if s.size > 1 and s[1] > 0 else np.inf


def assemble_baseline(calib_dut_rx: CalibrationTensor,
                      calib_dut_tx: CalibrationTensor
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Flatten the two baseline sweeps to (beam*orientation, freq) matrices.

    Rows run beam-fastest: sample (beam n, orientation j, freq f) lands at
    row n + j * n_beams, column f.
    """
    if calib_dut_rx.frequencies.shape != calib_dut_tx.frequencies.shape or \
            np.any(calib_dut_rx.frequencies != calib_dut_tx.frequencies):
        raise ValueError("frequency axes of the two experiments differ")
    return (_flatten_beam_fastest(calib_dut_rx.data),
            _flatten_beam_fastest(calib_dut_tx.data))


def _flatten_beam_fastest(data: np.ndarray) -> np.ndarray:
    n_f = data.shape[-1]
    return data.transpose(1, 0, 2).reshape(-1, n_f)


def unflatten_beam_fastest(matrix: np.ndarray, n_beams: int) -> np.ndarray:
    "Inverse of the baseline flattening, back to (beam, orientation, freq)."
    n_rows, n_f = matrix.shape
    return matrix.reshape(n_rows // n_beams, n_beams, n_f).transpose(1, 0, 2)


def _fix_svd_gauge(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Deterministic phase convention: first significant component of u is
    # made real-positive.  u v^H is invariant.
    idx = np.flatnonzero(np.abs(u) > 1e-12 * np.max(np.abs(u)))
    if idx.size == 0:
        raise ValueError("degenerate singular vector")
    phase = u[idx[0]] / abs(u[idx[0]])
    return u * np.conj(phase), v * np.conj(phase)


def solve_baseline(y1: np.ndarray, y2: np.ndarray) -> BaselineResult:
    """Best rank-1 joint fit of the two stacked baseline experiments.

    SVD of [Y1; Y2]; the frequency response is sigma1 * conj(v1), the top
    left vector splits into the RX and TX halves, and the gauge is fixed by
    forcing the RX center element to 1 and pulling the offset scalar out of
    the TX half's center element.
    """
    y1 = np.asarray(y1, dtype=complex)
    y2 = np.asarray(y2, dtype=complex)
    if y1.shape != y2.shape:
        raise ValueError("the two experiments must have identical shapes")
    if y1.ndim != 2 or y1.shape[1] < 1:
        raise ValueError("inputs must be (rows, freq) matrices")
    stacked = np.vstack([y1, y2])
    if not np.any(stacked):
        raise ValueError("all-zero calibration data")
    u, s, vh = np.linalg.svd(stacked, full_matrices=False)
    if s[0] == 0.0:
        raise ValueError("zero leading singular value")
    u1, v1 = _fix_svd_gauge(u[:, 0], vh[0].conj())
    freq_response = s[0] * np.conj(v1)
    half = y1.shape[0]
    rx_half, tx_half = u1[:half], u1[half:]
    center = (half - 1) // 2
    if abs(rx_half[center]) < 1e-12 or abs(tx_half[center]) < 1e-12:
        raise ValueError("boresight sample vanishes; cannot fix the gauge")
    scale = 1.0 / rx_half[center]
    rx_pattern = rx_half * scale
    tx_scaled = tx_half * scale
    freq_response = freq_response / scale
    offset_scale = tx_scaled[center]
    tx_pattern = tx_scaled / offset_scale
    residual_sq = float(np.sum(s[1:] ** 2))
    return BaselineResult(rx_pattern=rx_pattern, tx_pattern=tx_pattern,
                          freq_response=freq_response,
                          offset_scale=complex(offset_scale),
                          singular_values=s[: min(10, s.size)],
                          residual_sq=residual_sq)


@dataclass
class LmOptions:
    """Damped least-squares controls shared by the phase refiners.

    ``rel_improve_tol`` stops iterating once an accepted step improves the
    cost by less than this fraction (0 keeps iterating to the hard limits).
    """

    max_iter: int = 100
    damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    grad_tol: float = 1e-10
    step_tol: float = 1e-12
    rel_improve_tol: float = 0.0


@dataclass
class LmResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool


def lm_refine_phase(residual_fn, x0: np.ndarray, jacobian_fn,
                    opts: LmOptions | None = None) -> LmResult:
    """Levenberg-Marquardt over real parameters of a complex residual.

    ``residual_fn(x)`` returns the complex residual vector, ``jacobian_fn(x)``
    its complex Jacobian (residuals x parameters).  Damping multiplies by
    ``damping_up`` on a rejected step and by ``damping_down`` on an accepted
    one.  Returns the best iterate with a convergence flag; a rank-collapsed
    normal matrix flags non-convergence instead of raising.
    """
    opts = opts or LmOptions()
    x = np.asarray(x0, dtype=float).copy()
    r = residual_fn(x)
    cost = float(np.vdot(r, r).real)
    lam = opts.damping
    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        jac = jacobian_fn(x)
        grad = (jac.conj().T @ r).real
        if np.linalg.norm(grad) < opts.grad_tol:
            return LmResult(x, cost, iterations - 1, True)
        normal = (jac.conj().T @ jac).real
        while True:
            try:
                step = np.linalg.solve(normal + lam * np.eye(x.size), -grad)
            except np.linalg.LinAlgError:
                return LmResult(x, cost, iterations, False)
            if np.linalg.norm(step) < opts.step_tol:
                return LmResult(x, cost, iterations, True)
            trial = x + step
            r_trial = residual_fn(trial)
            cost_trial = float(np.vdot(r_trial, r_trial).real)
            if cost_trial < cost:
                improvement = cost - cost_trial
                x, r, cost = trial, r_trial, cost_trial
                lam = max(lam * opts.damping_down, 1e-12)
                if improvement <= opts.rel_improve_tol * max(cost, 1e-300):
                    return LmResult(x, cost, iterations, True)
                break
            lam *= opts.damping_up
            if lam > 1e12:
                return LmResult(x, cost, iterations, False)
    return LmResult(x, cost, opts.max_iter, False)


@dataclass
class MultigainOptions:
    rel_tol: float = 1e-8
    max_outer: int = 200
    lm: LmOptions = field(default_factory=lambda: LmOptions(max_iter=20))


@dataclass
class MultigainResult:
    phase: np.ndarray
    freq_response: np.ndarray
    objective: np.ndarray
    converged: bool

    def pattern(self, amplitude: np.ndarray) -> np.ndarray:
        "Constrained pattern vector: the given amplitudes with fitted phases."
        return np.asarray(amplitude, dtype=float) * np.exp(1j * self.phase)


def solve_multigain(y: np.ndarray, amplitude: np.ndarray,
                    opts: MultigainOptions | None = None) -> MultigainResult:
    """Constrained rank-1 fit: min ||b g^T - Y||_F with |b| = amplitude.

    Alternates a closed-form least-squares update of the frequency response
    with a Levenberg-Marquardt update of the pattern phases until the
    relative objective decrease falls below tolerance.  Because each sweep
    is one matrix row and carries its own phase unknown, the per-sweep
    random reference phase of gain-calibration data is absorbed by the
    phase vector itself.
    """
    opts = opts or MultigainOptions()
    y = np.asarray(y, dtype=complex)
    amplitude = np.asarray(amplitude, dtype=float)
    if y.ndim != 2 or amplitude.shape != (y.shape[0],):
        raise ValueError("amplitude length must match the row count")
    if np.any(amplitude <= 0.0):
        raise ValueError("amplitude pattern must be strictly positive")

    # warm start: unconstrained rank-1 phases, then one linear solve
    u, s, vh = np.linalg.svd(y, full_matrices=False)
    phase = np.angle(u[:, 0]) if s[0] > 0 else np.zeros(y.shape[0])
    g = _ls_freq_response(y, amplitude, phase)
    scale = float(np.linalg.norm(y) ** 2)
    trace = [_multigain_cost(y, amplitude, phase, g)]
    converged = False
    for _ in range(opts.max_outer):
        g = _ls_freq_response(y, amplitude, phase)
        phase = _lm_phase_update(y, amplitude, phase, g, opts.lm)
        cost = _multigain_cost(y, amplitude, phase, g)
        trace.append(cost)
        if cost <= 1e-30 * scale or trace[-2] - cost <= opts.rel_tol * trace[-2]:
            converged = True
            break
    return MultigainResult(phase=np.mod(phase, 2 * np.pi), freq_response=g,
                           objective=np.array(trace), converged=converged)


def _multigain_cost(y, amplitude, phase, g) -> float:
    model = np.outer(amplitude * np.exp(1j * phase), g)
    return float(np.linalg.norm(model - y) ** 2)


def _ls_freq_response(y, amplitude, phase) -> np.ndarray:
    b = amplitude * np.exp(1j * phase)
    return (y.T @ np.conj(b)) / float(np.vdot(b, b).real)


def _lm_phase_update(y, amplitude, phase, g, opts: LmOptions) -> np.ndarray:
    # Same damped update as lm_refine_phase, but the normal matrix of this
    # residual is exactly diagonal (each phase touches one disjoint row), so
    # it is solved element-wise instead of materializing the huge Jacobian.
    g_energy = float(np.vdot(g, g).real)
    x = phase.copy()
    b = amplitude * np.exp(1j * x)
    resid = np.outer(b, g) - y
    cost = float(np.linalg.norm(resid) ** 2)
    lam = opts.damping
    for _ in range(opts.max_iter):
        # gradient of ||r||^2 wrt phase_i: 2 Re(conj(j b_i g) . r_i)
        inner = resid @ np.conj(g)
        grad = 2.0 * (np.conj(1j * b) * inner).real
        if np.linalg.norm(grad) < opts.grad_tol:
            break
        diag = 2.0 * amplitude ** 2 * g_energy
        accepted = False
        while lam <= 1e12:
            step = -grad / (diag + lam)
            if np.linalg.norm(step) < opts.step_tol:
                return x
            trial = x + step
            b_trial = amplitude * np.exp(1j * trial)
            resid_trial = np.outer(b_trial, g) - y
            cost_trial = float(np.linalg.norm(resid_trial) ** 2)
            if cost_trial < cost:
                x, b, resid, cost = trial, b_trial, resid_trial, cost_trial
                lam = max(lam * opts.damping_down, 1e-12)
                accepted = True
                break
            lam *= opts.damping_up
        if not accepted:
            break
    return x


def extract_common_response(g_tx: np.ndarray, g_rx: np.ndarray,
                            baseline: np.ndarray) -> dict:
    """Check that the separately-calibrated TX and RX frequency responses
    multiply back to the jointly-extracted one, after aligning the single
    complex gauge factor.  Deviations are reported in dB and degrees.
    """
    g_tx = np.asarray(g_tx, dtype=complex)
    g_rx = np.asarray(g_rx, dtype=complex)
    baseline = np.asarray(baseline, dtype=complex)
    if g_tx.shape != g_rx.shape or g_tx.shape != baseline.shape:
        raise ValueError("frequency axes differ")
    product = g_tx * g_rx
    gauge = np.vdot(product, baseline) / np.vdot(product, product)
    aligned = gauge * product
    ratio = aligned / baseline
    mag_db = 20.0 * np.log10(np.abs(ratio))
    phase_deg = np.degrees(np.angle(ratio))
    return {
        "gauge": complex(gauge),
        "max_dev_db": float(np.max(np.abs(mag_db))),
        "mean_dev_db": float(np.mean(np.abs(mag_db))),
        "max_dev_deg": float(np.max(np.abs(phase_deg))),
        "mean_dev_deg": float(np.mean(np.abs(phase_deg))),
    }


def preprocess_measurement(y_data: np.ndarray, g0: np.ndarray,
                           y_if: np.ndarray, h_cable: np.ndarray) -> np.ndarray:
    """Deconvolve the through-path responses from measurement data.

    The frequency axis must be the FIRST axis of ``y_data``; the three
    calibration vectors are broadcast along it.
    """
    y_data = np.asarray(y_data, dtype=complex)
    g0 = np.asarray(g0, dtype=complex)
    y_if = np.asarray(y_if, dtype=complex)
    h_cable = np.asarray(h_cable, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = g0 * y_if / h_cable
    bad = np.flatnonzero((denom == 0.0) | ~np.isfinite(denom))
    if bad.size:
        raise ZeroDivisionError(
            f"degenerate compensation response at frequency indices {bad.tolist()}")
    shape = (denom.size,) + (1,) * (y_data.ndim - 1)
    return y_data / denom.reshape(shape)
