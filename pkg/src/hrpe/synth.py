"""Synthetic sounder observations: specular paths, diffuse tail, noise.

Observations are single complex vectors whose canonical axis order is
(t, tx_beam, rx_beam, f) from slowest to fastest; every module shares this
vectorization.  Delays are kept both as physical nanoseconds and as
normalized radians per frequency step (tau_norm = 2 pi * tau * df).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arraymodel import SPEED_OF_LIGHT
from .eadf import Eadf, evaluate_eadf

CANONICAL_AXES = ("t", "tx_beam", "rx_beam", "f")


def delay_to_normalized(delay_ns, freq_step_hz: float, origin_ns: float = 0.0):
    "Map physical delay (ns) to radians per frequency step, wrapped to [0, 2pi)."
    tau = 2.0 * np.pi * (np.asarray(delay_ns, dtype=float) - origin_ns) * 1e-9 * freq_step_hz
    return np.mod(tau, 2.0 * np.pi)


def normalized_to_delay(tau, freq_step_hz: float, origin_ns: float = 0.0):
    "Inverse of :func:`delay_to_normalized`."
    return origin_ns + np.asarray(tau, dtype=float) / (2.0 * np.pi * freq_step_hz) * 1e9


@dataclass
class PathSet:
    """Structural parameters and complex weights of P specular paths.

    Angles are radians; ``delay`` is normalized radians in [0, 2pi) with the
    physical value kept alongside in ``delay_ns``.
    """

    delay: np.ndarray
    delay_ns: np.ndarray
    dod_az: np.ndarray
    dod_el: np.ndarray
    doa_az: np.ndarray
    doa_el: np.ndarray
    weight: np.ndarray
    doppler: np.ndarray | None = None

    def __post_init__(self):
        arrays = {}
        for name in ("delay", "delay_ns", "dod_az", "dod_el", "doa_az",
                     "doa_el"):
            arrays[name] = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
        arrays["weight"] = np.atleast_1d(np.asarray(self.weight, dtype=complex))
        n = arrays["delay"].size
        if self.doppler is None:
            arrays["doppler"] = np.zeros(n)
        else:
            arrays["doppler"] = np.atleast_1d(np.asarray(self.doppler, dtype=float))
        for name, arr in arrays.items():
            if arr.size != n:
                raise ValueError(f"{name} length {arr.size} != path count {n}")
            setattr(self, name, arr)
        if np.any(arrays["delay"] < 0) or np.any(arrays["delay"] >= 2 * np.pi):
            raise ValueError("normalized delays must lie in [0, 2pi)")

    @classmethod
    def from_physical(cls, delay_ns, dod_az, dod_el, doa_az, doa_el, weight,
                      freq_step_hz: float, origin_ns: float = 0.0,
                      doppler=None) -> "PathSet":
        delay_ns = np.atleast_1d(np.asarray(delay_ns, dtype=float))
        return cls(delay=delay_to_normalized(delay_ns, freq_step_hz, origin_ns),
                   delay_ns=delay_ns, dod_az=dod_az, dod_el=dod_el,
                   doa_az=doa_az, doa_el=doa_el, weight=weight, doppler=doppler)

    @classmethod
    def empty(cls) -> "PathSet":
        z = np.zeros(0)
        return cls(z, z, z, z, z, z, z.astype(complex))

    def __len__(self) -> int:
        return self.delay.size

    @property
    def power_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 20.0 * np.log10(np.abs(self.weight))

    def select(self, index) -> "PathSet":
        return PathSet(self.delay[index], self.delay_ns[index],
                       self.dod_az[index], self.dod_el[index],
                       self.doa_az[index], self.doa_el[index],
                       self.weight[index], self.doppler[index])

    def sorted_by_power(self) -> "PathSet":
        return self.select(np.argsort(-np.abs(self.weight), kind="stable"))


@dataclass(frozen=True)
class SystemResponse:
    """Common system frequency response over a uniform frequency grid."""

    values: np.ndarray
    freq_start_hz: float
    freq_step_hz: float

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))
        if self.values.ndim != 1 or self.values.size < 1:
            raise ValueError("system response must be a nonempty vector")
        if np.any(self.values == 0.0):
            raise ValueError("system response must not contain zeros")
        if self.freq_step_hz <= 0:
            raise ValueError("frequency step must be positive")

    @classmethod
    def flat(cls, count: int, bandwidth_hz: float,
             center_hz: float = 28e9) -> "SystemResponse":
        step = bandwidth_hz / count
        start = center_hz - step * (count - 1) / 2.0
        return cls(np.ones(count, dtype=complex), start, step)

    @property
    def count(self) -> int:
        return self.values.size

    @property
    def frequencies(self) -> np.ndarray:
        return self.freq_start_hz + self.freq_step_hz * np.arange(self.count)

    @property
    def delay_span_ns(self) -> float:
        "Unambiguous delay span in nanoseconds."
        return 1e9 / self.freq_step_hz


@dataclass(frozen=True)
class DmcConfig:
    """Exponential-tail diffuse multipath: onset delay, decay, total power."""

    base_delay_ns: float = 50.0
    decay_per_ns: float = 0.01
    power: float = 0.0
    enabled: bool = True

    def __post_init__(self):
        if self.decay_per_ns <= 0:
            raise ValueError("decay rate must be positive")
        if self.power < 0:
            raise ValueError("power must be nonnegative")


@dataclass(frozen=True)
class Dims:
    """Observation extents: frequencies, RX beams, TX beams, snapshots."""

    m_f: int
    m_r: int
    m_t: int
    t: int = 1

    def __post_init__(self):
        if min(self.m_f, self.m_r, self.m_t, self.t) < 1:
            raise ValueError("all dimensions must be >= 1")

    @property
    def total(self) -> int:
        return self.m_f * self.m_r * self.m_t * self.t


@dataclass(frozen=True)
class Observation:
    """Vectorized measurement with its axis ordering and noise level."""

    y: np.ndarray
    dims: Dims
    axis_order: tuple[str, ...] = CANONICAL_AXES
    noise_var: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=complex))
        if sorted(self.axis_order) != sorted(CANONICAL_AXES):
            raise ValueError(f"axis_order must permute {CANONICAL_AXES}")
        if self.y.shape != (self.dims.total,):
            raise ValueError(
                f"data length {self.y.size} != declared size {self.dims.total}")

    def _axis_len(self, name: str) -> int:
        return {"t": self.dims.t, "tx_beam": self.dims.m_t,
                "rx_beam": self.dims.m_r, "f": self.dims.m_f}[name]

    def as_tensor(self) -> np.ndarray:
        "Reshape to the declared axis order (slowest first)."
        return self.y.reshape([self._axis_len(a) for a in self.axis_order])

    def canonical(self) -> "Observation":
        "Reorder data and metadata to the canonical (t, tx, rx, f) layout."
        if self.axis_order == CANONICAL_AXES:
            return self
        perm = [self.axis_order.index(a) for a in CANONICAL_AXES]
        data = self.as_tensor().transpose(perm).reshape(-1)
        return Observation(data, self.dims, CANONICAL_AXES, self.noise_var)

    def reordered(self, axis_order: tuple[str, ...]) -> "Observation":
        "Permute both the data and the ordering tag; contents are unchanged."
        canon = self.canonical()
        perm = [CANONICAL_AXES.index(a) for a in axis_order]
        data = canon.as_tensor().transpose(perm).reshape(-1)
        return Observation(data, self.dims, tuple(axis_order), self.noise_var)

    def with_y(self, y: np.ndarray, noise_var: float | None = None) -> "Observation":
        return Observation(y, self.dims, self.axis_order,
                           self.noise_var if noise_var is None else noise_var)


def _freq_exponents(m_f: int) -> np.ndarray:
    return np.arange(m_f) - (m_f - 1) / 2.0


def path_response_column(paths: PathSet, index: int, tx_eadf: Eadf,
                         rx_eadf: Eadf, sys: SystemResponse,
                         dims: Dims) -> np.ndarray:
    "Unit-weight response vector of one path, canonical ordering."
    b_f = sys.values * np.exp(-1j * _freq_exponents(dims.m_f) * paths.delay[index])
    b_t = evaluate_eadf(tx_eadf, paths.dod_az[index], paths.dod_el[index])
    b_r = evaluate_eadf(rx_eadf, paths.doa_az[index], paths.doa_el[index])
    col = np.einsum("a,b,c->abc", b_t, b_r, b_f).reshape(-1)
    if dims.t > 1:
        snap = np.exp(1j * (np.arange(dims.t) - (dims.t - 1) / 2.0)
                      * paths.doppler[index])
        col = np.kron(snap, col)
    return col


def synthesize_specular(paths: PathSet, tx_eadf: Eadf, rx_eadf: Eadf,
                        sys: SystemResponse, dims: Dims) -> Observation:
    """Sum of weighted path responses; the Khatri-Rao structure is evaluated
    one column at a time, never materialized for all paths."""
    if tx_eadf.n_beams != dims.m_t or rx_eadf.n_beams != dims.m_r:
        raise ValueError("EADF beam counts must match the declared dimensions")
    if sys.count != dims.m_f:
        raise ValueError("system response length must match m_f")
    y = np.zeros(dims.total, dtype=complex)
    for p in range(len(paths)):
        y += paths.weight[p] * path_response_column(paths, p, tx_eadf, rx_eadf,
                                                    sys, dims)
    return Observation(y, dims)


def synthesize_dmc(cfg: DmcConfig, dims: Dims, sys: SystemResponse,
                   seed: int) -> np.ndarray:
    """Draw the diffuse component: circular Gaussian in frequency whose
    power-delay profile decays exponentially past the onset delay.

    Independent across snapshot/beam axes; deterministic for a fixed seed.
    """
    if not cfg.enabled or cfg.power == 0.0:
        return np.zeros(dims.total, dtype=complex)
    rng = np.random.default_rng(seed)
    delay_ns = np.arange(dims.m_f) / (dims.m_f * sys.freq_step_hz) * 1e9
    profile = np.where(delay_ns >= cfg.base_delay_ns,
                       np.exp(-cfg.decay_per_ns * (delay_ns - cfg.base_delay_ns)),
                       0.0)
    if profile.sum() == 0.0:
        raise ValueError("DMC onset delay lies beyond the unambiguous span")
    profile *= cfg.power / profile.sum()
    n_slots = dims.t * dims.m_t * dims.m_r
    scale = np.sqrt(profile / 2.0)
    taps = scale * (rng.standard_normal((n_slots, dims.m_f))
                    + 1j * rng.standard_normal((n_slots, dims.m_f)))
    return np.fft.fft(taps, axis=1).reshape(-1)


def add_noise(obs: Observation, snr_db: float, seed: int) -> Observation:
    """Add circular white Gaussian noise at the requested SNR relative to
    the mean sample power of the observation."""
    if math.isinf(snr_db) and snr_db > 0:
        return obs.with_y(obs.y.copy(), noise_var=0.0)
    signal_power = float(np.mean(np.abs(obs.y) ** 2))
    noise_var = signal_power / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    noise = np.sqrt(noise_var / 2.0) * (rng.standard_normal(obs.y.size)
                                        + 1j * rng.standard_normal(obs.y.size))
    return obs.with_y(obs.y + noise, noise_var=noise_var)


def two_path_geometry(a: float, b: float, d_los: float, freq_step_hz: float,
                      carrier_hz: float = 28e9) -> PathSet:
    """Line-of-sight plus one specular reflection from desk geometry.

    ``a``/``b`` are the reflector legs from TX and RX, ``d_los`` the direct
    distance, all meters.  Departure azimuth of the reflection comes out
    positive, arrival azimuth negative (facing terminals), and weights follow
    the free-space 1/(4 pi d^2) power law with carrier-phase rotation.
    """
    if 2.0 * min(a, b) < d_los:
        raise ValueError("infeasible geometry: reflector legs too short")
    lateral_sq = a * a - (d_los / 2.0) ** 2
    lateral = math.sqrt(max(lateral_sq, 0.0))
    angle = math.atan2(lateral, d_los / 2.0)
    lengths = np.array([d_los, a + b])
    delay_ns = lengths / SPEED_OF_LIGHT * 1e9
    amp = np.sqrt(1.0 / (4.0 * np.pi * lengths ** 2))
    weight = amp * np.exp(-2j * np.pi * carrier_hz * lengths / SPEED_OF_LIGHT)
    half_pi = np.pi / 2.0
    return PathSet.from_physical(
        delay_ns=delay_ns,
        dod_az=[0.0, angle], dod_el=[half_pi, half_pi],
        doa_az=[0.0, -angle], doa_el=[half_pi, half_pi],
        weight=weight, freq_step_hz=freq_step_hz)


_BENCHMARK_ROWS = [
    # delay ns, dep az, dep el, arr az, arr el, power dB
    (100.00, 18.45, 109.53, -31.21, 104.56, -20.00),
    (165.17, -0.70, 90.00, 46.38, 53.39, -22.83),
    (311.45, 33.49, 88.39, -56.56, 55.72, -29.18),
    (383.01, 25.80, 122.38, -1.21, 91.73, -32.29),
    (430.16, 48.45, 98.79, -39.85, 57.74, -34.34),
    (468.86, 46.91, 99.41, 57.44, 115.45, -36.02),
    (561.61, -19.90, 118.76, 25.52, 115.40, -40.05),
    (661.73, 23.85, 114.44, 0.06, 107.80, -44.40),
    (662.94, -36.26, 96.14, -3.47, 61.99, -44.45),
    (990.65, -56.34, 64.63, -52.85, 102.77, -58.68),
]


def benchmark_pathset(freq_step_hz: float) -> PathSet:
    """The fixed 10-path benchmark channel used by the recovery scenarios.

    Powers are relative weights in dB; phases follow a deterministic
    golden-angle rule so the channel is reproducible without an RNG.
    """
    rows = np.array(_BENCHMARK_ROWS)
    amp = 10.0 ** (rows[:, 5] / 20.0)
    phase = 2.0 * np.pi * np.mod((1 + np.arange(len(rows))) * 0.6180339887, 1.0)
    deg = np.pi / 180.0
    return PathSet.from_physical(
        delay_ns=rows[:, 0],
        dod_az=rows[:, 1] * deg, dod_el=rows[:, 2] * deg,
        doa_az=rows[:, 3] * deg, doa_el=rows[:, 4] * deg,
        weight=amp * np.exp(1j * phase), freq_step_hz=freq_step_hz)
