"""Reproducible experiment runners behind the command-line harness.

Each scenario builds its synthetic world from a validated config, runs the
relevant solvers, and returns JSON-able results plus tables, tensors, and
deferred figure jobs.  Outputs are deterministic for a fixed master seed:
every random draw uses a seed derived from (master, scenario, repetition,
purpose), so worker count and completion order never matter.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import figures, tensorio
from .arraymodel import (BeamWeights, ProbeSetup, UraGeometry,
                         element_positions, dft_beam_bank)
from .calibration import (CalibrationTensor, LmOptions,
                          extract_common_response, assemble_baseline,
                          solve_baseline, solve_multigain)
from .config import ScenarioConfig, derive_seed
from .eadf import ComplexPattern, Eadf, compute_eadf, default_gate
from .estimator import (EstimatorConfig, beamforming_aps, estimate_paths,
                        ghost_filter, match_paths, per_path_peak_reduction)
from .impairments import (PhaseNoiseModel, apply_phase_noise,
                          generate_misaligned_calibration)
from .synth import (Dims, PathSet, SystemResponse, add_noise,
                    benchmark_pathset, synthesize_dmc, synthesize_specular,
                    two_path_geometry)

PATH_TABLE_COLUMNS = ("path_id", "delay_ns", "dod_az_deg", "dod_el_deg",
                      "doa_az_deg", "doa_el_deg", "power_db")


@dataclass
class ScenarioArtifacts:
    """Everything a runner produces, before anything touches the disk."""

    result: dict
    tables: dict[str, tuple[tuple[str, ...], list[list]]] = field(default_factory=dict)
    tensors: dict[str, tuple[np.ndarray, list[tuple[str, int]]]] = field(default_factory=dict)
    figure_jobs: list[tuple[str, object]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# shared builders

def _geometry(cfg: ScenarioConfig) -> UraGeometry:
    a = cfg["array"]
    return UraGeometry.from_carrier(int(a["n_y"]), int(a["n_z"]),
                                    a["carrier_hz"], a["spacing"])


def _system_response(cfg: ScenarioConfig) -> SystemResponse:
    f = cfg["frequency"]
    count = int(f["count"])
    x = np.arange(count) / count
    ripple = f["ripple_db"]
    magnitude = 10.0 ** (0.5 * ripple * np.cos(2.0 * np.pi * 2.0 * x) / 20.0)
    phase = np.radians(15.0) * ripple * np.sin(2.0 * np.pi * 3.0 * x)
    step = f["bandwidth_hz"] / count
    start = cfg["array"]["carrier_hz"] - step * (count - 1) / 2.0
    return SystemResponse(magnitude * np.exp(1j * phase), start, step)


def _beam_bank(cfg: ScenarioConfig, geom: UraGeometry) -> list[BeamWeights]:
    b = cfg["beams"]
    return dft_beam_bank(geom, int(b["count_az"]), int(b["count_el"]))


def _gate(cfg: ScenarioConfig, geom: UraGeometry, azimuth_only: bool
          ) -> tuple[int, int] | None:
    c = cfg["calibration"]
    if int(c["gate_az"]) < 0 or int(c["gate_el"]) < 0:
        return None                      # ungated: keep every mode
    g_az, g_el = default_gate(geom.n_y, geom.n_z)
    if int(c["gate_az"]) > 0:
        g_az = int(c["gate_az"])
    if int(c["gate_el"]) > 0:
        g_el = int(c["gate_el"])
    return (g_az, 1) if azimuth_only else (g_az, g_el)


def _angle_grids(cfg: ScenarioConfig, azimuth_only: bool
                 ) -> tuple[np.ndarray, np.ndarray]:
    # counts derive from the configured steps; grids are built exactly so
    # uniformity survives float accumulation (azimuth count must be even
    # for the elevation mirror rule)
    c = cfg["calibration"]
    n_az = int(round(360.0 / c["az_step_deg"]))
    if n_az % 2:
        n_az += 1
    az = -np.pi + 2.0 * np.pi * np.arange(n_az) / n_az
    if azimuth_only:
        return az, np.array([np.pi / 2.0])
    n_el = int(round(180.0 / c["el_step_deg"])) + 1
    el = np.linspace(0.0, np.pi, n_el)
    return az, el


def _schedule(az_grid: np.ndarray, el_grid: np.ndarray
              ) -> list[tuple[float, float]]:
    # elevation is the outer mechanical loop, azimuth the inner one
    return [(float(a), float(e)) for e in el_grid for a in az_grid]


def sample_beam_ports(geom: UraGeometry, beams: list[BeamWeights],
                      azimuth: np.ndarray, elevation: np.ndarray) -> np.ndarray:
    "Plane-wave beam-port responses at arbitrary directions, shape (B, K)."
    az = np.asarray(azimuth, dtype=float).ravel()
    el = np.asarray(elevation, dtype=float).ravel()
    unit = np.stack([np.cos(az) * np.sin(el), np.sin(az) * np.sin(el),
                     np.cos(el)], axis=-1)
    phases = element_positions(geom) @ unit.T * (2.0 * np.pi / geom.wavelength)
    steering = np.exp(1j * phases) * geom.pattern_gain(az, el)
    weights = np.stack([w.flat for w in beams])
    return weights @ steering


def ideal_pattern(geom: UraGeometry, beams: list[BeamWeights],
                  az_grid: np.ndarray, el_grid: np.ndarray) -> ComplexPattern:
    "Plane-wave beam-port responses sampled on the calibration grid."
    aa, ee = np.meshgrid(az_grid, el_grid, indexing="ij")
    values = sample_beam_ports(geom, beams, aa.ravel(), ee.ravel())
    values = values.reshape(len(beams), az_grid.size, el_grid.size)
    return ComplexPattern(values, az_grid, el_grid)


def ideal_eadf(geom: UraGeometry, beams: list[BeamWeights],
               az_grid: np.ndarray, el_grid: np.ndarray,
               gate: tuple[int, int] | None) -> Eadf:
    return compute_eadf(ideal_pattern(geom, beams, az_grid, el_grid), gate)


def calibrated_eadf(geom: UraGeometry, beams: list[BeamWeights],
                    az_grid: np.ndarray, el_grid: np.ndarray,
                    probe_distance: float, offset: np.ndarray,
                    carrier_hz: float, gate: tuple[int, int] | None,
                    pn_model: PhaseNoiseModel | None = None
                    ) -> tuple[Eadf, CalibrationTensor]:
    """EADF extracted from a (possibly impaired) chamber calibration sweep."""
    probe = ProbeSetup(probe_position=np.array([probe_distance, 0.0, 0.0]),
                       offset=offset, schedule=_schedule(az_grid, el_grid))
    tensor = generate_misaligned_calibration(geom, probe, beams, [carrier_hz])
    if pn_model is not None:
        tensor = apply_phase_noise(tensor, pn_model)
    values = tensor.data[:, :, 0].reshape(len(beams), el_grid.size,
                                          az_grid.size).transpose(0, 2, 1)
    pattern = ComplexPattern(values, az_grid, el_grid)
    return compute_eadf(pattern, gate), tensor


def out_of_gate_energy(pattern: ComplexPattern, gate: tuple[int, int]) -> float:
    "Fraction of EADF energy outside the centered gate window."
    full = compute_eadf(pattern)
    total = float(np.sum(np.abs(full.coefficients) ** 2))
    kept = float(np.sum(np.abs(full.gated(gate).coefficients) ** 2))
    return 1.0 - kept / total


def _estimator_config(cfg: ScenarioConfig) -> EstimatorConfig:
    e = cfg["estimator"]
    return EstimatorConfig(
        max_paths=int(e["max_paths"]),
        detect_threshold_db=e["detect_threshold_db"],
        dynamic_range_db=e["dynamic_range_db"],
        delay_oversample=int(e["delay_oversample"]),
        angle_step_deg=e["angle_step_deg"],
        coarse_angle_step_deg=e["coarse_angle_step_deg"],
        azimuth_span_deg=tuple(e["azimuth_span_deg"]),
        elevation_span_deg=tuple(e["elevation_span_deg"]),
        ghost_window_ns=e["ghost_window_ns"],
        ghost_gap_db=e["ghost_gap_db"],
        max_sweeps=int(e["max_sweeps"]),
        max_joint_passes=int(e["max_joint_passes"]),
        joint_iterations=int(e["joint_iterations"]),
        lm=LmOptions(max_iter=int(e["lm_iterations"]), rel_improve_tol=1e-9),
    )


def _phase_noise_model(cfg: ScenarioConfig, seed: int) -> PhaseNoiseModel | None:
    pn = cfg["impairments"]["phase_noise"]
    if not pn["enabled"]:
        return None
    return PhaseNoiseModel(fast_std_deg=pn["fast_std_deg"],
                           fast_mean_deg=pn["fast_mean_deg"],
                           slow_kind=pn["slow_kind"],
                           slow_step_deg=pn["slow_step_deg"],
                           slow_coherence=pn["slow_coherence"], seed=seed)


def _pathset_rows(paths: PathSet) -> list[list]:
    deg = 180.0 / np.pi
    return [[int(i + 1), float(paths.delay_ns[i]),
             float(paths.dod_az[i] * deg), float(paths.dod_el[i] * deg),
             float(paths.doa_az[i] * deg), float(paths.doa_el[i] * deg),
             float(paths.power_db[i])] for i in range(len(paths))]


def _match_table(truth: PathSet, estimates: PathSet) -> tuple[list[list], dict]:
    """True-vs-estimated rows plus worst-case errors over matched paths."""
    deg = 180.0 / np.pi
    assigned = match_paths(estimates, truth)
    rows = []
    errors = {"delay_ns": [], "angle_deg": [], "power_db": []}
    for i in range(len(truth)):
        j = assigned[i]
        row = [int(i + 1), float(truth.delay_ns[i]),
               float(truth.dod_az[i] * deg), float(truth.dod_el[i] * deg),
               float(truth.doa_az[i] * deg), float(truth.doa_el[i] * deg),
               float(truth.power_db[i])]
        if j is None:
            row += [None] * 6
        else:
            row += [float(estimates.delay_ns[j]),
                    float(estimates.dod_az[j] * deg),
                    float(estimates.dod_el[j] * deg),
                    float(estimates.doa_az[j] * deg),
                    float(estimates.doa_el[j] * deg),
                    float(estimates.power_db[j])]
            errors["delay_ns"].append(abs(float(estimates.delay_ns[j])
                                          - float(truth.delay_ns[i])))
            errors["angle_deg"].append(max(
                abs(estimates.dod_az[j] - truth.dod_az[i]),
                abs(estimates.dod_el[j] - truth.dod_el[i]),
                abs(estimates.doa_az[j] - truth.doa_az[i]),
                abs(estimates.doa_el[j] - truth.doa_el[i])) * deg)
            errors["power_db"].append(abs(float(estimates.power_db[j])
                                          - float(truth.power_db[i])))
        rows.append(row)
    summary = {f"matched_{k}_max": (float(np.max(v)) if v else None)
               for k, v in errors.items()}
    summary["n_matched"] = sum(1 for j in assigned if j is not None)
    summary["per_path"] = {k: [float(x) for x in v] for k, v in errors.items()}
    return rows, summary


_MATCH_COLUMNS = ("path_id", "true_delay_ns", "true_dod_az_deg",
                  "true_dod_el_deg", "true_doa_az_deg", "true_doa_el_deg",
                  "true_power_db", "est_delay_ns", "est_dod_az_deg",
                  "est_dod_el_deg", "est_doa_az_deg", "est_doa_el_deg",
                  "est_power_db")


# ---------------------------------------------------------------------------
# scenario: baseline-calib

def _baseline_truth(cfg: ScenarioConfig):
    geom = _geometry(cfg)
    beams = _beam_bank(cfg, geom)
    sys = _system_response(cfg)
    c = cfg["calibration"]
    step = c["az_step_deg"]
    az = np.radians(np.arange(-180.0, 180.0 + step / 2.0, step))
    schedule = [(float(a), np.pi / 2.0) for a in az]
    return geom, beams, sys, schedule


def run_baseline_calib(cfg: ScenarioConfig) -> ScenarioArtifacts:
    geom, beams, sys, schedule = _baseline_truth(cfg)
    dirs = np.array(schedule)
    # beam-fastest ground-truth pattern rows at the carrier; the schedule
    # includes both +/-180 endpoints (chamber style, never fed to the
    # Fourier model)
    truth_matrix = sample_beam_ports(geom, beams, dirs[:, 0], dirs[:, 1])
    rx_true = truth_matrix.T.reshape(-1)
    tx_true = rx_true.copy()
    g_true = sys.values
    k_true = 0.85 * np.exp(1.1j)
    y1 = np.outer(rx_true, g_true)
    y2 = k_true * np.outer(tx_true, g_true)
    solved = solve_baseline(y1, y2)

    center = (rx_true.size - 1) // 2
    expect_rx = rx_true / rx_true[center]
    expect_g = g_true * rx_true[center]
    expect_k = k_true * tx_true[center] / rx_true[center]
    expect_tx = tx_true / tx_true[center]

    def rel(a, b):
        return float(np.linalg.norm(a - b) / np.linalg.norm(b))

    ideal_metrics = {
        "rel_err_rx": rel(solved.rx_pattern, expect_rx),
        "rel_err_tx": rel(solved.tx_pattern, expect_tx),
        "rel_err_g": rel(solved.freq_response, expect_g),
        "rel_err_k": abs(solved.offset_scale - expect_k) / abs(expect_k),
        "sigma2_over_sigma1": float(solved.singular_values[1]
                                    / solved.singular_values[0]),
    }

    # impaired twin: spherical-probe sweep with mounting offset, phase noise,
    # and a residual through-response drift between the two sessions
    offset = np.asarray(cfg["impairments"]["offset_wavelengths"]) * geom.wavelength
    probe = ProbeSetup(np.array([cfg["calibration"]["probe_distance_m"], 0, 0]),
                       offset=offset, schedule=schedule)
    seed = cfg.seed
    x = np.arange(sys.count) / sys.count
    drift = 10.0 ** (cfg["calibration"]["session_drift_db"]
                     * np.sin(2.0 * np.pi * 1.0 * x) / 20.0) \
        * np.exp(1j * np.radians(cfg["calibration"]["session_drift_deg"])
                 * np.cos(2.0 * np.pi * 1.5 * x))
    tensors = []
    for label, pn_seed in (("rx", derive_seed(seed, cfg.name, 0, "pn-rx")),
                           ("tx", derive_seed(seed, cfg.name, 0, "pn-tx"))):
        tensor = generate_misaligned_calibration(geom, probe, beams,
                                                 sys.frequencies)
        session_g = g_true if label == "rx" else g_true * drift
        tensor = tensor.with_data(tensor.data * session_g)
        model = _phase_noise_model(cfg, pn_seed)
        if model is not None:
            tensor = apply_phase_noise(tensor, model)
        tensors.append(tensor)
    y1_imp, y2_imp = assemble_baseline(tensors[0], tensors[1])
    solved_imp = solve_baseline(y1_imp, y2_imp)
    recon = np.vstack([solved_imp.rx_pattern[:, None] * solved_imp.freq_response,
                       solved_imp.offset_scale * solved_imp.tx_pattern[:, None]
                       * solved_imp.freq_response])
    stacked = np.vstack([y1_imp, y2_imp])
    fit_db = 10.0 * np.log10(float(np.linalg.norm(recon - stacked) ** 2)
                             / float(np.linalg.norm(stacked) ** 2))
    result = {
        "ideal": ideal_metrics,
        "impaired": {
            "sigma_ratio": solved_imp.sigma_ratio,
            "fit_residual_db": fit_db,
        },
        "n_rows": int(2 * rx_true.size),
        "n_freq": sys.count,
    }
    arts = ScenarioArtifacts(result=result)
    arts.tensors["freq_response"] = (solved_imp.freq_response[None, :],
                                     [("set", 1), ("f", sys.count)])
    arts.tensors["rx_pattern"] = (solved_imp.rx_pattern[None, :],
                                  [("set", 1), ("row", solved_imp.rx_pattern.size)])
    sv = solved_imp.singular_values
    arts.figure_jobs += [
        ("singular_values.png",
         lambda p, sv=sv: figures.singular_values(sv, p)),
        ("freq_response.png",
         lambda p, g=solved_imp.freq_response, t=expect_g:
         figures.apdp_comparison(np.arange(g.size),
                                 {"recovered": np.abs(g) ** 2,
                                  "truth (gauge-aligned)": np.abs(t) ** 2},
                                 p, title="|g_f|^2 recovered vs truth")),
    ]
    return arts


# ---------------------------------------------------------------------------
# scenario: multigain-calib

def run_multigain_calib(cfg: ScenarioConfig) -> ScenarioArtifacts:
    geom, beams, sys, schedule = _baseline_truth(cfg)
    dirs = np.array(schedule)
    rows_true = sample_beam_ports(geom, beams, dirs[:, 0], dirs[:, 1]).T.reshape(-1)
    amplitude = np.abs(rows_true)
    amplitude = np.maximum(amplitude, 1e-3 * amplitude.max())
    phase_true = np.angle(rows_true)
    mg = cfg["multigain"]
    n_gains = int(mg["n_gains"])
    master = cfg.seed
    gains_db = np.arange(n_gains) * mg["gain_step_db"]
    gain_results = []
    traces = []
    freq_responses = []
    for i in range(n_gains):
        g_i = sys.values * 10.0 ** (gains_db[i] / 20.0) \
            * np.exp(1j * 0.1 * i * np.sin(np.linspace(0, 2 * np.pi, sys.count)))
        rng = np.random.default_rng(derive_seed(master, cfg.name, i, "sweep"))
        sweep_phase = (rng.uniform(0, 2 * np.pi, amplitude.size)
                       if mg["sweep_phase_noise"] else 0.0)
        y = np.outer(amplitude * np.exp(1j * (phase_true + sweep_phase)), g_i)
        fit = solve_multigain(y, amplitude)
        scale = float(np.linalg.norm(y) ** 2)
        mag_err = float(np.max(np.abs(np.abs(fit.freq_response) - np.abs(g_i))
                               / np.abs(g_i)))
        gain_results.append({
            "gain_db": float(gains_db[i]),
            "final_objective_rel": float(fit.objective[-1] / scale),
            "outer_iterations": int(fit.objective.size - 1),
            "monotone": bool(np.all(np.diff(fit.objective) <= 1e-12 * scale)),
            "freq_mag_max_rel_err": mag_err,
            "converged": fit.converged,
        })
        traces.append(fit.objective)
        freq_responses.append(fit.freq_response)
    # split the baseline response into TX/RX halves and verify the product
    g_tx = np.abs(sys.values) ** 0.5 * np.exp(0.5j * np.angle(sys.values))
    g_rx = sys.values / g_tx
    report = extract_common_response(g_tx, g_rx, sys.values)
    result = {"gains": gain_results, "common_response": {
        "max_dev_db": report["max_dev_db"],
        "mean_dev_db": report["mean_dev_db"],
        "max_dev_deg": report["max_dev_deg"],
    }}
    arts = ScenarioArtifacts(result=result)
    arts.tensors["freq_responses"] = (np.stack(freq_responses),
                                      [("gain", n_gains), ("f", sys.count)])
    arts.figure_jobs.append(
        ("objective_trace.png",
         lambda p, t=traces[0]: figures.objective_trace(t, p)))
    return arts


# ---------------------------------------------------------------------------
# estimation scenarios share this world

@dataclass
class EstimationWorld:
    geom: UraGeometry
    beams: list
    sys: SystemResponse
    dims: Dims
    tx_eadf: Eadf
    rx_eadf: Eadf
    az_grid: np.ndarray
    el_grid: np.ndarray
    gate: tuple[int, int] | None
    azimuth_only: bool


def _estimation_world(cfg: ScenarioConfig, azimuth_only: bool) -> EstimationWorld:
    geom = _geometry(cfg)
    beams = _beam_bank(cfg, geom)
    sys = _system_response(cfg)
    az_grid, el_grid = _angle_grids(cfg, azimuth_only)
    gate = _gate(cfg, geom, azimuth_only)
    eadf = ideal_eadf(geom, beams, az_grid, el_grid, gate)
    dims = Dims(m_f=sys.count, m_r=len(beams), m_t=len(beams), t=1)
    return EstimationWorld(geom, beams, sys, dims, eadf, eadf, az_grid,
                           el_grid, gate, azimuth_only)


def _synthesize(cfg: ScenarioConfig, world: EstimationWorld, paths: PathSet,
                rep: int = 0):
    obs = synthesize_specular(paths, world.tx_eadf, world.rx_eadf, world.sys,
                              world.dims)
    dmc_cfg = cfg["channel"]["dmc"]
    if dmc_cfg["enabled"]:
        from .synth import DmcConfig
        dmc = synthesize_dmc(DmcConfig(dmc_cfg["base_delay_ns"],
                                       dmc_cfg["decay_per_ns"],
                                       dmc_cfg["power"]),
                             world.dims, world.sys,
                             derive_seed(cfg.seed, cfg.name, rep, "dmc"))
        obs = obs.with_y(obs.y + dmc)
    return add_noise(obs, cfg["channel"]["snr_db"],
                     derive_seed(cfg.seed, cfg.name, rep, "noise"))


# ---------------------------------------------------------------------------
# scenario: table1-recovery

def run_table1_recovery(cfg: ScenarioConfig) -> ScenarioArtifacts:
    world = _estimation_world(cfg, azimuth_only=False)
    truth = benchmark_pathset(world.sys.freq_step_hz)
    obs = _synthesize(cfg, world, truth)
    report = estimate_paths(obs, world.tx_eadf, world.rx_eadf, world.sys,
                            _estimator_config(cfg))
    rows, summary = _match_table(truth, report.paths)
    reductions = per_path_peak_reduction(report.observation, report.residual,
                                         world.sys, truth.delay_ns[:9])
    result = {
        "peak_reduction_db": report.peak_reduction_db,
        "per_path_peak_reduction_db": [float(x) for x in reductions],
        "match": summary,
        "n_paths_estimated": len(report.paths),
        "converged": report.converged,
        "sweeps": report.sweeps,
    }
    arts = ScenarioArtifacts(result=result)
    arts.tables["paths"] = (_MATCH_COLUMNS, rows)
    arts.tables["estimates"] = (PATH_TABLE_COLUMNS, _pathset_rows(report.paths))
    arts.tensors["apdp"] = (np.stack([report.apdp_original,
                                      report.apdp_reconstructed,
                                      report.apdp_residual]).astype(complex),
                            [("curve", 3), ("delay", report.delay_ns.size)])
    arts.figure_jobs.append(
        ("apdp.png", lambda p, r=report: figures.apdp_comparison(
            r.delay_ns, {"original": r.apdp_original,
                         "reconstructed": r.apdp_reconstructed,
                         "residual": r.apdp_residual}, p)))
    return arts


# ---------------------------------------------------------------------------
# scenario: misalignment-sweep

def run_misalignment_sweep(cfg: ScenarioConfig) -> ScenarioArtifacts:
    world = _estimation_world(cfg, azimuth_only=False)
    truth = benchmark_pathset(world.sys.freq_step_hz)
    carrier = cfg["array"]["carrier_hz"]
    probe_d = cfg["calibration"]["probe_distance_m"]
    # the reference "ideal" patterns come from the same chamber sweep with a
    # perfectly centered mount, so the probe curvature is common to both
    # sides and only the offset-induced distortion remains under test
    ideal_eadf_sph, _ = calibrated_eadf(
        world.geom, world.beams, world.az_grid, world.el_grid, probe_d,
        np.zeros(3), carrier, world.gate)
    world.tx_eadf = ideal_eadf_sph
    world.rx_eadf = ideal_eadf_sph
    obs = _synthesize(cfg, world, truth)
    est_cfg = _estimator_config(cfg)
    sweep = []
    per_offset_reductions = []
    last_report = None
    for magnitude in cfg["misalignment"]["offsets_wavelengths"]:
        offset = magnitude * world.geom.wavelength * np.ones(3)
        est_eadf, tensor = calibrated_eadf(
            world.geom, world.beams, world.az_grid, world.el_grid, probe_d,
            offset, carrier, world.gate)
        values = tensor.data[:, :, 0].reshape(
            len(world.beams), world.el_grid.size,
            world.az_grid.size).transpose(0, 2, 1)
        spread = out_of_gate_energy(
            ComplexPattern(values, world.az_grid, world.el_grid),
            default_gate(world.geom.n_y, world.geom.n_z))
        report = estimate_paths(obs, est_eadf, est_eadf, world.sys, est_cfg)
        reductions = per_path_peak_reduction(
            report.observation, report.residual, world.sys, truth.delay_ns[:9])
        rows, summary = _match_table(truth, report.paths)
        sweep.append({
            "offset_wavelengths": float(magnitude),
            "peak_reduction_db": report.peak_reduction_db,
            "per_path_peak_reduction_db": [float(x) for x in reductions],
            "mean_per_path_reduction_db": float(np.mean(reductions)),
            "out_of_gate_energy": spread,
            "match": summary,
        })
        per_offset_reductions.append(float(np.mean(reductions)))
        last_report = (report, rows)
    result = {"sweep": sweep}
    arts = ScenarioArtifacts(result=result)
    report, rows = last_report
    arts.tables["paths_at_max_offset"] = (_MATCH_COLUMNS, rows)
    offsets = [s["offset_wavelengths"] for s in sweep]
    arts.figure_jobs += [
        ("peak_reduction_sweep.png",
         lambda p, x=offsets, y=per_offset_reductions: figures.sweep_curve(
             x, y, p, "center offset (wavelengths)",
             "mean per-path peak reduction (dB)",
             title="Misalignment sweep", annotate_band=(25, 35))),
        ("apdp_at_max_offset.png",
         lambda p, r=report: figures.apdp_comparison(
             r.delay_ns, {"original": r.apdp_original,
                          "reconstructed": r.apdp_reconstructed,
                          "residual": r.apdp_residual}, p)),
    ]
    return arts


# ---------------------------------------------------------------------------
# scenario: phase-noise-sweep

def _phase_noise_rep(args) -> dict:
    cfg, rep = args
    world = _estimation_world(cfg, azimuth_only=False)
    truth = benchmark_pathset(world.sys.freq_step_hz)
    carrier = cfg["array"]["carrier_hz"]
    probe_d = cfg["calibration"]["probe_distance_m"]
    ideal_eadf_sph, _ = calibrated_eadf(
        world.geom, world.beams, world.az_grid, world.el_grid, probe_d,
        np.zeros(3), carrier, world.gate)
    world.tx_eadf = ideal_eadf_sph
    world.rx_eadf = ideal_eadf_sph
    obs = _synthesize(cfg, world, truth, rep=rep)
    eadfs = []
    for side in ("tx", "rx"):
        model = _phase_noise_model(
            cfg, derive_seed(cfg.seed, cfg.name, rep, f"pn-{side}"))
        eadf, _ = calibrated_eadf(world.geom, world.beams, world.az_grid,
                                  world.el_grid, probe_d, np.zeros(3),
                                  carrier, world.gate, pn_model=model)
        eadfs.append(eadf)
    report = estimate_paths(obs, eadfs[0], eadfs[1], world.sys,
                            _estimator_config(cfg))
    reductions = per_path_peak_reduction(report.observation, report.residual,
                                         world.sys, truth.delay_ns[:9])
    return {
        "rep": rep,
        "peak_reduction_db": report.peak_reduction_db,
        "mean_per_path_reduction_db": float(np.mean(reductions)),
    }


def _phase_noise_rep_worker(args) -> dict:
    # parallel repetitions pin BLAS to one thread each; oversubscription on
    # small hosts otherwise makes the pool slower than the serial loop
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return _phase_noise_rep(args)
    with threadpool_limits(1):
        return _phase_noise_rep(args)


def run_phase_noise_sweep(cfg: ScenarioConfig) -> ScenarioArtifacts:
    reps = int(cfg["scenario"]["repetitions"])
    workers = int(cfg["scenario"]["workers"])
    jobs = [(cfg, r) for r in range(reps)]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            rep_results = list(pool.map(_phase_noise_rep_worker, jobs))
    else:
        rep_results = [_phase_noise_rep(j) for j in jobs]
    rep_results.sort(key=lambda r: r["rep"])
    overall = np.array([r["peak_reduction_db"] for r in rep_results])
    per_path = np.array([r["mean_per_path_reduction_db"] for r in rep_results])
    result = {
        "repetitions": reps,
        "mean_peak_reduction_db": float(np.mean(overall)),
        "std_peak_reduction_db": float(np.std(overall)),
        "mean_per_path_reduction_db": float(np.mean(per_path)),
        "per_rep": rep_results,
    }
    arts = ScenarioArtifacts(result=result)
    arts.tables["per_rep"] = (("rep", "peak_reduction_db",
                               "mean_per_path_reduction_db"),
                              [[r["rep"], r["peak_reduction_db"],
                                r["mean_per_path_reduction_db"]]
                               for r in rep_results])
    arts.figure_jobs.append(
        ("peak_reduction_reps.png",
         lambda p, y=list(overall): figures.sweep_curve(
             list(range(len(y))), y, p, "repetition", "peak reduction (dB)",
             title="Phase-noise-corrupted calibration", annotate_band=(14, 22))))
    return arts


# ---------------------------------------------------------------------------
# scenario: two-path

def ghost_signature_demo() -> tuple[PathSet, PathSet]:
    """A chamber-style estimate list holding a known ghost, and its filtered
    version: the weak near-duplicate of the strong reflection is removed."""
    half_pi = np.pi / 2
    deg = np.pi / 180.0
    paths = PathSet.from_physical(
        delay_ns=[20.30, 22.55, 55.47, 22.40],
        dod_az=np.array([-1.43, 26.27, -1.18, 6.54]) * deg,
        dod_el=[half_pi] * 4,
        doa_az=np.array([-0.14, -25.55, -0.25, 13.57]) * deg,
        doa_el=[half_pi] * 4,
        weight=10.0 ** (np.array([-23.80, -28.83, -40.94, -46.74]) / 20.0),
        freq_step_hz=100e6 / 257)
    return paths, ghost_filter(paths)


def run_two_path(cfg: ScenarioConfig) -> ScenarioArtifacts:
    world = _estimation_world(cfg, azimuth_only=True)
    tp = cfg["two_path"]
    truth = two_path_geometry(tp["a_m"], tp["b_m"], tp["d_los_m"],
                              world.sys.freq_step_hz,
                              carrier_hz=cfg["array"]["carrier_hz"])
    obs = _synthesize(cfg, world, truth)
    report = estimate_paths(obs, world.tx_eadf, world.rx_eadf, world.sys,
                            _estimator_config(cfg))
    rows, summary = _match_table(truth, report.paths)
    assigned = match_paths(report.paths, truth)
    extra_delay = None
    if assigned[0] is not None and assigned[1] is not None:
        extra_delay = float(report.paths.delay_ns[assigned[1]]
                            - report.paths.delay_ns[assigned[0]])
    demo_before, demo_after = ghost_signature_demo()
    result = {
        "true_extra_delay_ns": float(truth.delay_ns[1] - truth.delay_ns[0]),
        "est_extra_delay_ns": extra_delay,
        "true_reflection_dod_deg": float(np.degrees(truth.dod_az[1])),
        "true_reflection_doa_deg": float(np.degrees(truth.doa_az[1])),
        "true_los_power_db": float(truth.power_db[0]),
        "match": summary,
        "peak_reduction_db": report.peak_reduction_db,
        "ghost_demo_removed": len(demo_before) - len(demo_after),
        "n_paths_estimated": len(report.paths),
    }
    arts = ScenarioArtifacts(result=result)
    arts.tables["paths"] = (_MATCH_COLUMNS, rows)
    arts.tables["estimates"] = (PATH_TABLE_COLUMNS, _pathset_rows(report.paths))
    arts.tensors["apdp"] = (np.stack([report.apdp_original,
                                      report.apdp_reconstructed,
                                      report.apdp_residual]).astype(complex),
                            [("curve", 3), ("delay", report.delay_ns.size)])
    arts.figure_jobs.append(
        ("apdp.png", lambda p, r=report: figures.apdp_comparison(
            r.delay_ns, {"original": r.apdp_original,
                         "reconstructed": r.apdp_reconstructed,
                         "residual": r.apdp_residual}, p)))
    return arts


# ---------------------------------------------------------------------------
# scenario: two-pole

def _count_local_maxima(power: np.ndarray, min_rel_db: float = 6.0) -> int:
    db = 10.0 * np.log10(np.maximum(power, 1e-300))
    threshold = db.max() - min_rel_db
    padded = np.pad(db, 1, constant_values=-np.inf)
    count = 0
    for i in range(1, padded.shape[0] - 1):
        for j in range(1, padded.shape[1] - 1):
            here = padded[i, j]
            if here < threshold:
                continue
            patch = padded[i - 1:i + 2, j - 1:j + 2].copy()
            patch[1, 1] = -np.inf
            if here > patch.max():
                count += 1
    return count


def _two_pole_truth(cfg: ScenarioConfig, separation_deg: float,
                    freq_step_hz: float) -> PathSet:
    tp = cfg["two_pole"]
    deg = np.pi / 180.0
    half_pi = np.pi / 2
    doa = np.array([tp["center_doa_deg"] + separation_deg / 2.0,
                    tp["center_doa_deg"] - separation_deg / 2.0]) * deg
    dod_half = tp["dod_ratio"] * separation_deg / 2.0
    dod = np.array([30.0 + dod_half, 30.0 - dod_half]) * deg
    delays = np.array([tp["base_delay_ns"],
                       tp["base_delay_ns"] + tp["delay_gap_ns"]])
    amp = 10.0 ** (tp["power_db"] / 20.0)
    # carrier-phase weights, as the physical path lengths would give
    weight = amp * np.exp(-2j * np.pi * 28e9 * delays * 1e-9)
    return PathSet.from_physical(delays, dod, [half_pi] * 2, doa,
                                 [half_pi] * 2, weight, freq_step_hz)


def run_two_pole(cfg: ScenarioConfig) -> ScenarioArtifacts:
    world = _estimation_world(cfg, azimuth_only=True)
    est_cfg = _estimator_config(cfg)
    sweep = []
    aps_jobs = []
    for idx, sep in enumerate(cfg["two_pole"]["separations_deg"]):
        truth = _two_pole_truth(cfg, sep, world.sys.freq_step_hz)
        obs = _synthesize(cfg, world, truth, rep=idx)
        report = estimate_paths(obs, world.tx_eadf, world.rx_eadf, world.sys,
                                est_cfg)
        assigned = match_paths(report.paths, truth)
        resolved = all(
            j is not None
            and abs(report.paths.doa_az[j] - truth.doa_az[i]) < np.radians(2.0)
            and abs(report.paths.dod_az[j] - truth.dod_az[i]) < np.radians(2.0)
            for i, j in enumerate(assigned))
        az_deg, aps = beamforming_aps(obs, world.tx_eadf, world.rx_eadf)
        n_peaks = _count_local_maxima(aps)
        # merging is judged along the swept arrival axis: the profile over
        # arrival azimuth, maximized over departures near the true pair
        dod_deg = np.degrees([truth.dod_az.min(), truth.dod_az.max()])
        band = (az_deg >= dod_deg[0] - 8.0) & (az_deg <= dod_deg[1] + 8.0)
        profile = aps[band].max(axis=0)
        profile_db = 10.0 * np.log10(profile / profile.max())
        doa_peaks = sum(
            1 for k in range(1, az_deg.size - 1)
            if profile_db[k] > profile_db[k - 1]
            and profile_db[k] > profile_db[k + 1] and profile_db[k] > -6.0)
        sweep.append({
            "separation_deg": float(sep),
            "estimator_resolved": bool(resolved),
            "aps_doa_peaks": int(doa_peaks),
            "aps_local_maxima": int(n_peaks),
            "n_paths_estimated": len(report.paths),
        })
        if idx == 0 or abs(sep - 10.0) < 1e-9:
            marks = [(float(np.degrees(truth.dod_az[i])),
                      float(np.degrees(truth.doa_az[i]))) for i in range(2)]
            aps_jobs.append((f"aps_sep{sep:g}.png", az_deg, aps, marks, sep))
    result = {"sweep": sweep}
    arts = ScenarioArtifacts(result=result)
    arts.tables["resolution"] = (
        ("separation_deg", "estimator_resolved", "aps_doa_peaks",
         "aps_local_maxima"),
        [[s["separation_deg"], s["estimator_resolved"], s["aps_doa_peaks"],
          s["aps_local_maxima"]] for s in sweep])
    for name, az_deg, aps, marks, sep in aps_jobs:
        arts.figure_jobs.append(
            (name, lambda p, a=az_deg, z=aps, m=marks, s=sep:
             figures.aps_heatmap(a, z, p, marks=m,
                                 title=f"Beamforming spectrum, {s:g} deg apart")))
        arts.tensors[f"aps_sep{sep:g}"] = (aps.astype(complex),
                                           [("dod_az", aps.shape[0]),
                                            ("doa_az", aps.shape[1])])
    return arts


# ---------------------------------------------------------------------------
# dispatch and IO

SCENARIOS = {
    "baseline-calib": run_baseline_calib,
    "multigain-calib": run_multigain_calib,
    "misalignment-sweep": run_misalignment_sweep,
    "phase-noise-sweep": run_phase_noise_sweep,
    "table1-recovery": run_table1_recovery,
    "two-path": run_two_path,
    "two-pole": run_two_pole,
}


def export_tables(out_dir: Path, name: str, columns, rows) -> list[Path]:
    "Write one table as CSV and JSON with a stable column order."
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)
    json_path = out_dir / f"{name}.json"
    payload = [dict(zip(columns, row)) for row in rows]
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return [csv_path, json_path]


def resolve_output_dir(cfg: ScenarioConfig, override: str | None = None) -> Path:
    """CLI --output beats HRPE_OUTPUT_ROOT, which re-roots the configured dir."""
    if override:
        return Path(override)
    root = os.environ.get("HRPE_OUTPUT_ROOT")
    configured = Path(cfg["scenario"]["output_dir"]) / cfg.name
    if root:
        return Path(root) / configured
    return configured


def run_scenario(cfg: ScenarioConfig, out_dir: Path | None = None) -> dict:
    """Run one scenario and write its artifacts; returns a summary manifest."""
    out_dir = Path(out_dir) if out_dir is not None else resolve_output_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    artifacts = SCENARIOS[cfg.name](cfg)
    elapsed = time.time() - started
    files = []

    result_path = out_dir / "result.json"
    result_path.write_text(json.dumps(artifacts.result, indent=2,
                                      sort_keys=True, allow_nan=True) + "\n")
    files.append(result_path)
    for name, (columns, rows) in artifacts.tables.items():
        files += export_tables(out_dir, name, columns, rows)
    for name, (data, axes) in artifacts.tensors.items():
        path = out_dir / f"{name}.hrt"
        tensorio.write_tensor(path, data, axes)
        files.append(path)
    if cfg["scenario"]["figures"]:
        for name, job in artifacts.figure_jobs:
            files.append(job(out_dir / name))

    import hrpe

    manifest = {
        "scenario": cfg.name,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "versions": {"hrpe": hrpe.__version__, "numpy": np.__version__},
        "elapsed_s": elapsed,
        "files": sorted(p.name for p in files),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {"result": artifacts.result, "out_dir": str(out_dir),
            "manifest": manifest}
