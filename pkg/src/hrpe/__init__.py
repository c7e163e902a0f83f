"""hrpe: phased-array channel-sounder calibration and path estimation.

Desk-scale simulation of a beam-switching MIMO sounder: array and beam-port
modeling, chamber calibration synthesis with realistic impairments, the
two-step pattern/frequency calibration solvers, and super-resolution
multipath estimation with residual-power metrics.
"""

__version__ = "0.1.0"

from .arraymodel import (BORESIGHT, BeamWeights, Direction, ProbeSetup,
                         SPEED_OF_LIGHT, UraGeometry, beam_port_response,
                         dft_beam_bank, distorted_calibration_pattern,
                         element_positions, rotated_positions,
                         steering_response)
from .calibration import (AcquisitionOrder, BaselineResult, CalibrationTensor,
                          LmOptions, MultigainResult, assemble_baseline,
                          extract_common_response, lm_refine_phase,
                          preprocess_measurement, solve_baseline,
                          solve_multigain)
from .eadf import (ComplexPattern, Eadf, ShiftMatrix, ambiguity, compute_eadf,
                   default_gate, eadf_derivative, evaluate_eadf, load_eadf,
                   save_eadf, shift_matrix)
from .estimator import (EstimateReport, EstimatorConfig, apdp,
                        beamforming_aps, estimate_paths, ghost_filter,
                        initialize_paths, match_paths, peak_reduction,
                        per_path_peak_reduction, refine_paths)
from .impairments import (PhaseNoiseModel, apply_phase_noise,
                          generate_misaligned_calibration,
                          measurement_fast_pn)
from .synth import (Dims, DmcConfig, Observation, PathSet, SystemResponse,
                    add_noise, benchmark_pathset, delay_to_normalized,
                    normalized_to_delay, synthesize_dmc, synthesize_specular,
                    two_path_geometry)
from .tensorio import read_tensor, write_tensor
