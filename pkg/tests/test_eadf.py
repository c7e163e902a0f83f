import numpy as np
import pytest
from numpy.testing import assert_allclose

from hrpe.arraymodel import SPEED_OF_LIGHT, ProbeSetup, UraGeometry, dft_beam_bank
from hrpe.eadf import (ComplexPattern, Eadf, ambiguity, compute_eadf,
                       default_gate, eadf_derivative, evaluate_eadf,
                       load_eadf, save_eadf, shift_matrix)

WAVELENGTH = SPEED_OF_LIGHT / 28e9


def grids(n_az=36, n_el=19):
    az = -np.pi + 2 * np.pi * np.arange(n_az) / n_az
    el = np.linspace(0.0, np.pi, n_el)
    return az, el


def smooth_random_pattern(n_beams=3, n_az=36, n_el=19, seed=5, modes=4):
    """Band-limited random pattern built directly from low Fourier modes, so
    its EADF is known to be exactly representable."""
    az, el = grids(n_az, n_el)
    rng = np.random.default_rng(seed)
    m = np.arange(-modes, modes + 1)
    values = np.zeros((n_beams, n_az, n_el), dtype=complex)
    for b in range(n_beams):
        coeff = (rng.standard_normal((m.size, m.size))
                 + 1j * rng.standard_normal((m.size, m.size)))
        coeff /= np.abs(m[:, None]) + np.abs(m[None, :]) + 1.0
        values[b] = np.einsum("mn,ma,ne->ae", coeff,
                              np.exp(1j * np.outer(m, az)),
                              np.exp(1j * np.outer(m, el)))
    return ComplexPattern(values, az, el)


class TestComputeEvaluateRoundTrip:
    def test_constant_pattern_single_dc_mode(self):
        az, el = grids()
        values = np.full((1, az.size, el.size), 2.5 - 1.0j)
        eadf = compute_eadf(ComplexPattern(values, az, el))
        peak = np.abs(eadf.coefficients[0])
        dc_az = np.flatnonzero(eadf.mode_az == 0)[0]
        dc_el = np.flatnonzero(eadf.mode_el == 0)[0]
        assert_allclose(eadf.coefficients[0, dc_az, dc_el], 2.5 - 1.0j,
                        rtol=1e-12)
        peak[dc_az, dc_el] = 0.0
        assert peak.max() < 1e-12

    def test_fourier_basis_lands_on_single_mode(self):
        az, _ = grids()
        q = 3
        values = np.exp(1j * q * az)[None, :, None]
        eadf = compute_eadf(ComplexPattern(values, az, np.array([np.pi / 2])))
        idx_az = np.flatnonzero(eadf.mode_az == q)[0]
        assert_allclose(eadf.coefficients[0, idx_az, 0], 1.0, rtol=1e-12)
        rest = np.abs(eadf.coefficients[0]).sum() - 1.0
        assert rest < 1e-10

    def test_fourier_basis_2d_even_mode(self):
        # even azimuth modes survive the elevation mirror extension unchanged
        az, el = grids()
        q = 4
        values = np.exp(1j * q * az)[None, :, None] * np.ones((1, 1, el.size))
        eadf = compute_eadf(ComplexPattern(values, az, el))
        idx_az = np.flatnonzero(eadf.mode_az == q)[0]
        idx_el = np.flatnonzero(eadf.mode_el == 0)[0]
        assert_allclose(eadf.coefficients[0, idx_az, idx_el], 1.0, rtol=1e-12)
        rest = np.abs(eadf.coefficients[0]).sum() - 1.0
        assert rest < 1e-10

    def test_round_trip_at_grid_points(self):
        pattern = smooth_random_pattern()
        eadf = compute_eadf(pattern)
        values = evaluate_eadf(eadf, pattern.azimuth[:, None],
                               pattern.elevation[None, :])
        err = np.abs(values - pattern.values) / np.abs(pattern.values).max()
        assert err.max() < 1e-10

    def test_round_trip_azimuth_only(self):
        az, _ = grids()
        rng = np.random.default_rng(3)
        values = (rng.standard_normal((2, az.size, 1))
                  + 1j * rng.standard_normal((2, az.size, 1)))
        pattern = ComplexPattern(values, az, np.array([np.pi / 2]))
        eadf = compute_eadf(pattern)
        assert eadf.azimuth_only
        out = evaluate_eadf(eadf, az, np.full(az.size, np.pi / 2))
        assert_allclose(out, values[:, :, 0], atol=1e-10)

    def test_constant_pattern_constant_off_grid(self):
        az, el = grids()
        values = np.full((1, az.size, el.size), 1.0 + 1.0j)
        eadf = compute_eadf(ComplexPattern(values, az, el))
        assert_allclose(evaluate_eadf(eadf, 0.1234, 1.271)[0], 1.0 + 1.0j,
                        rtol=1e-10)

    def test_azimuth_periodicity(self):
        pattern = smooth_random_pattern(seed=11)
        eadf = compute_eadf(pattern)
        a = evaluate_eadf(eadf, 0.37, 1.1)
        b = evaluate_eadf(eadf, 0.37 + 2 * np.pi, 1.1)
        assert_allclose(a, b, rtol=1e-12)

    def test_interpolation_error_shrinks_with_gate(self):
        # evaluate a smooth URA beam pattern off-grid with growing gates
        geom = UraGeometry(8, 2, WAVELENGTH)
        beams = dft_beam_bank(geom, 5, 1)
        from hrpe.scenarios import ideal_pattern
        az, el = grids(72, 37)
        pattern = ideal_pattern(geom, beams, az, el)
        full = compute_eadf(pattern)
        probe_az = np.linspace(-1.0, 1.0, 40)
        probe_el = np.full(40, 1.3)
        reference = evaluate_eadf(full, probe_az, probe_el)
        errs = []
        for gate_az in (9, 17, 33):
            gated = full.gated((gate_az, 5))
            got = evaluate_eadf(gated, probe_az, probe_el)
            errs.append(float(np.abs(got - reference).max()))
        assert errs[0] > errs[1] > errs[2]

    def test_nonuniform_grid_rejected(self):
        az = np.array([-np.pi, -1.0, 0.0, 2.0])
        with pytest.raises(ValueError):
            ComplexPattern(np.ones((1, 4, 1)), az, np.array([np.pi / 2]))


class TestDerivatives:
    def test_constant_pattern_zero_gradient(self):
        az, el = grids()
        values = np.full((1, az.size, el.size), 3.0 + 0j)
        eadf = compute_eadf(ComplexPattern(values, az, el))
        d_az, d_el = eadf_derivative(eadf, 0.4, 1.2)
        assert abs(d_az[0]) < 1e-12
        assert abs(d_el[0]) < 1e-12

    def test_fourier_mode_analytic_derivative(self):
        az, el = grids()
        q = 4
        values = np.exp(1j * q * az)[None, :, None] * np.ones((1, 1, el.size))
        eadf = compute_eadf(ComplexPattern(values, az, el))
        point = 0.213
        d_az, _ = eadf_derivative(eadf, point, 1.0)
        value = evaluate_eadf(eadf, point, 1.0)
        assert_allclose(d_az, 1j * q * value, rtol=1e-10)

    def test_matches_central_finite_differences(self):
        pattern = smooth_random_pattern(seed=21)
        eadf = compute_eadf(pattern)
        h = 1e-5
        for point in [(0.3, 1.2), (-1.1, 0.7), (2.0, 2.3)]:
            az0, el0 = point
            d_az, d_el = eadf_derivative(eadf, az0, el0)
            fd_az = (evaluate_eadf(eadf, az0 + h, el0)
                     - evaluate_eadf(eadf, az0 - h, el0)) / (2 * h)
            fd_el = (evaluate_eadf(eadf, az0, el0 + h)
                     - evaluate_eadf(eadf, az0, el0 - h)) / (2 * h)
            scale = np.abs(d_az).max() + np.abs(d_el).max()
            assert np.abs(d_az - fd_az).max() < 1e-4 * scale
            assert np.abs(d_el - fd_el).max() < 1e-4 * scale


class TestShiftMatrix:
    def test_zero_parameter_all_ones(self):
        assert_allclose(shift_matrix(6, [0.0]).values, np.ones((6, 1)),
                        atol=1e-15)

    def test_single_row_is_one(self):
        assert_allclose(shift_matrix(1, [0.9, -2.0]).values,
                        np.ones((1, 2)), atol=1e-15)

    def test_conjugate_symmetry(self):
        mu = np.array([0.3, -1.2, 2.9])
        assert_allclose(shift_matrix(8, -mu).values,
                        np.conj(shift_matrix(8, mu).values), rtol=1e-12)

    def test_unit_modulus_and_gram_diagonal(self):
        sm = shift_matrix(9, [0.4, 1.0, -0.7])
        assert_allclose(np.abs(sm.values), 1.0, rtol=1e-14)
        gram = sm.values.conj().T @ sm.values
        assert_allclose(np.diag(gram).real, 9.0, rtol=1e-12)

    def test_centered_exponents(self):
        sm = shift_matrix(4, [np.pi / 4])
        expected = np.exp(1j * (np.arange(4) - 1.5) * np.pi / 4)
        assert_allclose(sm.values[:, 0], expected, rtol=1e-12)


class TestAmbiguity:
    def test_identical_inputs_unity(self):
        pattern = smooth_random_pattern(seed=2)
        eadf = compute_eadf(pattern)

        def fn(d):
            return evaluate_eadf(eadf, d[0], d[1])

        value = ambiguity(fn, fn, (0.3, 1.5), (0.3, 1.5))
        assert_allclose(value, 1.0, rtol=1e-12)

    def test_bounded_by_one(self):
        pattern = smooth_random_pattern(seed=9)
        eadf = compute_eadf(pattern)

        def fn(d):
            return evaluate_eadf(eadf, d[0], d[1])

        rng = np.random.default_rng(0)
        for _ in range(20):
            d1 = (rng.uniform(-np.pi, np.pi), rng.uniform(0.2, 2.9))
            d2 = (rng.uniform(-np.pi, np.pi), rng.uniform(0.2, 2.9))
            assert abs(ambiguity(fn, fn, d1, d2)) <= 1.0 + 1e-12

    def test_zero_vector_rejected(self):
        def zero(_):
            return np.zeros(4, dtype=complex)

        with pytest.raises(ValueError):
            ambiguity(zero, zero, (0, 1), (0, 1))

    def test_misaligned_cross_ambiguity_ridge(self):
        # ungated ideal vs 3-lambda-distorted pattern at 90 deg elevation:
        # the best match per probe direction stays high and near the diagonal
        from hrpe.scenarios import ideal_eadf, calibrated_eadf
        geom = UraGeometry(8, 2, WAVELENGTH)
        beams = dft_beam_bank(geom, 10, 2)
        az = -np.pi + 2 * np.pi * np.arange(72) / 72
        el = np.linspace(0.0, np.pi, 37)
        ideal = ideal_eadf(geom, beams, az, el, None)
        distorted, _ = calibrated_eadf(geom, beams, az, el, 5.0,
                                       3.0 * WAVELENGTH * np.ones(3), 28e9,
                                       None)
        scan = np.radians(np.arange(-60.0, 60.5, 2.0))
        e_ideal = evaluate_eadf(ideal, scan, np.full(scan.size, np.pi / 2))
        e_dist = evaluate_eadf(distorted, scan, np.full(scan.size, np.pi / 2))
        e_ideal = e_ideal / np.linalg.norm(e_ideal, axis=0)
        e_dist = e_dist / np.linalg.norm(e_dist, axis=0)
        cross = np.abs(e_ideal.conj().T @ e_dist)
        ridge = cross.max(axis=1)
        assert ridge.min() > 0.9
        offsets = np.abs(np.argmax(cross, axis=1) - np.arange(scan.size))
        assert np.median(offsets) <= 2.0


class TestGating:
    def test_default_gate_matches_aperture(self):
        assert default_gate(8, 2) == (17, 5)

    def test_gate_reduces_mode_count(self):
        pattern = smooth_random_pattern(n_az=40, n_el=21)
        eadf = compute_eadf(pattern, gate=(7, 5))
        assert eadf.mode_az.size == 7
        assert eadf.mode_el.size == 5
        assert_allclose(eadf.mode_az, np.arange(-3, 4))

    def test_out_of_gate_energy_grows_with_misalignment(self):
        # corner-element pattern spreads in mode space as the offset grows
        from hrpe.arraymodel import element_positions, orientation_matrix
        geom = UraGeometry(8, 2, WAVELENGTH)
        az = -np.pi + 2 * np.pi * np.arange(72) / 72
        el = np.linspace(0.0, np.pi, 37)
        schedule = [(a, e) for e in el for a in az]
        gate = (17, 5)
        energies = []
        for scale in (0.0, 1.0, 2.0, 3.0):
            offset = scale * WAVELENGTH * np.ones(3)
            pos0 = element_positions(geom)[0] + offset
            values = np.empty((1, az.size, el.size), dtype=complex)
            for j, (a, e) in enumerate(schedule):
                rot = orientation_matrix((a, e))
                d = np.linalg.norm(rot @ pos0 - np.array([5.0, 0, 0]))
                values[0, j % az.size, j // az.size] = np.exp(
                    -2j * np.pi * 28e9 * d / SPEED_OF_LIGHT)
            pattern = ComplexPattern(values, az, el)
            full = compute_eadf(pattern)
            total = float(np.sum(np.abs(full.coefficients) ** 2))
            kept = float(np.sum(np.abs(full.gated(gate).coefficients) ** 2))
            energies.append(1.0 - kept / total)
        assert energies[0] < energies[1] < energies[2] < energies[3]


class TestSaveLoad:
    def test_round_trip(self, tmp_path):
        pattern = smooth_random_pattern(seed=6)
        eadf = compute_eadf(pattern, gate=(9, 7))
        path = tmp_path / "pattern.hrt"
        save_eadf(path, eadf)
        loaded = load_eadf(path)
        assert_allclose(loaded.coefficients, eadf.coefficients, rtol=0)
        assert_allclose(loaded.mode_az, eadf.mode_az)
        assert_allclose(loaded.mode_el, eadf.mode_el)
