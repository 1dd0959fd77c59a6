import math
import itertools
import numpy as np
import pytest
from numpy.testing import assert_allclose
from fmcwlab.core import Target, Detection, DoaMethod, SnapshotSet, ArrayGeometry, CovarianceMatrix
from fmcwlab.doa import (angle_grid,
                         covariance,
                         cs_solve,
                         ConvergenceError,
                         hermitian_eig,
                         steering_vector,
                         spectrum_peaks,
                         steering_matrix,
                         range_angle_map,
                         lasso_objective,
                         build_dictionary,
                         extract_snapshots,
                         cs_angle_spectrum,
                         fft_angle_spectrum,
                         optimality_residual,
                         music_pseudospectrum)
from fmcwlab.synth import synthesize
from fmcwlab.pipeline import match_peaks
from fmcwlab.specproc import range_profile


ULA = ArrayGeometry(n_rx=8)
FINE_GRID = angle_grid(-90, 90, 0.1)
CS_GRID = angle_grid(-90, 90, 1.0)


def at_bin(range_bin, cpi=0) -> Detection:
    return Detection(range_bin, 0, float(range_bin), 0.0, 1.0, 1.0, cpi)


def source_snapshots(angles, count, sigma=0.0, seed=0, array=ULA) -> SnapshotSet:
    """Uncorrelated unit-power sources plus white noise of standard deviation ``sigma``."""
    rng = np.random.default_rng(seed)
    a = steering_matrix(angles, array)
    s = (rng.standard_normal((len(angles), count)) + 1j * rng.standard_normal((len(angles), count))) / math.sqrt(2)
    x = a @ s
    if sigma > 0.0:
        x = x + sigma / math.sqrt(2) * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
    return SnapshotSet(x, 0, 0)


def random_hermitian(rng, n=8) -> np.ndarray:
    m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return m + m.conj().T


def resolves(spectrum, truth) -> bool:
    _, matched = match_peaks(truth, spectrum.peak_angles, 0.5 * abs(truth[1] - truth[0]))
    return matched == len(truth)


def best_sparse_support(y, phi, size):
    best, best_support = np.inf, None
    for support in itertools.combinations(range(phi.shape[1]), size):
        sub = phi[:, list(support)]
        coef, *_ = np.linalg.lstsq(sub, y, rcond=None)
        residual = np.linalg.norm(y - sub @ coef)
        if residual < best:
            best, best_support = residual, support
    return best_support


def test_angle_grid():
    assert FINE_GRID.size == 1801
    assert FINE_GRID[0] == -90.0 and FINE_GRID[-1] == 90.0
    assert FINE_GRID[900] == 0.0
    assert {-15.0, 10.0} <= set(FINE_GRID.tolist())
    assert CS_GRID.size == 181
    with pytest.raises(ValueError):
        angle_grid(0, 10, 0.0)


def test_steering_vector():
    assert_allclose(steering_vector(0.0, ULA), np.ones(8))
    assert_allclose(steering_vector(30.0, ULA), np.exp(0.5j * np.pi * np.arange(8)), atol=1e-12)
    assert_allclose(np.abs(steering_vector(-41.0, ULA)), 1.0)
    assert_allclose(steering_matrix([0.0, 30.0], ULA)[:, 1], steering_vector(30.0, ULA))


def test_snapshot_phase_follows_steering_vector(scenario_factory):
    cube = synthesize(scenario_factory([(50, 10, -15)]))
    snap = extract_snapshots(range_profile(cube), at_bin(50))
    assert (snap.n_rx, snap.count) == (8, 256)
    expected = np.angle(steering_vector(-15.0, ULA)[1] / steering_vector(-15.0, ULA)[0])
    step = np.angle(snap.snapshots[1:, :] / snap.snapshots[:-1, :])
    assert np.max(np.abs(step - expected)) < 1e-6


def test_snapshots_out_of_range():
    cube = np.zeros((16, 4, 8, 2), dtype=complex)
    with pytest.raises(ValueError):
        extract_snapshots(cube, at_bin(16))
    with pytest.raises(ValueError):
        extract_snapshots(cube, at_bin(3, cpi=2))


def test_spectrum_peaks():
    angles = np.arange(5.0)
    assert spectrum_peaks(angles, np.array([0.0, 3.0, 1.0, 5.0, 2.0])) == ((3.0, 5.0), (1.0, 3.0))
    assert spectrum_peaks(angles[:3], np.array([5.0, 1.0, 2.0])) == ((0.0, 5.0), (2.0, 2.0))
    assert spectrum_peaks(angles[:3], np.array([5.0, 1.0, 2.0]), 1) == ((0.0, 5.0),)


def test_fft_spectrum_matches_zero_padded_dft():
    snap = source_snapshots([-15.0, 10.0], 32, sigma=0.1, seed=2)
    spectrum = fft_angle_spectrum(snap, 256, ULA)
    direct = np.sum(np.abs(np.fft.fft(snap.snapshots, n=256, axis=0)) ** 2, axis=1)
    k = np.round(256 * ULA.rx_spacing_wl * np.sin(np.radians(spectrum.angles_deg))).astype(int)
    assert spectrum.angles_deg.size == 256
    assert_allclose(spectrum.power, direct[k % 256], rtol=0, atol=1e-9 * direct.max())


def test_fft_broadside_peak():
    spectrum = fft_angle_spectrum(source_snapshots([0.0], 16), 256, ULA, n_peaks=1)
    assert spectrum.method == DoaMethod.FFT
    assert spectrum.peak_angles == (0.0,)


@pytest.mark.parametrize('n_fft', [4, 100])
def test_fft_size_rejected(n_fft):
    with pytest.raises(ValueError):
        fft_angle_spectrum(source_snapshots([0.0], 4), n_fft, ULA)


def test_covariance():
    r = covariance(SnapshotSet(np.array([[1.0], [1j]]), 0, 0))
    assert_allclose(r.matrix, [[1, -1j], [1j, 1]])
    assert r.size == 2


def test_covariance_of_white_noise():
    rng = np.random.default_rng(12)
    x = (rng.standard_normal((8, 10000)) + 1j * rng.standard_normal((8, 10000))) / math.sqrt(2)
    r = covariance(SnapshotSet(x, 0, 0)).matrix
    assert np.max(np.abs(r - np.eye(8))) < 0.05
    assert_allclose(r, r.conj().T)


def test_hermitian_eig_diagonal():
    values, vectors = hermitian_eig(np.diag([3.0, 1.0, 2.0]))
    assert_allclose(values, [3.0, 2.0, 1.0])
    assert_allclose(np.abs(vectors), [[1, 0, 0], [0, 0, 1], [0, 1, 0]], atol=1e-12)


def test_hermitian_eig_reconstruction():
    rng = np.random.default_rng(0)
    for _ in range(100):
        r = random_hermitian(rng)
        values, vectors = hermitian_eig(r)
        norm = np.linalg.norm(r, 2)
        assert np.all(np.diff(values) <= 0.0)
        assert np.linalg.norm(vectors @ np.diag(values) @ vectors.conj().T - r) <= 1e-9 * norm
        assert np.max(np.abs(vectors.conj().T @ vectors - np.eye(8))) <= 1e-9
        residual = np.linalg.norm(r @ vectors - vectors * values, axis=0)
        assert np.all(residual <= 1e-9 * norm)


def test_hermitian_eig_psd_input():
    r = covariance(source_snapshots([-20.0], 3, sigma=0.0))
    values, _ = hermitian_eig(r)
    assert values.min() >= -1e-10 * np.trace(r.matrix).real


def test_hermitian_eig_rejects():
    with pytest.raises(ValueError):
        hermitian_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        hermitian_eig(np.ones((2, 3)))


def test_music_noiseless_exact_peaks():
    r = covariance(source_snapshots([-15.0, 10.0], 256))
    spectrum = music_pseudospectrum(r, 2, FINE_GRID, ULA)
    assert spectrum.method == DoaMethod.MUSIC
    assert sorted(spectrum.peak_angles) == [-15.0, 10.0]
    assert np.all(np.isfinite(spectrum.power))


def test_music_scale_invariant():
    r = covariance(source_snapshots([-15.0, 10.0], 64, sigma=0.3, seed=4))
    scaled = CovarianceMatrix(5.0 * r.matrix)
    a = music_pseudospectrum(r, 2, FINE_GRID, ULA)
    b = music_pseudospectrum(scaled, 2, FINE_GRID, ULA)
    assert_allclose(a.power, b.power, rtol=1e-6)


@pytest.mark.parametrize('d', [0, 8])
def test_music_source_count_rejected(d):
    r = covariance(source_snapshots([0.0], 16, sigma=0.1))
    with pytest.raises(ValueError):
        music_pseudospectrum(r, d, FINE_GRID, ULA)


def test_music_resolves_five_degrees_where_fft_does_not():
    truth = [-2.5, 2.5]
    music_hits = fft_hits = 0
    for seed in range(100):
        snap = source_snapshots(truth, 256, sigma=0.1, seed=seed)
        music_hits += resolves(music_pseudospectrum(covariance(snap), 2, FINE_GRID, ULA), truth)
        fft_hits += resolves(fft_angle_spectrum(snap, 256, ULA, n_peaks=2), truth)
    assert music_hits >= 95
    assert fft_hits <= 5


def test_music_median_error_two_sources():
    truth = [-15.0, 10.0]
    errors = []
    for seed in range(10):
        snap = source_snapshots(truth, 256, sigma=0.1, seed=seed)
        spectrum = music_pseudospectrum(covariance(snap), 2, FINE_GRID, ULA)
        seed_errors, matched = match_peaks(truth, spectrum.peak_angles, 2.0)
        assert matched == 2
        errors.extend(seed_errors)
    assert np.median(errors) <= 0.5


def test_dictionary():
    dictionary = build_dictionary(CS_GRID, ULA)
    assert dictionary.matrix.shape == (8, 181)
    assert dictionary.size == 181
    assert_allclose(dictionary.matrix[:, 90], np.ones(8))
    # mirrored angles give conjugate atoms
    assert_allclose(dictionary.matrix[:, 90 - 30], np.conj(dictionary.matrix[:, 90 + 30]), atol=1e-12)


def test_cs_zero_measurement():
    solution = cs_solve(np.zeros(8), build_dictionary(CS_GRID, ULA), 0.1)
    assert not np.any(solution.coefficients)
    assert solution.iterations == 0
    assert solution.objective == (0.0,)
    assert solution.residual == 0.0


def test_cs_single_source():
    dictionary = build_dictionary(CS_GRID, ULA)
    y = steering_vector(10.0, ULA)
    solution = cs_solve(y, dictionary, 1e-3 * np.max(np.abs(dictionary.matrix.conj().T @ y)))
    assert CS_GRID[np.flatnonzero(solution.coefficients)].tolist() == [10.0]
    assert solution.residual <= 1e-6
    assert optimality_residual(y, dictionary, solution) <= 1e-6


def test_cs_two_sources_exact_support():
    dictionary = build_dictionary(CS_GRID, ULA)
    phi = dictionary.matrix
    y = steering_vector(-15.0, ULA) + steering_vector(10.0, ULA)
    solution = cs_solve(y, dictionary, 0.05 * np.max(np.abs(phi.conj().T @ y)))
    support = np.flatnonzero(solution.coefficients)
    assert CS_GRID[support].tolist() == [-15.0, 10.0]
    assert tuple(support) == best_sparse_support(y, phi, 2)

    magnitude = np.abs(solution.coefficients)
    off = np.ones(CS_GRID.size, dtype=bool)
    off[support] = False
    assert np.max(magnitude[off]) < 0.01 * np.max(magnitude)
    assert solution.residual <= 1e-6
    assert optimality_residual(y, dictionary, solution) <= 1e-6


def test_cs_spectrum_matches_best_two_sparse_fit():
    dictionary = build_dictionary(CS_GRID, ULA)
    y = steering_vector(-15.0, ULA) + 0.8 * steering_vector(10.0, ULA)
    best_pair = CS_GRID[list(best_sparse_support(y, dictionary.matrix, 2))].tolist()
    assert best_pair == [-15.0, 10.0]
    spectrum = cs_angle_spectrum(SnapshotSet(y[:, None], 0, 0), dictionary, n_peaks=2)
    assert sorted(spectrum.peak_angles) == best_pair


def test_cs_objective_monotone():
    dictionary = build_dictionary(CS_GRID, ULA)
    y = source_snapshots([-30.0, 12.0], 1, sigma=0.05, seed=5).snapshots[:, 0]
    solution = cs_solve(y, dictionary, 0.3)
    history = np.array(solution.objective)
    assert len(history) == solution.iterations + 1
    assert history[0] == pytest.approx(lasso_objective(y, dictionary.matrix, np.zeros(181), 0.3))
    assert np.all(np.diff(history) <= 0.0)
    assert history[-1] == pytest.approx(lasso_objective(y, dictionary.matrix, solution.coefficients, 0.3))
    assert solution.step > 0.0


def test_cs_fixed_point_is_optimal():
    dictionary = build_dictionary(CS_GRID, ULA)
    y = source_snapshots([-30.0, 20.0], 1, sigma=0.05, seed=7).snapshots[:, 0]
    solution = cs_solve(y, dictionary, 0.3)
    assert np.count_nonzero(solution.coefficients) >= 1
    assert solution.residual <= 1e-6
    assert optimality_residual(y, dictionary, solution) == pytest.approx(solution.residual, abs=1e-9)


def test_cs_iteration_limit_raises():
    dictionary = build_dictionary(CS_GRID, ULA)
    y = steering_vector(-15.0, ULA) + steering_vector(10.0, ULA)
    with pytest.raises(ConvergenceError) as e:
        cs_solve(y, dictionary, 0.4, max_iter=1)
    assert e.value.iterations == 1
    assert e.value.residual > 1e-6


def test_cs_rejects_bad_input():
    dictionary = build_dictionary(CS_GRID, ULA)
    with pytest.raises(ValueError):
        cs_solve(np.ones(7), dictionary, 0.1)
    with pytest.raises(ValueError):
        cs_solve(np.ones(8), dictionary, 0.0)
    with pytest.raises(ValueError):
        cs_solve(np.ones(8), dictionary, 0.1, max_iter=0)


def test_cs_resolves_five_degrees():
    truth = [-2.5, 2.5]
    dictionary = build_dictionary(CS_GRID, ULA)
    hits = 0
    for seed in range(100):
        snap = source_snapshots(truth, 256, sigma=0.1, seed=seed)
        hits += resolves(cs_angle_spectrum(snap, dictionary, n_peaks=2), truth)
    assert hits >= 95


def test_cs_noise_only_stays_below_target_peak():
    dictionary = build_dictionary(CS_GRID, ULA)
    target_peak = np.max(cs_angle_spectrum(source_snapshots([0.0], 256, sigma=0.1, seed=0), dictionary).power)
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        noise = 0.1 / math.sqrt(2) * (rng.standard_normal((8, 256)) + 1j * rng.standard_normal((8, 256)))
        spectrum = cs_angle_spectrum(SnapshotSet(noise, 0, 0), dictionary)
        assert np.max(spectrum.power) < 0.01 * target_peak


def test_cs_spectrum_on_cube(scenario_factory):
    cube = synthesize(scenario_factory([(60, 5, 0)], snr_db=20, seed=1))
    snap = extract_snapshots(range_profile(cube), at_bin(60))
    spectrum = cs_angle_spectrum(snap, build_dictionary(CS_GRID, ULA), n_peaks=1)
    assert spectrum.method == DoaMethod.CS
    assert spectrum.peak_angles == (0.0,)


def test_range_angle_map_peaks(reference_scenario, ref_cube):
    profile = range_profile(ref_cube, reference_scenario.processing.window)
    ra = range_angle_map(profile, 1, FINE_GRID, reference_scenario.array)
    assert ra.shape == (256, 1801)
    for target in reference_scenario.targets:
        row = round(target.range_m / reference_scenario.radar.range_resolution)
        assert abs(FINE_GRID[np.argmax(ra[row])] - target.angle_deg) <= 0.5


def test_range_angle_map_matches_single_row(reference_scenario, ref_cube):
    profile = range_profile(ref_cube, reference_scenario.processing.window)
    ra = range_angle_map(profile, 1, FINE_GRID, reference_scenario.array)
    row = music_pseudospectrum(covariance(extract_snapshots(profile, at_bin(100))), 1, FINE_GRID, reference_scenario.array)
    assert_allclose(ra[100], row.power, rtol=1e-6)


def test_range_angle_map_noise_only(scenario_factory):
    s = scenario_factory([Target(20, 0, 0, amplitude=0.0)], snr_db=20, seed=9, n_samples=64, n_chirps=64)
    ra = range_angle_map(range_profile(synthesize(s)), 1, FINE_GRID, s.array)
    assert ra.max() <= 10.0 * np.median(ra)


def test_range_angle_map_falls_back_on_rank(scenario_factory):
    s = scenario_factory([(30, 0, 25)], n_samples=64, n_chirps=16)
    ra = range_angle_map(range_profile(synthesize(s)), 3, FINE_GRID, s.array)
    assert np.all(np.isfinite(ra))
    assert FINE_GRID[np.argmax(ra[30])] == pytest.approx(25.0, abs=0.1)
