#  Copyright 2022 Jacob Jewett
#
#  Licensed under the Apache License, Version 2.0 (the "License");
#  you may not use this file except in compliance with the License.
#  You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
#  Unless required by applicable law or agreed to in writing, software
#  distributed under the License is distributed on an "AS IS" BASIS,
#  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#  See the License for the specific language governing permissions and
#  limitations under the License.

"""
Angle-of-arrival estimation on a uniform linear receive array.

Three estimators share the ``AngleSpectrum`` container: zero-padded FFT
beamforming across channels, MUSIC on the sample covariance of per-chirp
snapshots, and an L1-regularized sparse fit against a steering dictionary
solved by accelerated proximal gradient (FISTA) with a Newton finish on
the detected support.

Angles are in degrees, measured from broadside; positive angles give a
phase that grows with the element index.
"""
import math
import numpy as np
from loguru import logger
from typing import Tuple, Union, Optional
from dataclasses import dataclass
from scipy.signal import find_peaks
from fmcwlab.core import (DoaMethod,
                          Detection,
                          SnapshotSet,
                          AngleSpectrum,
                          ArrayGeometry,
                          CovarianceMatrix,
                          SteeringDictionary)
from fmcwlab.scene import is_power_of_two
from fmcwlab.specproc import dft


HERMITIAN_TOLERANCE = 1e-10
POLISH_INTERVAL = 10


def angle_grid(start_deg: float, stop_deg: float, step_deg: float) -> np.ndarray:
    """Inclusive uniform grid, rounded to 10 decimals so 0.1 degree steps land on exact decimals."""
    if not step_deg > 0.0:
        raise ValueError(f'grid step must be positive, got {step_deg}')
    if stop_deg < start_deg:
        raise ValueError(f'grid stop {stop_deg} below start {start_deg}')
    count = int(math.floor((stop_deg - start_deg) / step_deg + 1e-9)) + 1
    return np.round(start_deg + np.arange(count) * step_deg, 10)


def steering_vector(theta_deg: float, array: ArrayGeometry) -> np.ndarray:
    return np.exp(2j * np.pi * array.positions_wl * math.sin(math.radians(theta_deg)))


def steering_matrix(angles_deg, array: ArrayGeometry) -> np.ndarray:
    """Steering vectors as columns, shaped [n_rx, len(angles_deg)]."""
    sin_theta = np.sin(np.radians(np.asarray(angles_deg, dtype=float)))
    return np.exp(2j * np.pi * np.outer(array.positions_wl, sin_theta))


def extract_snapshots(cube: np.ndarray, det: Detection) -> SnapshotSet:
    """
    Channel vectors at the detection's range bin, one per chirp of its CPI.

    :param cube: per-channel complex cube indexed [range bin, chirp or
                 Doppler bin, channel, cpi]
    :raises ValueError: when the detection lies outside the cube
    """
    n_range, _, _, n_cpi = cube.shape
    if not 0 <= det.range_bin < n_range:
        raise ValueError(f'detection range bin {det.range_bin} outside [0, {n_range})')
    if not 0 <= det.cpi_index < n_cpi:
        raise ValueError(f'detection CPI {det.cpi_index} outside [0, {n_cpi})')
    return SnapshotSet(np.array(cube[det.range_bin, :, :, det.cpi_index].T, dtype=np.complex128),
                       det.range_bin,
                       det.cpi_index)


def spectrum_peaks(angles_deg: np.ndarray,
                   power: np.ndarray,
                   count: Optional[int] = None) -> Tuple[Tuple[float, float], ...]:
    """
    Local maxima of a spectrum, strongest first.

    The ends of the grid count as maxima when they rise above their only
    neighbour.

    :param count: number of peaks to keep, all of them when None
    """
    padded = np.concatenate(([-np.inf], power, [-np.inf]))
    indices, _ = find_peaks(padded)
    indices = indices - 1
    order = indices[np.argsort(-power[indices], kind='stable')]
    if count is not None:
        order = order[:count]
    return tuple((float(angles_deg[i]), float(power[i])) for i in order)


def fft_angle_spectrum(snap: SnapshotSet,
                       n_fft: int,
                       array: ArrayGeometry,
                       n_peaks: Optional[int] = None) -> AngleSpectrum:
    """
    Non-coherent sum over snapshots of the zero-padded channel DFT power.

    The sum is taken as one DFT of the lag-folded spatial autocorrelation,
    which equals ``sum_t |DFT_n_fft(x_t)|**2`` exactly. Bins are signed and
    mapped through ``sin(theta) = k / (n_fft * d)``; bins with
    ``|sin(theta)| > 1`` are dropped.

    :raises ValueError: when n_fft is not a power of two >= n_rx
    """
    n_rx = snap.n_rx
    if not is_power_of_two(n_fft) or n_fft < max(n_rx, 2):
        raise ValueError(f'FFT angle size must be a power of two >= n_rx = {n_rx}, got {n_fft}')

    x = snap.snapshots
    s = x @ x.conj().T
    lags = np.zeros(n_fft, dtype=np.complex128)
    for lag in range(-(n_rx - 1), n_rx):
        lags[lag % n_fft] += np.trace(s, offset=-lag)
    folded = np.maximum(dft(lags).real, 0.0)

    k = np.arange(-(n_fft // 2), n_fft // 2)
    sin_theta = k / (n_fft * array.rx_spacing_wl)
    visible = np.abs(sin_theta) <= 1.0
    angles = np.degrees(np.arcsin(sin_theta[visible]))
    power = folded[k[visible] % n_fft]

    return AngleSpectrum(angles, power, DoaMethod.FFT, spectrum_peaks(angles, power, n_peaks))


def covariance(snap: SnapshotSet) -> CovarianceMatrix:
    x = snap.snapshots
    r = x @ x.conj().T / snap.count
    return CovarianceMatrix(0.5 * (r + r.conj().T))


def hermitian_eig(r: Union[CovarianceMatrix, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigen-decomposition of a Hermitian matrix.

    :return: real eigenvalues in descending order and the unitary matrix of
             matching eigenvectors (as columns)
    :raises ValueError: when the input is not square or not Hermitian within
                        a relative tolerance of 1e-10
    """
    m = np.asarray(r.matrix if isinstance(r, CovarianceMatrix) else r, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f'expected a square matrix, got shape {m.shape}')
    scale = max(np.max(np.abs(m)), np.finfo(float).tiny)
    skew = np.max(np.abs(m - m.conj().T))
    if skew > HERMITIAN_TOLERANCE * scale:
        raise ValueError(f'matrix is not Hermitian (max |R - R^H| = {skew:.3g})')

    values, vectors = np.linalg.eigh(0.5 * (m + m.conj().T))
    return values[::-1], vectors[:, ::-1]


def _check_sources(d: int, n_rx: int):
    if not 1 <= d < n_rx:
        raise ValueError(f'source count must lie in [1, {n_rx}), got {d}')


def music_pseudospectrum(r: CovarianceMatrix,
                         d: int,
                         grid: np.ndarray,
                         array: ArrayGeometry) -> AngleSpectrum:
    """
    MUSIC pseudospectrum 1 / (a^H U_n U_n^H a) over ``grid``.

    U_n spans the eigenvectors of the n_rx - d smallest eigenvalues. The
    denominator is floored at machine epsilon times n_rx so exact
    orthogonality stays finite.

    :raises ValueError: when d is outside [1, n_rx) or the grid is empty
    """
    _check_sources(d, r.size)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError('angle grid is empty')

    _, vectors = hermitian_eig(r)
    noise = vectors[:, d:]
    projection = noise.conj().T @ steering_matrix(grid, array)
    denominator = np.maximum(np.sum(np.abs(projection) ** 2, axis=0), np.finfo(float).eps * r.size)
    power = 1.0 / denominator

    return AngleSpectrum(grid.copy(), power, DoaMethod.MUSIC, spectrum_peaks(grid, power, d))


def signal_rank(values: np.ndarray, n_rx: int) -> np.ndarray:
    """Eigenvalues above n_rx * 1e-10 of the largest one, counted along the last axis."""
    top = np.maximum(values[..., :1], np.finfo(float).tiny)
    return np.sum(values > HERMITIAN_TOLERANCE * n_rx * top, axis=-1)


def range_angle_map(rp_cube: np.ndarray,
                    d: int,
                    grid: np.ndarray,
                    array: ArrayGeometry,
                    cpi: int = 0) -> np.ndarray:
    """
    MUSIC pseudospectrum of every range bin, shaped [range bin, grid angle].

    Snapshots are the chirps of CPI ``cpi``. Rows whose covariance has rank
    below ``d`` are evaluated with a single source.

    :param rp_cube: range-profile cube indexed [range bin, chirp, channel, cpi]
    """
    n_range, n_chirps, n_rx, n_cpi = rp_cube.shape
    _check_sources(d, n_rx)
    if not 0 <= cpi < n_cpi:
        raise ValueError(f'CPI {cpi} outside [0, {n_cpi})')

    x = rp_cube[:, :, :, cpi]
    r = np.einsum('btn,btm->bnm', x, x.conj()) / n_chirps
    r = 0.5 * (r + np.conj(np.swapaxes(r, 1, 2)))
    values, vectors = np.linalg.eigh(r)
    values, vectors = values[:, ::-1], vectors[:, :, ::-1]

    sources = np.where(signal_rank(values, n_rx) < d, 1, d)
    fallback = int(np.count_nonzero(sources != d))
    if fallback:
        logger.debug('Range-angle map: {} of {} row(s) fell back to one source', fallback, n_range)

    steering = steering_matrix(grid, array)
    projection = np.abs(np.einsum('bni,ng->big', vectors.conj(), steering)) ** 2
    noise_mask = np.arange(n_rx)[None, :] >= sources[:, None]
    denominator = np.einsum('big,bi->bg', projection, noise_mask.astype(float))
    return 1.0 / np.maximum(denominator, np.finfo(float).eps * n_rx)


def build_dictionary(grid: np.ndarray, array: ArrayGeometry) -> SteeringDictionary:
    grid = np.asarray(grid, dtype=float)
    return SteeringDictionary(steering_matrix(grid, array), grid.copy())


class ConvergenceError(Exception):

    @property
    def iterations(self) -> int:
        return self._iterations

    @property
    def residual(self) -> float:
        return self._residual

    def __init__(self, iterations: int, residual: float):
        self._iterations = iterations
        self._residual = residual
        super().__init__(f'sparse fit stopped at the iteration limit ({iterations}) '
                         f'with optimality residual {residual:.3g}')


@dataclass(frozen=True, eq=False)
class SparseSolution:
    coefficients: np.ndarray
    objective: Tuple[float, ...]
    iterations: int
    residual: float
    lambda_reg: float
    step: float


def lipschitz_constant(phi: np.ndarray, max_iter: int = 10000, tol: float = 1e-15) -> float:
    """Largest eigenvalue of Phi^H Phi by power iteration on Phi Phi^H."""
    gram = phi @ phi.conj().T
    v = np.linspace(1.0, 2.0, gram.shape[0]).astype(np.complex128)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        previous, estimate = estimate, float(np.real(np.vdot(v, gram @ v)))
        if abs(estimate - previous) <= tol * estimate:
            break
    return estimate


def soft_threshold(z: np.ndarray, threshold: float) -> np.ndarray:
    """Complex soft threshold: shrink each magnitude by ``threshold``, keep the phase."""
    magnitude = np.abs(z)
    shrink = np.maximum(magnitude - threshold, 0.0)
    return np.where(magnitude > 0.0, z * (shrink / np.where(magnitude > 0.0, magnitude, 1.0)), 0.0)


def lasso_objective(y: np.ndarray, phi: np.ndarray, s: np.ndarray, lambda_reg: float) -> float:
    residual = y - phi @ s
    return 0.5 * float(np.real(np.vdot(residual, residual))) + lambda_reg * float(np.sum(np.abs(s)))


def subgradient_residual(correlation: np.ndarray, s: np.ndarray, lambda_reg: float) -> float:
    """
    Largest violation of the L1 optimality conditions given ``correlation = Phi^H (y - Phi s)``.

    Off the support ``|c_g| <= lambda``; on the support ``c_g = lambda * s_g / |s_g|``.
    """
    magnitude = np.abs(s)
    support = magnitude > 0.0
    off = np.max(np.abs(correlation[~support]) - lambda_reg, initial=0.0)
    phase = s[support] / magnitude[support]
    on = np.max(np.abs(correlation[support] - lambda_reg * phase), initial=0.0)
    return float(max(off, on, 0.0))


def _polish_support(y: np.ndarray,
                    phi: np.ndarray,
                    s: np.ndarray,
                    lambda_reg: float,
                    max_iter: int = 50) -> Optional[np.ndarray]:
    """
    Damped Newton on the objective restricted to the current support.

    The complex problem is written over ``[Re v; Im v]`` so the L1 term is a
    sum of 2D Euclidean norms, smooth while every coefficient stays nonzero.
    Returns ``None`` when the support is empty, larger than the array or the
    system is singular.
    """
    support = np.flatnonzero(s)
    k = support.size
    if k == 0 or k > phi.shape[0]:
        return None

    a = phi[:, support]
    m = np.block([[a.real, -a.imag], [a.imag, a.real]])
    b = np.concatenate([y.real, y.imag])
    gram = m.T @ m
    target = m.T @ b
    stop = 1e-13 * max(1.0, float(np.linalg.norm(target)))
    diag = np.arange(k)

    def objective(v: np.ndarray) -> float:
        r = m @ v - b
        return 0.5 * float(r @ r) + lambda_reg * float(np.sum(np.hypot(v[:k], v[k:])))

    x = np.concatenate([s[support].real, s[support].imag])
    for _ in range(max_iter):
        magnitude = np.hypot(x[:k], x[k:])
        u_re, u_im = x[:k] / magnitude, x[k:] / magnitude
        grad = gram @ x - target + lambda_reg * np.concatenate([u_re, u_im])
        if np.linalg.norm(grad) <= stop:
            break

        # lambda * (I - u u^T) / |v_i| on each (re, im) pair
        weight = lambda_reg / magnitude
        hess = gram.copy()
        hess[diag, diag] += weight * (1.0 - u_re ** 2)
        hess[diag + k, diag + k] += weight * (1.0 - u_im ** 2)
        hess[diag, diag + k] -= weight * u_re * u_im
        hess[diag + k, diag] -= weight * u_re * u_im
        try:
            direction = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            return None

        current = objective(x)
        slope = float(grad @ direction)
        t = 1.0
        while True:
            candidate = x + t * direction
            if np.all(np.hypot(candidate[:k], candidate[k:]) > 0.0) \
                    and objective(candidate) <= current + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                return None
        x = candidate

    polished = np.zeros_like(s)
    polished[support] = x[:k] + 1j * x[k:]
    return polished


def cs_solve(y,
             dictionary: SteeringDictionary,
             lambda_reg: float,
             max_iter: int = 20000,
             tol: float = 1e-6) -> SparseSolution:
    """
    Minimize 0.5 ||y - Phi s||^2 + lambda ||s||_1 by monotone FISTA.

    Step 1/L with L the largest eigenvalue of Phi^H Phi. Momentum restarts
    whenever a step is rejected or points against the last move. Every
    ``POLISH_INTERVAL`` iterations with an unchanged support a Newton solve
    on that support is tried and kept only if it lowers both the objective
    and the optimality residual. Iteration stops once the optimality residual
    is at most ``tol``. The objective history, starting at s = 0, has one
    entry per iteration and never increases.

    :raises ValueError: on a measurement length that does not match the
                        dictionary, a non-positive ``lambda_reg`` or
                        ``max_iter`` below 1
    :raises ConvergenceError: when ``max_iter`` iterations do not reach ``tol``
    """
    phi = dictionary.matrix
    y = np.asarray(y, dtype=np.complex128)
    if y.ndim != 1 or y.shape[0] != phi.shape[0]:
        raise ValueError(f'measurement shape {y.shape} does not match dictionary {phi.shape}')
    if not lambda_reg > 0.0:
        raise ValueError(f'lambda_reg must be positive, got {lambda_reg}')
    if max_iter < 1:
        raise ValueError(f'max_iter must be at least 1, got {max_iter}')

    phi_h = phi.conj().T
    s = np.zeros(phi.shape[1], dtype=np.complex128)
    objective = lasso_objective(y, phi, s, lambda_reg)
    residual = subgradient_residual(phi_h @ y, s, lambda_reg)
    lipschitz = lipschitz_constant(phi)
    step = 1.0 / lipschitz if lipschitz > 0.0 else 0.0
    if residual <= tol:
        return SparseSolution(s, (objective,), 0, residual, lambda_reg, step)

    history = [objective]
    momentum = s.copy()
    t = 1.0
    last_support = None

    for iteration in range(1, max_iter + 1):
        previous = s
        z = soft_threshold(momentum + step * (phi_h @ (y - phi @ momentum)), step * lambda_reg)
        z_objective = lasso_objective(y, phi, z, lambda_reg)
        if z_objective <= objective:
            s, objective = z, z_objective
            restart = float(np.real(np.vdot(momentum - z, z - previous))) > 0.0
        else:
            restart = True

        if restart:
            t = 1.0
            momentum = s.copy()
        else:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            momentum = s + ((t - 1.0) / t_next) * (s - previous)
            t = t_next

        residual = subgradient_residual(phi_h @ (y - phi @ s), s, lambda_reg)
        if residual > tol and iteration % POLISH_INTERVAL == 0:
            support = tuple(np.flatnonzero(s))
            if support == last_support:
                polished = _polish_support(y, phi, s, lambda_reg)
                if polished is not None:
                    polished_objective = lasso_objective(y, phi, polished, lambda_reg)
                    polished_residual = subgradient_residual(phi_h @ (y - phi @ polished),
                                                             polished,
                                                             lambda_reg)
                    if polished_objective <= objective and polished_residual < residual:
                        s, objective, residual = polished, polished_objective, polished_residual
                        t = 1.0
                        momentum = s.copy()
            last_support = support

        history.append(objective)
        if residual <= tol:
            logger.debug('sparse fit converged after {} iteration(s), objective {:.6g}, residual {:.3g}',
                         iteration,
                         objective,
                         residual)
            return SparseSolution(s, tuple(history), iteration, residual, lambda_reg, step)

    raise ConvergenceError(max_iter, residual)


def optimality_residual(y, dictionary: SteeringDictionary, solution: SparseSolution) -> float:
    """Optimality residual of ``solution`` recomputed from the measurement."""
    phi = dictionary.matrix
    s = solution.coefficients
    correlation = phi.conj().T @ (np.asarray(y, dtype=np.complex128) - phi @ s)
    return subgradient_residual(correlation, s, solution.lambda_reg)


def aligned_mean(snap: SnapshotSet) -> np.ndarray:
    """Coherent snapshot average after rotating channel 0 of every snapshot to zero phase."""
    x = snap.snapshots
    reference = x[0, :]
    magnitude = np.abs(reference)
    rotation = np.where(magnitude > 0.0, np.conj(reference) / np.where(magnitude > 0.0, magnitude, 1.0), 1.0)
    return np.mean(x * rotation[None, :], axis=1)


def cs_angle_spectrum(snap: SnapshotSet,
                      dictionary: SteeringDictionary,
                      lambda_reg: Optional[float] = None,
                      lambda_scale: float = 0.05,
                      max_iter: int = 20000,
                      tol: float = 1e-6,
                      n_peaks: Optional[int] = None) -> AngleSpectrum:
    """
    Sparse angle spectrum ``|s_g|**2`` of the phase-aligned mean snapshot.

    Without an explicit ``lambda_reg`` the weight is
    ``lambda_scale * ||Phi^H y||_inf`` (``lambda_scale`` itself when that
    norm is zero).

    :raises ConvergenceError: when the fit misses ``tol`` within ``max_iter``
    """
    y = aligned_mean(snap)
    if lambda_reg is None:
        correlation = float(np.max(np.abs(dictionary.matrix.conj().T @ y)))
        lambda_reg = lambda_scale * correlation if correlation > 0.0 else lambda_scale

    solution = cs_solve(y, dictionary, lambda_reg, max_iter, tol)
    power = np.abs(solution.coefficients) ** 2
    angles = np.array(dictionary.angles_deg)
    return AngleSpectrum(angles, power, DoaMethod.CS, spectrum_peaks(angles, power, n_peaks))
