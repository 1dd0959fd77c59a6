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
Beat-signal synthesis for a uniform linear receive array.

The model is the dechirped complex baseband of a sawtooth FMCW radar with
one transmitter. The target delay is frozen at the start of every chirp
(stop-and-hop), so the fast-time tone sits at (B/T)*tau_k and the
chirp-to-chirp phase advances by 2*pi*f_D*T. Residual video phase is not
modelled.

Noise is circular complex white Gaussian. The per-sample variance is
``amplitude_ref**2 / 10**(snr_db / 10)`` with ``amplitude_ref`` the largest
target amplitude (1.0 when every amplitude is zero). Every (channel, CPI)
block draws from its own PCG64 stream seeded with
``SeedSequence(rng_seed, spawn_key=(cpi, channel))`` so the cube does not
depend on how CPIs are scheduled across workers.
"""
import math
import numpy as np
from loguru import logger
from typing import Tuple, Optional
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor
from fmcwlab.core import Target, DataCube, Scenario, RadarParams, ArrayGeometry
from fmcwlab.scene import require_valid
from fmcwlab.constants import SPEED_OF_LIGHT


def target_delay(t: float, tgt: Target) -> float:
    """Round-trip delay 2(R + vt)/c at time ``t`` seconds."""
    if t < 0.0:
        raise ValueError(f'time must be non-negative, got {t}')
    return 2.0 * (tgt.range_m + tgt.vel_mps * t) / SPEED_OF_LIGHT


def tx_position_wl(array: ArrayGeometry) -> float:
    """Transmitter x position in wavelengths (left of the first receiver)."""
    return -array.tx_offset_wl


def antenna_positions(radar: RadarParams, array: ArrayGeometry) -> Tuple[float, np.ndarray]:
    """Transmitter and receiver x coordinates in metres."""
    wl = radar.wavelength
    return tx_position_wl(array) * wl, array.element_positions(wl)


def chirp_frequency(t, radar: RadarParams):
    """Instantaneous transmit frequency of the periodic sawtooth chirp."""
    return radar.fc + radar.slope * np.mod(t, radar.period)


def beat_phase(s: int,
               k: int,
               n: int,
               tgt: Target,
               radar: RadarParams,
               array: ArrayGeometry) -> float:
    """
    Phase of one beat sample in radians (not wrapped).

    :param s: fast-time sample index
    :param k: global chirp index, counted from the first chirp of CPI 0
    :param n: receiver index
    """
    if not (0 <= s < radar.n_samples and k >= 0 and 0 <= n < array.n_rx):
        raise ValueError(f'index out of range: s={s}, k={k}, n={n}')
    tau = target_delay(k * radar.period, tgt)
    sin_theta = math.sin(math.radians(tgt.angle_deg))
    spatial = (array.positions_wl[n] + tx_position_wl(array)) * sin_theta
    return 2.0 * math.pi * (radar.fc * tau + radar.slope * tau * (s / radar.sample_rate) + spatial)


def _phase_cycles(tgt: Target, radar: RadarParams, array: ArrayGeometry, cpi: int) -> np.ndarray:
    """Beat phase in cycles, wrapped to [0, 1), shaped [sample, chirp, channel]."""
    k = cpi * radar.n_chirps + np.arange(radar.n_chirps)
    tau = 2.0 * (tgt.range_m + tgt.vel_mps * k * radar.period) / SPEED_OF_LIGHT
    carrier = np.mod(radar.fc * tau, 1.0)
    fast = radar.slope * np.outer(np.arange(radar.n_samples) / radar.sample_rate, tau)
    sin_theta = math.sin(math.radians(tgt.angle_deg))
    spatial = (array.positions_wl + tx_position_wl(array)) * sin_theta
    cycles = carrier[None, :, None] + fast[:, :, None] + spatial[None, None, :]
    return np.mod(cycles, 1.0)


def noise_sigma(s: Scenario) -> Optional[float]:
    """Per-sample complex noise standard deviation, or None when noiseless."""
    if s.radar.snr_db is None:
        return None
    reference = max((t.amplitude for t in s.targets), default=0.0) or 1.0
    return reference / math.sqrt(10.0 ** (s.radar.snr_db / 10.0))


def noise_stream(seed: int, cpi: int, channel: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(cpi, channel))))


def _synthesize_cpi(s: Scenario, cpi: int, sigma: Optional[float]) -> np.ndarray:
    radar, array = s.radar, s.array
    block = np.zeros((radar.n_samples, radar.n_chirps, array.n_rx), dtype=np.complex128)

    for tgt in s.targets:
        if tgt.amplitude == 0.0:
            continue
        block += tgt.amplitude * np.exp(2j * np.pi * _phase_cycles(tgt, radar, array, cpi))

    if sigma is not None:
        shape = (2, radar.n_samples, radar.n_chirps)
        for n in range(array.n_rx):
            draw = noise_stream(radar.rng_seed, cpi, n).standard_normal(shape)
            block[:, :, n] += (sigma / math.sqrt(2.0)) * (draw[0] + 1j * draw[1])

    return block


def synthesize(s: Scenario, workers: int = 1) -> DataCube:
    """
    Build the [sample, chirp, channel, cpi] beat cube of a scenario.

    :param s: a scenario without error-level violations
    :param workers: thread count for per-CPI synthesis; the output does not
                    depend on it
    :raises ScenarioInvalid: when validation reports errors
    """
    for warning in require_valid(s):
        logger.warning('Scenario {}', warning)

    radar = s.radar
    sigma = noise_sigma(s)
    logger.debug('Synthesizing {}x{}x{}x{} cube, {} target(s), {}',
                 radar.n_samples,
                 radar.n_chirps,
                 s.array.n_rx,
                 radar.n_cpi,
                 len(s.targets),
                 'noiseless' if sigma is None else f'noise sigma {sigma:.4g}')

    data = np.empty((radar.n_samples, radar.n_chirps, s.array.n_rx, radar.n_cpi), dtype=np.complex128)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for cpi, block in enumerate(pool.map(lambda p: _synthesize_cpi(s, p, sigma), range(radar.n_cpi))):
            data[..., cpi] = block

    return DataCube(data, radar, s.array)


@dataclass(frozen=True, eq=False)
class Waveforms:
    time: np.ndarray
    transmit: np.ndarray
    receive: np.ndarray
    mixed: np.ndarray


def waveform_snapshot(s: Scenario, n_points: int = 2048) -> Waveforms:
    """
    Real-valued baseband view of the first chirp for plotting.

    ``receive`` holds one delayed chirp per target (zero before its echo
    arrives); ``mixed`` is the real part of the noiseless channel-0 beat
    signal summed over targets.
    """
    radar = s.radar
    t = np.linspace(0.0, radar.period, n_points, endpoint=False)
    transmit = np.cos(np.pi * radar.slope * t ** 2)

    receive = np.zeros((len(s.targets), n_points))
    mixed = np.zeros(n_points)
    for i, tgt in enumerate(s.targets):
        tau = target_delay(0.0, tgt)
        delayed = t - tau
        receive[i] = np.where(delayed >= 0.0, tgt.amplitude * np.cos(np.pi * radar.slope * delayed ** 2), 0.0)
        sin_theta = math.sin(math.radians(tgt.angle_deg))
        spatial = tx_position_wl(s.array) * sin_theta
        mixed += tgt.amplitude * np.cos(2.0 * np.pi * (radar.fc * tau + radar.slope * tau * t + spatial))

    return Waveforms(t, transmit, receive, mixed)
