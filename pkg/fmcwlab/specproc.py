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

import numpy as np
from loguru import logger
from typing import List
from dataclasses import dataclass
from scipy.signal import windows
from concurrent.futures import ThreadPoolExecutor
from fmcwlab.core import Window, DataCube, RangeDopplerMap
from fmcwlab.scene import is_power_of_two


BASE_SIZE = 32


def _fft_last_axis(x: np.ndarray) -> np.ndarray:
    """
    Radix-2 decimation-in-time FFT along the last axis.

    Runs a direct DFT of size ``BASE_SIZE`` over the stride-decimated
    subsequences, then merges pairs of half-size spectra with butterflies
    until the full length is reached.
    """
    n = x.shape[-1]
    lead = x.shape[:-1]
    base = min(n, BASE_SIZE)
    m = np.arange(base)
    kernel = np.exp(-2j * np.pi * np.outer(m, m) / base)

    # column j of the (base, n // base) view is the subsequence x[j::n // base]
    blocks = x.reshape(lead + (base, n // base))
    spectra = np.moveaxis(np.tensordot(kernel, blocks, axes=([1], [-2])), 0, -2)

    while spectra.shape[-2] < n:
        size = spectra.shape[-2]
        half = spectra.shape[-1] // 2
        even = spectra[..., :half]
        odd = spectra[..., half:] * np.exp(-1j * np.pi * np.arange(size) / size)[:, None]
        spectra = np.concatenate([even + odd, even - odd], axis=-2)

    return spectra.reshape(lead + (n,))


def dft(x, inverse: bool = False, axis: int = -1) -> np.ndarray:
    """
    Forward DFT X[m] = sum_s x[s] exp(-j 2 pi m s / N) along ``axis``.

    The inverse carries the 1/N factor. Length must be a power of two >= 2.

    :raises ValueError: on a length that is not a power of two
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[axis]
    if n < 2 or not is_power_of_two(n):
        raise ValueError(f'DFT length must be a power of two >= 2, got {n}')

    moved = np.moveaxis(x, axis, -1)
    if inverse:
        result = np.conj(_fft_last_axis(np.conj(moved))) / n
    else:
        result = _fft_last_axis(moved)
    return np.moveaxis(result, -1, axis)


def taper(window: Window, n: int) -> np.ndarray:
    if window == Window.HANN:
        return windows.hann(n, sym=False)
    return np.ones(n)


def _transform(x: np.ndarray, axis: int, window: Window, pad: int) -> np.ndarray:
    n = x.shape[axis]
    shape = [1] * x.ndim
    shape[axis] = n
    weighted = x * taper(window, n).reshape(shape)
    if pad > 1:
        widths = [(0, 0)] * x.ndim
        widths[axis] = (0, n * (pad - 1))
        weighted = np.pad(weighted, widths)
    return dft(weighted, axis=axis)


def range_profile(cube: DataCube, window: Window = Window.RECT, pad: int = 1) -> np.ndarray:
    """
    Fast-time DFT of the cube: [range bin, chirp, channel, cpi].

    Bin b maps to range b * c / (2B) / pad.
    """
    return _transform(cube.data, 0, window, pad)


@dataclass(frozen=True, eq=False)
class RangeDopplerResult:
    maps: List[RangeDopplerMap]
    rd_cube: np.ndarray
    profile: np.ndarray


def _doppler_cpi(profile: np.ndarray, window: Window, pad: int) -> np.ndarray:
    spectra = _transform(profile, 1, window, pad)
    return np.roll(spectra, spectra.shape[1] // 2, axis=1)


def range_doppler(cube: DataCube,
                  window: Window = Window.RECT,
                  range_pad: int = 1,
                  doppler_pad: int = 1,
                  workers: int = 1) -> RangeDopplerResult:
    """
    Range-Doppler processing of every CPI.

    The slow-time spectra are circularly shifted so the zero-velocity bin
    sits at index n_doppler // 2. Map power is the non-coherent sum of
    ``|.|**2`` over channels; the per-channel complex cube
    [range, doppler, channel, cpi] and the range profile are kept for
    angle estimation.
    """
    radar = cube.radar
    profile = range_profile(cube, window, range_pad)
    range_step = radar.range_resolution / range_pad
    velocity_step = radar.velocity_resolution / doppler_pad

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        blocks = list(pool.map(lambda p: _doppler_cpi(profile[..., p], window, doppler_pad),
                               range(radar.n_cpi)))

    rd_cube = np.stack(blocks, axis=-1)
    maps = []
    for cpi, block in enumerate(blocks):
        power = np.sum(np.abs(block) ** 2, axis=2)
        maps.append(RangeDopplerMap(power, range_step, velocity_step, cpi))

    logger.debug('Range-Doppler maps {}x{} over {} CPI(s), {} window',
                 rd_cube.shape[0],
                 rd_cube.shape[1],
                 radar.n_cpi,
                 window.value)
    return RangeDopplerResult(maps, rd_cube, profile)
