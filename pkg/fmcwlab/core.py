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

import enum
import numpy as np
from typing import Tuple, Optional
from dataclasses import field, dataclass
from fmcwlab.constants import SPEED_OF_LIGHT


class Window(enum.Enum):
    RECT = 'rect'
    HANN = 'hann'


class EdgePolicy(enum.Enum):
    SKIP = 'skip'


class DoaMethod(enum.Enum):
    FFT = 'fft'
    MUSIC = 'music'
    CS = 'cs'


class Severity(enum.IntEnum):
    WARNING = 1
    ERROR = 2


def _freeze(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class RadarParams:
    fc: float
    bandwidth: float
    period: float
    n_samples: int
    n_chirps: int
    n_cpi: int
    snr_db: Optional[float] = None
    rng_seed: int = 0

    @property
    def sample_rate(self) -> float:
        return self.n_samples / self.period

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.fc

    @property
    def slope(self) -> float:
        """Chirp slope B/T in Hz per second."""
        return self.bandwidth / self.period

    @property
    def range_resolution(self) -> float:
        return SPEED_OF_LIGHT / (2.0 * self.bandwidth)

    @property
    def max_range(self) -> float:
        """Unambiguous range of a complex beat signal sampled at f_s."""
        return SPEED_OF_LIGHT * self.sample_rate * self.period / (2.0 * self.bandwidth)

    @property
    def max_velocity(self) -> float:
        return self.wavelength / (4.0 * self.period)

    @property
    def velocity_resolution(self) -> float:
        return self.wavelength / (2.0 * self.n_chirps * self.period)

    def range_frequency(self, range_m: float) -> float:
        return 2.0 * range_m * self.bandwidth / (self.period * SPEED_OF_LIGHT)

    def doppler_frequency(self, vel_mps: float) -> float:
        return 2.0 * vel_mps * self.fc / SPEED_OF_LIGHT


@dataclass(frozen=True)
class ArrayGeometry:
    n_rx: int
    rx_spacing_wl: float = 0.5
    tx_offset_wl: float = 2.0

    @property
    def positions_wl(self) -> np.ndarray:
        """Receiver x positions in wavelengths, first receiver at the origin."""
        return np.arange(self.n_rx) * self.rx_spacing_wl

    def element_positions(self, wavelength: float) -> np.ndarray:
        return self.positions_wl * wavelength


@dataclass(frozen=True)
class Target:
    range_m: float
    vel_mps: float
    angle_deg: float
    amplitude: float = 1.0


@dataclass(frozen=True)
class CfarConfig:
    guard_half: int = 2
    train_half: int = 4
    pfa: float = 1e-3
    edge_policy: EdgePolicy = EdgePolicy.SKIP

    @property
    def window_size(self) -> int:
        return 2 * self.train_half + 1

    @property
    def training_cells(self) -> int:
        return self.window_size ** 2 - (2 * self.guard_half + 1) ** 2


@dataclass(frozen=True)
class DoaConfig:
    angle_min_deg: float = -90.0
    angle_max_deg: float = 90.0
    angle_step_deg: float = 0.1
    cs_step_deg: float = 1.0
    music_sources: Optional[int] = None
    cs_lambda_scale: float = 0.05
    cs_max_iter: int = 20000
    cs_tol: float = 1e-6


@dataclass(frozen=True)
class ProcessingConfig:
    window: Window = Window.RECT
    range_pad: int = 1
    doppler_pad: int = 1
    fft_angle_size: int = 256


@dataclass(frozen=True)
class Scenario:
    radar: RadarParams
    array: ArrayGeometry
    targets: Tuple[Target, ...]
    cfar: CfarConfig = field(default_factory=CfarConfig)
    doa: DoaConfig = field(default_factory=DoaConfig)
    processing: ProcessingConfig = field(default_factory=ProcessingConfig)


@dataclass(frozen=True)
class Violation:
    field: str
    message: str
    bound: Optional[float] = None
    severity: Severity = Severity.ERROR

    def __str__(self):
        bound_text = '' if self.bound is None else f' (bound {self.bound:.6g})'
        return f'{self.severity.name.lower()}: {self.field}: {self.message}{bound_text}'


@dataclass(frozen=True, eq=False)
class DataCube:
    """Complex beat samples indexed [sample, chirp, channel, cpi]."""
    data: np.ndarray
    radar: RadarParams
    array: ArrayGeometry

    def __post_init__(self):
        expected = (self.radar.n_samples, self.radar.n_chirps, self.array.n_rx, self.radar.n_cpi)
        if self.data.shape != expected:
            raise ValueError(f'cube shape {self.data.shape} does not match metadata {expected}')
        if not np.all(np.isfinite(self.data)):
            raise ValueError('cube contains non-finite samples')
        _freeze(self.data)

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class RangeDopplerMap:
    power: np.ndarray
    range_step: float
    velocity_step: float
    cpi_index: int

    def __post_init__(self):
        _freeze(self.power)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.power.shape

    @property
    def range_axis(self) -> np.ndarray:
        return np.arange(self.power.shape[0]) * self.range_step

    @property
    def velocity_axis(self) -> np.ndarray:
        n = self.power.shape[1]
        return (np.arange(n) - n // 2) * self.velocity_step

    def range_of(self, range_bin: int) -> float:
        return range_bin * self.range_step

    def velocity_of(self, doppler_bin: int) -> float:
        return (doppler_bin - self.power.shape[1] // 2) * self.velocity_step


@dataclass(frozen=True)
class Detection:
    range_bin: int
    doppler_bin: int
    range_m: float
    vel_mps: float
    cell_power: float
    threshold: float
    cpi_index: int


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """Channel vectors at one range bin, one column per chirp."""
    snapshots: np.ndarray
    range_bin: int
    cpi_index: int

    def __post_init__(self):
        if self.snapshots.ndim != 2 or self.snapshots.shape[1] < 1:
            raise ValueError('snapshots must be an n_rx x T matrix with T >= 1')
        _freeze(self.snapshots)

    @property
    def n_rx(self) -> int:
        return self.snapshots.shape[0]

    @property
    def count(self) -> int:
        return self.snapshots.shape[1]


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        _freeze(self.matrix)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class AngleSpectrum:
    angles_deg: np.ndarray
    power: np.ndarray
    method: DoaMethod
    peaks: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.angles_deg.shape != self.power.shape:
            raise ValueError('angle grid and power lengths differ')
        _freeze(self.angles_deg)
        _freeze(self.power)

    @property
    def peak_angles(self) -> Tuple[float, ...]:
        return tuple(angle for angle, _ in self.peaks)


@dataclass(frozen=True, eq=False)
class SteeringDictionary:
    matrix: np.ndarray
    angles_deg: np.ndarray

    def __post_init__(self):
        _freeze(self.matrix)
        _freeze(self.angles_deg)

    @property
    def size(self) -> int:
        return self.matrix.shape[1]
