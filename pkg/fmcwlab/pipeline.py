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
Stage orchestration: simulate, range-Doppler, CFAR, the three angle
estimators and the MUSIC range-angle map.

Only the data cube is a hard prerequisite between stages. It comes from the
simulate stage of the same run or from a cached ``cube.bin`` in the output
directory; range-Doppler maps and detections are recomputed from it on
demand.
"""
import os
import enum
import json
import time
import hashlib
import numpy as np
import pandas as pd
from loguru import logger
from typing import Any, Dict, List, Tuple, Callable, Iterable, Optional
from pathlib import Path
from dataclasses import field, dataclass
from fmcwlab import export, cubefile
from fmcwlab.doa import (angle_grid,
                         covariance,
                         build_dictionary,
                         range_angle_map,
                         extract_snapshots,
                         cs_angle_spectrum,
                         ConvergenceError,
                         fft_angle_spectrum,
                         music_pseudospectrum)
from fmcwlab.cfar import ca_cfar_2d, cluster_detections
from fmcwlab.core import DoaMethod, DataCube, Detection, Scenario, AngleSpectrum
from fmcwlab.synth import synthesize, chirp_frequency, antenna_positions, waveform_snapshot
from fmcwlab.specproc import RangeDopplerResult, range_doppler
from fmcwlab.constants import VERSION, THREADS_ENV


CUBE_FILE = 'cube.bin'
MANIFEST_FILE = 'manifest.json'
COMPARE_FILE = 'compare.csv'
ANGLE_CSV_PATTERN = 'angles_*.csv'
MIN_ANGLE_TOLERANCE_DEG = 0.5


class Stage(enum.Enum):
    SIMULATE = 'simulate'
    RDMAP = 'rdmap'
    DETECT = 'detect'
    DOA_FFT = 'doa-fft'
    DOA_MUSIC = 'doa-music'
    DOA_CS = 'doa-cs'
    RANGE_ANGLE = 'range-angle'


STAGE_ORDER = list(Stage)
DOA_STAGES = {
    Stage.DOA_FFT: DoaMethod.FFT,
    Stage.DOA_MUSIC: DoaMethod.MUSIC,
    Stage.DOA_CS: DoaMethod.CS
}
STAGE_FOR_METHOD = {method: stage for stage, method in DOA_STAGES.items()}


class FailureKind(enum.Enum):
    DEPENDENCY = 1
    IO = 2
    NUMERIC = 3


class PipelineError(Exception):

    @property
    def kind(self):
        return self._kind

    @property
    def details(self):
        return self._details

    @property
    def message(self) -> str:
        return self._details.get('message', self._kind.name.lower())

    def __init__(self, kind: FailureKind, **details):
        super().__init__(kind, details)
        self._kind = kind
        self._details = details

    def __str__(self):
        return f'{self._kind.name}: {self.message}'


def parse_stages(text: str) -> List[Stage]:
    """
    Comma-separated stage names, or ``all``, in dependency order.

    :raises ValueError: on an unknown stage name
    """
    if text.strip() == 'all':
        return list(STAGE_ORDER)
    requested = set()
    for name in text.split(','):
        name = name.strip()
        try:
            requested.add(Stage(name))
        except ValueError:
            raise ValueError(f'unknown stage "{name}"')
    return [s for s in STAGE_ORDER if s in requested]


def worker_count() -> int:
    """Worker threads for per-CPI work, capped by ``FMCW_DOA_THREADS``."""
    default = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning('Ignoring {}="{}": not an integer', THREADS_ENV, raw)
        return default
    if value < 1:
        logger.warning('Ignoring {}={}: must be at least 1', THREADS_ENV, value)
        return default
    return value


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b''):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunManifest:
    scenario_path: Optional[str]
    stages: List[str]
    out_dir: str
    version: str = VERSION
    scenario_sha256: Optional[str] = None
    overrides: Dict[str, Any] = field(default_factory=dict)
    files: Dict[str, List[str]] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def all_files(self) -> List[str]:
        return [name for stage in self.stages for name in self.files.get(stage, [])]

    def to_document(self) -> dict:
        return {
            'version': self.version,
            'scenario': self.scenario_path,
            'scenario_sha256': self.scenario_sha256,
            'overrides': self.overrides,
            'stages': self.stages,
            'out_dir': self.out_dir,
            'files': self.files,
            'timings_s': self.timings
        }

    def write(self, path: Path):
        with open(path, 'w') as f:
            json.dump(self.to_document(), f, indent=2)
            f.write('\n')


def truth_for(s: Scenario, det: Detection, range_step: float) -> List[float]:
    """True angles of the targets whose range falls within one bin of the detection."""
    return sorted(t.angle_deg for t in s.targets if abs(round(t.range_m / range_step) - det.range_bin) <= 1)


def grid_spacing(angles: np.ndarray, at: float) -> float:
    if angles.size < 2:
        return 0.0
    i = int(np.argmin(np.abs(angles - at)))
    lo, hi = max(i - 1, 0), min(i + 1, angles.size - 1)
    return float(np.max(np.diff(angles[lo:hi + 1])))


def match_peaks(truth: List[float],
                peaks: Iterable[float],
                tolerance: float) -> Tuple[List[Optional[float]], int]:
    """
    Pair every true angle with the nearest unused estimated peak.

    :return: per-truth absolute errors (None when no peak is left) and the
             number of truths matched within ``tolerance``
    """
    remaining = list(peaks)
    errors = []
    resolved = 0
    for angle in truth:
        if not remaining:
            errors.append(None)
            continue
        nearest = min(remaining, key=lambda p: abs(p - angle))
        error = abs(nearest - angle)
        errors.append(error)
        if error <= tolerance:
            resolved += 1
            remaining.remove(nearest)
    return errors, resolved


def resolution_tolerance(truth: List[float], spectrum: AngleSpectrum) -> float:
    if len(truth) >= 2:
        return 0.5 * float(np.min(np.diff(truth)))
    spacing = grid_spacing(np.asarray(spectrum.angles_deg), truth[0]) if truth else 0.0
    return max(spacing, MIN_ANGLE_TOLERANCE_DEG)


class Pipeline:
    """
    Runs stages for one scenario into one output directory.

    Intermediate products are cached on the instance, so a pipeline that
    simulated its cube feeds every later stage without touching the disk.
    """

    @property
    def scenario(self) -> Scenario:
        return self._scenario

    @property
    def out_dir(self) -> Path:
        return self._out_dir

    @property
    def workers(self) -> int:
        return self._workers

    @property
    def cube_path(self) -> Path:
        return self._out_dir / CUBE_FILE

    def __init__(self,
                 scenario: Scenario,
                 out_dir: Path,
                 workers: Optional[int] = None,
                 cluster: bool = False):
        self._scenario = scenario
        self._out_dir = Path(out_dir)
        self._workers = workers or worker_count()
        self._cluster = cluster
        self._cube: Optional[DataCube] = None
        self._rd: Optional[RangeDopplerResult] = None
        self._detections: Optional[List[Detection]] = None
        self._stage_handlers: Dict[Stage, Callable[[Stage], List[Path]]] = {
            Stage.SIMULATE: self._simulate,
            Stage.RDMAP: self._rdmap,
            Stage.DETECT: self._detect,
            Stage.DOA_FFT: self._doa,
            Stage.DOA_MUSIC: self._doa,
            Stage.DOA_CS: self._doa,
            Stage.RANGE_ANGLE: self._range_angle
        }

    def ensure_out_dir(self):
        try:
            self._out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise PipelineError(FailureKind.IO, message=f'cannot create {self._out_dir}: {e}', underlying=e)

    def cube(self, requester: Stage) -> DataCube:
        if self._cube is not None:
            return self._cube
        if not self.cube_path.exists():
            raise PipelineError(FailureKind.DEPENDENCY,
                                message=f'stage "{requester.value}" needs a data cube; '
                                        f'run "simulate" first (no {self.cube_path})',
                                stage=requester.value)
        try:
            self._cube = cubefile.load_cube(self.cube_path, self._scenario)
        except cubefile.CubeFormatError as e:
            raise PipelineError(FailureKind.DEPENDENCY,
                                message=f'cached cube unusable: {e}',
                                stage=requester.value)
        except OSError as e:
            raise PipelineError(FailureKind.IO, message=f'cannot read {self.cube_path}: {e}', underlying=e)
        logger.debug('Using cached cube {}', self.cube_path)
        return self._cube

    def cube_or_simulate(self) -> DataCube:
        """The cached cube when present, else a fresh in-memory simulation."""
        if self._cube is None and not self.cube_path.exists():
            self._cube = cubefile.quantize(synthesize(self._scenario, self._workers))
        return self.cube(Stage.SIMULATE)

    def range_doppler(self, requester: Stage) -> RangeDopplerResult:
        if self._rd is None:
            p = self._scenario.processing
            self._rd = range_doppler(self.cube(requester), p.window, p.range_pad, p.doppler_pad, self._workers)
        return self._rd

    def detections(self, requester: Stage) -> List[Detection]:
        """Raw CFAR hits over every CPI."""
        if self._detections is None:
            hits = []
            for rd_map in self.range_doppler(requester).maps:
                hits.extend(ca_cfar_2d(rd_map, self._scenario.cfar))
            self._detections = hits
        return self._detections

    def doa_detections(self, requester: Stage) -> List[Detection]:
        """Strongest cell of every detection cluster in CPI 0."""
        return cluster_detections(d for d in self.detections(requester) if d.cpi_index == 0)

    def music_sources(self, det: Detection, peers: List[Detection]) -> int:
        """Configured source count, else the number of peers on the same range-Doppler cell."""
        n_rx = self._scenario.array.n_rx
        if self._scenario.doa.music_sources is not None:
            return self._scenario.doa.music_sources
        sharing = sum(1 for p in peers if (p.range_bin, p.doppler_bin) == (det.range_bin, det.doppler_bin))
        return int(np.clip(sharing, 1, n_rx - 1))

    def angle_spectrum(self,
                       method: DoaMethod,
                       det: Detection,
                       peers: List[Detection],
                       sources: Optional[int] = None) -> AngleSpectrum:
        """
        Angle spectrum of one detection by ``method``.

        :param peers: detections of the same CPI, used to count sources on
                      the detection's range-Doppler cell
        :param sources: source count to use instead of that count
        :raises PipelineError: NUMERIC when the sparse fit does not converge
        """
        s = self._scenario
        profile = self.range_doppler(STAGE_FOR_METHOD[method]).profile
        snap = extract_snapshots(profile, det)
        d = sources or self.music_sources(det, peers)
        if method == DoaMethod.FFT:
            return fft_angle_spectrum(snap, s.processing.fft_angle_size, s.array, d)
        if method == DoaMethod.MUSIC:
            grid = angle_grid(s.doa.angle_min_deg, s.doa.angle_max_deg, s.doa.angle_step_deg)
            return music_pseudospectrum(covariance(snap), d, grid, s.array)
        grid = angle_grid(s.doa.angle_min_deg, s.doa.angle_max_deg, s.doa.cs_step_deg)
        try:
            return cs_angle_spectrum(snap,
                                     build_dictionary(grid, s.array),
                                     lambda_scale=s.doa.cs_lambda_scale,
                                     max_iter=s.doa.cs_max_iter,
                                     tol=s.doa.cs_tol,
                                     n_peaks=d)
        except ConvergenceError as e:
            raise PipelineError(FailureKind.NUMERIC,
                                message=f'sparse fit at range bin {det.range_bin}, Doppler bin {det.doppler_bin}: {e}',
                                underlying=e)

    def _simulate(self, _: Stage) -> List[Path]:
        s = self._scenario
        self._cube = cubefile.quantize(synthesize(s, self._workers))
        self._rd = None
        self._detections = None
        cubefile.write_cube(self.cube_path, self._cube)

        radar = s.radar
        t = np.linspace(0.0, 4.0 * radar.period, 4 * radar.n_samples, endpoint=False)
        chirp_path = self._out_dir / 'chirp.csv'
        export.write_table(chirp_path,
                           pd.DataFrame({'time_s': t, 'frequency_hz': chirp_frequency(t, radar)}),
                           ['chirp frequency law, four periods'])

        waves = waveform_snapshot(s)
        columns = {'time_s': waves.time, 'transmit': waves.transmit}
        for i, echo in enumerate(waves.receive):
            columns[f'receive_{i}'] = echo
        columns['mixed'] = waves.mixed
        waveforms_path = self._out_dir / 'waveforms.csv'
        export.write_table(waveforms_path, pd.DataFrame(columns), ['first chirp, real baseband'])

        tx, rx = antenna_positions(radar, s.array)
        wl = radar.wavelength
        antennas_path = self._out_dir / 'antennas.csv'
        export.write_table(antennas_path,
                           pd.DataFrame({'role': ['tx'] + ['rx'] * s.array.n_rx,
                                         'index': [0] + list(range(s.array.n_rx)),
                                         'x_m': np.concatenate(([tx], rx)),
                                         'x_wl': np.concatenate(([tx], rx)) / wl}),
                           [f'wavelength_m={export.fmt(wl)}'])

        return [self.cube_path, chirp_path, waveforms_path, antennas_path]

    def _rdmap(self, stage: Stage) -> List[Path]:
        rd = self.range_doppler(stage)
        written = []
        for rd_map in rd.maps:
            written.extend(export.write_rdmap(self._out_dir / f'rdmap_cpi{rd_map.cpi_index:02d}', rd_map))

        first = rd.maps[0]
        power = np.sum(np.abs(rd.profile[:, 0, :, 0]) ** 2, axis=1)
        profile_path = self._out_dir / 'range_profile.csv'
        export.write_table(profile_path,
                           pd.DataFrame({'range_m': first.range_axis,
                                         'power_linear': power,
                                         'power_db': export.to_db(power)}),
                           ['range profile cpi=0 chirp=0, summed over channels'])
        written.append(profile_path)
        return written

    def _detect(self, stage: Stage) -> List[Path]:
        hits = self.detections(stage)
        listed = cluster_detections(hits) if self._cluster else hits
        for cpi in range(self._scenario.radar.n_cpi):
            count = sum(1 for d in listed if d.cpi_index == cpi)
            logger.debug('CPI {}: {} detection(s)', cpi, count)
        path = self._out_dir / 'detections.csv'
        export.write_detections(path, listed, self._cluster)
        return [path]

    def _doa(self, stage: Stage) -> List[Path]:
        method = DOA_STAGES[stage]
        targets = self.doa_detections(stage)
        if not targets:
            logger.warning('No detections in CPI 0, skipping {}', stage.value)
            return []

        combined = None
        angles = None
        comments = []
        for det in targets:
            spectrum = self.angle_spectrum(method, det, targets)
            peak = float(np.max(spectrum.power))
            normalized = spectrum.power / peak if peak > 0.0 else np.array(spectrum.power)
            combined = normalized if combined is None else combined + normalized
            angles = spectrum.angles_deg
            comments.append(export.spectrum_comment(det, spectrum))
            logger.debug('{} at {:.2f} m / {:.2f} m/s: peaks {}',
                         method.value,
                         det.range_m,
                         det.vel_mps,
                         export.format_angles(spectrum.peak_angles))

        path = self._out_dir / f'angles_{method.value}.csv'
        export.write_spectrum(path, angles, combined, method.value, comments)
        return [path]

    def _range_angle(self, stage: Stage) -> List[Path]:
        s = self._scenario
        grid = angle_grid(s.doa.angle_min_deg, s.doa.angle_max_deg, s.doa.angle_step_deg)
        rd = self.range_doppler(stage)
        d = s.doa.music_sources or 1
        ra = range_angle_map(rd.profile, d, grid, s.array)

        csv_path = self._out_dir / 'range_angle.csv'
        pgm_path = self._out_dir / 'range_angle.pgm'
        export.write_matrix(csv_path,
                            ra,
                            'range_m',
                            rd.maps[0].range_axis,
                            grid,
                            [f'range-angle music sources={d} cpi=0 rows=range_m cols=angle_deg'])
        export.write_pgm(pgm_path, ra)
        return [csv_path, pgm_path]

    def run_stage(self, stage: Stage) -> List[Path]:
        self.ensure_out_dir()
        try:
            return self._stage_handlers[stage](stage)
        except OSError as e:
            raise PipelineError(FailureKind.IO, message=f'stage "{stage.value}": {e}', underlying=e)

    def run(self, stages: Iterable[Stage], manifest: RunManifest) -> RunManifest:
        """Run stages in dependency order and write the manifest."""
        ordered = [s for s in STAGE_ORDER if s in set(stages)]
        manifest.stages = [s.value for s in ordered]
        for stage in ordered:
            logger.info('Stage {} started', stage.value)
            start = time.perf_counter()
            written = self.run_stage(stage)
            elapsed = time.perf_counter() - start
            manifest.files[stage.value] = [p.name for p in written]
            manifest.timings[stage.value] = round(elapsed, 6)
            logger.info('Stage {} finished in {:.3f} s ({} file(s))', stage.value, elapsed, len(written))

        try:
            manifest.write(self._out_dir / MANIFEST_FILE)
        except OSError as e:
            raise PipelineError(FailureKind.IO, message=f'cannot write manifest: {e}', underlying=e)
        return manifest


def run(stages: Iterable[Stage],
        scenario: Scenario,
        out_dir: Path,
        scenario_path: Optional[Path] = None,
        overrides: Optional[Dict[str, Any]] = None,
        cluster: bool = False,
        workers: Optional[int] = None) -> RunManifest:
    manifest = RunManifest(scenario_path=None if scenario_path is None else str(scenario_path),
                           stages=[],
                           out_dir=str(out_dir),
                           scenario_sha256=None if scenario_path is None else file_sha256(scenario_path),
                           overrides=dict(overrides or {}))
    return Pipeline(scenario, out_dir, workers, cluster).run(stages, manifest)


def compare_methods(scenario: Scenario,
                    out_dir: Path,
                    repeats: int = 5,
                    workers: Optional[int] = None) -> pd.DataFrame:
    """
    Run the three estimators on the same CPI-0 detections.

    Wall time per method is the best of ``repeats`` passes over every
    detection. Rows are ordered by method runtime, then by detection.
    Uses the cached cube when present, otherwise simulates without writing
    the cube. Unless the scenario fixes the source count, each detection is
    analysed with as many sources as there are true targets on its range
    bin.
    """
    pipeline = Pipeline(scenario, out_dir, workers)
    pipeline.ensure_out_dir()
    pipeline.cube_or_simulate()

    targets = pipeline.doa_detections(Stage.DOA_FFT)
    range_step = pipeline.range_doppler(Stage.DOA_FFT).maps[0].range_step
    truths = [truth_for(scenario, det, range_step) for det in targets]
    n_rx = scenario.array.n_rx
    if scenario.doa.music_sources is None:
        sources = [int(np.clip(len(truth), 1, n_rx - 1)) for truth in truths]
    else:
        sources = [scenario.doa.music_sources] * len(targets)

    results = {}
    for method in DoaMethod:
        best = float('inf')
        spectra = []
        for _ in range(max(1, repeats)):
            start = time.perf_counter()
            spectra = [pipeline.angle_spectrum(method, det, targets, d) for det, d in zip(targets, sources)]
            best = min(best, time.perf_counter() - start)
        results[method] = (best, spectra)
        logger.info('{} took {:.6f} s over {} detection(s)', method.value, best, len(targets))

    rows = []
    for method in sorted(DoaMethod, key=lambda m: results[m][0]):
        best, spectra = results[method]
        for det, spectrum, truth in zip(targets, spectra, truths):
            errors, resolved = match_peaks(truth, spectrum.peak_angles, resolution_tolerance(truth, spectrum))
            rows.append({
                'method': method.value,
                'wall_time_s': best,
                'range_bin': det.range_bin,
                'doppler_bin': det.doppler_bin,
                'range_m': det.range_m,
                'vel_mps': det.vel_mps,
                'peak_angles_deg': export.format_angles(spectrum.peak_angles),
                'truth_angles_deg': export.format_angles(truth),
                'abs_errors_deg': ';'.join('nan' if e is None else export.fmt(e) for e in errors),
                'expected': len(truth),
                'resolved': resolved
            })

    frame = pd.DataFrame(rows, columns=['method', 'wall_time_s', 'range_bin', 'doppler_bin', 'range_m',
                                        'vel_mps', 'peak_angles_deg', 'truth_angles_deg', 'abs_errors_deg',
                                        'expected', 'resolved'])
    try:
        export.write_table(pipeline.out_dir / COMPARE_FILE, frame, ['method comparison, ordered by runtime'])
    except OSError as e:
        raise PipelineError(FailureKind.IO, message=f'cannot write {COMPARE_FILE}: {e}', underlying=e)
    return frame


def plot_spectra(out_dir: Path) -> List[Path]:
    """Convert every angle spectrum CSV in ``out_dir`` to an SVG plot."""
    written = []
    for csv_path in sorted(Path(out_dir).glob(ANGLE_CSV_PATTERN)):
        try:
            written.append(export.spectrum_to_svg(csv_path))
        except OSError as e:
            raise PipelineError(FailureKind.IO, message=f'cannot plot {csv_path}: {e}', underlying=e)
        logger.debug('Plotted {}', csv_path.name)
    return written
