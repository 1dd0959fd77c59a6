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
Scenario documents: parsing, serialization and validation.

A scenario bundles the radar, array geometry, targets and the processing
options of one run. Documents are JSON (see ``schema/scenario.json``); all
frequencies are in Hz, times in seconds, ranges in metres, velocities in m/s
and angles in degrees.
"""
import json
import math
from typing import Any, Dict, List, Optional
from pathlib import Path
from functools import lru_cache
from fmcwlab.core import (Window,
                          Target,
                          Scenario,
                          Severity,
                          CfarConfig,
                          DoaConfig,
                          EdgePolicy,
                          Violation,
                          RadarParams,
                          ArrayGeometry,
                          ProcessingConfig)
from fmcwlab.configfile import ScenarioValidator


class ScenarioInvalid(Exception):

    @property
    def violations(self) -> List[Violation]:
        return self._violations

    def __init__(self, violations: List[Violation]):
        super().__init__('; '.join(str(v) for v in violations))
        self._violations = violations


def is_power_of_two(n: int) -> bool:
    return isinstance(n, int) and n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=1)
def _validator() -> ScenarioValidator:
    return ScenarioValidator()


def _build(document: dict) -> Scenario:
    r = document['radar']
    radar = RadarParams(fc=float(r['fc']),
                        bandwidth=float(r['B']),
                        period=float(r['T']),
                        n_samples=int(r['n_samples']),
                        n_chirps=int(r['n_chirps']),
                        n_cpi=int(r['n_cpi']),
                        snr_db=None if r.get('snr_db') is None else float(r['snr_db']),
                        rng_seed=int(r.get('rng_seed', 0)))

    a = document['array']
    array = ArrayGeometry(n_rx=int(a['n_rx']),
                          rx_spacing_wl=float(a.get('rx_spacing_wl', 0.5)),
                          tx_offset_wl=float(a.get('tx_offset_wl', 2.0)))

    targets = tuple(Target(range_m=float(t['range_m']),
                           vel_mps=float(t['vel_mps']),
                           angle_deg=float(t['angle_deg']),
                           amplitude=float(t.get('amplitude', 1.0)))
                    for t in document['targets'])

    c = document.get('cfar', {})
    cfar = CfarConfig(guard_half=int(c.get('guard_half', 2)),
                      train_half=int(c.get('train_half', 4)),
                      pfa=float(c.get('pfa', 1e-3)),
                      edge_policy=EdgePolicy(c.get('edge_policy', 'skip')))

    d = document.get('doa', {})
    doa = DoaConfig(angle_min_deg=float(d.get('angle_min_deg', -90.0)),
                    angle_max_deg=float(d.get('angle_max_deg', 90.0)),
                    angle_step_deg=float(d.get('angle_step_deg', 0.1)),
                    cs_step_deg=float(d.get('cs_step_deg', 1.0)),
                    music_sources=None if d.get('music_sources') is None else int(d['music_sources']),
                    cs_lambda_scale=float(d.get('cs_lambda_scale', 0.05)),
                    cs_max_iter=int(d.get('cs_max_iter', 20000)),
                    cs_tol=float(d.get('cs_tol', 1e-6)))

    p = document.get('processing', {})
    processing = ProcessingConfig(window=Window(p.get('window', 'rect')),
                                  range_pad=int(p.get('range_pad', 1)),
                                  doppler_pad=int(p.get('doppler_pad', 1)),
                                  fft_angle_size=int(p.get('fft_angle_size', 256)))

    return Scenario(radar, array, targets, cfar, doa, processing)


def parse_scenario(text: str, overrides: Optional[Dict[str, Any]] = None) -> Scenario:
    """
    Parse a scenario document, filling every default.

    :param text: UTF-8 JSON scenario document
    :param overrides: optional dot-path overrides applied before validation
    :raises ConfigError: syntax errors (with line and column), missing or
                         unknown keys, type mismatches, empty target list
    """
    return _build(_validator().load_text(text, overrides))


def load_scenario(path: Path, overrides: Optional[Dict[str, Any]] = None) -> Scenario:
    return _build(_validator().load(path, overrides))


def scenario_to_document(s: Scenario) -> dict:
    r, a = s.radar, s.array
    return {
        'radar': {
            'fc': r.fc,
            'B': r.bandwidth,
            'T': r.period,
            'n_samples': r.n_samples,
            'n_chirps': r.n_chirps,
            'n_cpi': r.n_cpi,
            'snr_db': r.snr_db,
            'rng_seed': r.rng_seed
        },
        'array': {
            'n_rx': a.n_rx,
            'rx_spacing_wl': a.rx_spacing_wl,
            'tx_offset_wl': a.tx_offset_wl
        },
        'targets': [{
            'range_m': t.range_m,
            'vel_mps': t.vel_mps,
            'angle_deg': t.angle_deg,
            'amplitude': t.amplitude
        } for t in s.targets],
        'cfar': {
            'guard_half': s.cfar.guard_half,
            'train_half': s.cfar.train_half,
            'pfa': s.cfar.pfa,
            'edge_policy': s.cfar.edge_policy.value
        },
        'doa': {
            'angle_min_deg': s.doa.angle_min_deg,
            'angle_max_deg': s.doa.angle_max_deg,
            'angle_step_deg': s.doa.angle_step_deg,
            'cs_step_deg': s.doa.cs_step_deg,
            'music_sources': s.doa.music_sources,
            'cs_lambda_scale': s.doa.cs_lambda_scale,
            'cs_max_iter': s.doa.cs_max_iter,
            'cs_tol': s.doa.cs_tol
        },
        'processing': {
            'window': s.processing.window.value,
            'range_pad': s.processing.range_pad,
            'doppler_pad': s.processing.doppler_pad,
            'fft_angle_size': s.processing.fft_angle_size
        }
    }


def serialize_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_document(s), indent=2)


def _check_radar(r: RadarParams) -> List[Violation]:
    out = []
    for name, value in (('radar.fc', r.fc), ('radar.B', r.bandwidth), ('radar.T', r.period)):
        if not (math.isfinite(value) and value > 0.0):
            out.append(Violation(name, f'must be finite and positive, got {value}', 0.0))
    if r.n_samples < 2 or not is_power_of_two(r.n_samples):
        out.append(Violation('radar.n_samples', f'must be a power of two >= 2, got {r.n_samples}', 2))
    if r.n_chirps < 2 or not is_power_of_two(r.n_chirps):
        out.append(Violation('radar.n_chirps', f'must be a power of two >= 2, got {r.n_chirps}', 2))
    if r.n_cpi < 1:
        out.append(Violation('radar.n_cpi', f'must be at least 1, got {r.n_cpi}', 1))
    if r.snr_db is not None and not math.isfinite(r.snr_db):
        out.append(Violation('radar.snr_db', 'must be finite when given'))
    return out


def _check_array(a: ArrayGeometry) -> List[Violation]:
    out = []
    if a.n_rx < 2:
        out.append(Violation('array.n_rx', f'must be at least 2, got {a.n_rx}', 2))
    if not a.rx_spacing_wl > 0.0:
        out.append(Violation('array.rx_spacing_wl', f'must be positive, got {a.rx_spacing_wl}', 0.0))
    elif a.rx_spacing_wl > 0.5:
        out.append(Violation('array.rx_spacing_wl',
                             f'{a.rx_spacing_wl} wavelengths is ambiguous over +/-90 degrees',
                             0.5,
                             Severity.WARNING))
    if not math.isfinite(a.tx_offset_wl):
        out.append(Violation('array.tx_offset_wl', 'must be finite'))
    return out


def _check_targets(s: Scenario, radar_ok: bool) -> List[Violation]:
    out = []
    if not s.targets:
        out.append(Violation('targets', 'missing targets'))
    for i, t in enumerate(s.targets):
        prefix = f'targets.{i}'
        if radar_ok:
            r_max = s.radar.max_range
            if not 0.0 < t.range_m < r_max:
                out.append(Violation(f'{prefix}.range_m',
                                     f'{t.range_m} m outside (0, R_max = {r_max:.6g} m)',
                                     r_max))
            v_max = s.radar.max_velocity
            if not abs(t.vel_mps) < v_max:
                out.append(Violation(f'{prefix}.vel_mps',
                                     f'|{t.vel_mps}| m/s not below v_max = {v_max:.6g} m/s',
                                     v_max))
        if not -90.0 < t.angle_deg < 90.0:
            out.append(Violation(f'{prefix}.angle_deg', f'{t.angle_deg} outside (-90, 90)', 90.0))
        if not (math.isfinite(t.amplitude) and t.amplitude >= 0.0):
            out.append(Violation(f'{prefix}.amplitude', f'must be finite and non-negative, got {t.amplitude}', 0.0))
    return out


def _check_processing(s: Scenario) -> List[Violation]:
    out = []
    c, d, p = s.cfar, s.doa, s.processing
    if not c.train_half > c.guard_half >= 0:
        out.append(Violation('cfar', f'need train_half > guard_half >= 0, got {c.train_half} and {c.guard_half}'))
    if not 0.0 < c.pfa < 1.0:
        out.append(Violation('cfar.pfa', f'must lie in (0, 1), got {c.pfa}'))
    if not -90.0 <= d.angle_min_deg < d.angle_max_deg <= 90.0:
        out.append(Violation('doa', f'angle grid [{d.angle_min_deg}, {d.angle_max_deg}] must be increasing within [-90, 90]'))
    if not d.angle_step_deg > 0.0:
        out.append(Violation('doa.angle_step_deg', f'must be positive, got {d.angle_step_deg}', 0.0))
    if not d.cs_step_deg > 0.0:
        out.append(Violation('doa.cs_step_deg', f'must be positive, got {d.cs_step_deg}', 0.0))
    if d.music_sources is not None and not 1 <= d.music_sources < s.array.n_rx:
        out.append(Violation('doa.music_sources',
                             f'must lie in [1, n_rx), got {d.music_sources}',
                             s.array.n_rx - 1))
    if not d.cs_lambda_scale > 0.0:
        out.append(Violation('doa.cs_lambda_scale', f'must be positive, got {d.cs_lambda_scale}', 0.0))
    if d.cs_max_iter < 1:
        out.append(Violation('doa.cs_max_iter', f'must be at least 1, got {d.cs_max_iter}', 1))
    if not d.cs_tol > 0.0:
        out.append(Violation('doa.cs_tol', f'must be positive, got {d.cs_tol}', 0.0))
    for name, value in (('processing.range_pad', p.range_pad), ('processing.doppler_pad', p.doppler_pad)):
        if not is_power_of_two(value):
            out.append(Violation(name, f'must be a power of two, got {value}', 1))
    if not is_power_of_two(p.fft_angle_size) or p.fft_angle_size < s.array.n_rx:
        out.append(Violation('processing.fft_angle_size',
                             f'must be a power of two >= n_rx, got {p.fft_angle_size}',
                             s.array.n_rx))
    return out


def validate(s: Scenario) -> List[Violation]:
    """
    Check every scenario invariant.

    Violations are returned, never raised. Warnings (e.g. receiver spacing
    above half a wavelength) are included with ``Severity.WARNING``.
    """
    radar = _check_radar(s.radar)
    return radar + _check_array(s.array) + _check_targets(s, not radar) + _check_processing(s)


def errors_only(violations: List[Violation]) -> List[Violation]:
    return [v for v in violations if v.severity == Severity.ERROR]


def require_valid(s: Scenario) -> List[Violation]:
    """Raise on error-level violations, return the remaining warnings."""
    violations = validate(s)
    errors = errors_only(violations)
    if errors:
        raise ScenarioInvalid(errors)
    return violations
