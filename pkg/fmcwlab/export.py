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
Artifact writers: CSV tables, 16-bit PGM heatmaps and SVG line plots.

Every float goes through ``FLOAT_FORMAT`` so repeated runs produce
byte-identical files.
"""
import numpy as np
import pandas as pd
from typing import List, Tuple, Iterable, Optional, Sequence
from pathlib import Path
from xml.sax.saxutils import escape
from fmcwlab.core import Detection, AngleSpectrum, RangeDopplerMap


FLOAT_FORMAT = '%.9g'
PGM_MAX = 65535
DEFAULT_DYNAMIC_RANGE_DB = 80.0
POWER_FLOOR = 1e-30


def fmt(value: float) -> str:
    return FLOAT_FORMAT % value


def to_db(power) -> np.ndarray:
    return 10.0 * np.log10(np.maximum(np.asarray(power, dtype=float), POWER_FLOOR))


def write_table(path: Path, frame: pd.DataFrame, comments: Iterable[str] = ()):
    """CSV with optional ``# `` comment lines above the header row."""
    with open(path, 'w', newline='') as f:
        for line in comments:
            f.write(f'# {line}\n')
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')


def read_table(path: Path) -> Tuple[List[str], pd.DataFrame]:
    """Comment lines (without the ``# `` marker) and the table below them."""
    comments = []
    with open(path) as f:
        for line in f:
            if not line.startswith('#'):
                break
            comments.append(line[1:].strip())
    return comments, pd.read_csv(path, comment='#')


def write_matrix(path: Path,
                 matrix: np.ndarray,
                 row_name: str,
                 row_axis: Sequence[float],
                 column_axis: Sequence[float],
                 comments: Iterable[str] = ()):
    """
    Row-major matrix CSV: the header row carries the column axis values and
    the first column the row axis values.
    """
    frame = pd.DataFrame(np.asarray(matrix, dtype=float), columns=[fmt(c) for c in column_axis])
    frame.insert(0, row_name, np.asarray(row_axis, dtype=float))
    write_table(path, frame, comments)


def pgm_levels(matrix: np.ndarray, dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB) -> np.ndarray:
    """Log power relative to the maximum, clipped to the dynamic range and scaled to 0..65535."""
    db = to_db(matrix)
    db = np.clip(db - np.max(db), -dynamic_range_db, 0.0)
    return np.round((db + dynamic_range_db) / dynamic_range_db * PGM_MAX).astype('>u2')


def write_pgm(path: Path, matrix: np.ndarray, dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB):
    """Binary 16-bit PGM (P5, big-endian); image rows are matrix rows."""
    levels = pgm_levels(matrix, dynamic_range_db)
    height, width = levels.shape
    with open(path, 'wb') as f:
        f.write(f'P5\n{width} {height}\n{PGM_MAX}\n'.encode('ascii'))
        f.write(levels.tobytes())


def write_rdmap(stem: Path, rd_map: RangeDopplerMap) -> List[Path]:
    comments = [f'rdmap cpi={rd_map.cpi_index} '
                f'range_step_m={fmt(rd_map.range_step)} '
                f'velocity_step_mps={fmt(rd_map.velocity_step)} '
                f'rows=range_m cols=vel_mps']
    csv_path = stem.with_suffix('.csv')
    pgm_path = stem.with_suffix('.pgm')
    write_matrix(csv_path, rd_map.power, 'range_m', rd_map.range_axis, rd_map.velocity_axis, comments)
    write_pgm(pgm_path, rd_map.power)
    return [csv_path, pgm_path]


def detections_frame(detections: Iterable[Detection]) -> pd.DataFrame:
    rows = [{
        'cpi': d.cpi_index,
        'range_bin': d.range_bin,
        'doppler_bin': d.doppler_bin,
        'range_m': d.range_m,
        'vel_mps': d.vel_mps,
        'power_db': float(to_db(d.cell_power)),
        'threshold_db': float(to_db(d.threshold))
    } for d in detections]
    columns = ['cpi', 'range_bin', 'doppler_bin', 'range_m', 'vel_mps', 'power_db', 'threshold_db']
    return pd.DataFrame(rows, columns=columns)


def write_detections(path: Path, detections: Iterable[Detection], clustered: bool):
    write_table(path, detections_frame(detections), [f'detections clustered={str(clustered).lower()}'])


def format_angles(angles: Iterable[float]) -> str:
    return ';'.join(fmt(a) for a in angles)


def write_spectrum(path: Path,
                   angles_deg: np.ndarray,
                   power: np.ndarray,
                   method: str,
                   comments: Iterable[str] = ()):
    frame = pd.DataFrame({
        'angle_deg': np.asarray(angles_deg, dtype=float),
        'power_linear': np.asarray(power, dtype=float),
        'power_db': to_db(power)
    })
    write_table(path, frame, [f'method={method}', *comments])


def spectrum_comment(det: Detection, spectrum: AngleSpectrum) -> str:
    return (f'detection range_bin={det.range_bin} doppler_bin={det.doppler_bin} '
            f'range_m={fmt(det.range_m)} vel_mps={fmt(det.vel_mps)} '
            f'peaks={format_angles(spectrum.peak_angles)}')


def read_spectrum(path: Path) -> Tuple[Optional[str], pd.DataFrame]:
    comments, frame = read_table(path)
    method = None
    for line in comments:
        if line.startswith('method='):
            method = line.split('=', 1)[1].strip()
    return method, frame


def _ticks(low: float, high: float, count: int = 6) -> np.ndarray:
    if high <= low:
        return np.array([low])
    return np.linspace(low, high, count)


def write_svg_plot(path: Path,
                   x: Sequence[float],
                   y: Sequence[float],
                   title: str,
                   x_label: str,
                   y_label: str,
                   width: int = 800,
                   height: int = 480):
    """Single polyline plot with a framed plot area and labelled ticks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    left, right, top, bottom = 70, 20, 40, 50
    plot_w = width - left - right
    plot_h = height - top - bottom

    x_lo, x_hi = float(np.min(x)), float(np.max(x))
    y_lo, y_hi = float(np.min(y)), float(np.max(y))
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def px(v):
        return left + (v - x_lo) / (x_hi - x_lo) * plot_w

    def py(v):
        return top + (1.0 - (v - y_lo) / (y_hi - y_lo)) * plot_h

    points = ' '.join(f'{px(a):.2f},{py(b):.2f}' for a, b in zip(x, y))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<text x="{left + plot_w / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="13">'
        f'{escape(x_label)}</text>',
        f'<text x="16" y="{top + plot_h / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {top + plot_h / 2:.1f})">{escape(y_label)}</text>'
    ]
    for tick in _ticks(x_lo, x_hi):
        parts.append(f'<text x="{px(tick):.2f}" y="{top + plot_h + 18}" text-anchor="middle" '
                     f'font-size="11">{tick:.4g}</text>')
    for tick in _ticks(y_lo, y_hi):
        parts.append(f'<text x="{left - 6}" y="{py(tick) + 4:.2f}" text-anchor="end" '
                     f'font-size="11">{tick:.4g}</text>')
    parts.append(f'<polyline fill="none" stroke="#1f4e9c" stroke-width="1.5" points="{points}"/>')
    parts.append('</svg>')

    with open(path, 'w') as f:
        f.write('\n'.join(parts) + '\n')


def spectrum_to_svg(csv_path: Path, svg_path: Optional[Path] = None) -> Path:
    """Render an angle spectrum CSV as an SVG plot of power in dB against angle."""
    method, frame = read_spectrum(csv_path)
    svg_path = svg_path or csv_path.with_suffix('.svg')
    label = (method or 'unknown').upper()
    write_svg_plot(svg_path,
                   frame['angle_deg'].to_numpy(),
                   frame['power_db'].to_numpy(),
                   f'{label} angle spectrum',
                   'angle (deg)',
                   'power (dB)')
    return svg_path
