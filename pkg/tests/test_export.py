import numpy as np
import pandas as pd
import pytest
from fmcwlab import export
from fmcwlab.core import Detection, DoaMethod, AngleSpectrum, RangeDopplerMap


def pgm_payload(path):
    raw = path.read_bytes()
    magic, size, maxval, body = raw.split(b'\n', 3)
    width, height = map(int, size.split())
    return magic, width, height, int(maxval), np.frombuffer(body, dtype='>u2').reshape(height, width)


def test_fmt_and_db():
    assert export.fmt(0.1) == '0.1'
    assert export.fmt(1 / 3) == '0.333333333'
    assert export.to_db([1.0, 100.0]).tolist() == [0.0, 20.0]
    assert export.to_db(0.0) == pytest.approx(-300.0)


def test_table_with_comments(tmp_path):
    path = tmp_path / 't.csv'
    export.write_table(path, pd.DataFrame({'a': [1, 2], 'b': [0.5, 1 / 3]}), ['first', 'k=v'])
    assert path.read_text() == '# first\n# k=v\na,b\n1,0.5\n2,0.333333333\n'
    comments, frame = export.read_table(path)
    assert comments == ['first', 'k=v']
    assert frame['a'].tolist() == [1, 2]


def test_pgm_levels():
    levels = export.pgm_levels(np.array([[1.0, 1e-2], [1e-8, 1e-12]]))
    assert levels.dtype == np.dtype('>u2')
    assert levels.tolist() == [[65535, 49151], [0, 0]]


def test_pgm_file(tmp_path):
    path = tmp_path / 'm.pgm'
    matrix = np.ones((3, 5))
    matrix[1, 4] = 10.0
    export.write_pgm(path, matrix)
    magic, width, height, maxval, levels = pgm_payload(path)
    assert (magic, width, height, maxval) == (b'P5', 5, 3, 65535)
    assert levels[1, 4] == 65535
    assert levels[0, 0] == round(70 / 80 * 65535)


def test_rdmap_files(tmp_path):
    power = np.arange(12.0).reshape(3, 4) + 1.0
    paths = export.write_rdmap(tmp_path / 'rdmap_cpi00', RangeDopplerMap(power, 0.5, 0.25, 0))
    assert [p.name for p in paths] == ['rdmap_cpi00.csv', 'rdmap_cpi00.pgm']
    comments, frame = export.read_table(paths[0])
    assert 'range_step_m=0.5' in comments[0]
    assert list(frame.columns) == ['range_m', '-0.5', '-0.25', '0', '0.25']
    assert frame['range_m'].tolist() == [0.0, 0.5, 1.0]
    assert frame.iloc[2, 4] == 12.0


def test_detections_csv(tmp_path):
    path = tmp_path / 'detections.csv'
    export.write_detections(path, [Detection(50, 141, 49.97, 9.88, 1e6, 10.0, 0)], True)
    comments, frame = export.read_table(path)
    assert comments == ['detections clustered=true']
    assert list(frame.columns) == ['cpi', 'range_bin', 'doppler_bin', 'range_m', 'vel_mps', 'power_db', 'threshold_db']
    row = frame.iloc[0]
    assert (row['range_bin'], row['doppler_bin']) == (50, 141)
    assert (row['power_db'], row['threshold_db']) == (60.0, 10.0)


def test_empty_detections(tmp_path):
    path = tmp_path / 'detections.csv'
    export.write_detections(path, [], False)
    assert path.read_text().splitlines()[-1] == 'cpi,range_bin,doppler_bin,range_m,vel_mps,power_db,threshold_db'


def test_spectrum_csv_and_svg(tmp_path):
    angles = np.array([-10.0, 0.0, 10.0])
    spectrum = AngleSpectrum(angles, np.array([0.1, 1.0, 0.01]), DoaMethod.MUSIC, ((0.0, 1.0),))
    det = Detection(50, 141, 49.97, 9.88, 1.0, 1.0, 0)
    path = tmp_path / 'angles_music.csv'
    export.write_spectrum(path, angles, spectrum.power, 'music', [export.spectrum_comment(det, spectrum)])

    method, frame = export.read_spectrum(path)
    assert method == 'music'
    assert frame['power_db'].tolist() == [-10.0, 0.0, -20.0]
    assert 'peaks=0' in path.read_text()

    svg = export.spectrum_to_svg(path)
    assert svg.name == 'angles_music.svg'
    text = svg.read_text()
    assert text.startswith('<svg') and text.rstrip().endswith('</svg>')
    assert 'MUSIC angle spectrum' in text
    assert text.count('<polyline') == 1


def test_format_angles():
    assert export.format_angles([-15.0, 10.2]) == '-15;10.2'
    assert export.format_angles([]) == ''
