import json
from conftest import REFERENCE_SCENARIO, CLOSE_SCENARIO
from fmcwlab import cli
from fmcwlab.cli import ReturnCode
from fmcwlab.scene import parse_scenario, load_scenario


def test_valid_files(capsys):
    assert cli.run(['validate', str(REFERENCE_SCENARIO), str(CLOSE_SCENARIO)]) == ReturnCode.OK
    out = capsys.readouterr().out
    assert out.count('- validation passed') == 2


def test_no_files(capsys):
    assert cli.run(['validate']) == ReturnCode.NO_WORK
    assert cli.run([]) == ReturnCode.NO_WORK


def test_worst_code_wins(tmp_path, capsys):
    broken = tmp_path / 'broken.json'
    broken.write_text('{')
    rc = cli.run(['val', str(tmp_path / 'absent.json'), str(broken), str(REFERENCE_SCENARIO)])
    assert rc == ReturnCode.IO
    out = capsys.readouterr().out
    assert 'not found' in out
    assert 'syntax error at line 1' in out


def test_abort_on_first_error(tmp_path, capsys):
    broken = tmp_path / 'broken.json'
    broken.write_text('{')
    assert cli.run(['vd', '-a', str(broken), str(tmp_path / 'absent.json')]) == ReturnCode.PARSE


def test_violations_reported(capsys):
    rc = cli.run(['validate', '--set', 'targets.0.range_m=300', str(REFERENCE_SCENARIO)])
    assert rc == ReturnCode.VALIDATION
    assert 'targets.0.range_m' in capsys.readouterr().out


def test_warning_only_passes(capsys):
    rc = cli.run(['validate', '--set', 'array.rx_spacing_wl=0.6', str(REFERENCE_SCENARIO)])
    assert rc == ReturnCode.OK
    out = capsys.readouterr().out
    assert 'warning: array.rx_spacing_wl' in out


def test_json_output(capsys):
    assert cli.run(['validate', '--json', str(CLOSE_SCENARIO)]) == ReturnCode.OK
    out = capsys.readouterr().out
    document = json.loads(out)
    assert document['cfar']['pfa'] == 1e-3
    assert parse_scenario(out) == load_scenario(CLOSE_SCENARIO)


def test_bad_override(capsys):
    assert cli.run(['validate', '--set', 'nonsense', str(REFERENCE_SCENARIO)]) == ReturnCode.PARSE
