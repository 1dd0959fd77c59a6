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

import sys
import loguru
import argparse
from typing import List, Optional
from datetime import datetime as dt
from threading import main_thread
from jacob.logging import CustomLevel, setup_logger
from jacob.filesystem import fix_path
from jacob.datetime.timing import seconds
from jacob.datetime.formatting import format_dhms
from fmcwlab import pipeline
from fmcwlab.scene import ScenarioInvalid, require_valid, load_scenario
from fmcwlab.pipeline import FailureKind, PipelineError
from fmcwlab.constants import LOG_LEVELS, WELCOME_MSG, PROGRAM_NAME, DEFAULT_LEVELS
from fmcwlab.cli import ReturnCode, rce, config_error_code
from fmcwlab.configfile import ConfigError, parse_overrides


logger = loguru.logger
CUSTOM_LOG_LEVELS = {CustomLevel(number, name) for number, name in LOG_LEVELS}

FAILURE_CODES = {
    FailureKind.DEPENDENCY: ReturnCode.DEPENDENCY,
    FailureKind.IO: ReturnCode.IO,
    FailureKind.NUMERIC: ReturnCode.NUMERIC
}


def get_cli_args(argv: Optional[List[str]] = None) -> dict:
    parser = argparse.ArgumentParser(prog=PROGRAM_NAME, description=WELCOME_MSG)
    parser.add_argument(dest='command',
                        metavar='COMMAND',
                        help='Comma-separated stages (simulate, rdmap, detect, '
                             'doa-fft, doa-music, doa-cs, range-angle), "all", '
                             '"compare" or "plot".')
    parser.add_argument('--scenario',
                        dest='scenario_path',
                        help='Scenario JSON file; required except for "plot".')
    parser.add_argument('--out',
                        dest='out_dir',
                        required=True,
                        help='Output directory.')
    parser.add_argument('--set',
                        dest='overrides',
                        action='append',
                        default=[],
                        metavar='KEY=VALUE',
                        help='Override a scenario value by dot path, e.g. '
                             'targets.0.range_m=60. May be repeated.')
    parser.add_argument('--seed',
                        type=int,
                        dest='seed',
                        help='Shorthand for --set radar.rng_seed=N.')
    parser.add_argument('--cluster',
                        action='store_true',
                        dest='cluster',
                        help='Merge 8-connected CFAR hits in detections.csv.')
    parser.add_argument('--repeats',
                        type=int,
                        default=5,
                        dest='repeats',
                        help='Timing repeats per method for "compare".')
    parser.add_argument('-l', '--levels',
                        dest='log_levels',
                        default=DEFAULT_LEVELS,
                        help='Specify logging levels.')
    parser.add_argument('-L', '--log',
                        dest='log_file',
                        help='Specify log file.')

    cla = vars(parser.parse_args(argv))
    if cla['command'] != 'plot' and not cla.get('scenario_path'):
        parser.error(f'--scenario is required for "{cla["command"]}"')
    if cla['command'] not in ('plot', 'compare'):
        try:
            cla['stages'] = pipeline.parse_stages(cla['command'])
        except ValueError as e:
            parser.error(str(e))
    return cla


def log_details(details: dict):
    if len(details) > 0:
        logger.debug('Details:')
        for k, v in details.items():
            logger.debug(f'- {k} = {v}')


def run(argv: Optional[List[str]] = None) -> int:
    cla = get_cli_args(argv)
    log_file = fix_path(cla.get('log_file'))

    levels_notation = cla['log_levels']
    try:
        loguru.logger = setup_logger(levels_notation,
                                     custom_levels=CUSTOM_LOG_LEVELS,
                                     log_file=log_file)
    except ValueError as e:
        print(f'Malformed logging level specification "{levels_notation}":', e)
        return rce(ReturnCode.IO)

    logger.info(WELCOME_MSG)
    logger.debug(f'Logging levels {levels_notation}')

    out_dir = fix_path(cla['out_dir'])
    command = cla['command']

    if command == 'plot':
        try:
            written = pipeline.plot_spectra(out_dir)
        except PipelineError as e:
            logger.error(f'Plotting failed: {e.message}')
            return rce(FAILURE_CODES[e.kind])
        if not written:
            logger.warning(f'No angle spectrum CSV files in "{out_dir}"')
            return rce(ReturnCode.NO_WORK)
        logger.info(f'Wrote {len(written)} plot(s)')
        return rce(ReturnCode.OK)

    scenario_path = fix_path(cla['scenario_path'])
    logger.info(f'Scenario from "{scenario_path}"')

    try:
        overrides = parse_overrides(cla['overrides'])
        if cla.get('seed') is not None:
            overrides['radar.rng_seed'] = cla['seed']
        scenario = load_scenario(scenario_path, overrides)
    except ConfigError as e:
        logger.error(f'Failed to load scenario: {e}')
        log_details(e.details)
        return rce(config_error_code(e))

    try:
        for warning in require_valid(scenario):
            logger.warning(f'Scenario {warning}')
    except ScenarioInvalid as e:
        logger.error('Scenario failed validation:')
        for violation in e.violations:
            logger.error(f'- {violation}')
        return rce(ReturnCode.VALIDATION)

    start_marker = seconds()
    logger.info(dt.now().strftime('Started at %b %d %Y %I:%M %p'))

    rc = ReturnCode.OK
    try:
        if command == 'compare':
            report = pipeline.compare_methods(scenario, out_dir, repeats=cla['repeats'])
            if report.empty:
                logger.warning('No detections to compare')
                rc = ReturnCode.NO_WORK
            for row in report.itertuples(index=False):
                logger.info(f'{row.method}: {row.wall_time_s:.6f} s, '
                            f'{row.range_m:.2f} m, peaks {row.peak_angles_deg} '
                            f'(truth {row.truth_angles_deg}), resolved {row.resolved}/{row.expected}')
        else:
            manifest = pipeline.run(cla['stages'],
                                    scenario,
                                    out_dir,
                                    scenario_path=scenario_path,
                                    overrides=overrides,
                                    cluster=cla['cluster'])
            idle = [stage for stage in manifest.stages if not manifest.files.get(stage)]
            if idle:
                logger.warning(f'Stage(s) without output: {", ".join(idle)}')
                rc = ReturnCode.NO_WORK
    except PipelineError as e:
        logger.error(f'Pipeline failed: {e.message}')
        log_details(e.details)
        return rce(FAILURE_CODES[e.kind])
    except OSError as e:
        logger.error(f'I/O failure: {e}')
        return rce(ReturnCode.IO)

    run_delta = seconds() - start_marker
    ed, eh, em, es = format_dhms(run_delta)
    logger.info(f'Runtime of {ed} days, {eh} hours, {em} minutes and {es} seconds')
    return rce(rc)


def main():
    main_thread().name = 'Main'
    sys.exit(run())


if __name__ == '__main__':
    main()
