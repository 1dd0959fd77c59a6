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
import enum
import argparse
from typing import List, Optional
from fmcwlab.scene import validate, load_scenario, serialize_scenario
from fmcwlab.core import Severity
from fmcwlab.configfile import ErrorType, ConfigError, parse_overrides


PROGRAM_DESCRIPTION = """
A CLI utility to check scenario files without running the pipeline
"""
PRINT_STDOUT = True


def cprint(*args):
    # conditional print
    if PRINT_STDOUT:
        print(*args)


def node_unknown(e, key) -> str:
    value = e.details.get(key)
    return str(value) if value is not None else '(unknown)'


class ReturnCode(enum.IntEnum):
    OK = 0
    NO_WORK = 1
    PARSE = 2
    VALIDATION = 3
    DEPENDENCY = 4
    IO = 5
    NUMERIC = 6


def rce(code: ReturnCode) -> int:
    return int(code)


def config_error_code(e: ConfigError) -> ReturnCode:
    if e.generic_error in (ErrorType.NOT_FOUND, ErrorType.CANNOT_READ):
        return ReturnCode.IO
    if e.generic_error in (ErrorType.INVALID_BY_SCHEMA, ErrorType.NO_TARGETS):
        return ReturnCode.VALIDATION
    return ReturnCode.PARSE


def describe_config_error(e: ConfigError) -> str:
    if e.generic_error == ErrorType.NOT_FOUND:
        return f'not found: {node_unknown(e, "file")}'
    elif e.generic_error == ErrorType.CANNOT_READ:
        return f'not readable: {node_unknown(e, "file")}'
    elif e.generic_error == ErrorType.SYNTAX:
        return f'syntax error at line {node_unknown(e, "line")} column {node_unknown(e, "column")}: {e.message}'
    elif e.generic_error in (ErrorType.MISSING_KEY, ErrorType.UNKNOWN_KEY, ErrorType.TYPE_MISMATCH):
        return f'{e.message} at {node_unknown(e, "node_path")}'
    elif e.generic_error == ErrorType.INVALID_BY_SCHEMA:
        return f'violates schema: {e.message}'
    elif e.generic_error == ErrorType.SCHEMA_INVALID:
        return f'schema invalid: {e.message}; this is a developer issue, NOT a user issue!'
    return str(e)


def validate_scenarios(args) -> int:
    global PRINT_STDOUT

    PRINT_STDOUT = not args.json

    if not args.scenario_paths:
        cprint('no work')
        return rce(ReturnCode.NO_WORK)

    try:
        overrides = parse_overrides(args.overrides)
    except ConfigError as e:
        cprint(describe_config_error(e))
        return rce(ReturnCode.PARSE)

    worst = ReturnCode.OK
    for path in args.scenario_paths:
        cprint(f'{path}:')
        try:
            scenario = load_scenario(path, overrides)
        except ConfigError as e:
            cprint(f'- {describe_config_error(e)}')
            worst = max(worst, config_error_code(e))
            if args.error_abort:
                return rce(worst)
            continue

        violations = validate(scenario)
        for v in violations:
            cprint(f'- {v}')
        if any(v.severity == Severity.ERROR for v in violations):
            worst = max(worst, ReturnCode.VALIDATION)
            if args.error_abort:
                return rce(worst)
            continue

        cprint('- validation passed')
        if args.json:
            print(serialize_scenario(scenario))

    return rce(worst)


def get_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=PROGRAM_DESCRIPTION)
    sp = parser.add_subparsers(dest='subparser_name')

    sp_validate = sp.add_parser('validate', aliases=['val', 'vd'], description='Validate scenario files.')
    sp_validate.add_argument('-a',
                             '--abort',
                             dest='error_abort',
                             action='store_true',
                             help='exit upon encountering first error')
    sp_validate.add_argument('--json', dest='json', action='store_true', help='upon success, print the fully '
                                                                              'defaulted scenario to STDOUT as JSON')
    sp_validate.add_argument('--set',
                             dest='overrides',
                             action='append',
                             default=[],
                             metavar='KEY=VALUE',
                             help='override applied to every file before validation')
    sp_validate.add_argument(dest='scenario_paths',
                             type=str,
                             nargs='*',
                             metavar='FILENAME',
                             help='Path to one or more scenario files.')
    sp_validate.set_defaults(func=validate_scenarios)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    parser_result = get_parser().parse_args(argv)
    if parser_result.subparser_name is None:
        cprint('no subcommand specified')
        return rce(ReturnCode.NO_WORK)
    return parser_result.func(parser_result)


if __name__ == '__main__':
    sys.exit(run())
