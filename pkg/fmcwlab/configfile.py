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

import os
import enum
import json
import jsonschema
from typing import Any, Dict, List, Iterable, Optional
from pathlib import Path
from jsonschema.exceptions import SchemaError, ValidationError


class ErrorType(enum.Enum):
    NOT_FOUND = 2
    CANNOT_READ = 3
    SYNTAX = 4
    MISSING_KEY = 5
    UNKNOWN_KEY = 6
    TYPE_MISMATCH = 7
    INVALID_BY_SCHEMA = 8
    NO_TARGETS = 9
    SCHEMA_INVALID = 10
    BAD_OVERRIDE = 11


class ConfigError(Exception):

    @property
    def generic_error(self):
        return self._error

    @property
    def details(self):
        return self._details

    @property
    def message(self) -> str:
        return self._details.get('message', self._error.name.lower().replace('_', ' '))

    def __init__(self, generic_error: ErrorType, **details):
        super().__init__(generic_error, details)
        self._error = generic_error
        self._details = details

    def __str__(self):
        return f'{self._error.name}: {self.message}'


def get_schema_path() -> str:
    package_dir = os.path.abspath(os.path.dirname(__file__))
    return os.path.join(package_dir, 'schema', 'scenario.json')


def _node_path(path: Iterable) -> str:
    return '.'.join(str(p) for p in path) or '(root)'


class ScenarioValidator:

    def __init__(self, schema_path: Optional[str] = None):
        with open(schema_path or get_schema_path()) as sf:
            self._schema = json.load(sf)

        try:
            jsonschema.Draft7Validator.check_schema(self._schema)
        except SchemaError as e:
            raise ConfigError(ErrorType.SCHEMA_INVALID, message=e.message)

        self._validator = jsonschema.Draft7Validator(self._schema)

    def decode(self, text: str) -> dict:
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(ErrorType.SYNTAX,
                              message=f'{e.msg} at line {e.lineno} column {e.colno}',
                              line=e.lineno,
                              column=e.colno,
                              position=e.pos)

        if not isinstance(document, dict):
            raise ConfigError(ErrorType.TYPE_MISMATCH,
                              message='scenario document must be a JSON object',
                              node_path='(root)')
        return document

    def check(self, document: dict):
        """Raise the first schema violation, most specific kinds first."""
        if isinstance(document.get('targets'), list) and not document['targets']:
            raise ConfigError(ErrorType.NO_TARGETS, message='missing targets', node_path='targets')

        errors: List[ValidationError] = sorted(self._validator.iter_errors(document),
                                               key=lambda e: (len(e.absolute_path), str(list(e.absolute_path))))
        if not errors:
            return

        e = errors[0]
        node_path = _node_path(e.absolute_path)
        if e.validator == 'required':
            missing = [k for k in e.validator_value if k not in e.instance]
            key = missing[0] if missing else '?'
            if key == 'targets':
                raise ConfigError(ErrorType.NO_TARGETS, message='missing targets', node_path='targets')
            full = key if node_path == '(root)' else f'{node_path}.{key}'
            raise ConfigError(ErrorType.MISSING_KEY, message=f'missing required key "{full}"', node_path=full)
        elif e.validator == 'additionalProperties':
            extra = sorted(set(e.instance) - set(e.schema.get('properties', {})))
            key = extra[0] if extra else '?'
            full = key if node_path == '(root)' else f'{node_path}.{key}'
            raise ConfigError(ErrorType.UNKNOWN_KEY, message=f'unknown key "{full}"', node_path=full)
        elif e.validator == 'type':
            raise ConfigError(ErrorType.TYPE_MISMATCH,
                              message=f'{node_path}: expected {e.validator_value}, got {json.dumps(e.instance)}',
                              node_path=node_path)
        else:
            raise ConfigError(ErrorType.INVALID_BY_SCHEMA,
                              message=f'{node_path}: {e.message}',
                              validator=e.validator,
                              node_path=node_path)

    def load_text(self, text: str, overrides: Optional[Dict[str, Any]] = None) -> dict:
        document = self.decode(text)
        if overrides:
            apply_overrides(document, overrides)
        self.check(document)
        return document

    def load(self, path: Path, overrides: Optional[Dict[str, Any]] = None) -> dict:
        if not os.path.exists(path):
            raise ConfigError(ErrorType.NOT_FOUND, message=f'not found: {path}', file=path)
        try:
            with open(path, encoding='utf-8') as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(ErrorType.CANNOT_READ, message=f'not readable: {path}', file=path, underlying=e)
        return self.load_text(text, overrides)


def parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_overrides(items: Optional[Iterable[str]]) -> Dict[str, Any]:
    overrides = {}
    for item in items or ():
        key, sep, raw = item.partition('=')
        key = key.strip()
        if not sep or not key:
            raise ConfigError(ErrorType.BAD_OVERRIDE, message=f'override "{item}" is not key=value')
        overrides[key] = parse_override_value(raw.strip())
    return overrides


def apply_overrides(document: dict, overrides: Dict[str, Any]):
    """Set dot-path keys in place; list elements are addressed by index."""
    for dot_path, value in overrides.items():
        parts = dot_path.split('.')
        node = document
        for i, part in enumerate(parts):
            last = i == len(parts) - 1
            if isinstance(node, list):
                try:
                    index = int(part)
                    if last:
                        node[index] = value
                    else:
                        node = node[index]
                    continue
                except (ValueError, IndexError):
                    raise ConfigError(ErrorType.BAD_OVERRIDE,
                                      message=f'override "{dot_path}": bad list index "{part}"')
            if not isinstance(node, dict):
                raise ConfigError(ErrorType.BAD_OVERRIDE,
                                  message=f'override "{dot_path}": "{part}" is not inside an object')
            if last:
                node[part] = value
            else:
                node = node.setdefault(part, {})
