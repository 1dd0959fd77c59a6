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

VERSION = '1.0.0'
PROGRAM_NAME = 'fmcw-doa-lab'
WELCOME_MSG = f'FMCW radar DOA lab v{VERSION}'
SPEED_OF_LIGHT = 299_792_458.0
THREADS_ENV = 'FMCW_DOA_THREADS'
# (number, name) pairs, turned into jacob CustomLevel instances by the entrypoint
LOG_LEVELS = (
    (20, 'debug'),
    (50, 'info'),
    (90, 'warning'),
    (100, 'error'),
    (200, 'critical')
)
DEFAULT_LEVELS = 'info,warning;stderr=error,critical;file=debug,critical'
