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
Binary data-cube files.

Layout (little-endian): a 64-byte header holding the magic ``FMCWCUBE``,
format version, the four cube dimensions as u32, four padding bytes, then
f_s, T, fc and B as f64. Samples follow as interleaved (re, im) f32 pairs,
sample index fastest, then chirp, channel and CPI.
"""
import numpy as np
from loguru import logger
from typing import Tuple
from pathlib import Path
from dataclasses import dataclass
from fmcwlab.core import DataCube, Scenario


MAGIC = b'FMCWCUBE'
FORMAT_VERSION = 1
HEADER_DTYPE = np.dtype([('magic', 'S8'),
                         ('version', '<u4'),
                         ('n_samples', '<u4'),
                         ('n_chirps', '<u4'),
                         ('n_rx', '<u4'),
                         ('n_cpi', '<u4'),
                         ('reserved', 'V4'),
                         ('sample_rate', '<f8'),
                         ('period', '<f8'),
                         ('fc', '<f8'),
                         ('bandwidth', '<f8')])
HEADER_SIZE = HEADER_DTYPE.itemsize
SAMPLE_DTYPE = np.dtype('<c8')


class CubeFormatError(Exception):
    pass


@dataclass(frozen=True)
class CubeHeader:
    n_samples: int
    n_chirps: int
    n_rx: int
    n_cpi: int
    sample_rate: float
    period: float
    fc: float
    bandwidth: float
    version: int = FORMAT_VERSION

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return self.n_samples, self.n_chirps, self.n_rx, self.n_cpi

    @classmethod
    def of(cls, cube: DataCube):
        r = cube.radar
        return cls(r.n_samples, r.n_chirps, cube.array.n_rx, r.n_cpi, r.sample_rate, r.period, r.fc, r.bandwidth)


def quantize(cube: DataCube) -> DataCube:
    """Round samples through the on-disk precision so cached and fresh cubes agree."""
    data = cube.data.astype(SAMPLE_DTYPE).astype(np.complex128)
    return DataCube(data, cube.radar, cube.array)


def encode_header(header: CubeHeader) -> bytes:
    record = np.zeros((), dtype=HEADER_DTYPE)
    record['magic'] = MAGIC
    record['version'] = header.version
    record['n_samples'] = header.n_samples
    record['n_chirps'] = header.n_chirps
    record['n_rx'] = header.n_rx
    record['n_cpi'] = header.n_cpi
    record['sample_rate'] = header.sample_rate
    record['period'] = header.period
    record['fc'] = header.fc
    record['bandwidth'] = header.bandwidth
    return record.tobytes()


def decode_header(raw: bytes) -> CubeHeader:
    if len(raw) < HEADER_SIZE:
        raise CubeFormatError(f'header needs {HEADER_SIZE} bytes, got {len(raw)}')
    record = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE)[0]
    if bytes(record['magic']) != MAGIC:
        raise CubeFormatError(f'bad magic {bytes(record["magic"])!r}')
    if int(record['version']) != FORMAT_VERSION:
        raise CubeFormatError(f'unsupported cube format version {int(record["version"])}')
    return CubeHeader(n_samples=int(record['n_samples']),
                      n_chirps=int(record['n_chirps']),
                      n_rx=int(record['n_rx']),
                      n_cpi=int(record['n_cpi']),
                      sample_rate=float(record['sample_rate']),
                      period=float(record['period']),
                      fc=float(record['fc']),
                      bandwidth=float(record['bandwidth']),
                      version=int(record['version']))


def write_cube(path: Path, cube: DataCube) -> int:
    """Write a cube file and return its size in bytes."""
    body = np.asfortranarray(cube.data.astype(SAMPLE_DTYPE))
    with open(path, 'wb') as f:
        f.write(encode_header(CubeHeader.of(cube)))
        # Fortran order puts the sample index fastest
        f.write(body.tobytes(order='F'))
    size = HEADER_SIZE + body.nbytes
    logger.debug('Wrote cube {} ({} bytes)', path, size)
    return size


def read_cube(path: Path) -> Tuple[CubeHeader, np.ndarray]:
    """
    :return: the header and a complex128 array [sample, chirp, channel, cpi]
    :raises CubeFormatError: on a bad header or a truncated body
    :raises OSError: when the file cannot be read
    """
    with open(path, 'rb') as f:
        header = decode_header(f.read(HEADER_SIZE))
        body = f.read()

    count = int(np.prod(header.shape))
    expected = count * SAMPLE_DTYPE.itemsize
    if len(body) != expected:
        raise CubeFormatError(f'cube body is {len(body)} bytes, header implies {expected}')

    data = np.frombuffer(body, dtype=SAMPLE_DTYPE).reshape(header.shape, order='F')
    return header, data.astype(np.complex128)


def matches(header: CubeHeader, s: Scenario) -> bool:
    r = s.radar
    return (header.shape == (r.n_samples, r.n_chirps, s.array.n_rx, r.n_cpi)
            and np.isclose(header.sample_rate, r.sample_rate, rtol=1e-12, atol=0.0)
            and np.isclose(header.period, r.period, rtol=1e-12, atol=0.0)
            and np.isclose(header.fc, r.fc, rtol=1e-12, atol=0.0)
            and np.isclose(header.bandwidth, r.bandwidth, rtol=1e-12, atol=0.0))


def load_cube(path: Path, s: Scenario) -> DataCube:
    """
    Read a cube file written for scenario ``s``.

    :raises CubeFormatError: when the file does not match the scenario's
                             radar parameters or dimensions
    """
    header, data = read_cube(path)
    if not matches(header, s):
        raise CubeFormatError(f'{path} was written for a different radar setup {header.shape}')
    return DataCube(data, s.radar, s.array)
