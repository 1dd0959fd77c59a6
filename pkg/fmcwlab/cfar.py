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

import math
import numpy as np
from loguru import logger
from typing import List, Iterable
from scipy import ndimage
from collections import defaultdict
from fmcwlab.core import Detection, CfarConfig, RangeDopplerMap


def threshold_factor(m: int, pfa: float) -> float:
    """
    CA-CFAR scale a = M (pfa^(-1/M) - 1) for exponentially distributed power.

    :param m: training cell count, at least 1
    :param pfa: design false alarm probability in (0, 1]
    """
    if m < 1:
        raise ValueError(f'training cell count must be at least 1, got {m}')
    if not 0.0 < pfa <= 1.0:
        raise ValueError(f'pfa must lie in (0, 1], got {pfa}')
    if pfa == 1.0:
        return 0.0
    return m * math.expm1(math.log(1.0 / pfa) / m)


def training_kernel(cfg: CfarConfig) -> np.ndarray:
    """Square window of ones with the guard region and the CUT zeroed."""
    kernel = np.ones((cfg.window_size, cfg.window_size))
    inner = slice(cfg.train_half - cfg.guard_half, cfg.train_half + cfg.guard_half + 1)
    kernel[inner, inner] = 0.0
    return kernel


def ca_cfar_2d(rd_map: RangeDopplerMap, cfg: CfarConfig) -> List[Detection]:
    """
    Two-dimensional cell-averaging CFAR over a linear power map.

    Only cells whose full window lies inside the map are tested.

    :raises ValueError: when the map is not larger than the window on both axes
    """
    power = rd_map.power
    size = cfg.window_size
    if power.shape[0] <= size or power.shape[1] <= size:
        raise ValueError(f'map {power.shape} too small for a {size}x{size} CFAR window')

    m = cfg.training_cells
    a = threshold_factor(m, cfg.pfa)
    noise = ndimage.correlate(power, training_kernel(cfg), mode='constant', cval=0.0) / m
    threshold = a * noise

    edge = cfg.train_half
    tested = np.zeros(power.shape, dtype=bool)
    tested[edge:power.shape[0] - edge, edge:power.shape[1] - edge] = True
    hits = np.argwhere(tested & (power > threshold))

    detections = [Detection(range_bin=int(r),
                            doppler_bin=int(d),
                            range_m=float(rd_map.range_of(r)),
                            vel_mps=float(rd_map.velocity_of(d)),
                            cell_power=float(power[r, d]),
                            threshold=float(threshold[r, d]),
                            cpi_index=rd_map.cpi_index)
                  for r, d in hits]

    logger.debug('CFAR CPI {}: {} hit(s), M={}, a={:.4f}',
                 rd_map.cpi_index,
                 len(detections),
                 m,
                 a)
    return detections


def cluster_detections(detections: Iterable[Detection]) -> List[Detection]:
    """Merge 8-connected detections of each CPI, keeping the strongest cell."""
    by_cpi = defaultdict(list)
    for det in detections:
        by_cpi[det.cpi_index].append(det)

    merged = []
    for cpi in sorted(by_cpi):
        dets = by_cpi[cpi]
        grid = np.zeros((max(d.range_bin for d in dets) + 2, max(d.doppler_bin for d in dets) + 2), dtype=bool)
        for d in dets:
            grid[d.range_bin, d.doppler_bin] = True

        labels, count = ndimage.label(grid, structure=np.ones((3, 3), dtype=bool))
        best = {}
        for d in dets:
            label = labels[d.range_bin, d.doppler_bin]
            if label not in best or d.cell_power > best[label].cell_power:
                best[label] = d

        merged.extend(sorted(best.values(), key=lambda d: (d.range_bin, d.doppler_bin)))

    return merged
