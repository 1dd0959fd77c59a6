import pytest
import dataclasses
from pathlib import Path
from fmcwlab.core import Target, Window, Scenario, RadarParams, ArrayGeometry, ProcessingConfig
from fmcwlab.scene import load_scenario
from fmcwlab.synth import synthesize
from fmcwlab.specproc import range_doppler


SCENARIO_DIR = Path(__file__).resolve().parent.parent / 'scenarios'
REFERENCE_SCENARIO = SCENARIO_DIR / 'paper.json'
CLOSE_SCENARIO = SCENARIO_DIR / 'close.json'


def reference_radar(**changes) -> RadarParams:
    radar = RadarParams(fc=77e9, bandwidth=150e6, period=10e-6, n_samples=256, n_chirps=256, n_cpi=1)
    return dataclasses.replace(radar, **changes)


def build_scenario(targets,
                   snr_db=None,
                   seed=0,
                   n_rx=8,
                   window=Window.RECT,
                   fft_angle_size=256,
                   **radar_changes) -> Scenario:
    radar = reference_radar(snr_db=snr_db, rng_seed=seed, **radar_changes)
    targets = tuple(t if isinstance(t, Target) else Target(*t) for t in targets)
    return Scenario(radar,
                    ArrayGeometry(n_rx=n_rx),
                    targets,
                    processing=ProcessingConfig(window=window, fft_angle_size=fft_angle_size))


@pytest.fixture
def scenario_factory():
    """Builds scenarios on the reference radar; targets are Target or (range, velocity, angle[, amplitude])."""
    return build_scenario


@pytest.fixture(scope='session')
def reference_scenario() -> Scenario:
    return load_scenario(REFERENCE_SCENARIO)


@pytest.fixture(scope='session')
def ref_cube(reference_scenario):
    return synthesize(reference_scenario, workers=2)


@pytest.fixture(scope='session')
def ref_rd(reference_scenario, ref_cube):
    return range_doppler(ref_cube, reference_scenario.processing.window, workers=2)
