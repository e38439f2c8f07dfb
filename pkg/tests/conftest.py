import numpy as np
import pytest

from skinstack import calibration, sim


def build_full_dataset() -> calibration.CalibrationDataset:
    """The desk protocol in software: 9x5 normal cycles, 4x5 shear, 13 thermistor points."""
    normal = sim.simulate_scenario(sim.normal_sweep(cycles=5))
    shear = sim.simulate_scenario(sim.shear_sweep(cycles=5))
    therm = sim.simulate_scenario(sim.thermistor_sweep())
    dataset = calibration.dataset_from_run(normal)
    dataset.shear_cycles = calibration.dataset_from_run(shear).shear_cycles
    dataset.thermistor_samples = calibration.dataset_from_run(therm).thermistor_samples
    return dataset


@pytest.fixture(scope="session")
def full_dataset() -> calibration.CalibrationDataset:
    return build_full_dataset()


@pytest.fixture(scope="session")
def full_calibration(full_dataset):
    """(profile, report) fitted from the full simulated protocol."""
    return calibration.calibrate_dataset(full_dataset)


@pytest.fixture(scope="session")
def profile(full_calibration):
    return full_calibration[0]
