import socket
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from wattchain.energy_data import Dataset, PowerSample, PowerSeries, SeriesKind

DAY = datetime(2020, 4, 23, 0, 0, 0, tzinfo=timezone.utc)


def make_series(values, start=DAY, interval_s=300, node_id="n1",
                kind=SeriesKind.GENERATION):
    samples = [PowerSample(start + timedelta(seconds=i * interval_s), float(v))
               for i, v in enumerate(values)]
    return PowerSeries(node_id=node_id, kind=kind, samples=samples,
                       interval_s=float(interval_s))


def synth_pv_dataset(rows=600, capacity_w=8000.0, noise_frac=0.02, seed=1):
    """Synthetic PV behaviour: output scales with irradiance and derates
    0.4%/degree above 25 C, plus gaussian noise. The independent data
    generator used to judge forecaster quality."""
    rng = np.random.default_rng(seed)
    irr = rng.uniform(0.0, 1000.0, rows)
    temp = rng.uniform(15.0, 40.0, rows)
    hum = rng.uniform(20.0, 95.0, rows)
    rain = rng.uniform(0.0, 12.0, rows)
    power = capacity_w * (irr / 1000.0) * (1.0 - 0.004 * (temp - 25.0))
    power = np.clip(power + rng.normal(0.0, noise_frac * capacity_w, rows), 0.0, None)
    features = np.column_stack([irr, temp, hum, rain])
    return Dataset(features=features, targets=power)


def free_port():
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def day():
    return DAY
