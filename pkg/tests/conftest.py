import json
from pathlib import Path

import numpy as np
import pytest

from hydroptic.images import save_png
from hydroptic.spectral import (
    channel_attenuations,
    synthetic_attenuation,
    synthetic_sensor_responses,
    write_synthetic_site,
)
from hydroptic.synthetic import synthetic_scene

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def site_p():
    return channel_attenuations(synthetic_attenuation(), synthetic_sensor_responses())


def make_toy_dataset(root: Path, n_good: int = 12, n_low: int = 8, size=(32, 24), seed: int = 5) -> Path:
    """Dataset root with one synthetic site, ``n_good`` steady frames and ``n_low`` unsteady ones."""
    rng = np.random.default_rng(seed)
    write_synthetic_site(root / "sites" / "reef01", site_id="reef01")
    records = []
    w, h = size
    for i in range(n_good + n_low):
        name = f"raw/frame_{i:03d}.png"
        save_png(root / name, synthetic_scene(rng, h, w) * 0.6 + 0.1)
        depth = float(rng.uniform(3, 9))
        if i < n_good:
            series = (depth + rng.uniform(-0.1, 0.1, 5)).round(3).tolist()
            rec = {"path": name, "site_id": "reef01", "dive_depth_m": depth, "distance_m": float(rng.uniform(1, 5)), "depth_series": series}
        else:
            series = [depth, depth, depth + 2.0, depth + 2.0]
            rec = {"path": name, "site_id": "reef01", "dive_depth_m": depth, "depth_series": series}
        records.append(rec)
    (root / "records.json").write_text(json.dumps({"records": records}, indent=2))
    return root


@pytest.fixture
def toy_root(tmp_path):
    return make_toy_dataset(tmp_path / "toy")
