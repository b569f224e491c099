import numpy as np
import pandas as pd

from core.geometry import BoundaryPoint
from core.measure import AtomicMeasure
from core.models import GaugeSpec
from core.storage import config_hash, load_measure, read_csv, read_json, save_measure, write_csv, write_json


def test_config_hash_is_stable():
    assert config_hash("[run]\nseed = 1\n") == config_hash("[run]\nseed = 1\n")
    assert config_hash("[run]\nseed = 1\n") != config_hash("[run]\nseed = 2\n")
    assert config_hash({"b": 1, "a": 2}) == config_hash({"a": 2, "b": 1})
    assert config_hash(GaugeSpec(delta=1.5)) == config_hash(GaugeSpec(delta=1.5).model_dump(mode="json"))


def test_json_records_carry_hash_and_seed(tmp_path):
    path = write_json(tmp_path / "out" / "verdict.json", GaugeSpec(delta=1.5, c_log=0.5), "abc", 7)
    record = read_json(path)
    assert record["config_hash"] == "abc"
    assert record["seed"] == 7
    assert record["result"]["c_log"] == 0.5


def test_csv_metadata_lines(tmp_path):
    frame = pd.DataFrame({"t": [1.0, 2.0], "value": [0.1, np.nan]})
    path = write_csv(tmp_path / "trace.csv", frame, "abc", None)
    lines = path.read_text().splitlines()
    assert lines[:2] == ["# config_hash=abc", "# seed=None"]
    loaded, meta = read_csv(path)
    assert meta == {"config_hash": "abc", "seed": "None"}
    assert loaded["t"].tolist() == [1.0, 2.0]
    assert np.isnan(loaded["value"].iloc[1])


def test_measure_round_trip_is_bit_exact(tmp_path, rng):
    dirs = rng.normal(size=(200, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    mu = AtomicMeasure(dirs, rng.exponential(size=200) * 1e-7)
    loaded = load_measure(save_measure(tmp_path / "measure.csv", mu, "abc", 0))
    assert np.array_equal(loaded.directions, mu.directions)
    assert np.array_equal(loaded.weights, mu.weights)


def test_dirac_round_trip(tmp_path):
    mu = AtomicMeasure.dirac(BoundaryPoint.from_angle(0.25))
    loaded = load_measure(save_measure(tmp_path / "dirac.csv", mu, "abc", 0))
    assert np.array_equal(loaded.directions, mu.directions)
    assert loaded.total_mass == 1.0
