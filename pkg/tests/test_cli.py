import pytest
from click.testing import CliRunner

from core.storage import read_csv, read_json
from lab.cli import cli
from lab.parse import parse_config
from lab.pipeline import run_hash

STRATMANN = "[gauge]\npreset = stratmann\ndelta = 1.5\nkmin = 1\nkmax = 2\n"
CYCLIC = "[group]\ncatalog = cyclic_parabolic_3\n"


@pytest.fixture
def invoke(tmp_path):
    runner = CliRunner()

    def _invoke(*args, out="out"):
        return runner.invoke(cli, [*args, "--out", str(tmp_path / out)])
    return _invoke


def test_catalog_lists_groups_and_gauges():
    result = CliRunner().invoke(cli, ["catalog"])
    assert result.exit_code == 0
    assert "hecke_3" in result.output
    assert "stratmann" in result.output


def test_gauge_classify_writes_a_verdict(invoke, write_config, tmp_path):
    result = invoke("gauge-classify", "--config", write_config(STRATMANN))
    assert result.exit_code == 0, result.output
    assert "hausdorff: zero" in result.output
    assert "packing: infinite" in result.output
    record = read_json(tmp_path / "out" / "verdict.json")
    assert record["config_hash"] == run_hash(parse_config(STRATMANN))
    assert record["seed"] == 0
    assert record["result"]["hausdorff_series"]["summand"] == "1/(t·log log t)"


def test_undecided_verdict_exits_with_code_4(invoke, write_config, tmp_path):
    result = invoke("gauge-classify", "--config", write_config("[gauge]\ndelta = 1.5\nc_log = 0.50000000003\n"))
    assert result.exit_code == 4
    assert (tmp_path / "out" / "verdict.json").exists()


def test_config_errors_exit_with_code_2(invoke, write_config):
    result = invoke("orbit", "--config", write_config("[group]\ncatalog = cyclic_parabolic_3\nseed = x\n"))
    assert result.exit_code == 2
    assert "line 3" in result.output


def test_missing_group_is_a_config_error(invoke):
    assert invoke("orbit").exit_code == 2


def test_orbit_at_zero_radius(invoke, write_config, tmp_path):
    result = invoke("orbit", "--config", write_config(CYCLIC), "--t-max", "0")
    assert result.exit_code == 0, result.output
    frame, meta = read_csv(tmp_path / "out" / "orbit.csv")
    assert len(frame) == 1
    assert meta["config_hash"] == run_hash(parse_config(CYCLIC).model_copy(update={"t_max": 0.0}))


def test_overrides_change_the_config_hash(invoke, write_config, tmp_path):
    path = write_config(CYCLIC)
    assert invoke("orbit", "--config", path, "--t-max", "2", out="a").exit_code == 0
    assert invoke("orbit", "--config", path, "--t-max", "3", out="b").exit_code == 0
    _, first = read_csv(tmp_path / "a" / "orbit.csv")
    _, second = read_csv(tmp_path / "b" / "orbit.csv")
    assert first["config_hash"] != second["config_hash"]
    assert run_hash(parse_config(CYCLIC)) != first["config_hash"]


def test_delta_of_the_cyclic_group(invoke, write_config, tmp_path):
    result = invoke("delta", "--config", write_config(CYCLIC), "--t-max", "20")
    assert result.exit_code == 0, result.output
    assert read_json(tmp_path / "out" / "delta.json")["result"]["delta"] == pytest.approx(0.5, abs=0.1)


def test_delta_without_data_exits_with_code_3(invoke, write_config):
    assert invoke("delta", "--config", write_config(CYCLIC), "--t-max", "0").exit_code == 3


def test_limit_set_is_reproducible(invoke, write_config, tmp_path):
    path = write_config("[group]\ncatalog = hecke_3\n[run]\nseed = 11\nsamples = 40\n")
    assert invoke("limitset", "--config", path, out="a").exit_code == 0
    assert invoke("limitset", "--config", path, out="b").exit_code == 0
    first = (tmp_path / "a" / "limitset.csv").read_bytes()
    assert first == (tmp_path / "b" / "limitset.csv").read_bytes()
    frame, meta = read_csv(tmp_path / "a" / "limitset.csv")
    assert len(frame) == 40
    assert meta["seed"] == "11"


def test_khinchin_zero_target(invoke, write_config, tmp_path):
    path = write_config("[group]\ncatalog = hecke_3\n[khinchin]\ntarget = const 0\n")
    result = invoke("khinchin", "--config", path, "--t-max", "8", "--samples", "30")
    assert result.exit_code == 0, result.output
    assert "hits: 0" in result.output
    assert read_json(tmp_path / "out" / "khinchin.json")["result"]["hits"] == 0


def test_khinchin_needs_a_cusp(invoke, write_config):
    path = write_config("[group]\ncatalog = hecke_3\n[khinchin]\ncusp = 5\n")
    assert invoke("khinchin", "--config", path, "--t-max", "8").exit_code == 2


def test_small_dichotomy_run(invoke, write_config, tmp_path):
    path = write_config("[dichotomy]\ngauges = power stratmann\ntriples = 1.5 1 2\nseeds = 3\nhorizon = 4096\n")
    result = invoke("dichotomy", "--config", path)
    assert result.exit_code == 0, result.output
    assert "min agreement" in result.output
    summary = read_json(tmp_path / "out" / "dichotomy.json")["result"]
    assert len(summary["cells"]) == 2
    frame, _ = read_csv(tmp_path / "out" / "synthetic_traces.csv")
    assert set(frame["trace"]) == {0, 1}


def test_gmf_check_on_the_modular_group(invoke, write_config, tmp_path):
    path = write_config("[group]\ncatalog = modular\n[run]\nt_grid = 1 4 7\nsamples = 5\n")
    result = invoke("gmf-check", "--config", path, "--t-max", "8")
    assert result.exit_code == 0, result.output
    assert "band:" in result.output
    for name in ("gmf_residuals.csv", "measure.csv", "gmf.json"):
        assert (tmp_path / "out" / name).exists()
