import json

import pytest

from regiongen.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO, EXIT_OK, main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "cfg.toml"
    cfg.write_text("resolution = 192\neps = 500\ninit_seeds = 1\nL = 1.0\n")
    assert main(["synth", "--out", str(d), "--seed", "2", "--days", "6", "--extent-km", "1.5", "--spacing-m", "250"]) == EXIT_OK
    assert main(["segment", "--config", str(cfg), "--geometry", str(d / "geometry.geojson"), "--out", str(d)]) == EXIT_OK
    args = ["--elements", str(d / "elements.geojson"), "--records", str(d / "records.csv")]
    assert main(["optimize", "--config", str(cfg), *args, "--geometry", str(d / "geometry.geojson"), "--out", str(d)]) == EXIT_OK
    return d, cfg, args


def test_full_flow_outputs(workdir):
    d, _, _ = workdir
    for name in ("geometry.geojson", "records.csv", "elements.geojson", "regions.geojson", "pareto.json", "trace.csv"):
        assert (d / name).exists()


def test_evaluate(workdir, capsys):
    d, cfg, args = workdir
    code = main(["evaluate", "--config", str(cfg), "--regions", str(d / "regions.geojson"), *args, "--out", str(d)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "regiongen:" in out and "grid:" in out and "MAPE@" in out
    assert (d / "summary.csv").exists()


@pytest.mark.parametrize("which", ["best-acf", "best-specificity", "0"])
def test_export(workdir, which):
    d, cfg, args = workdir
    out = d / f"export-{which}"
    assert main(["export", "--config", str(cfg), "--pareto", str(d / "pareto.json"), *args, "--solution", which, "--out", str(out)]) == EXIT_OK
    doc = json.loads((out / "export.geojson").read_text())
    assert doc["type"] == "FeatureCollection" and doc["features"]


def test_scalability(workdir):
    d, cfg, _ = workdir
    code = main(["scalability", "--config", str(cfg), "--records", str(d / "records.csv"), "--sizes", "16,36", "--out", str(d)])
    assert code == EXIT_OK
    lines = (d / "scalability.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("n_elements,")


def test_missing_input_is_io_error(tmp_path):
    assert main(["segment", "--geometry", str(tmp_path / "none.geojson"), "--out", str(tmp_path)]) == EXIT_IO


def test_bad_json_is_io_error(tmp_path):
    p = tmp_path / "g.geojson"
    p.write_text("{oops")
    assert main(["segment", "--geometry", str(p), "--out", str(tmp_path)]) == EXIT_IO


def test_bad_config_is_config_error(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("kernel = 4\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["synth", "--w", "3", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_empty_pareto_is_infeasible(workdir, tmp_path):
    d, cfg, args = workdir
    p = tmp_path / "pareto.json"
    p.write_text("[]")
    assert main(["export", "--config", str(cfg), "--pareto", str(p), *args, "--out", str(tmp_path)]) == EXIT_INFEASIBLE


def test_missing_subcommand():
    with pytest.raises(SystemExit):
        main([])
