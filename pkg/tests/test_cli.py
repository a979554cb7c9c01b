import json

import numpy as np
import pytest

from mgcodesign import cli

TWO_DG = {
    "microgrid": {"n_dgs": 2, "topology_seed": 1},
    "design": {"graph_mode": "hard"},
    "scenarios": [
        {"name": "steps", "kind": "load_change", "t_end": 3.0},
    ],
    "droop_baseline": True,
    "verify": True,
}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = cli.run_pipeline(TWO_DG, out, verbose=False)
    return out, code


class TestPipeline:
    def test_exit_ok(self, run_dir):
        _, code = run_dir
        assert code == cli.EXIT_OK

    def test_outputs_exist(self, run_dir):
        out, _ = run_dir
        for name in ("design.json", "traj_steps.csv", "traj_droop.csv",
                     "metrics.csv", "verify.txt"):
            assert (out / name).exists(), name

    def test_design_report_contents(self, run_dir):
        out, _ = run_dir
        report = json.loads((out / "design.json").read_text())
        assert report["gamma"] > 0
        assert len(report["indices"]["nu"]) == 2
        assert "comm_graph" in report and "timings" in report

    def test_provenance_header(self, run_dir):
        out, _ = run_dir
        first = (out / "traj_steps.csv").read_text().splitlines()[0]
        assert first.startswith("#")

    def test_verify_passes(self, run_dir):
        out, _ = run_dir
        text = (out / "verify.txt").read_text()
        assert "[pass]" in text and "FAIL" not in text

    def test_rerun_byte_identical(self, run_dir, tmp_path):
        out, _ = run_dir
        second = tmp_path / "again"
        assert cli.run_pipeline(TWO_DG, second, verbose=False) == cli.EXIT_OK
        for name in ("traj_steps.csv", "metrics.csv", "traj_droop.csv"):
            assert (out / name).read_bytes() == (second / name).read_bytes()


class TestExitCodes:
    def test_infeasible_design(self, tmp_path):
        config = dict(TWO_DG, design={"graph_mode": "hard",
                                      "joint_margin": 0.05})
        assert cli.run_pipeline(config, tmp_path, verbose=False) \
            == cli.EXIT_INFEASIBLE

    def test_parse_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert cli.main(["--config", str(bad), "run"]) == cli.EXIT_PARSE

    def test_gen_topology(self, capsys):
        assert cli.main(["gen-topology", "--n-dgs", "3", "--seed", "2"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["n_dgs"] == 3 and len(data["lines"]) >= 2

    def test_setpoint_subcommand(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"microgrid": {"n_dgs": 1}}))
        assert cli.main(["--config", str(cfg), "setpoint"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert 0.0 <= data["I_s_star"] <= 1.0
