import csv
import json
import xml.etree.ElementTree as ET

import pytest

from polopt import cli, lqr, verify
from polopt.svg import Canvas
from polopt.mdp import random_mdp, save_mdp

GRID = "-1,1.5,-0.5,2.5,5"


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


class TestVectorField:
    def test_writes_csv(self, tmp_path):
        out = tmp_path / "vf.csv"
        assert cli.main(["vector-field", f"--grid={GRID}", "--out", str(out)]) == 0
        rows = read_csv(out)
        assert rows[0][:5] == ["method", "i", "j", "k0", "k1"]
        assert len(rows) - 1 == 25 * 8
        assert any(r[5] == "nan" for r in rows[1:])

    def test_byte_identical_rerun(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            cli.main(["vector-field", f"--grid={GRID}", "--out", str(p)])
        assert a.read_bytes() == b.read_bytes()

    def test_stdout(self, capsys):
        assert cli.main(["vector-field", "--grid", "0,1,0,1,1", "--methods", "grad_J_gamma"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2 and lines[1].startswith("grad_J_gamma,0,0,")

    def test_toml_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text('gamma = 0.5\ngrid = [-1.0, 1.5, -0.5, 2.5, 5]\nmethods = ["grad_J_gamma"]\n')
        from_file, from_flags, mixed = (tmp_path / n for n in ("f.csv", "g.csv", "m.csv"))
        cli.main(["vector-field", "--config", str(cfg), "--out", str(from_file)])
        cli.main(["vector-field", "--gamma", "0.5", f"--grid={GRID}", "--methods", "grad_J_gamma",
                  "--out", str(from_flags)])
        assert from_file.read_bytes() == from_flags.read_bytes()
        cli.main(["vector-field", "--config", str(cfg), "--gamma", "0.9", "--out", str(mixed)])
        assert mixed.read_bytes() != from_file.read_bytes()
        assert len(read_csv(mixed)) == 26

    def test_problem_file(self, tmp_path):
        prob = tmp_path / "p.json"
        prob.write_text(json.dumps(lqr.default_problem(0.5).to_dict()))
        cfg = tmp_path / "c.toml"
        cfg.write_text(f'problem = "{prob}"\n')
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        cli.main(["vector-field", "--config", str(cfg), f"--grid={GRID}", "--out", str(a)])
        cli.main(["vector-field", "--alpha", "0.5", f"--grid={GRID}", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    @pytest.mark.parametrize("argv", [
        ["vector-field", "--gamma", "1.5"],
        ["vector-field", "--grid", "1,0,0,1,3"],
        ["vector-field", "--config", "/nonexistent.toml"],
        ["gap", "--max-iters", "-1"],
        ["sweep", "--gammas", "0.7,1.2"],
        ["mdp-demo", "--methods", "simplex"],
    ])
    def test_bad_input_exit_2(self, argv, capsys):
        assert cli.main(argv) == 2
        assert capsys.readouterr().err.startswith("polopt: ")

    def test_bad_toml(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("gamma = = 1\n")
        assert cli.main(["vector-field", "--config", str(cfg)]) == 2

    def test_malformed_grid_flag(self):
        with pytest.raises(SystemExit):
            cli.main(["vector-field", "--grid", "1,2,3"])


class TestGapAndSweep:
    def test_zero_iterations(self, tmp_path):
        out = tmp_path / "gap.csv"
        assert cli.main(["gap", "--max-iters", "0", "--step-sizes", "0.001", "--out", str(out)]) == 0
        rows = read_csv(out)
        assert rows[0] == ["setup", "method", "step_size", "iteration", "k0", "k1", "objective_gap", "j_star", "status"]
        assert len(rows) == 1 + 2 * 5
        for r in rows[1:]:
            assert r[3] == "0" and float(r[6]) > 0 and r[8] == "max_iters"

    def test_short_run_with_svg(self, tmp_path):
        out = tmp_path / "gap.csv"
        assert cli.main(["gap", "--max-iters", "20", "--methods", "gradient,hybrid_npg",
                         "--step-sizes", "0.01,0.05", "--out", str(out), "--svg"]) == 0
        ET.parse(tmp_path / "gap.svg")
        methods = {r[1] for r in read_csv(out)[1:]}
        assert methods == {"gradient", "hybrid_npg"}

    def test_sweep_single_cell_equals_field(self, tmp_path):
        sw, vf = tmp_path / "sw.csv", tmp_path / "vf.csv"
        assert cli.main(["sweep", "--alphas", "1", "--gammas", "0.7", f"--grid={GRID}", "--out", str(sw)]) == 0
        cli.main(["vector-field", f"--grid={GRID}", "--out", str(vf)])
        swept = read_csv(sw)
        assert swept[0][:2] == ["alpha", "gamma"]
        assert [r[2:] for r in swept] == read_csv(vf)
        summary = read_csv(tmp_path / "sw_summary.csv")
        assert summary[0][2] == "mean_cosine_grad_gamma_grad_mu" and len(summary) == 2


class TestSvg:
    def test_vector_field_svg(self, tmp_path):
        out = tmp_path / "vf.csv"
        cli.main(["vector-field", f"--grid={GRID}", "--out", str(out), "--svg"])
        root = ET.parse(tmp_path / "vf.svg").getroot()
        assert root.tag.endswith("svg")
        assert len(root.findall("{http://www.w3.org/2000/svg}circle")) == 2 * 8

    def test_sweep_svg(self, tmp_path):
        out = tmp_path / "sw.csv"
        cli.main(["sweep", "--alphas", "0.3,1", "--gammas", "0.7", f"--grid={GRID}", "--out", str(out), "--svg"])
        texts = [t.text for t in ET.parse(tmp_path / "sw.svg").getroot().iter("{http://www.w3.org/2000/svg}text")]
        assert "alpha=0.3, gamma=0.7" in texts

    def test_text_is_escaped(self):
        c = Canvas(10, 10)
        c.text(1, 1, "a<b & c")
        assert ET.fromstring(c.to_string()).find("{http://www.w3.org/2000/svg}text").text == "a<b & c"


@pytest.fixture(scope="module")
def report(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo") / "demo.json"
    assert cli.main(["mdp-demo", "--out", str(out)]) == 0
    return json.loads(out.read_text())


class TestMdpDemo:
    def test_both_setups(self, report):
        assert set(report) == {"discounted(0.9)", "average"}
        for per in report.values():
            assert set(per) == set(cli.DEMO_METHODS) | {"enumeration_optimum"}

    def test_monotone(self, report):
        for per in report.values():
            for method in cli.DEMO_METHODS:
                objs = per[method]
                slack = 1e-9 if method == "ppo" else 1e-12
                assert all(b >= a - slack for a, b in zip(objs, objs[1:])), method

    def test_policy_iteration_reaches_optimum(self, report):
        for per in report.values():
            assert per["policy_iteration"][-1] == per["enumeration_optimum"]

    def test_empty_methods(self, capsys):
        assert cli.main(["mdp-demo", "--methods", ""]) == 0
        assert json.loads(capsys.readouterr().out) == {}

    def test_custom_mdp(self, tmp_path, capsys):
        path = tmp_path / "m.json"
        save_mdp(random_mdp(3, 2, 4), path)
        assert cli.main(["mdp-demo", "--mdp", str(path), "--methods", "npg", "--iters", "5", "--gamma", "0.8"]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert len(rep["discounted(0.8)"]["npg"]) == 6

    def test_missing_file(self):
        assert cli.main(["mdp-demo", "--mdp", "/nonexistent.json"]) == 2


class TestVerify:
    def test_filter_selects_lqr_only(self):
        names = [c.name for c in verify.select("lqr")]
        assert names and all(n.startswith("lqr.") for n in names)
        assert {c.name for c in verify.select("7")} == {"lqr.performance_difference", "lqr.gamma_correction_mutation"}

    def test_unknown_filter(self, capsys):
        assert cli.main(["verify", "--filter", "nothing"]) == 2

    def test_single_check_passes(self, tmp_path, capsys):
        out = tmp_path / "v.json"
        assert cli.main(["verify", "--filter", "lqr.performance_difference", "--json", str(out)]) == 0
        assert "PASS" in capsys.readouterr().out
        results = json.loads(out.read_text())["results"]
        assert [r["name"] for r in results] == ["lqr.performance_difference"] and results[0]["passed"]

    def test_injected_fault_fails(self, capsys):
        code = cli.main(["verify", "--filter", "lqr.performance_difference", "--inject-fault", "gamma-correction"])
        captured = capsys.readouterr()
        assert code == 1
        assert "FAIL" in captured.out
        assert "first failure: lqr.performance_difference" in captured.err
        assert lqr.GAMMA_CORRECTION

    def test_fault_flag_hidden(self, capsys):
        with pytest.raises(SystemExit):
            cli.main(["verify", "--help"])
        assert "inject" not in capsys.readouterr().out
