import csv
import subprocess
import sys

import numpy as np
import pytest

from hesslab.cli import ConfigError, Scenario, main, parse_field, parse_ladder, read_config, scenario_from_args


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _manifest(path):
    out = {}
    for line in (path / "manifest.txt").read_text().splitlines():
        k, _, v = line.partition(" = ")
        out[k] = v
    return out


class TestParsing:
    def test_ladder(self):
        assert parse_ladder("0.1,0.05") == [0.1, 0.05]
        with pytest.raises(ConfigError):
            parse_ladder("0.1,abc")

    def test_ladder_must_decrease(self):
        with pytest.raises(ConfigError):
            Scenario("msh-check", h=[0.05, 0.1])

    @pytest.mark.parametrize("spec", ["sq_norm", "sq_norm:-1", "phi_k:2", "hartogs_exh", "constant:0.5",
                                      "abs_coord:1", "log_abs_coord:0"])
    def test_field_specs(self, spec):
        parse_field(spec)

    @pytest.mark.parametrize("spec", ["nosuch", "phi_k:x"])
    def test_bad_field_specs(self, spec):
        with pytest.raises(ConfigError):
            parse_field(spec)

    def test_config_file_and_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# scenario\ndomain = ball\nm = 2\nseed = 5\nquadratics = 3\n")
        assert read_config(cfg)["quadratics"] == "3"
        s = scenario_from_args(["jensen", "--config", str(cfg), "--m", "1"])
        assert (s.domain, s.m, s.seed, s.get("quadratics", cast=int)) == ("ball", 1, 5, 3)

    def test_bad_config_line(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("domain ball\n")
        with pytest.raises(ConfigError):
            read_config(cfg)


class TestExitCodes:
    @pytest.mark.parametrize("argv", [
        ["msh-check", "--domain", "nowhere"],
        ["msh-check", "--h", "0.05,0.1"],
        ["msh-check", "--h", "0.1,x"],
        ["msh-check", "--set", "bogus=1"],
        ["msh-check", "--set", "field=nosuch"],
        ["msh-check", "--m", "0"],
    ])
    def test_config_errors(self, argv, tmp_path, capsys):
        assert main(argv + ["--out", str(tmp_path)]) == 2
        assert "hesslab" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["msh-check", "--config", str(tmp_path / "none.cfg"), "--out", str(tmp_path)]) == 2

    def test_runtime_error(self, tmp_path):
        # m larger than the dimension is rejected by the certifier
        assert main(["msh-check", "--domain", "disc", "--m", "2", "--out", str(tmp_path)]) == 2

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert main(["msh-check", "--domain", "disc", "--out", str(blocker / "sub")]) == 2

    @pytest.mark.parametrize("value", ["zero", "0"])
    def test_bad_thread_count(self, value, tmp_path, monkeypatch):
        monkeypatch.setenv("HESSLAB_THREADS", value)
        assert main(["msh-check", "--out", str(tmp_path)]) == 2

    def test_thread_cap(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HESSLAB_THREADS", "1")
        assert main(["msh-check", "--domain", "disc", "--out", str(tmp_path)]) == 0


class TestCommands:
    def test_msh_check_pass(self, tmp_path):
        assert main(["msh-check", "--domain", "disc", "--h", "0.1,0.05", "--out", str(tmp_path)]) == 0
        assert _rows(tmp_path / "msh_h0p1.csv")[0] == ["point", "margin", "sigma_1"]
        rows = _rows(tmp_path / "summary.csv")
        assert rows[0] == ["h", "passed", "worst_margin", "points", "creases"]
        assert [r[1] for r in rows[1:]] == ["1", "1"]

    def test_msh_check_fail(self, tmp_path):
        argv = ["msh-check", "--domain", "reinhardt", "--m", "3", "--h", "0.1", "--set", "field=phi_k:2",
                "--out", str(tmp_path)]
        assert main(argv) == 1
        rows = _rows(tmp_path / "msh_h0p1.csv")
        assert rows[0] == ["point", "margin", "sigma_1", "sigma_2", "sigma_3"]
        assert all(abs(float(r[4]) + 0.5) <= 1e-9 for r in rows[1:])

    def test_edwards(self, tmp_path):
        assert main(["edwards", "--domain", "disc", "--m", "1", "--grid", "16", "--out", str(tmp_path)]) == 0
        rows = _rows(tmp_path / "edwards.csv")
        assert rows[0] == ["pair", "node", "gap", "passed"]
        assert len(rows) == 11
        assert max(float(r[2]) for r in rows[1:]) <= 1e-8

    def test_hyperconvex_schema(self, tmp_path):
        assert main(["hyperconvex", "--domain", "disc", "--h", "0.1", "--out", str(tmp_path)]) == 0
        rows = _rows(tmp_path / "hyperconvex.csv")
        assert rows[0] == ["h", "worst_gap", "worst_boundary_node", "verdict"]
        assert [float(r[0]) for r in rows[1:]] == [0.1, 0.05]
        assert all(r[3] == "PASS" for r in rows[1:])

    def test_hyperconvex_rejects_non_halving(self, tmp_path):
        assert main(["hyperconvex", "--domain", "disc", "--h", "0.1,0.07", "--out", str(tmp_path)]) == 2

    def test_envelope(self, tmp_path):
        assert main(["envelope", "--domain", "disc", "--h", "0.1", "--out", str(tmp_path)]) == 0
        hist = _rows(tmp_path / "residuals_h0p1.csv")
        assert hist[0] == ["iteration", "residual"]
        assert (tmp_path / "field_h0p1.txt").exists()
        assert '"verdict"' in (tmp_path / "certificate_h0p1.json").read_text()

    def test_bm_regular(self, tmp_path):
        assert main(["bm-regular", "--domain", "disc", "--h", "0.1", "--out", str(tmp_path)]) == 0
        assert _rows(tmp_path / "bm_regular.csv")[0] == ["h", "gap", "gap_tol", "delta", "verdict"]

    def test_hessian_mass(self, tmp_path):
        argv = ["hessian-mass", "--domain", "ball", "--m", "2", "--h", "0.25", "--out", str(tmp_path)]
        assert main(argv) == 0
        text = (tmp_path / "hessian_mass.csv").read_text()
        head, row = text.splitlines()[:2]
        assert head == "h,total_mass,excluded,creases,error_estimate"
        assert abs(float(row.split(",")[1]) - np.pi ** 2 / 2) <= 4 * 0.25 * np.pi ** 2 / 2

    def test_jensen_scan(self, tmp_path):
        assert main(["jensen", "--domain", "disc", "--grid", "16", "--out", str(tmp_path)]) == 0
        rows = _rows(tmp_path / "scan_h0p125.csv")
        assert rows[0] == ["node", "boundary", "flagged", "worst_drop"]
        assert not any(r[1] == "0" and r[2] == "1" for r in rows[1:])

    def test_exhaust_disc(self, tmp_path):
        argv = ["exhaust", "--domain", "disc", "--m", "1", "--h", "0.1", "--set", "base=sq_norm:-1",
                "--out", str(tmp_path)]
        assert main(argv) == 0
        rows = dict(tuple(r) for r in _rows(tmp_path / "certificate_h0p1.csv")[1:])
        assert rows["recipe"] == "bounded_mass"
        assert rows["passed"] == "True"


class TestReproducibility:
    def test_manifest_echo(self, tmp_path):
        assert main(["msh-check", "--domain", "disc", "--seed", "17", "--out", str(tmp_path)]) == 0
        man = _manifest(tmp_path)
        assert man["seed"] == "17"
        assert man["command"] == "msh-check"
        assert man["status"] == "0"
        assert "version" in man and "wall_time_s" in man

    @pytest.mark.parametrize("argv", [
        ["edwards", "--domain", "disc", "--grid", "16", "--seed", "3"],
        ["msh-check", "--domain", "ball", "--m", "2", "--h", "0.25"],
    ])
    def test_byte_stable(self, argv, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(argv + ["--out", str(a)]) == main(argv + ["--out", str(b)])
        names = sorted(p.name for p in a.iterdir() if p.name != "manifest.txt")
        assert names == sorted(p.name for p in b.iterdir() if p.name != "manifest.txt")
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestEntryPoint:
    def test_module_help(self):
        out = subprocess.run([sys.executable, "-m", "hesslab", "--help"], capture_output=True, text=True)
        assert out.returncode == 0
        assert "worst_gap, worst_boundary_node, verdict" in out.stdout

    @pytest.mark.slow
    def test_paper_examples(self, tmp_path):
        assert main(["paper-examples", "--out", str(tmp_path)]) == 0
        rows = _rows(tmp_path / "paper_examples.csv")
        assert rows[0] == ["check", "expected", "observed", "ok"]
        assert all(r[3] == "1" for r in rows[1:])
