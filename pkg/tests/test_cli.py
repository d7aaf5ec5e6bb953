import csv
import subprocess
import sys
from pathlib import Path

import pytest

from ltslf.cli import ConfigError, main, parse_config_text, resolve_config, spec_from_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

LSHAPE = """\
mesh.type = lshape
mesh.h_init = 0.125
fem.lumping = true
lts.p = 4
"""


def _cfg(tmp_path, text, name="c.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _verify_fields(out):
    pairs = (line.split(":", 1) for line in out.strip().splitlines())
    return {k.strip(): v.strip() for k, v in pairs}


class TestAlpha:
    def test_p3_csv(self, capsys):
        assert main(["alpha", "3"]) == 0
        out = capsys.readouterr()
        rows = list(csv.reader(out.out.splitlines()))
        assert rows[0] == ["j", "recursive", "closed_form", "rel_diff"]
        assert [float(x) for x in rows[1][1:3]] == [3.0, 3.0]
        assert [float(x) for x in rows[2][1:3]] == [-0.5, -0.5]
        assert all(float(r[3]) <= 1e-12 for r in rows[1:])
        assert "max rel diff" in out.err

    def test_p1_empty(self, capsys):
        assert main(["alpha", "1", "--format", "text"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2 and lines[-1].startswith("# p = 1")

    def test_p0_usage_error(self, capsys):
        assert main(["alpha", "0"]) == 2
        assert "p must be" in capsys.readouterr().err


class TestConfig:
    def test_parse_comments(self):
        raw = parse_config_text("# c\nmesh.type = interval  # trailing\n\nlts.p=3\n")
        assert raw == {"mesh.type": "interval", "lts.p": "3"}

    @pytest.mark.parametrize("text, key", [("mesh.kind = x", "mesh.kind"),
                                           ("no equals sign", "line 1"),
                                           ("lts.p = 2\nlts.p = 3", "duplicate")])
    def test_parse_errors(self, text, key):
        with pytest.raises(ConfigError, match=key):
            parse_config_text(text)

    def test_missing_key_named(self):
        with pytest.raises(ConfigError, match="lts.p"):
            resolve_config({"mesh.type": "interval", "mesh.h_init": "0.1"}, "verify")

    @pytest.mark.parametrize("key, value", [("lts.p", "two"), ("fem.lumping", "maybe"),
                                            ("mesh.type", "torus"), ("time.dt", "soon")])
    def test_bad_values(self, key, value):
        raw = parse_config_text(LSHAPE)
        raw[key] = value
        with pytest.raises(ConfigError, match=key):
            resolve_config(raw, "verify")

    def test_spec_mapping(self):
        cfg = resolve_config(parse_config_text(LSHAPE + "time.dt = 0.05\n"), "verify")
        spec = spec_from_config(cfg)
        assert spec.geometry == "lshape" and spec.initial == "gaussian"
        assert spec.dt_rule == "fixed" and spec.dt == 0.05 and spec.lumping

    def test_invalid_spec(self):
        cfg = resolve_config(parse_config_text(LSHAPE.replace("lts.p = 4", "lts.p = 0")),
                             "verify")
        with pytest.raises(ConfigError):
            spec_from_config(cfg)

    @pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.cfg")), ids=lambda p: p.stem)
    def test_shipped_configs_resolve(self, path):
        command = "verify" if path.stem.startswith("verify") else "run"
        spec_from_config(resolve_config(parse_config_text(path.read_text()), command))


class TestVerify:
    def test_lshape_preset_ok(self, capsys):
        assert main(["verify", "--config", str(CONFIGS / "verify_lshape.cfg")]) == 0
        f = _verify_fields(capsys.readouterr().out)
        assert f["ok"] == "true"

    def test_interval_p1(self, capsys):
        assert main(["verify", "--config", str(CONFIGS / "verify_interval.cfg")]) == 0
        f = _verify_fields(capsys.readouterr().out)
        lam, dt_max = float(f["lambda_max_a"]), float(f["dt_max"])
        assert dt_max == pytest.approx(2 * 0.95 / lam ** 0.5, rel=1e-9)

    def test_large_dt_not_ok(self, tmp_path, capsys):
        assert main(["verify", "--config", _cfg(tmp_path, LSHAPE), "--format", "csv"]) == 0
        rows = list(csv.reader(capsys.readouterr().out.splitlines()))
        dt_max = float(dict(zip(*rows))["dt_max"])
        path = _cfg(tmp_path, LSHAPE + f"time.dt = {10 * dt_max!r}\n", "big.cfg")
        assert main(["verify", "--config", path, "--format", "csv"]) == 0
        assert dict(zip(*csv.reader(capsys.readouterr().out.splitlines())))["ok"] == "false"

    def test_missing_key_exit(self, tmp_path, capsys):
        path = _cfg(tmp_path, "mesh.type = lshape\nlts.p = 4\n")
        assert main(["verify", "--config", path]) == 2
        assert "mesh.h_init" in capsys.readouterr().err

    def test_unreadable(self, tmp_path):
        assert main(["verify", "--config", str(tmp_path / "nope.cfg")]) == 2


class TestRun:
    def test_converge_table(self, tmp_path):
        out = tmp_path / "conv"
        assert main(["run", "--config", str(CONFIGS / "converge_1d_p1.cfg"),
                     "--out", str(out)]) == 0
        rows = list(csv.reader((out / "convergence.csv").open()))
        assert rows[0][4] == "rate" and len(rows) == 5
        assert (out / "manifest.txt").read_text().count("=") > 10

    def test_lshape_outputs_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert main(["run", "--config", str(CONFIGS / "lshape.cfg"),
                         "--out", str(tmp_path / name)]) == 0
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert len([f for f in files if f.endswith(".vtk")]) == 6
        assert {"energy.csv", "runtime.csv", "manifest.txt"} <= set(files)
        # manifests differ in output.dir only; runtime.csv holds wall times
        for f in files:
            if f not in ("runtime.csv", "manifest.txt"):
                assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_single_run(self, tmp_path):
        out = tmp_path / "one"
        assert main(["run", "--config", str(CONFIGS / "run_1d.cfg"), "--out", str(out)]) == 0
        summary = dict(zip(*csv.reader((out / "summary.csv").open())))
        assert float(summary["l2_error"]) < 1e-2
        header = next(csv.reader((out / "energy.csv").open()))
        assert header == ["n", "t", "kinetic", "potential", "total", "l2_norm"]

    def test_stability(self, tmp_path):
        text = LSHAPE + "problem.preset = stability\nproblem.steps = 500\noutput.dir = x\n"
        out = tmp_path / "st"
        assert main(["run", "--config", _cfg(tmp_path, text), "--out", str(out)]) == 0
        rows = list(csv.DictReader((out / "stability.csv").open()))
        assert rows[0]["stable"] == "true" and rows[-1]["stable"] == "false"

    def test_bench_small(self, tmp_path):
        text = LSHAPE + "problem.preset = bench\noutput.dir = x\n"
        out = tmp_path / "bench"
        assert main(["run", "--config", _cfg(tmp_path, text), "--out", str(out)]) == 0
        rows = list(csv.DictReader((out / "runtime.csv").open()))
        assert len(rows) == 1 and float(rows[0]["speedup"]) > 0

    def test_blowup_exit_code(self, tmp_path, capsys):
        text = LSHAPE + "time.dt = 0.5\ntime.T = 20\nproblem.preset = run\noutput.dir = x\n"
        assert main(["run", "--config", _cfg(tmp_path, text), "--out", str(tmp_path / "b")]) == 1
        assert "blew up" in capsys.readouterr().err

    def test_bad_threads(self, tmp_path):
        assert main(["run", "--config", str(CONFIGS / "lshape.cfg"), "--threads", "0"]) == 2

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "ltslf", "alpha", "2"],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0 and proc.stdout.splitlines()[1].startswith("1,5.0")
