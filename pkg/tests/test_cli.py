from pathlib import Path

import pytest
import yaml

from qlimits.cli import main
from qlimits.config import load_experiment, load_run_config, rate_from_config

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def write_yaml(path: Path, doc: dict) -> Path:
    path.write_text(yaml.safe_dump(doc))
    return path


def constant_config(tmp_path, name="demo", **kw) -> Path:
    doc = {
        "name": name,
        "scheme": {
            "q0": kw.get("q0", 3.0),
            "x0": 0.0,
            "lam": kw.get("lam", 2.0),
            "alpha": 0.0,
            "k": 1.0,
            "gamma": 0.0,
            "mu": kw.get("mu", 1.0),
            "theta": kw.get("theta", 1.0),
        },
        "horizon": kw.get("horizon", 5.0),
        "n": kw.get("n", 20),
        "replications": kw.get("replications", 10),
        "seed": kw.get("seed", 5),
        "dt": 0.01,
        "grid_step": 0.1,
    }
    return write_yaml(tmp_path / f"{name}.yaml", doc)


class TestConfigs:
    @pytest.mark.parametrize("name", ["qd", "ed", "qed", "timevarying"])
    def test_shipped_configs_load(self, name):
        rc = load_run_config(CONFIG_DIR / f"{name}.yaml")
        assert rc.horizon > 0
        assert rc.seed != 0

    def test_shipped_experiment_loads(self):
        exp = load_experiment(CONFIG_DIR / "acceptance.yaml")
        names = [c.check for c in exp.checks]
        assert "fluid_lln" in names and "reproducibility" in names

    def test_rate_shorthand(self):
        f = rate_from_config(2.5)
        assert f.kind == "constant" and f.value(0.0) == 2.5
        g = rate_from_config({"kind": "sinusoid", "params": [1.0, 0.5, 2.0]})
        assert g.value(0.0) == 1.0

    def test_run_config_missing_scheme(self, tmp_path):
        p = write_yaml(tmp_path / "bad.yaml", {"horizon": 1.0})
        with pytest.raises(ValueError):
            load_run_config(p)


class TestFluidCommand:
    def test_equilibrium_report(self, tmp_path, capsys):
        cfg = constant_config(tmp_path, lam=2.0, mu=1.0, theta=1.0, q0=3.0)
        out = tmp_path / "out"
        assert main(["fluid", str(cfg), "--out", str(out)]) == 0
        report = yaml.safe_load((out / "fluid_report.yaml").read_text())
        assert report["equilibrium"] == pytest.approx(2.0)
        assert report["regime"] == "OVER"
        assert (out / "fluid.csv").exists()

    def test_critical_identity_csv(self, tmp_path):
        cfg = constant_config(tmp_path, lam=1.0, mu=1.0, theta=3.0, q0=1.0)
        out = tmp_path / "out"
        assert main(["fluid", str(cfg), "--out", str(out)]) == 0
        rows = (out / "fluid.csv").read_text().splitlines()[1:]
        qs = {float(r.split(",")[1]) for r in rows}
        assert qs == {1.0}

    def test_missing_file_exits_2(self, tmp_path, capsys):
        assert main(["fluid", str(tmp_path / "nope.yaml"),
                     "--out", str(tmp_path)]) == 2
        assert "error" in capsys.readouterr().err

    def test_idempotent_outputs(self, tmp_path):
        cfg = constant_config(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert main(["fluid", str(cfg), "--out", str(out)]) == 0
            assert main(["diffusion", str(cfg), "--paths", "8",
                         "--out", str(out)]) == 0
        for name in ("fluid.csv", "fluid_report.yaml", "moments.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


class TestSimulateCommand:
    def test_idempotent_outputs(self, tmp_path):
        cfg = constant_config(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", str(cfg), "--out", str(out1),
                     "--dump-paths", "2"]) == 0
        assert main(["simulate", str(cfg), "--out", str(out2),
                     "--dump-paths", "2"]) == 0
        for name in ("aggregate.csv", "path_0000.csv", "path_0001.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_aggregate_header(self, tmp_path):
        cfg = constant_config(tmp_path)
        out = tmp_path / "o"
        assert main(["simulate", str(cfg), "--out", str(out)]) == 0
        first = (out / "aggregate.csv").read_text().splitlines()[0]
        assert first == "t,mean_Qn_over_n,var,reps"

    def test_martingale_and_scaled_dumps(self, tmp_path):
        cfg = constant_config(tmp_path)
        out = tmp_path / "o"
        assert main(["simulate", str(cfg), "--out", str(out),
                     "--dump-paths", "1", "--martingales", "--scaled"]) == 0
        mart = (out / "martingales_0000.csv").read_text().splitlines()
        assert mart[0] == "t,M_A,M_R,M_B,QV_A,QV_R,QV_B"
        scaled = (out / "scaled_0000.csv").read_text().splitlines()
        assert scaled[0] == "t,fluid_scaled,diffusion_scaled"


class TestDiffusionCommand:
    def test_moments_and_law_report(self, tmp_path):
        cfg = constant_config(tmp_path, lam=0.5, q0=0.5)
        out = tmp_path / "o"
        assert main(["diffusion", str(cfg), "--paths", "32",
                     "--out", str(out), "--dump-paths", "1"]) == 0
        assert (out / "moments.csv").exists()
        assert (out / "xpath_0000.csv").exists()
        law = yaml.safe_load((out / "stationary_report.yaml").read_text())
        assert law["kind"] == "gaussian"
        assert law["params"]["variance"] == pytest.approx(0.5)


class TestStationaryCommand:
    def test_prints_law(self, tmp_path, capsys):
        cfg = constant_config(tmp_path, lam=1.0, mu=1.0, theta=2.0, q0=1.0)
        assert main(["stationary", str(cfg)]) == 0
        doc = yaml.safe_load(capsys.readouterr().out)
        assert doc["kind"] == "qed-piecewise"
        assert "C" in doc

    def test_time_varying_rejected(self, capsys):
        assert main(["stationary", str(CONFIG_DIR / "timevarying.yaml")]) == 2
        assert "constant" in capsys.readouterr().err


class TestTimeVaryingConfig:
    def test_diffusion_runs_without_law_report(self, tmp_path):
        doc = yaml.safe_load((CONFIG_DIR / "timevarying.yaml").read_text())
        doc["horizon"] = 3.0
        cfg = write_yaml(tmp_path / "tv.yaml", doc)
        out = tmp_path / "o"
        assert main(["diffusion", str(cfg), "--paths", "8",
                     "--out", str(out)]) == 0
        assert (out / "moments.csv").exists()
        assert not (out / "stationary_report.yaml").exists()


class TestValidateCommand:
    def test_identity_check_passes(self, tmp_path, capsys):
        exp = write_yaml(tmp_path / "exp.yaml", {
            "name": "tiny",
            "checks": [{"check": "identity", "seed": 1, "tolerance": 0.0}],
        })
        out = tmp_path / "v"
        assert main(["validate", str(exp), "--out", str(out)]) == 0
        rows = (out / "verdicts.csv").read_text().splitlines()
        assert rows[0] == "check,statistic,tolerance,passed"
        assert rows[1].endswith("PASS")

    def test_impossible_tolerance_fails(self, tmp_path):
        # a stochastic check cannot meet a zero tolerance
        exp = write_yaml(tmp_path / "exp.yaml", {
            "name": "impossible",
            "checks": [{
                "check": "fluid_lln",
                "scheme": {"q0": 1.0, "lam": 1.0, "k": 1.0, "mu": 1.0,
                           "theta": 1.0},
                "horizon": 2.0, "n": 10, "reps": 5, "sup_tol": 0.0,
                "min_pass": 5, "grid_step": 0.1, "seed": 3,
            }],
        })
        assert main(["validate", str(exp), "--out", str(tmp_path / "v")]) == 1

    def test_unknown_check_exits_2(self, tmp_path, capsys):
        exp = write_yaml(tmp_path / "exp.yaml", {
            "name": "bad", "checks": [{"check": "no_such_check"}],
        })
        assert main(["validate", str(exp), "--out", str(tmp_path / "v")]) == 2
        assert "unknown" in capsys.readouterr().err


class TestVerdictDeterminism:
    def test_validate_outputs_idempotent(self, tmp_path):
        exp = write_yaml(tmp_path / "exp.yaml", {
            "name": "repro",
            "checks": [
                {"check": "identity", "seed": 1},
                {"check": "reproducibility",
                 "scheme": {"q0": 1.0, "lam": 1.0, "k": 1.0, "mu": 1.0,
                            "theta": 1.0},
                 "n": 10, "horizon": 2.0, "reps": 4, "paths": 4,
                 "dt": 0.01, "seed": 2},
            ],
        })
        out1, out2 = tmp_path / "v1", tmp_path / "v2"
        assert main(["validate", str(exp), "--out", str(out1)]) == 0
        assert main(["validate", str(exp), "--out", str(out2)]) == 0
        assert (out1 / "verdicts.csv").read_bytes() == (out2 / "verdicts.csv").read_bytes()
        assert (out1 / "verdicts.yaml").read_bytes() == (out2 / "verdicts.yaml").read_bytes()
