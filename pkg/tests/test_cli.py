import json
import subprocess
import sys
import textwrap

import pytest

import _oracles
from fluxvacua import cli, config
from fluxvacua.errors import ConfigError, InputError

BH = """\
command: bh-moment
out: {out}
b3: [2, 4]
method: monte-carlo
samples: 20000
seed: 3
L: 10
"""

LATTICE = """\
command: lattice-scan
out: {out}
body: {{kind: ellipsoid, matrix: [[1, 0], [0, 4]]}}
observable: {{kind: coordinate_ratio, index: 0}}
L: {{start: 100, stop: 10000, num: 6}}
"""

VACUA = """\
command: vacua-count
out: {out}
family:
  basis:
    - terms: [[[0], 1, 0]]
    - terms: [[[0], 0, 1], [[1], 1, 0]]
  qform: [[1, 0], [0, 1]]
L: [4, 9]
region: {{kind: ball, radius: 3}}
density: {{samples: 20, seed: 1}}
"""

DENSITY = """\
command: density-compare
out: {out}
ensemble: {{h21: 1, random_seed: 2}}
samples: 5000
"""

IZHC = """\
command: izhc-eval
out: {out}
ensemble: {{h21: 0}}
m: 1
haar: 4
"""

CONFIGS = {"bh": BH, "lattice": LATTICE, "vacua": VACUA, "density": DENSITY, "izhc": IZHC}


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def run_config(tmp_path, template, name="exp"):
    out = tmp_path / f"{name}.csv"
    cfg = write(tmp_path, f"{name}.yaml", template.format(out=out))
    code = cli.main(["run", "--config", str(cfg)])
    return code, out


def manifest(out):
    return json.loads(cli.manifest_path(out).read_text())


class TestRunConfigs:
    @pytest.mark.parametrize("name", sorted(CONFIGS))
    def test_runs_and_writes_manifest(self, tmp_path, name):
        code, out = run_config(tmp_path, CONFIGS[name])
        assert code == 0
        man = manifest(out)
        assert man["status"] == "ok" and man["error"] is None
        assert out.name in man["outputs"]
        for o in man["outputs"]:
            assert (tmp_path / o).exists()
        assert len(man["config_hash"]) == 64
        assert "numpy" in man["versions"]

    @pytest.mark.parametrize("name", sorted(CONFIGS))
    def test_byte_identical_reruns(self, tmp_path, name):
        code, out = run_config(tmp_path, CONFIGS[name])
        assert code == 0
        first = {o: (tmp_path / o).read_bytes() for o in manifest(out)["outputs"]}
        first_manifest = cli.manifest_path(out).read_bytes()
        assert run_config(tmp_path, CONFIGS[name])[0] == 0
        assert {o: (tmp_path / o).read_bytes() for o in manifest(out)["outputs"]} == first
        assert cli.manifest_path(out).read_bytes() == first_manifest

    def test_workers_do_not_change_output(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        cfg = write(tmp_path, "d.yaml", DENSITY.format(out=a).replace("samples: 5000", "samples: 25000"))
        assert cli.main(["run", "--config", str(cfg), "--workers", "1"]) == 0
        assert cli.main(["run", "--config", str(cfg), "--workers", "3", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_vacua_outputs(self, tmp_path):
        code, out = run_config(tmp_path, VACUA)
        assert code == 0
        summary = cli.read_csv(cli.sibling(out, ".summary"))
        assert [float(r["N"]) for r in summary] == [_oracles.closed_form_census(L) for L in (4, 9)]
        assert all(r["certified"] == "1" for r in summary)
        assert "ratio" in summary[0]
        rows = cli.read_csv(out)
        assert {"G0", "G1", "re_z0", "im_z0", "absdet", "degenerate", "boundary"} <= set(rows[0])

    def test_floats_written_with_repr(self, tmp_path):
        code, out = run_config(tmp_path, BH)
        rows = cli.read_csv(out)
        assert float(rows[0]["closed_form"]) == 2 * 3.141592653589793
        assert manifest(out)["summary"]["count_estimates"]["2"]["count"] == 100.0


class TestErrors:
    def test_unknown_field_names_field_and_line(self, tmp_path, capsys):
        text = BH.format(out=tmp_path / "x.csv") + "colour: blue\n"
        cfg = write(tmp_path, "bad.yaml", text)
        assert cli.main(["run", "--config", str(cfg)]) == 2
        err = capsys.readouterr().err
        assert "colour" in err and ":8" in err

    def test_nested_error_line(self, tmp_path):
        text = VACUA.format(out=tmp_path / "x.csv").replace("radius: 3", "radius: 3, shape: round")
        p = write(tmp_path, "bad.yaml", text)
        with pytest.raises(ConfigError) as info:
            config.load(p)
        assert info.value.field == "region.shape"
        assert info.value.line == 9

    def test_type_error(self, tmp_path):
        p = write(tmp_path, "bad.yaml", BH.format(out=tmp_path / "x.csv").replace("samples: 20000", "samples: many"))
        with pytest.raises(ConfigError) as info:
            config.load(p)
        assert info.value.field == "samples" and info.value.line == 5

    def test_unknown_command(self, tmp_path):
        p = write(tmp_path, "bad.yaml", "command: dance\nout: x.csv\n")
        with pytest.raises(ConfigError) as info:
            config.load(p)
        assert info.value.line == 1

    def test_invalid_yaml(self, tmp_path):
        p = write(tmp_path, "bad.yaml", "command: [unclosed\n")
        with pytest.raises(ConfigError):
            config.load(p)

    def test_module_error_exit_1(self, tmp_path):
        # Odd b3 without the formal flag is rejected inside the blackhole module.
        out = tmp_path / "odd.csv"
        assert cli.main(["bh-moment", "--b3", "3", "--out", str(out)]) == 1
        man = manifest(out)
        assert man["status"] == "error"
        assert man["error"]["type"] == "InputError"
        assert man["outputs"] == []

    def test_indefinite_family_without_bound(self, tmp_path):
        text = VACUA.replace("qform: [[1, 0], [0, 1]]", "qform: [[1, 0], [0, -1]]").replace(
            "density: {{samples: 20, seed: 1}}\n", "")
        code, out = run_config(tmp_path, text)
        assert code == 1
        man = manifest(out)
        assert man["error"]["type"] == "SignatureError" and len(man["error"]["eigenvalues"]) == 2


class TestFlags:
    def test_bh_flags(self, tmp_path):
        out = tmp_path / "bh.csv"
        assert cli.main(["bh-moment", "--b3", "2,4,6", "--form", "indicator", "--out", str(out)]) == 0
        rows = cli.read_csv(out)
        assert [float(r["value"]) for r in rows] == pytest.approx([3.141592653589793 / k for k in (3, 5, 7)])

    def test_lattice_flags(self, tmp_path):
        body = write(tmp_path, "body.yaml", "kind: ball\ndim: 2\n")
        out = tmp_path / "scan.csv"
        assert cli.main(["lattice-scan", "--body", str(body), "--L-grid", "1,2,4", "--no-fit", "--out", str(out)]) == 0
        assert [int(r["count"]) for r in cli.read_csv(out)] == [4, 8, 12]

    def test_vacua_flags(self, tmp_path):
        fam = write(tmp_path, "fam.yaml", textwrap.dedent("""\
            basis:
              - terms: [[[0], 1, 0]]
              - terms: [[[0], 0, 1], [[1], 1, 0]]
            qform: [[1, 0], [0, 1]]
            """))
        out = tmp_path / "v.csv"
        assert cli.main(["vacua-count", "--family", str(fam), "--L", "4", "--region", "ball:3", "--out", str(out)]) == 0
        assert float(cli.read_csv(cli.sibling(out, ".summary"))[0]["N"]) == _oracles.closed_form_census(4)

    def test_object_file_error_names_file_and_line(self, tmp_path, capsys):
        body = write(tmp_path, "body.yaml", "kind: ball\ndim: 2\nsides: 7\n")
        assert cli.main(["lattice-scan", "--body", str(body), "--L-grid", "4", "--out", str(tmp_path / "s.csv")]) == 2
        err = capsys.readouterr().err
        assert "body.yaml:3" in err and "sides" in err

    def test_density_and_izhc_flags(self, tmp_path):
        ens = write(tmp_path, "ens.yaml", "h21: 0\n")
        out = tmp_path / "d.csv"
        assert cli.main(["density-compare", "--ensemble", str(ens), "--samples", "2000", "--out", str(out)]) == 0
        assert {r["form"] for r in cli.read_csv(out)} == {"gaussian", "indicator"}
        out2 = tmp_path / "i.csv"
        assert cli.main(["izhc-eval", "--ensemble", str(ens), "--m", "1", "--haar", "2", "--out", str(out2)]) == 0
        assert cli.sibling(out2, ".denominator").exists()

    def test_bad_grid(self):
        with pytest.raises(ConfigError):
            cli.parse_grid("log:1:2")

    def test_grid_forms(self):
        assert cli.parse_grid("25") == 25.0
        assert cli.parse_grid("1,2") == [1.0, 2.0]
        assert cli.parse_grid("log:1e2:1e6:5")["num"] == 5

    def test_console_script_module(self, tmp_path):
        out = tmp_path / "bh.csv"
        proc = subprocess.run([sys.executable, "-m", "fluxvacua.cli", "bh-moment", "--b3", "2", "--out", str(out)],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and out.exists()


class TestPlotData:
    def test_loglog_residual(self, tmp_path):
        code, out = run_config(tmp_path, LATTICE)
        pd = tmp_path / "pd.csv"
        assert cli.main(["plotdata", "--csv", str(out), "--kind", "loglog-residual", "--out", str(pd)]) == 0
        assert set(cli.read_csv(pd)[0]) == {"log_L", "log_abs_residual"}

    def test_ratio_vs_L(self, tmp_path):
        code, out = run_config(tmp_path, VACUA)
        pd = tmp_path / "pd.csv"
        summ = cli.sibling(out, ".summary")
        assert cli.main(["plotdata", "--csv", str(summ), "--kind", "ratio-vs-L", "--out", str(pd)]) == 0
        assert len(cli.read_csv(pd)) == 2

    def test_trace(self, tmp_path):
        code, out = run_config(tmp_path, IZHC)
        pd = tmp_path / "pd.csv"
        assert cli.main(["plotdata", "--csv", str(out), "--kind", "trace", "--out", str(pd)]) == 0
        assert len(cli.read_csv(pd)) == 16

    def test_empty_csv(self, tmp_path):
        empty = write(tmp_path, "empty.csv", "L,residual\n")
        with pytest.raises(InputError):
            cli.emit_plotdata(empty, "loglog-residual", tmp_path / "o.csv")
        assert cli.main(["plotdata", "--csv", str(empty), "--kind", "loglog-residual",
                         "--out", str(tmp_path / "o.csv")]) == 1

    def test_missing_columns(self, tmp_path):
        code, out = run_config(tmp_path, BH)
        with pytest.raises(InputError):
            cli.emit_plotdata(out, "ratio-vs-L", tmp_path / "o.csv")


class TestConfigRoundTrip:
    @pytest.mark.parametrize("name", sorted(CONFIGS))
    def test_yaml_round_trip(self, tmp_path, name):
        cfg = config.load(write(tmp_path, "c.yaml", CONFIGS[name].format(out=tmp_path / "o.csv")))
        again = config.load(write(tmp_path, "d.yaml", config.to_yaml(cfg)))
        assert again == cfg
        assert config.config_hash(again) == config.config_hash(cfg)

    def test_hash_changes_with_content(self, tmp_path):
        a = config.load(write(tmp_path, "a.yaml", BH.format(out="x.csv")))
        b = config.load(write(tmp_path, "b.yaml", BH.format(out="x.csv").replace("seed: 3", "seed: 4")))
        assert config.config_hash(a) != config.config_hash(b)

    def test_complex_entries(self):
        assert config.to_complex("1+2i") == 1 + 2j
        assert config.to_complex([0, 1]) == 1j
        with pytest.raises(ValueError):
            config.to_complex([1, 2, 3])
