import json
import os
import subprocess
import sys

import numpy as np
import pytest

from katolab import cli, generators


@pytest.mark.parametrize("text, value", [
    ("3", 3), ("2.5", 2.5), ("1e-3", 1e-3), ("true", True), ("False", False),
    ("0.1,0.2", [0.1, 0.2]), ("const:0.1", "const:0.1"), ("eigen:3", "eigen:3"),
])
def test_parse_value(text, value):
    assert cli.parse_value(text) == value


def test_parse_assignments():
    assert cli.parse_assignments(["N=8", "a = 2.0"]) == {"N": 8, "a": 2.0}
    with pytest.raises(cli.ConfigError, match="key=value"):
        cli.parse_assignments(["N8"])


def test_params_typing_and_unknown_keys():
    p = cli.Params({"m": 4, "t": "x", "extra": 1}, "here")
    assert p.get("m", kind=int) == 4
    with pytest.raises(cli.ConfigError, match="valid float"):
        p.get("t", kind=float)
    with pytest.raises(cli.ConfigError, match="unknown parameter"):
        p.finish()
    with pytest.raises(cli.ConfigError):
        cli.Params({"m": 2.5}, "here").get("m", kind=int)


def test_parse_space_spec(tmp_path):
    assert cli.parse_space_spec("flat_torus:N=8,a=2") == ("flat_torus", {"N": 8, "a": 2})
    assert cli.parse_space_spec("icosphere") == ("icosphere", {})
    with pytest.raises(cli.ConfigError, match="available"):
        cli.parse_space_spec("moebius:N=3")
    path = tmp_path / "c.graph"
    path.write_text("graph n=1\nv a 1\nv b 1\ne a b 1 1\n")
    assert cli.parse_space_spec(str(path)) == (None, {"path": str(path)})
    assert cli.load_space(str(path)).vertex_count == 2


def test_parse_potential(tmp_path, torus16, cycle20):
    assert np.all(cli.parse_potential("zero", cycle20) == 0)
    assert np.all(cli.parse_potential("const:0.5", cycle20) == 0.5)
    assert np.all(cli.parse_potential("curvature", torus16) == 0)
    f = tmp_path / "v.txt"
    np.savetxt(f, np.arange(20.0))
    np.testing.assert_array_equal(cli.parse_potential(f"file:{f}", cycle20), np.arange(20.0))
    with pytest.raises(cli.ConfigError):
        cli.parse_potential("curvature", cycle20)
    with pytest.raises(cli.ConfigError):
        cli.parse_potential(f"file:{f}", torus16)
    with pytest.raises(cli.ConfigError):
        cli.parse_potential("cubic", cycle20)


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("argv", [
    ["spectrum", "icosphere:level=2", "-p", "m=5"],
    ["heat", "flat_torus:N=16"],
    ["kato", "icosphere:level=2"],
    ["entropy", "identities", "cycle:N=20"],
    ["entropy", "density", "flat_torus:N=32"],
    ["entropy", "varadhan", "flat_torus:N=32"],
    ["verify", "li_yau", "icosphere:level=2"],
    ["verify", "gradient", "icosphere:level=2"],
    ["verify", "bakry_ledoux", "flat_torus:N=16"],
    ["verify", "gaussian", "icosphere:level=2"],
    ["verify", "hessian", "flat_torus:N=16"],
    ["verify", "harmonic", "flat_torus:N=32"],
    ["verify", "lipschitz", "flat_torus:N=32"],
    ["cutoff", "flat_torus:N=16"],
    ["gauge", "cycle:N=20", "-p", "potential=const:0.01", "-p", "t_star=1"],
    ["split", "flat_torus:N=32"],
    ["gh", "cycle:N=4", "-p", "b=cycle:N=5"],
    ["probe", "cone_graph:N=10"],
])
def test_operations_pass(argv, capsys):
    code, out, _ = run(capsys, *argv)
    assert code == 0
    assert json.loads(out)["verdict"] in ("pass", "pass-with-taint")


def test_artifacts_written_with_prefix(tmp_path, capsys):
    code, _, _ = run(capsys, "kato", "icosphere:level=2", "-o", str(tmp_path))
    assert code == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["kato.bounds.json", "kato.json", "kato.kato_profile.csv", "kato.margins.csv"]
    assert json.loads((tmp_path / "kato.json").read_text())["name"] == "dynkin"


def test_spectrum_modes_artifact(tmp_path, capsys):
    run(capsys, "spectrum", "icosphere:level=1", "-p", "m=4", "-o", str(tmp_path))
    modes = np.fromfile(tmp_path / "spectrum.modes.bin", dtype="<f8")
    assert modes.size == 42 * 4


def test_gh_value_and_expectations(capsys):
    code, out, _ = run(capsys, "gh", "cycle:N=4", "-p", "b=cycle:N=6", "-p", "expect_max=0.1")
    assert code == 2
    assert json.loads(out)["extra"]["value"] == pytest.approx(0.5)


def test_gh_from_matrix_files(tmp_path, capsys):
    a, b = tmp_path / "a.npy", tmp_path / "b.csv"
    np.save(a, np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.savetxt(b, np.array([[0.0, 3.0], [3.0, 0.0]]), delimiter=",")
    code, out, _ = run(capsys, "gh", "cycle:N=3", "-p", f"a={a}", "-p", f"b={b}")
    assert code == 0 and json.loads(out)["extra"]["value"] == pytest.approx(1.0)


def test_exit_code_fail(capsys):
    # coarse tori drift past the tolerance
    code, out, _ = run(capsys, "entropy", "monotonicity", "flat_torus:N=16")
    assert code == 2 and json.loads(out)["verdict"] == "fail"


def test_exit_code_inconclusive(capsys):
    code, out, _ = run(capsys, "probe", "flat_torus:N=32")
    assert code == 3 and json.loads(out)["verdict"] == "inconclusive"


@pytest.mark.parametrize("argv, match", [
    (["heat", "klein:N=3"], "unknown generator"),
    (["heat", "cycle:N=10", "-p", "bogus=1"], "unknown parameter"),
    (["gauge", "cycle:N=10", "-p", "potential=const:1", "-p", "t_star=1"], "1/8"),
    (["gh", "cycle:N=4"], "second space"),
    (["verify", "hessian", "cycle:N=20"], "mesh"),
])
def test_exit_code_error(argv, match, capsys):
    code, _, err = run(capsys, *argv)
    assert code == 1
    assert match in err


def test_tolerance_override(capsys):
    code, out, _ = run(capsys, "entropy", "monotonicity", "flat_torus:N=16", "--tolerance", "monotonicity=0.1")
    assert code == 0 and json.loads(out)["tolerance"] == 0.1


def test_gen_and_space(tmp_path, capsys):
    code, out, _ = run(capsys, "gen", "cycle", "-p", "N=5")
    assert code == 0 and out.startswith("graph n=1")
    g = tmp_path / "c.graph"
    run(capsys, "gen", "cycle", "-p", "N=5", "-o", str(g))
    mesh = tmp_path / "s.off"
    assert run(capsys, "gen", "icosphere", "-p", "level=1", "-o", str(mesh))[0] == 0
    code, out, _ = run(capsys, "space", str(mesh))
    assert json.loads(out)["euler_characteristic"] == 2
    export = tmp_path / "c.json"
    code, out, _ = run(capsys, "space", str(g), "-o", str(export), "--distances")
    assert json.loads(out)["vertices"] == 5
    assert run(capsys, "heat", str(export))[0] == 0
    assert run(capsys, "gen", "icosphere")[0] == 1


SCENARIO = """\
# small end-to-end run
space = cycle:N=24
seed = 3
output = {out}
tolerance.gaussian_bounds = 0.0
op.1 = verify gradient
op.1.t = 0.5
op.2 = kato
op.2.potential = const:0.01
op.2.T = 1.0
op.3 = gh
op.3.b = cycle:N=25
"""


def test_scenario_run_and_report_merge(tmp_path, capsys):
    out = tmp_path / "res"
    cfg = tmp_path / "s.cfg"
    cfg.write_text(SCENARIO.format(out=out))
    code, text, _ = run(capsys, "run", str(cfg))
    assert code == 0
    assert len(text.splitlines()) == 3
    reports = [out / name for name in ("01_verify.gradient.json", "02_kato.json", "03_gh.json")]
    assert all(p.exists() for p in reports)
    assert (out / "03_gh.gh.json").exists() and (out / "02_kato.kato_profile.csv").exists()
    merged = tmp_path / "merged"
    code, _, _ = run(capsys, "report", *map(str, reports), str(reports[0]), "-o", str(merged))
    assert code == 0
    summary = json.loads((merged / "summary.json").read_text())
    names = [r["name"] for r in summary["reports"]]
    assert names == ["gradient_estimate", "dynkin", "gh", "gradient_estimate-2"]
    assert summary["verdict"] == "pass"
    assert (merged / "hist_gradient_estimate.csv").read_text().startswith("bin_lo,bin_hi,count")


@pytest.mark.parametrize("text, match", [
    ("space = cycle:N=5\nop.1 = heat\nnonsense\n", ":3: expected"),
    ("space = cycle:N=5\nop.x = heat\n", ":2: operation keys"),
    ("space = cycle:N=5\nop.1 = teleport\n", ":2: unknown operation"),
    ("space = cycle:N=5\nop.1.t = 1\n", ":2: parameters given"),
    ("op.1 = heat\n", "needs 'space'"),
    ("space = cycle:N=5\ncolour = red\n", ":2: unknown key"),
    ("seed = x\n", "seed must be an integer"),
    ("space = cycle:N=5\nop.1 = heat\nop.1.bogus = 2\n", ":2: unknown parameter"),
])
def test_scenario_errors_name_the_line(tmp_path, text, match, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    code, _, err = run(capsys, "run", str(cfg))
    assert code == 1
    assert f"{cfg}" in err and match in err


def test_report_rejects_non_reports(tmp_path, capsys):
    bad = tmp_path / "x.json"
    bad.write_text('{"a": 1}')
    code, _, err = run(capsys, "report", str(bad))
    assert code == 1 and "not a verification report" in err


def test_exit_codes():
    assert cli.exit_code(["pass", "pass-with-taint"]) == 0
    assert cli.exit_code(["pass", "fail", "inconclusive"]) == 2
    assert cli.exit_code(["inconclusive"]) == 3
    assert cli.exit_code(["pass", "inconclusive"]) == 0


def test_thread_cap_environment():
    env = {**os.environ, "KATOLAB_THREADS": "1"}
    env.pop("OMP_NUM_THREADS", None)
    code = "import os, katolab.cli; print(os.environ['OMP_NUM_THREADS'])"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "1"


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "katolab.cli", "space", "cycle:N=7"], capture_output=True, text=True)
    assert out.returncode == 0 and json.loads(out.stdout)["vertices"] == 7


def test_cycle_generator_reachable():
    # guard against the CLI and library disagreeing on names
    assert set(generators.available()) >= {"flat_torus", "icosphere", "cycle", "path", "cone_graph"}


def test_fixed_seed_gives_identical_reports(tmp_path, capsys):
    texts = []
    for name in ("a", "b"):
        cfg = tmp_path / f"{name}.cfg"
        cfg.write_text(SCENARIO.format(out=tmp_path / name))
        run(capsys, "run", str(cfg))
        texts.append({p.name: p.read_bytes() for p in sorted((tmp_path / name).iterdir())})
    assert texts[0] == texts[1]
