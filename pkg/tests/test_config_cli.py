import shutil
from pathlib import Path

import numpy as np
import pytest

from nonlocal_rd.cli import EXIT_AUDIT, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, OUT_ENV, main
from nonlocal_rd.config import ConfigError, build_system, defaulted_fields, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """
grid: {dim: 1, extents: [2.0], counts: [41]}
kernel: {shape: gaussian, eps: 1.0}
reaction: {name: mol_demo}
modes:
  - {type: nonlocal, d: 0.1}
  - {type: local, D: 0.01}
initial: {profile: gaussian_bump, center: [1.0], width: 0.1, amplitude: 0.5}
solver: {scheme: implicit_bdf2, dt: 0.05, t_end: 0.5, snapshot_stride: 5}
"""


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_defaults_parse():
    cfg = parse_config("")
    assert cfg.grid.counts == [101, 51] and cfg.solver.scheme == "explicit_euler"
    keys = dict(defaulted_fields(cfg))
    assert "grid" in keys and "solver" in keys


def test_unknown_key_line_anchored():
    with pytest.raises(ConfigError, match=r"solver\.dtt \(line 3\)"):
        parse_config("grid: {dim: 1, extents: [1.0], counts: [11]}\nsolver:\n  dtt: 0.1\n")


def test_negative_diffusivity_names_field():
    text = SMALL.replace("d: 0.1}", "d: -0.1}")
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert "modes.0" in str(exc.value) and "line 6" in str(exc.value) and "'d'" in str(exc.value)


def test_yaml_syntax_error_has_line():
    with pytest.raises(ConfigError, match=r"\(line \d+\): invalid YAML"):
        parse_config("grid:\n  dim: [1\n")


def test_overrides():
    cfg = parse_config(SMALL, overrides=["solver.dt=0.01", "modes.1.D=0.02"])
    assert cfg.solver.dt == 0.01 and cfg.modes[1].D == 0.02
    with pytest.raises(ConfigError, match="override"):
        parse_config(SMALL, overrides=["solver.dt=-1"])
    with pytest.raises(ConfigError):
        parse_config(SMALL, overrides=["nonsense"])


def test_build_system(tmp_path):
    cfg = load_config(write(tmp_path, SMALL))
    spec = build_system(cfg)
    assert spec.m == 2 and spec.grid.n_nodes == 41
    assert np.allclose(spec.initial[0], spec.initial[1])


def test_csv_initial_profile(tmp_path):
    x = np.linspace(0, 2, 41)
    rows = "\n".join(f"{a},{1 + a},{2 + a}" for a in x)
    (tmp_path / "u0.csv").write_text("x,u_1,u_2\n" + rows + "\n", encoding="utf-8")
    text = SMALL.replace("initial: {profile: gaussian_bump, center: [1.0], width: 0.1, amplitude: 0.5}",
                         "initial: {profile: csv, path: u0.csv}")
    spec = build_system(load_config(write(tmp_path, text)))
    np.testing.assert_allclose(spec.initial[1], 2 + x)


def test_mismatched_component_count():
    text = SMALL.replace("  - {type: local, D: 0.01}\n", "")
    with pytest.raises(ConfigError, match="modes"):
        build_system(parse_config(text))


def test_simulate_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(write(tmp_path, SMALL)), "--out", str(out)]) == EXIT_OK
    assert (out / "run_final.csv").exists() and (out / "run_diagnostics.csv").exists()
    report = (out / "report.md").read_text(encoding="utf-8")
    assert "Defaulted parameters" in report and "solver.cfl_fraction = 0.9" in report
    assert "certified" in report


def test_idempotent_artifacts(tmp_path):
    cfg = write(tmp_path, SMALL)
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b")])
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_env_default_out(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "envout"))
    assert main(["audit", "--config", str(write(tmp_path, SMALL))]) == EXIT_OK
    assert (tmp_path / "envout" / "audit.md").exists()


def test_config_error_exit(tmp_path, capsys):
    bad = write(tmp_path, SMALL.replace("D: 0.01", "D: -0.01"))
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "modes.1" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_broken_audit_exit_before_stepping(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(CONFIGS / "broken_audit.yaml"), "--out", str(out)]) == EXIT_AUDIT
    assert not list(out.glob("*_final.csv"))
    assert "FAIL" in (out / "report.md").read_text(encoding="utf-8")
    assert main(["audit", "--config", str(CONFIGS / "broken_audit.yaml"), "--out", str(out)]) == EXIT_AUDIT


def test_runtime_termination_exit(tmp_path):
    text = """
grid: {dim: 1, extents: [1.0], counts: [11]}
reaction:
  name: custom
  m: 1
  terms: [{component: 1, coef: 1.0, exponents: [2]}]
modes: [{type: local, D: 0.01}]
initial: {profile: constant, value: 2.0}
solver: {dt: 0.01, t_end: 2.0, blowup_value: 1.0e+6}
"""
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(write(tmp_path, text)), "--out", str(out)]) == EXIT_RUNTIME
    assert "blow_up" in (out / "report.md").read_text(encoding="utf-8")


def test_compare_and_difflimit(tmp_path):
    a = write(tmp_path, SMALL.replace("{type: local, D: 0.01}", "{type: nonlocal, d: 0.01}"), "a.yaml")
    b = write(tmp_path, SMALL, "b.yaml")
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(a), "--config", str(b), "--out", str(out)]) == EXIT_OK
    assert (out / "compare.md").exists() and (out / "run_a_smoothness.csv").exists()
    assert main(["compare", "--config", str(a), "--out", str(out)]) == EXIT_CONFIG
    dl = SMALL.replace("kernel: {shape: gaussian, eps: 1.0}", "kernel: {shape: bump, normalization: unit_mass}")
    dl = dl.replace("{type: local, D: 0.01}", "{type: nonlocal, d: 0.01}")
    dl = dl.replace("scheme: implicit_bdf2, dt: 0.05", "scheme: explicit_euler")
    dl += "experiment: {j_list: [1, 2, 4]}\n"
    p = write(tmp_path, dl, "dl.yaml")
    assert main(["difflimit", "--config", str(p), "--out", str(tmp_path / "d1")]) == EXIT_OK
    assert main(["difflimit", "--config", str(p), "--out", str(tmp_path / "d3"), "--threads", "3"]) == EXIT_OK
    assert (tmp_path / "d1" / "convergence.csv").read_bytes() == (tmp_path / "d3" / "convergence.csv").read_bytes()


def test_shipped_configs_validate():
    for path in CONFIGS.glob("*.yaml"):
        build_system(load_config(path))
