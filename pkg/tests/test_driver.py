import numpy as np
import pytest

from cgflux.driver import (EXIT_CONFIG, EXIT_GATE, EXIT_OK, RunConfig,
                           build_parser, load_config, main)


def test_parser_requires_command(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    capsys.readouterr()


def test_config_file_roundtrip(tmp_path):
    cfg_path = tmp_path / "run.ini"
    cfg_path.write_text("example = ex1-3\nn = 16\norder = 2\n"
                        "scheme = limited\ncfl = true\n")
    cfg = load_config(str(cfg_path))
    assert cfg.example == "ex1-3"
    assert cfg.n == 16
    assert cfg.order == 2
    assert cfg.scheme == "limited"
    assert cfg.cfl is True


def test_config_unknown_key_exit_code(tmp_path, capsys):
    cfg_path = tmp_path / "bad.ini"
    cfg_path.write_text("nonsense = 1\n")
    rc = main(["--config", str(cfg_path), "darcy"])
    assert rc == EXIT_CONFIG
    capsys.readouterr()


def test_invalid_scheme_rejected_by_parser(capsys):
    # argparse enforces the scheme choices before the handler runs
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--example", "ex1-1", "--n", "4",
              "--scheme", "sonic"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_invalid_example_exit_code(capsys):
    rc = main(["darcy", "--example", "ex9-9"])
    assert rc == EXIT_CONFIG
    capsys.readouterr()


def test_validate_limiter_variant():
    cfg = RunConfig(limiter_variant="superbee")
    from cgflux.errors import ConfigError
    with pytest.raises(ConfigError):
        cfg.validate()


def test_cmd_darcy_writes_lce_csv(tmp_path, capsys):
    rc = main(["darcy", "--example", "ex1-1", "--n", "8", "--order", "1",
               "--out", str(tmp_path)])
    assert rc == EXIT_OK
    out = tmp_path / "lce_ex1-1_n8_k1.csv"
    assert out.exists()
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "dof,x,y,class,lce_raw,lce_post"
    assert len(rows) == 1 + 81
    post = np.array([float(r.split(",")[5]) for r in rows[1:]])
    classes = [r.split(",")[3] for r in rows[1:]]
    interior = np.array([c == "interior" for c in classes])
    assert np.abs(post[interior]).max() < 1e-12
    capsys.readouterr()


def test_cmd_simulate_writes_run_csv(tmp_path, capsys):
    rc = main(["simulate", "--example", "ex1-1", "--n", "8",
               "--nct", "2", "--nft", "5", "--tfinal", "0.01",
               "--out", str(tmp_path)])
    assert rc == EXIT_OK
    out = tmp_path / "run_ex1-1_n8_k1_upwind.csv"
    assert out.exists()
    rows = out.read_text().strip().splitlines()
    assert rows[0].startswith("step,time,mass,s_min,s_max")
    assert len(rows) == 3
    capsys.readouterr()


def test_csv_reproducibility(tmp_path, capsys):
    args = ["simulate", "--example", "ex1-3", "--n", "8", "--nct", "2",
            "--nft", "5", "--tfinal", "0.05"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == EXIT_OK
    assert main(args + ["--out", str(b)]) == EXIT_OK
    fa = (a / "run_ex1-3_n8_k1_upwind.csv").read_bytes()
    fb = (b / "run_ex1-3_n8_k1_upwind.csv").read_bytes()
    assert fa == fb
    capsys.readouterr()


def test_cmd_study_analytic_reference(tmp_path, capsys):
    rc = main(["study", "--example", "ex1-3", "--n", "8", "--levels", "4,8",
               "--nct", "1", "--nft", "50", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    out = tmp_path / "study_ex1-3_k1_upwind.csv"
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "n,n_dof,h,l2_error"
    assert rows[-1].startswith("order,")
    capsys.readouterr()


def test_cmd_study_rejects_single_level(capsys):
    rc = main(["study", "--example", "ex1-3", "--levels", "8"])
    assert rc == EXIT_CONFIG
    capsys.readouterr()


def test_gate_failure_exit_code(tmp_path, capsys, monkeypatch):
    """An unreachable conservation gate surfaces as the gate exit code."""
    import cgflux.coupling as coupling
    from cgflux.errors import ConservationGateError

    def failing_pipeline(*args, **kwargs):
        raise ConservationGateError("forced gate failure", max_lce=1.0)

    monkeypatch.setattr(coupling, "solve_and_postprocess", failing_pipeline)
    rc = main(["simulate", "--example", "ex1-1", "--n", "4", "--nct", "1",
               "--nft", "2", "--tfinal", "0.001", "--out", str(tmp_path)])
    assert rc == EXIT_GATE
    capsys.readouterr()


def test_vtk_output(tmp_path, capsys):
    rc = main(["darcy", "--example", "ex1-1", "--n", "4", "--order", "1",
               "--out", str(tmp_path), "--vtk"])
    assert rc == EXIT_OK
    vtk = tmp_path / "darcy_ex1-1_n4_k1.vtk"
    assert vtk.exists()
    assert vtk.read_text().startswith("# vtk DataFile")
    capsys.readouterr()
