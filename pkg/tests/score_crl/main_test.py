import pytest

from score_crl.common import PROGRAM
import score_crl.__main__ as sut


_CONFIG = """\
n = 2
d = 3
n_s = 300
n_graphs = 1
seed = 4
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text(_CONFIG)
    return path


def test_log_path(tmp_path, capsys) -> None:
    sut.run(["--log-path"])
    out = capsys.readouterr().out.strip()
    assert out == str(tmp_path / "state" / PROGRAM / "log")


def test_invalid_arguments() -> None:
    with pytest.raises(ValueError):
        sut.run(["run"])


def test_validate_config(config_path, capsys) -> None:
    sut.run(["validate-config", f"--config={config_path}"])
    first = capsys.readouterr().out.strip()
    assert len(first) == 64
    args = ["--seed-override=5", "validate-config", f"--config={config_path}"]
    sut.run(args)
    assert capsys.readouterr().out.strip() != first


def test_run(config_path, tmp_path, capsys) -> None:
    out = tmp_path / "out"
    sut.run(["--batch", "run", f"--config={config_path}", f"--out={out}"])
    assert (out / "runs.csv").exists()
    assert "mcc\t" in capsys.readouterr().out


def test_sweep_values(config_path, tmp_path) -> None:
    out = tmp_path / "sweep"
    sut.run(
        [
            "sweep",
            f"--config={config_path}",
            f"--out={out}",
            "--axis=n_s",
            "--values=200,250",
        ]
    )
    assert (out / "n_s=200" / "runs.csv").exists()
    assert (out / "n_s=250" / "runs.csv").exists()


def test_extrapolate(config_path, tmp_path, capsys) -> None:
    sut.run(
        ["extrapolate", f"--config={config_path}", f"--out={tmp_path}"]
    )
    [line] = capsys.readouterr().out.splitlines()
    assert line.startswith("0\t")


def test_proptest(capsys) -> None:
    sut.run(["proptest", "--filter=mcc-assignment", "--instances=1"])
    assert "PASS mcc-assignment" in capsys.readouterr().out


def test_main_reports_errors(monkeypatch, tmp_path, capsys) -> None:
    missing = tmp_path / "missing.toml"
    monkeypatch.setattr(
        "sys.argv", [PROGRAM, "validate-config", f"--config={missing}"]
    )
    with pytest.raises(SystemExit) as info:
        sut.main()
    assert info.value.code == 1
    assert capsys.readouterr().err.startswith("Error: ")
