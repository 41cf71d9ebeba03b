"""CLI behaviour: config parsing, exit codes, determinism of outputs."""
import pytest

from goafem.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    ConfigError,
    figure_configs,
    main,
    parse_config,
)
from goafem.driver import read_records


MINIMAL = """\
problem = manufactured
p = 1
theta = 0.5
strategy = doerfler-smaller
maxCumulativeDofs = 20000
"""


def test_missing_config_file_exits_2(tmp_path, capsys):
    code = main(["run", str(tmp_path / "nope.cfg")])
    assert code == EXIT_IO
    assert "nope.cfg" in capsys.readouterr().err


def test_minimal_config_produces_csv(tmp_path):
    cfg = tmp_path / "mini.cfg"
    cfg.write_text(MINIMAL)
    out = tmp_path / "out"
    assert main(["--out", str(out), "run", str(cfg)]) == EXIT_OK
    records = read_records(out / "mini.csv")
    assert len(records) >= 5


def test_unknown_strategy_exits_3(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("problem = manufactured\nstrategy = nope\n")
    assert main(["run", str(cfg)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "doerfler-smaller" in err and "strategyB:mean" in err


def test_unknown_problem_exits_3(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("problem = nonexistent\n")
    assert main(["run", str(cfg)]) == EXIT_CONFIG
    assert "lshape-quadratic" in capsys.readouterr().err


def test_parse_errors_carry_line_numbers(tmp_path):
    cfg = tmp_path / "broken.cfg"
    cfg.write_text("problem = manufactured\nthis line has no equals\n")
    with pytest.raises(ConfigError, match="broken.cfg:2"):
        parse_config(cfg)
    cfg.write_text("problem = manufactured\nbogusKey = 3\n")
    with pytest.raises(ConfigError, match="broken.cfg:2"):
        parse_config(cfg)
    cfg.write_text("problem = manufactured\np = one\n")
    with pytest.raises(ConfigError, match="cannot parse 'one'"):
        parse_config(cfg)


def test_sections_inherit_defaults(tmp_path):
    cfg = tmp_path / "multi.cfg"
    cfg.write_text(
        "theta = 0.25\nproblem = manufactured\n"
        "[a]\np = 1\n"
        "[b]\np = 2\ntheta = 0.75\n"
    )
    configs = parse_config(cfg)
    assert [c.name for c in configs] == ["a", "b"]
    assert configs[0].theta == 0.25 and configs[0].degree == 1
    assert configs[1].theta == 0.75 and configs[1].degree == 2


def test_duplicate_run_names_rejected(tmp_path):
    cfg = tmp_path / "dup.cfg"
    cfg.write_text("problem = manufactured\n[x]\n[x]\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(cfg)


def test_figure_configs_counts():
    fig2 = figure_configs("fig2", 0.5)
    assert len(fig2) == 12
    assert len({c.name for c in fig2}) == 12
    assert all(c.problem == "ms-linear" for c in fig2)
    fig3 = figure_configs("fig3", 0.5)
    assert len(fig3) == 6
    assert {c.combination for c in fig3} == {"symmetric", "product_form"}
    with pytest.raises(ConfigError):
        figure_configs("fig9", 0.5)


def test_repeated_runs_are_byte_identical(tmp_path):
    cfg = tmp_path / "mini.cfg"
    cfg.write_text(MINIMAL)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert main(["--out", str(out1), "run", str(cfg)]) == EXIT_OK
    assert main(["--out", str(out2), "run", str(cfg)]) == EXIT_OK
    assert (out1 / "mini.csv").read_bytes() == (out2 / "mini.csv").read_bytes()


def test_parallel_jobs_match_sequential(tmp_path):
    cfg = tmp_path / "multi.cfg"
    cfg.write_text(
        "problem = manufactured\nmaxCumulativeDofs = 3000\n"
        "[r1]\np = 1\n[r2]\np = 2\n"
    )
    seq, par = tmp_path / "seq", tmp_path / "par"
    assert main(["--out", str(seq), "run", str(cfg)]) == EXIT_OK
    assert main(["--out", str(par), "--jobs", "2", "run", str(cfg)]) == EXIT_OK
    for name in ("r1.csv", "r2.csv"):
        assert (seq / name).read_bytes() == (par / name).read_bytes()


def test_theta_override(tmp_path):
    cfg = tmp_path / "mini.cfg"
    cfg.write_text("problem = manufactured\nmaxLevels = 2\n")
    configs = parse_config(cfg)
    assert configs[0].theta == 0.5
    out = tmp_path / "o"
    assert main(["--out", str(out), "--theta", "0.9", "run", str(cfg)]) == EXIT_OK


def test_verify_command_exit_codes(capsys):
    assert main(["verify", "marking"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "[PASS]" in out
