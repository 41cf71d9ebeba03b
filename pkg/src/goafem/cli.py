"""Command-line front end: run experiments, batch figures, verification suites.

Exit codes: 0 success, 2 I/O error, 3 configuration error, 4 numerical
failure (solver breakdown, non-converged iteration, failed invariant).
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from goafem.driver import DriverError, RunConfig, fit_rate, run_goafem
from goafem.marking import MarkingError, strategy_keys
from goafem.problems import PROBLEM_NAMES, ProblemError
from goafem.solver import SolverError

EXIT_OK = 0
EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4

FIG2_STRATEGIES = (
    "maximum-union",
    "equidist-union",
    "strategyB:max-sin-exp",
    "strategyB:pnorm10",
)
FIG3_COMBINATIONS = ("symmetric", "product_form")
FIGURE_BUDGET = 150_000


class ConfigError(ValueError):
    """Configuration file or option error."""


_CONFIG_KEYS = {
    "problem": ("problem", str),
    "p": ("degree", int),
    "degree": ("degree", int),
    "theta": ("theta", float),
    "strategy": ("strategy", str),
    "combination": ("combination", str),
    "maxLevels": ("max_levels", int),
    "maxCumulativeDofs": ("max_cumulative_dofs", int),
    "estimatorFloor": ("estimator_floor", float),
    "relTol": ("rel_tol", float),
}


def parse_config(path) -> list[RunConfig]:
    """Parse the line-oriented `key = value` run configuration.

    Keys before the first `[section]` are defaults shared by all runs; each
    section defines one run named after it.  A file without sections defines
    a single run named after the file.
    """
    path = Path(path)
    defaults: dict = {}
    sections: list[tuple[str, dict]] = []
    current = defaults
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"{path}:{lineno}: empty section name")
            current = {}
            sections.append((name, current))
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(
                f"{path}:{lineno}: unknown key {key!r}; valid keys: "
                + ", ".join(sorted(_CONFIG_KEYS))
            )
        field, cast = _CONFIG_KEYS[key]
        try:
            current[field] = cast(value)
        except ValueError:
            raise ConfigError(
                f"{path}:{lineno}: cannot parse {value!r} as {cast.__name__}"
            ) from None
    if not sections:
        sections = [(path.stem, {})]
    configs = []
    for name, overrides in sections:
        merged = {**defaults, **overrides}
        if "problem" not in merged:
            raise ConfigError(f"{path}: run {name!r} does not name a problem")
        try:
            configs.append(RunConfig(name=name, **merged))
        except DriverError as exc:
            raise ConfigError(f"{path}: run {name!r}: {exc}") from exc
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigError(f"{path}: duplicate run names")
    return configs


def _validate(config: RunConfig) -> None:
    if config.problem not in PROBLEM_NAMES:
        raise ConfigError(
            f"unknown problem {config.problem!r}; valid names: "
            + ", ".join(PROBLEM_NAMES)
        )
    if config.strategy not in strategy_keys():
        raise ConfigError(
            f"unknown strategy key {config.strategy!r}; valid keys: "
            + ", ".join(strategy_keys())
        )


def _execute_run(config: RunConfig, out_dir: str) -> tuple[str, int, float, float]:
    """Worker for one run; returns (name, levels, final product, fitted rate)."""
    csv_path = Path(out_dir) / f"{config.name}.csv"
    records = run_goafem(config, csv_path=csv_path)
    try:
        rate = fit_rate(records, 0.5)
    except DriverError:
        rate = float("nan")
    return config.name, len(records), records[-1].estimator, rate


def _run_all(configs: list[RunConfig], out_dir: Path, jobs: int) -> list[tuple]:
    out_dir.mkdir(parents=True, exist_ok=True)
    if jobs <= 1:
        return [_execute_run(cfg, str(out_dir)) for cfg in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_execute_run, cfg, str(out_dir)) for cfg in configs]
        return [f.result() for f in futures]


def _print_summary(rows: list[tuple]) -> None:
    print(f"{'run':32s} {'levels':>6s} {'final eta*zeta':>14s} {'alpha':>7s}")
    for name, levels, product, rate in rows:
        print(f"{name:32s} {levels:6d} {product:14.4e} {rate:7.3f}")


def figure_configs(which: str, theta: float,
                   budget: int = FIGURE_BUDGET) -> list[RunConfig]:
    configs = []
    if which == "fig2":
        for p in (1, 2, 3):
            for strategy in FIG2_STRATEGIES:
                tag = strategy.replace("strategyB:", "strategyB-")
                configs.append(
                    RunConfig(
                        problem="ms-linear", degree=p, theta=theta, strategy=strategy,
                        max_cumulative_dofs=budget, name=f"ms-p{p}-{tag}",
                    )
                )
    elif which == "fig3":
        for p in (1, 2, 3):
            for combination in FIG3_COMBINATIONS:
                configs.append(
                    RunConfig(
                        problem="lshape-quadratic", degree=p, theta=theta,
                        strategy="strategyB:mean", combination=combination,
                        max_cumulative_dofs=budget, name=f"lshape-p{p}-{combination}",
                    )
                )
    else:
        raise ConfigError(f"unknown figure {which!r}; choose fig2 or fig3")
    return configs


def cmd_run(args) -> int:
    path = Path(args.config)
    if not path.is_file():
        print(f"error: config file not found: {path}", file=sys.stderr)
        return EXIT_IO
    try:
        configs = parse_config(path)
        if args.theta is not None:
            configs = [replace(c, theta=args.theta) for c in configs]
        for config in configs:
            _validate(config)
    except (ConfigError, DriverError, MarkingError, ProblemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows = _run_all(configs, Path(args.out), args.jobs)
    except (SolverError, DriverError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _print_summary(rows)
    return EXIT_OK


def cmd_figures(args) -> int:
    try:
        configs = figure_configs(args.which, args.theta if args.theta is not None else 0.5,
                                 args.budget)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows = _run_all(configs, Path(args.out), args.jobs)
    except (SolverError, DriverError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _print_summary(rows)
    return EXIT_OK


def cmd_verify(args) -> int:
    from goafem.verification import SUITES

    if args.suite not in SUITES:
        print(
            f"error: unknown suite {args.suite!r}; valid suites: "
            + ", ".join(SUITES), file=sys.stderr,
        )
        return EXIT_CONFIG
    try:
        results = SUITES[args.suite]()
    except (SolverError, DriverError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for result in results:
        print(result.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="goafem",
        description="Goal-oriented adaptive FEM experiments and verification",
    )
    parser.add_argument("--jobs", type=int, default=1, help="parallel runs")
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--theta", type=float, default=None, help="marking parameter override")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute the runs of a config file")
    p_run.add_argument("config")
    p_run.set_defaults(fn=cmd_run)

    p_fig = sub.add_parser("figures", help="batch-produce figure data")
    p_fig.add_argument("which", choices=["fig2", "fig3"])
    p_fig.add_argument("--budget", type=int, default=FIGURE_BUDGET,
                       help="maximum cumulative DOFs per run")
    p_fig.set_defaults(fn=cmd_figures)

    p_ver = sub.add_parser("verify", help="run a property/axiom suite")
    p_ver.add_argument("suite", choices=["mesh", "axioms", "marking", "goal"])
    p_ver.set_defaults(fn=cmd_verify)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
