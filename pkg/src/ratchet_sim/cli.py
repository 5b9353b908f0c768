"""Command-line front end: config ingestion, subcommands, stable file formats.

Subcommands:
  constants  -- print every derived constant with its defining formula (JSON)
  simulate   -- one trajectory; CSV series plus a stopping-time sidecar JSON
  verify     -- run one named verification suite; CSV of bound checks
  batch      -- Monte Carlo batch; summary JSON plus survival CSV

Configuration is a flat key = value text file ('#' starts a comment). The
environment variable RATCHET_SEED overrides the configured seed. Exit codes:
0 success, 2 configuration error, 3 simulation failure, 4 verification
failure. All numeric output is written with 17 significant digits.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import montecarlo as mc
from .model_core import ModelParams, ZeroMassError, make_state
from .proof_constants import CONSTANT_FORMULAS, derive_constants
from .sde_engine import simulate
from .streams import substream

SCHEMA_LINE = "# ratchet-sim schema v1"
SCHEMA_KEY = "ratchet-sim schema v1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_VERIFY = 4

# Keys accepted in config files, with parsers. Suite-specific knobs are
# prefixed by the suite name to keep the namespace flat but unambiguous.
_FLOAT_KEYS = {
    "n", "alpha", "lambda", "dt", "tail_tol", "max_time", "horizon",
    "m", "delta_prime", "x_start", "t", "t_prime", "window", "window_beta",
    "delta", "euler_dt", "t_cap", "tc_dt", "tc_horizon", "haigh_lambda",
    "haigh_alpha",
}
_INT_KEYS = {
    "seed", "n_runs", "record_every", "threads", "n_samples", "n_mono",
    "n_pairs", "tc_runs", "haigh_n", "haigh_generations", "haigh_replicates",
    "haigh_max_gen", "run_start", "max_clicks",
}
_STR_KEYS = {"init", "suite", "out", "c_values", "dts", "start_counts"}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    """Parsed configuration with model parameters and per-command options."""

    values: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def require(self, key):
        if key not in self.values:
            raise ConfigError(f"missing required config key '{key}'")
        return self.values[key]

    def params(self) -> ModelParams:
        try:
            return ModelParams(
                n=float(self.require("n")),
                alpha=float(self.require("alpha")),
                lam=float(self.require("lambda")),
                dt=float(self.get("dt", 1e-3)),
                tail_tol=float(self.get("tail_tol", 1e-10)),
                max_time=float(self.get("max_time", self.get("horizon", 100.0))),
                seed=int(self.get("seed", 0)),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def parse_config(path: Optional[str], overrides: list[str]) -> RunConfig:
    """Read a flat key=value file plus '-o key=value' overrides."""
    values: dict = {}
    lines: list[str] = []
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        lines.extend(p.read_text().splitlines())
    lines.extend(overrides)
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"malformed config line (expected key = value): {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key in _FLOAT_KEYS:
            try:
                values[key] = float(val)
            except ValueError as exc:
                raise ConfigError(f"key '{key}' expects a number, got {val!r}") from exc
        elif key in _INT_KEYS:
            try:
                values[key] = int(val)
            except ValueError as exc:
                raise ConfigError(f"key '{key}' expects an integer, got {val!r}") from exc
        elif key in _STR_KEYS:
            values[key] = val
        else:
            raise ConfigError(f"unknown config key '{key}'")
    env_seed = os.environ.get("RATCHET_SEED")
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"RATCHET_SEED must be an integer, got {env_seed!r}") from exc
    return RunConfig(values)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_constants(cfg: RunConfig) -> int:
    params = cfg.params()
    consts = derive_constants(
        params, m=cfg.get("m", 1.0), delta_prime_candidate=cfg.get("delta_prime", 1.0)
    )
    report = {
        "_schema": SCHEMA_KEY,
        "params": {
            "n": params.n, "alpha": params.alpha, "lambda": params.lam,
            "m": cfg.get("m", 1.0),
            "delta_prime_candidate": cfg.get("delta_prime", 1.0),
        },
        "constants": {
            name: {"value": value, "formula": CONSTANT_FORMULAS[name]}
            for name, value in consts.as_dict().items()
        },
    }
    text = json.dumps(report, indent=2)
    print(text)
    out = cfg.get("out")
    if out is not None:
        (_out_dir(cfg) / "constants.json").write_text(text + "\n")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    params = cfg.params()
    consts = None
    if params.alpha > 0 and params.lam > 0:
        consts = derive_constants(
            params, m=cfg.get("m", 1.0), delta_prime_candidate=cfg.get("delta_prime", 1.0)
        )
    init = make_state(cfg.get("init", "poisson:2"), params.tail_tol)
    max_clicks = cfg.get("max_clicks")
    try:
        tr = simulate(
            init, params, consts,
            record_every=int(cfg.get("record_every", 1)),
            rng=substream(params.seed, 0),
            max_clicks=int(max_clicks) if max_clicks is not None else None,
        )
    except ZeroMassError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = _out_dir(cfg)
    csv_path = out / "trajectory.csv"
    with csv_path.open("w") as f:
        f.write(SCHEMA_LINE + "\n")
        f.write("t,x0,x1,m1,m2,window,drift_leak\n")
        for i in range(tr.sample_times.size):
            f.write(
                ",".join(
                    [
                        _fmt(float(tr.sample_times[i])),
                        _fmt(float(tr.x0_series[i])),
                        _fmt(float(tr.x1_series[i])),
                        _fmt(float(tr.m1_series[i])),
                        _fmt(float(tr.m2_series[i])),
                        str(int(tr.window_series[i])),
                        _fmt(float(tr.leak_series[i])),
                    ]
                )
                + "\n"
            )
    sidecar = {
        "_schema": SCHEMA_KEY,
        "stopping_times": tr.stops.as_dict(),
        "click_times": tr.click_times,
        "n_steps": tr.n_steps,
        "total_drift_leak": tr.step_diagnostics.drift_leak,
        "total_clipped_mass": tr.step_diagnostics.clipped_mass,
        "max_window": tr.step_diagnostics.window_size,
    }
    (out / "trajectory_meta.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    print(f"wrote {csv_path}")
    return EXIT_OK


def _write_checks_csv(path: Path, checks: list[mc.BoundCheck]) -> None:
    with path.open("w") as f:
        f.write(SCHEMA_LINE + "\n")
        f.write("check,empirical,se,bound,pass\n")
        for c in checks:
            f.write(
                f"{c.name},{_fmt(c.empirical)},{_fmt(c.se)},{_fmt(c.bound)},"
                f"{str(c.passed).lower()}\n"
            )


def _write_haigh_click_csv(path: Path, options: dict) -> None:
    """Per-replicate first-click generations for the discrete chain."""
    from .haigh import DiscretePopulation, click_times_batch

    counts = options.get("start_counts", [1, 2])
    times = click_times_batch(
        DiscretePopulation(np.array(counts, dtype=np.int64)),
        options.get("alpha", 0.3),
        options.get("lam", 1.0),
        int(options.get("max_gen", 60)),
        int(options.get("n_replicates", 3000)),
        int(options.get("seed", 20240801)) + 1,
    )
    with path.open("w") as f:
        f.write(SCHEMA_LINE + "\n")
        f.write("replicate,click_generation\n")
        for i, t in enumerate(times):
            f.write(f"{i},{'' if t is None else t}\n")


def cmd_verify(cfg: RunConfig) -> int:
    suite_name = cfg.get("suite")
    if suite_name not in mc.VERIFY_SUITES:
        known = ", ".join(sorted(mc.VERIFY_SUITES))
        print(f"unknown suite {suite_name!r}; known suites: {known}", file=sys.stderr)
        return EXIT_CONFIG
    options = dict(cfg.values)
    options["lam"] = options.pop("lambda", None) or 1.0
    if "c_values" in options:
        options["c_values"] = [float(x) for x in str(options["c_values"]).split(",")]
    if "dts" in options:
        options["dts"] = [float(x) for x in str(options["dts"]).split(",")]
    if "start_counts" in options:
        options["start_counts"] = [int(x) for x in str(options["start_counts"]).split(",")]
    # Map flat haigh_* keys onto the suite's option names.
    for src, dst in (
        ("haigh_n", "n_pop"), ("haigh_lambda", "lam"), ("haigh_alpha", "alpha"),
        ("haigh_generations", "n_generations"), ("haigh_replicates", "n_replicates"),
        ("haigh_max_gen", "max_gen"),
    ):
        if src in options and suite_name == "haigh":
            options[dst] = options.pop(src)
    try:
        checks = mc.VERIFY_SUITES[suite_name](options)
    except ZeroMassError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = _out_dir(cfg)
    _write_checks_csv(out / f"verify_{suite_name}.csv", checks)
    if suite_name == "haigh":
        _write_haigh_click_csv(out / "haigh_click_times.csv", options)
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status} {c.name}: empirical={_fmt(c.empirical)} bound={_fmt(c.bound)}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


def cmd_batch(cfg: RunConfig) -> int:
    params = cfg.params()
    spec = mc.BatchSpec(
        n_runs=int(cfg.get("n_runs", 100)),
        params=params,
        init=cfg.get("init", "poisson:2"),
        horizon=float(cfg.get("horizon", params.max_time)),
        record_every=int(cfg.get("record_every", 1)),
        run_start=int(cfg.get("run_start", 0)),
    )
    try:
        summary = mc.run_batch(spec, threads=int(cfg.get("threads", 1)))
    except ZeroMassError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = _out_dir(cfg)
    (out / "batch_summary.json").write_text(
        json.dumps(summary.to_dict(), indent=2, default=float) + "\n"
    )
    curve = summary.survival_curve()
    with (out / "survival.csv").open("w") as f:
        f.write(SCHEMA_LINE + "\n")
        f.write("t,surviving_fraction\n")
        for t, s in zip(curve.times, curve.fraction):
            f.write(f"{_fmt(float(t))},{_fmt(float(s))}\n")
    frac, se = summary.click_fraction()
    print(f"click fraction {_fmt(frac)} +- {_fmt(se)} over {summary.n_runs} runs")
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ratchet-sim",
        description="Simulation and verification lab for a ratchet-type "
        "mutation-accumulation diffusion.",
    )
    parser.add_argument("command", choices=["constants", "simulate", "verify", "batch"])
    parser.add_argument("-c", "--config", help="flat key = value config file")
    parser.add_argument(
        "-o",
        "--option",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override or supply a single config entry (repeatable)",
    )
    parser.add_argument(
        "--threads", type=int, default=None, help="cap batch parallelism"
    )
    args = parser.parse_args(argv)
    try:
        overrides = list(args.option)
        if args.threads is not None:
            overrides.append(f"threads={args.threads}")
        cfg = parse_config(args.config, overrides)
        handler = {
            "constants": cmd_constants,
            "simulate": cmd_simulate,
            "verify": cmd_verify,
            "batch": cmd_batch,
        }[args.command]
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
