"""Command line: ``xcflow run``, ``xcflow verify`` and ``xcflow sweep``.

A run is described by a JSON config with one section per concern::

    {
      "preset": "hyperbolic_solvable:1,1",
      "backend": "homogeneous",
      "grid":   {"n": 32, "order": 4, "eps": 0.05, "seed": 0, "n_modes": 3,
                 "max_wavenumber": 1, "snapshot": null},
      "flow":   {... FlowConfig fields ...},
      "verify": {... SuiteConfig fields ...},
      "sweep":  {"template": "hyperbolic_solvable", "grid": [[1, 2], [1, 2]]},
      "output": {"dir": "xcflow_out", "snapshot_format": "bin"}
    }

Every key is optional; unknown keys are rejected. Command line flags
override file values. Exit codes: 0 success (a recorded breakdown counts as
success), 1 runtime failure or failing verification, 2 bad configuration.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import io
import json
import math
import os
import sys
from pathlib import Path

from xcflow import __version__

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
               "NUMEXPR_NUM_THREADS")

DEFAULTS = {
    "preset": "hyperbolic_solvable:1,1",
    "backend": "homogeneous",
    "grid": {"n": 32, "order": 4, "eps": 0.05, "seed": 0, "n_modes": 3, "max_wavenumber": 1,
             "snapshot": None},
    # fixed steps unless asked otherwise: --dt then means the step size
    "flow": {"branch": "auto", "t_end": 1.0, "dt_init": 1e-3, "adaptive": False,
             "sample_every": 1, "functionals": True},
    "verify": {},
    "sweep": {"template": None, "grid": None},
    "output": {"dir": "xcflow_out", "snapshot_format": "bin"},
}


class ConfigError(ValueError):
    """Invalid configuration; reported with exit code 2."""


def _field_names(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def _allowed_keys():
    from xcflow.flow import FlowConfig
    from xcflow.verify import SuiteConfig
    allowed = {k: (set(v) if isinstance(v, dict) else None) for k, v in DEFAULTS.items()}
    allowed["flow"] = _field_names(FlowConfig)
    allowed["verify"] = _field_names(SuiteConfig)
    return allowed


def validate_config(cfg: dict) -> dict:
    """Reject unknown keys, naming the first offender as ``section.key``."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    allowed = _allowed_keys()
    for key, value in cfg.items():
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r}")
        sub = allowed[key]
        if sub is None:
            continue
        if value is None:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"config section {key!r} must be an object")
        for k in value:
            if k not in sub:
                raise ConfigError(f"unknown config key '{key}.{k}'")
    if cfg.get("backend", "homogeneous") not in ("homogeneous", "grid"):
        raise ConfigError(f"config key 'backend' must be 'homogeneous' or 'grid', "
                          f"got {cfg['backend']!r}")
    return cfg


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return validate_config(data)


def provenance(cfg: dict) -> dict:
    """The part of a config that determines results (output locations excluded)."""
    return {k: v for k, v in cfg.items() if k != "output"}


def config_hash(cfg: dict) -> str:
    from xcflow.verify import config_hash as _hash
    return _hash(provenance(cfg))


# -- output helpers -------------------------------------------------------------------

def header_lines(cfg: dict) -> list[str]:
    seed = cfg.get("grid", {}).get("seed") if cfg.get("backend") == "grid" else None
    if seed is None:
        seed = cfg.get("verify", {}).get("seed", "none")
    return [f"xcflow {__version__}", f"config_hash={config_hash(cfg)}", f"seed={seed}"]


def _num(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def write_trace(trace, cfg: dict, out_dir: Path, stem: str = "trace"):
    """``<stem>.csv`` (columns = FlowSample fields) and ``<stem>.json``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = trace.rows()
    columns = list(rows[0]) if rows else []
    buf = io.StringIO()
    for line in header_lines(cfg):
        buf.write(f"# {line}\n")
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(float(v)) for k, v in row.items()})
    (out_dir / f"{stem}.csv").write_text(buf.getvalue())

    event = dataclasses.asdict(trace.event) if trace.event is not None else None
    payload = {
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seed": header_lines(cfg)[2].partition("=")[2],
        "config": provenance(cfg),
        "branch": trace.branch,
        "steps": trace.steps,
        "t_final": trace.t_final,
        "event": event,
        "columns": columns,
        "samples": [[_num(float(row[c])) for c in columns] for row in rows],
    }
    (out_dir / f"{stem}.json").write_text(json.dumps(payload, indent=1, sort_keys=True,
                                                     default=_num) + "\n")


# -- subcommands ----------------------------------------------------------------------

def _flow_config(cfg: dict):
    from xcflow.flow import FlowConfig
    try:
        return FlowConfig(**cfg["flow"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"flow: {exc}") from None


def _initial_geometry(cfg: dict):
    from xcflow.grid import GridGeometry, GridSpec, load_snapshot, random_metric
    from xcflow.presets import InvalidParameter, build_preset
    if cfg["backend"] == "homogeneous":
        try:
            return build_preset(cfg["preset"])[1], 0.0
        except InvalidParameter as exc:
            raise ConfigError(f"preset: {exc}") from None
    gc = cfg["grid"]
    if gc.get("snapshot"):
        spec, g, t0 = load_snapshot(gc["snapshot"])
        return GridGeometry(spec, g), t0
    try:
        spec = GridSpec(n=int(gc["n"]), order=int(gc["order"]))
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None
    g = random_metric(spec, eps=float(gc["eps"]), seed=int(gc["seed"]),
                      n_modes=int(gc["n_modes"]), max_wavenumber=int(gc["max_wavenumber"]))
    return GridGeometry(spec, g), 0.0


def cmd_run(cfg: dict) -> int:
    from xcflow.flow import run_flow
    from xcflow.grid import save_snapshot
    fc = _flow_config(cfg)
    geom, t0 = _initial_geometry(cfg)
    trace = run_flow(fc, geom, t0=t0)
    out = Path(cfg["output"]["dir"])
    write_trace(trace, cfg, out)
    if geom.backend == "grid":
        fmt = cfg["output"]["snapshot_format"]
        save_snapshot(out / f"final.{fmt}", trace.final.spec, trace.final.g, trace.t_final,
                      fmt=fmt)
    last = trace.samples[-1]
    msg = f"t={trace.t_final:.10g} steps={trace.steps} volume={last.volume:.12g}"
    if trace.event is not None:
        msg += f" breakdown={trace.event.reason} at t={trace.event.time:.10g}"
    print(msg)
    return 0


def cmd_verify(cfg: dict) -> int:
    from xcflow.verify import SuiteConfig, run_suite
    try:
        sc = SuiteConfig(**cfg["verify"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"verify: {exc}") from None
    report = run_suite(sc, log=lambda m: print(m, file=sys.stderr))
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    text = report.to_text()
    (out / "report.txt").write_text(text + "\n")
    print(text)
    return 0 if report.passed else 1


def cmd_sweep(cfg: dict) -> int:
    from xcflow.presets import InvalidParameter, parse_preset_id, sweep_family
    sw = cfg["sweep"]
    template = sw.get("template") or cfg["preset"]
    grid = sw.get("grid")
    try:
        name, default = parse_preset_id(template)
    except InvalidParameter as exc:
        raise ConfigError(f"sweep.template: {exc}") from None
    if not grid or any(len(axis) == 0 for axis in grid):
        raise ConfigError("sweep.grid is empty: give one non-empty value list per parameter")
    if len(grid) != len(default):
        raise ConfigError(f"sweep.grid needs {len(default)} value list(s) for {name}, "
                          f"got {len(grid)}")
    fc = _flow_config(cfg)
    results = sweep_family(name, grid, fc)
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for line in header_lines(cfg):
        buf.write(f"# {line}\n")
    cols = ["preset_id", "final_pinching", "breakdown_time", "breakdown_reason", "t_final",
            "steps", "error"]
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for i, r in enumerate(results):
        if r.trace is not None:
            write_trace(r.trace, cfg, out, stem=f"run{i:03d}")
        ev = r.trace.event if r.trace is not None else None
        writer.writerow([
            r.preset_id, repr(r.final_pinching),
            "" if r.breakdown_time is None else repr(r.breakdown_time),
            "" if ev is None else ev.reason,
            "" if r.trace is None else repr(r.trace.t_final),
            "" if r.trace is None else r.trace.steps,
            r.error or "",
        ])
        print(f"{r.preset_id}: pinching={r.final_pinching:.6g}"
              + (f" error={r.error}" if r.error else ""))
    (out / "summary.csv").write_text(buf.getvalue())
    return 0


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "sweep": cmd_sweep}


# -- argument parsing -----------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xcflow", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"xcflow {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int,
                        help="cap on data-parallel threads (default: $XCF_THREADS or all cores)")
    flow = argparse.ArgumentParser(add_help=False)
    flow.add_argument("--t-end", type=float)
    flow.add_argument("--dt", type=float, help="step size (initial step with --adaptive)")
    flow.add_argument("--adaptive", action="store_true", default=None,
                      help="adaptive step control")
    flow.add_argument("--branch", choices=("auto", "negative", "positive"))
    flow.add_argument("--sample-every", type=int)
    flow.add_argument("--no-functionals", action="store_true",
                      help="skip integral functionals in the trace")

    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common, flow], help="integrate one flow")
    run.add_argument("--preset")
    run.add_argument("--backend", choices=("homogeneous", "grid"))
    run.add_argument("--grid-n", type=int)
    run.add_argument("--stencil-order", type=int)
    run.add_argument("--eps", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--snapshot", help="initial grid metric from a snapshot file")
    run.add_argument("--snapshot-format", choices=("bin", "csv"))

    ver = sub.add_parser("verify", parents=[common], help="run the identity suite")
    ver.add_argument("--grid-n", type=_int_list, help="resolutions, e.g. 16,32,64")
    ver.add_argument("--only", action="append", help="check id (repeatable)")
    ver.add_argument("--no-grid", action="store_true", help="skip the grid backend")
    ver.add_argument("--seed", type=int)
    ver.add_argument("--samples", type=int)
    ver.add_argument("--mutation-selftest", action="store_true")

    sw = sub.add_parser("sweep", parents=[common, flow], help="flow over a preset family")
    sw.add_argument("--template", help="preset name, e.g. hyperbolic_solvable")
    sw.add_argument("--param", action="append", type=_float_list,
                    help="values of one parameter, comma separated (repeat per parameter)")
    return p


def config_from_args(args) -> dict:
    cfg = merge(DEFAULTS, load_config(args.config))
    o = cfg["output"]
    if args.out:
        o["dir"] = args.out
    f = cfg["flow"]
    if hasattr(args, "t_end"):
        for key, attr in (("t_end", "t_end"), ("dt_init", "dt"), ("branch", "branch"),
                          ("adaptive", "adaptive"), ("sample_every", "sample_every")):
            if getattr(args, attr) is not None:
                f[key] = getattr(args, attr)
        if args.no_functionals:
            f["functionals"] = False
    if args.command == "run":
        g = cfg["grid"]
        for key, attr in (("n", "grid_n"), ("order", "stencil_order"), ("eps", "eps"),
                          ("seed", "seed"), ("snapshot", "snapshot")):
            if getattr(args, attr) is not None:
                g[key] = getattr(args, attr)
        if args.preset:
            cfg["preset"] = args.preset
        if args.backend:
            cfg["backend"] = args.backend
        if args.snapshot:
            cfg["backend"] = "grid"
        if args.snapshot_format:
            o["snapshot_format"] = args.snapshot_format
    elif args.command == "verify":
        v = cfg["verify"]
        if args.grid_n:
            v["grid_n"] = args.grid_n
        if args.only:
            v["only"] = [c.removeprefix("check_") for c in args.only]
        if args.no_grid:
            v["grid"] = False
        if args.seed is not None:
            v["seed"] = args.seed
        if args.samples is not None:
            v["samples"] = args.samples
        if args.mutation_selftest:
            v["mutation_selftest"] = True
    elif args.command == "sweep":
        if args.template:
            cfg["sweep"]["template"] = args.template
        if args.param is not None:
            cfg["sweep"]["grid"] = args.param
    return validate_config(cfg)


def set_threads(n):
    if n is None:
        env = os.environ.get("XCF_THREADS")
        n = int(env) if env else None
    if n is None:
        return
    if n < 1:
        raise ConfigError("threads must be >= 1")
    for var in THREAD_VARS:
        os.environ[var] = str(n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        set_threads(args.threads)
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"xcflow: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"xcflow: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
