"""Command-line driver: ``secureabm <command> [--config run.json] [flags]``.

Commands: genpop, simulate, sweep-compliance, calibrate, analyze. A run
config is JSON::

    {
      "seed": 0,
      "out": "runs/demo",
      "population": {"generate": {"n_agents": 1000}}   or   {"load": "path/to/dir"},
      "model": {"beta": 0.5, "gamma": 0.1, "i0": 0.01, "dt": 1, "n_t": 60, "alpha": 0},
      "mpc": {"modulus": 2305843009213693951, "scale": 65536, "backend": "sequential"},
      "experiment": {"<command>": {...}}
    }

Every run writes ``manifest.json`` (resolved config, its hash, seed and
versions) next to its outputs.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import hashlib
import io
import json
import platform
import sys
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np

from . import kernels
from .analysis import (DEFAULT_AGE_BINS, IndicatorError, IndicatorSpec, secure_histogram,
                       secure_sensitivity, secure_summary_statistic)
from .calibration import (CalibrationConfig, CalibrationError, Prior, secure_calibrate,
                          secure_simulator)
from .engine import run_secure_simulation, run_secure_simulations
from .mpc import DEFAULT_SCALE, MERSENNE_61, EncodingOverflowError, FixedPointCodec, Modulus
from .plotting import emit_svg_plot
from .population import (ETHNICITY_CATEGORIES, PopulationError, PopulationSpec, generate_population,
                         load_population, save_population)
from .sir import ModelParams, SIRModel
from .transport import SERVER, TransportError, make_transport

COMMANDS = ("genpop", "simulate", "sweep-compliance", "calibrate", "analyze")

EXPERIMENT_DEFAULTS: dict[str, dict] = {
    "genpop": {},
    "simulate": {},
    "sweep-compliance": {"alphas": [0.0, 0.25, 0.5, 0.75], "replicates": 20},
    "calibrate": {"y": None, "synthetic": {"beta": 0.5, "seed": 2024}, "loss": "mmd", "w": 5e-3,
                  "n_mc": 10, "epochs": 200, "lr": 1e-2, "prior": {"loc": [0.7], "scale": [0.5]}},
    "analyze": {"indicators": [], "histograms": ["age", "ethnicity", "zip_sector"],
                "sensitivity": [[{"field": "status", "op": "eq", "value": "susceptible"}]]},
}


class ConfigError(ValueError):
    """Invalid run config; the message starts with the offending field path."""


def _default_config() -> dict:
    return {
        "seed": 0,
        "out": "runs/out",
        "population": {"generate": {"n_agents": 1000}},
        "model": dataclasses.asdict(ModelParams()),
        "mpc": {"modulus": MERSENNE_61, "scale": DEFAULT_SCALE, "backend": "sequential"},
    }


def resolve_config(command: str, raw: dict | None, overrides: dict) -> dict:
    cfg = _default_config()
    raw = copy.deepcopy(raw or {})
    unknown = set(raw) - {"seed", "out", "population", "model", "mpc", "experiment"}
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown top-level field")
    for key in ("seed", "out"):
        if key in raw:
            cfg[key] = raw[key]
    if "population" in raw:
        cfg["population"] = raw["population"]
    cfg["model"].update(raw.get("model", {}))
    cfg["mpc"].update(raw.get("mpc", {}))
    exp = raw.get("experiment", {command: {}})
    if not isinstance(exp, dict) or len(exp) != 1:
        raise ConfigError("experiment: exactly one experiment block required")
    (name, block), = exp.items()
    if name != command:
        raise ConfigError(f"experiment.{name}: config is for '{name}' but command is '{command}'")
    merged = copy.deepcopy(EXPERIMENT_DEFAULTS[command])
    merged.update(block or {})
    cfg["experiment"] = {command: merged}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("seed", "out"):
            cfg[key] = value
        else:
            cfg["mpc"][key] = value
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed: must be a non-negative integer")
    pop = cfg["population"]
    if not isinstance(pop, dict) or len(pop) != 1 or next(iter(pop)) not in ("generate", "load"):
        raise ConfigError("population: exactly one of 'generate' or 'load' required")
    if "load" in pop:
        p = Path(pop["load"])
        for f in ("agents.jsonl", "edges.csv"):
            if not (p / f).exists():
                raise ConfigError(f"population.load: {p / f} does not exist")
    else:
        try:
            PopulationSpec.from_dict(pop["generate"]).validate()
        except (PopulationError, TypeError) as exc:
            raise ConfigError(f"population.generate: {exc}") from None
    try:
        ModelParams.from_dict(cfg["model"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"model: {exc}") from None
    mpc = cfg["mpc"]
    try:
        Modulus(int(mpc["modulus"]))
    except ValueError as exc:
        raise ConfigError(f"mpc.modulus: {exc}") from None
    if not isinstance(mpc["scale"], int) or mpc["scale"] < 1:
        raise ConfigError("mpc.scale: must be a positive integer")
    if mpc["backend"] not in ("sequential", "concurrent"):
        raise ConfigError("mpc.backend: must be 'sequential' or 'concurrent'")
    (name, block), = cfg["experiment"].items()
    if name == "sweep-compliance":
        alphas = block["alphas"]
        if not alphas or any(not 0 <= a <= 1 for a in alphas):
            raise ConfigError("experiment.sweep-compliance.alphas: values must lie in [0, 1]")
    if name == "calibrate":
        if block["y"] is not None and not Path(block["y"]).exists():
            raise ConfigError(f"experiment.calibrate.y: {block['y']} does not exist")
        if block["loss"] not in ("l2", "mmd"):
            raise ConfigError("experiment.calibrate.loss: must be 'l2' or 'mmd'")
    if name == "analyze":
        for k, ind in enumerate(block["indicators"]):
            try:
                IndicatorSpec.parse(ind)
            except IndicatorError as exc:
                raise ConfigError(f"experiment.analyze.indicators[{k}]: {exc}") from None


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _codec(cfg) -> FixedPointCodec:
    return FixedPointCodec(int(cfg["mpc"]["scale"]), Modulus(int(cfg["mpc"]["modulus"])))


def _population(cfg):
    pop = cfg["population"]
    if "load" in pop:
        return load_population(pop["load"])
    return generate_population(PopulationSpec.from_dict(pop["generate"]), seed=cfg["seed"])


def _transport(cfg, agents):
    return make_transport(cfg["mpc"]["backend"], [SERVER, *(a.id for a in agents)], record=False)


def _close(transport):
    if hasattr(transport, "close"):
        transport.close()


def _versions() -> dict:
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    return {"package": version, "python": platform.python_version(), "numpy": np.__version__,
            "kernel_backend": kernels.BACKEND}


def write_manifest(out: Path, command: str, cfg: dict) -> None:
    text = json.dumps(cfg, sort_keys=True)
    manifest = {
        "command": command,
        "config": cfg,
        "config_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "seed": cfg["seed"],
        "versions": _versions(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _read_series(path: str) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".json":
        data = json.loads(p.read_text())
        return np.asarray(data["new_infections"] if isinstance(data, dict) else data, dtype=float)
    rows = list(csv.DictReader(io.StringIO(p.read_text())))
    return np.array([float(r["new_infections"]) for r in rows])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_genpop(cfg: dict, out: Path) -> None:
    agents, graph = _population(cfg)
    save_population(agents, graph, out / "population")


def cmd_simulate(cfg: dict, out: Path) -> None:
    agents, _ = _population(cfg)
    params = ModelParams.from_dict(cfg["model"])
    transport = _transport(cfg, agents)
    try:
        res = run_secure_simulation(SERVER, agents, SIRModel(), params, params.n_t, cfg["seed"],
                                    transport, _codec(cfg))
    finally:
        _close(transport)
    (out / "simulation.csv").write_text(res.to_csv())
    (out / "simulation.json").write_text(res.to_json() + "\n")
    n = len(agents)
    emit_svg_plot({"new infections / N": res.x / n, "prevalence / N": res.prevalence / n},
                  out / "simulation.svg", title="secure simulation")


def cmd_sweep(cfg: dict, out: Path) -> None:
    block = cfg["experiment"]["sweep-compliance"]
    agents, _ = _population(cfg)
    base = ModelParams.from_dict(cfg["model"])
    reps = int(block["replicates"])
    seeds = [cfg["seed"] * 1000 + r for r in range(reps)]
    transport = _transport(cfg, agents)
    curves, rates = {}, {}
    n = len(agents)
    try:
        for alpha in block["alphas"]:
            params = dataclasses.replace(base, alpha=float(alpha))
            outs = run_secure_simulations(agents, SIRModel(), [params] * reps, params.n_t, seeds,
                                          transport, _codec(cfg))
            curves[alpha] = np.mean([o.x for o in outs], axis=0) / n
            rates[alpha] = [1.0 - float(np.mean(o.final_states[:, 0] == 0)) for o in outs]
    finally:
        _close(transport)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", *(f"alpha_{a}" for a in block["alphas"])])
    for t in range(base.n_t):
        w.writerow([t, *(repr(float(curves[a][t])) for a in block["alphas"])])
    (out / "sweep.csv").write_text(buf.getvalue())
    summary = {str(a): {"mean_attack_rate": float(np.mean(r)), "attack_rates": r} for a, r in rates.items()}
    (out / "sweep.json").write_text(json.dumps(summary, indent=1) + "\n")
    emit_svg_plot({f"alpha = {a}": curves[a] for a in block["alphas"]}, out / "sweep.svg",
                  title="daily new infections by compliance")


def cmd_calibrate(cfg: dict, out: Path) -> None:
    block = cfg["experiment"]["calibrate"]
    agents, _ = _population(cfg)
    base = ModelParams.from_dict(cfg["model"])
    model = SIRModel(with_prevalence=False)
    transport = _transport(cfg, agents)
    codec = _codec(cfg)
    try:
        if block["y"] is not None:
            y = _read_series(block["y"])
        else:
            syn = block["synthetic"]
            y = run_secure_simulation(SERVER, agents, model, dataclasses.replace(base, beta=float(syn["beta"])),
                                      base.n_t, int(syn["seed"]), transport, codec, write_back=False).x
        if len(y) != base.n_t:
            raise ConfigError(f"experiment.calibrate.y: series length {len(y)} != model.n_t {base.n_t}")
        prior = Prior(tuple(block["prior"]["loc"]), tuple(block["prior"]["scale"]))
        config = CalibrationConfig(y=y, n_agents=len(agents), loss=block["loss"], w=float(block["w"]),
                                   n_mc=int(block["n_mc"]), epochs=int(block["epochs"]), lr=float(block["lr"]))
        sim = secure_simulator(agents, model, base, base.n_t, transport=transport, codec=codec)
        result = secure_calibrate(sim, prior, config, cfg["seed"])
    finally:
        _close(transport)
    result.write(out)
    (out / "observed.json").write_text(json.dumps({"new_infections": [int(v) for v in y]}) + "\n")
    grid = np.linspace(0.0, 1.5, 151)
    emit_svg_plot({"posterior": result.phi.density(grid[:, None])[:, 0], "prior": prior.density(grid[:, None])[:, 0]},
                  out / "posterior.svg", title="posterior over beta", x_label="beta", y_label="density",
                  x_values=grid)


def cmd_analyze(cfg: dict, out: Path) -> None:
    block = cfg["experiment"]["analyze"]
    agents, _ = _population(cfg)
    params = ModelParams.from_dict(cfg["model"])
    codec = _codec(cfg)
    transport = _transport(cfg, agents)
    try:
        run_secure_simulation(SERVER, agents, SIRModel(), params, params.n_t, cfg["seed"], transport, codec)
        results: dict[str, Any] = {"indicators": [], "sensitivity": []}
        for ind in block["indicators"]:
            spec = IndicatorSpec.parse(ind)
            results["indicators"].append({"indicator": json.loads(spec.to_json()),
                                          "count": secure_summary_statistic(SERVER, agents, spec, transport, codec)})
        bins = {"age": DEFAULT_AGE_BINS, "ethnicity": list(ETHNICITY_CATEGORIES),
                "zip_sector": sorted({a.attributes["zip_sector"] for a in agents})}
        for dim in block["histograms"]:
            hist = secure_histogram(SERVER, agents, dim, bins[dim], transport=transport, codec=codec)
            (out / f"histogram_{dim}.csv").write_text(hist.to_csv())
            (out / f"histogram_{dim}.json").write_text(hist.to_json() + "\n")
            if dim == "zip_sector":
                (out / "zip_sectors.csv").write_text(hist.sector_table())
        for ind in block["sensitivity"]:
            spec = IndicatorSpec.parse(ind)
            grad = secure_sensitivity(SERVER, agents, spec, transport, codec)
            results["sensitivity"].append({"indicator": json.loads(spec.to_json()),
                                           "gradient": {"beta": float(grad[0])}})
    finally:
        _close(transport)
    (out / "analysis.json").write_text(json.dumps(results, indent=1) + "\n")


HANDLERS = {"genpop": cmd_genpop, "simulate": cmd_simulate, "sweep-compliance": cmd_sweep,
            "calibrate": cmd_calibrate, "analyze": cmd_analyze}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="secureabm", description="Secure agent-based epidemic simulation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=str)
        p.add_argument("--backend", choices=("sequential", "concurrent"))
        p.add_argument("--modulus", type=int)
        p.add_argument("--scale", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = json.loads(args.config.read_text()) if args.config else None
        cfg = resolve_config(args.command, raw, {"seed": args.seed, "out": args.out, "backend": args.backend,
                                                 "modulus": args.modulus, "scale": args.scale})
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (TransportError, EncodingOverflowError, CalibrationError) as exc:
        print(f"protocol aborted: {exc}", file=sys.stderr)
        return 3
    except PopulationError as exc:
        print(f"population error: {exc}", file=sys.stderr)
        return 2
    write_manifest(out, args.command, cfg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
