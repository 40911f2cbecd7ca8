"""Command-line front end: gen-data, precompute-svd, reconstruct, report.

All commands read one JSON run configuration (schema-validated, unknown
keys rejected) and write artifacts under the configured output
directory.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure, 4 cache mismatch.

Wall-clock timings go to a separate ``timings.json`` so that every other
artifact is byte-identical across reruns with the same config and seed;
the manifest records input/output hashes for the deterministic files.
"""

from __future__ import annotations

import functools
import json
import os
import sys
import time
from pathlib import Path

import click

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CACHE = 4

_SHAPE_SCHEMA = {
    "type": "object",
    "properties": {
        "shape": {"enum": ["disk", "rect", "polygon"]},
        "center": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "bounds": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
        "vertices": {
            "type": "array",
            "minItems": 3,
            "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        },
        "value_a": {"type": ["number", "null"]},
        "value_s": {"type": ["number", "null"]},
    },
    "required": ["shape"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "mesh": {
            "type": "object",
            "properties": {
                "nx": {"type": "integer", "minimum": 2},
                "ny": {"type": "integer", "minimum": 2},
                "domain": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                    "minItems": 2,
                    "maxItems": 2,
                },
                "forward_refinement": {"type": "integer", "minimum": 2},
            },
            "required": ["nx", "ny"],
            "additionalProperties": False,
        },
        "angular": {
            "type": "object",
            "properties": {
                "ns": {"type": "integer", "minimum": 4},
                "g": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
            },
            "required": ["ns"],
            "additionalProperties": False,
        },
        "sources": {
            "type": "object",
            "properties": {"count": {"type": "integer", "minimum": 1}},
            "required": ["count"],
            "additionalProperties": False,
        },
        "detectors": {
            "type": "object",
            "properties": {"count": {"type": "integer", "minimum": 1}},
            "required": ["count"],
            "additionalProperties": False,
        },
        "phantom": {
            "type": "object",
            "properties": {
                "background_a": {"type": "number", "exclusiveMinimum": 0},
                "background_s": {"type": "number", "exclusiveMinimum": 0},
                "inclusions": {"type": "array", "items": _SHAPE_SCHEMA},
            },
            "required": ["background_a", "background_s"],
            "additionalProperties": False,
        },
        "mode": {"enum": ["absorption", "scattering"]},
        "svd": {
            "type": "object",
            "properties": {
                "cache_path": {"type": "string"},
                "truncation": {
                    "type": "object",
                    "properties": {
                        "policy": {"enum": ["fixed", "jump", "projection"]},
                        "value": {"type": "integer", "minimum": 1},
                        "factor": {"type": "number", "exclusiveMinimum": 1},
                        "plateau": {"type": "number", "exclusiveMinimum": 0},
                    },
                    "required": ["policy"],
                    "additionalProperties": False,
                },
            },
            "required": ["cache_path", "truncation"],
            "additionalProperties": False,
        },
        "recon": {
            "type": "object",
            "properties": {
                "algorithm": {"enum": ["two_step", "modified_two_step", "one_step"]},
                "max_outer_iterations": {"type": "integer", "minimum": 1},
                "gradient_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "line_search": {
                    "type": "object",
                    "properties": {
                        "sufficient_decrease": {"type": "number", "exclusiveMinimum": 0},
                        "backtracking_factor": {
                            "type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1,
                        },
                    },
                    "additionalProperties": False,
                },
                "positivity_floor": {"type": ["number", "null"]},
                "initial_value": {"type": ["number", "null"]},
                "step2_method": {"enum": ["bfgs", "direct"]},
                "early_stop_window": {"type": ["integer", "null"], "minimum": 1},
                "early_stop_rtol": {"type": "number", "exclusiveMinimum": 0},
                "error_band": {"type": ["number", "null"]},
            },
            "required": ["algorithm"],
            "additionalProperties": False,
        },
        "noise": {
            "type": "object",
            "properties": {
                "levels": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
            "required": ["levels", "seed"],
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"directory": {"type": "string"}},
            "required": ["directory"],
            "additionalProperties": False,
        },
    },
    "required": [
        "mesh", "angular", "sources", "detectors", "phantom",
        "mode", "svd", "recon", "noise", "output",
    ],
    "additionalProperties": False,
}


def load_config(path: Path) -> dict:
    from jsonschema import Draft202012Validator

    from .errors import ConfigError

    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    validator = Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        spots = "; ".join(
            f"$.{'.'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in errors
        )
        raise ConfigError(f"{path}: {spots}")
    return cfg


def _experiment_from_config(cfg: dict, output_dir: Path, seed_override: int | None):
    from .experiments import ExperimentSpec
    from .medium import PhantomSpec

    mesh_cfg = cfg["mesh"]
    domain = mesh_cfg.get("domain", [[0.0, 2.0], [0.0, 2.0]])
    return ExperimentSpec(
        name=output_dir.name,
        mode=cfg["mode"],
        phantom=PhantomSpec.from_dict(cfg["phantom"]),
        nx=mesh_cfg["nx"],
        ny=mesh_cfg["ny"],
        ns=cfg["angular"]["ns"],
        domain=((domain[0][0], domain[0][1]), (domain[1][0], domain[1][1])),
        n_detectors=cfg["detectors"]["count"],
        n_sources=cfg["sources"]["count"],
        forward_factor=mesh_cfg.get("forward_refinement", 2),
        g=cfg["angular"].get("g", 0.0),
        noise_levels=tuple(cfg["noise"]["levels"]),
        seed=seed_override if seed_override is not None else cfg["noise"]["seed"],
    )


def _recon_config(cfg: dict, spec):
    from .recon import ReconConfig
    from .spectral import TruncationPolicy

    trunc = cfg["svd"]["truncation"]
    kwargs = {}
    if trunc["policy"] == "fixed":
        from .errors import ConfigError

        if "value" not in trunc:
            raise ConfigError("svd.truncation: fixed policy needs a value")
        policy = TruncationPolicy.fixed(trunc["value"])
    elif trunc["policy"] == "jump":
        policy = TruncationPolicy.jump(trunc.get("factor", 10.0))
    else:
        policy = TruncationPolicy.projection(trunc.get("plateau", 0.5))

    r = cfg["recon"]
    ls = r.get("line_search", {})
    initial = r.get("initial_value")
    if initial is None:
        initial = spec.background_of_unknown()
    if "max_outer_iterations" in r:
        kwargs["max_outer_iterations"] = r["max_outer_iterations"]
    if "gradient_tolerance" in r:
        kwargs["gradient_tolerance"] = r["gradient_tolerance"]
    if "sufficient_decrease" in ls:
        kwargs["sufficient_decrease"] = ls["sufficient_decrease"]
    if "backtracking_factor" in ls:
        kwargs["backtracking_factor"] = ls["backtracking_factor"]
    if "early_stop_window" in r:
        kwargs["early_stop_window"] = r["early_stop_window"]
    if "early_stop_rtol" in r:
        kwargs["early_stop_rtol"] = r["early_stop_rtol"]
    return ReconConfig(
        algorithm=r["algorithm"],
        truncation=policy,
        positivity_floor=r.get("positivity_floor"),
        initial_sigma=initial,
        step2_method=r.get("step2_method", "bfgs"),
        **kwargs,
    )


def _cache_path(cfg: dict, output_dir: Path) -> Path:
    p = Path(cfg["svd"]["cache_path"])
    return p if p.is_absolute() else output_dir / p


def _data_file(output_dir: Path, q: int, level: float) -> Path:
    return output_dir / "data" / f"J_q{q + 1}_noise{level:g}.csv"


def _apply_threads(threads: int | None) -> None:
    if threads is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))
    try:
        import numba

        numba.set_num_threads(threads)
    except Exception:
        pass


def pipeline_errors(f):
    """Map package errors to the documented exit codes."""

    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        from .errors import (
            CacheError,
            ConfigError,
            InvalidArgumentError,
            IterationLimitError,
            NumericalError,
        )

        try:
            return f(*args, **kwargs)
        except (ConfigError, InvalidArgumentError) as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except CacheError as exc:
            click.echo(f"cache error: {exc}", err=True)
            sys.exit(EXIT_CACHE)
        except (NumericalError, IterationLimitError) as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)

    return wrapper


def common_options(f):
    f = click.option("--config", "config_path", required=True, type=click.Path(), help="Run configuration JSON.")(f)
    f = click.option("--output", "output_override", type=click.Path(), default=None, help="Override output directory.")(f)
    f = click.option("--seed", type=int, default=None, help="Override the noise seed.")(f)
    f = click.option("--threads", type=int, default=None, help="Cap worker threads.")(f)
    return f


def _setup(config_path, output_override, seed, threads):
    _apply_threads(threads)
    cfg = load_config(Path(config_path))
    output_dir = Path(output_override or cfg["output"]["directory"])
    output_dir.mkdir(parents=True, exist_ok=True)
    spec = _experiment_from_config(cfg, output_dir, seed)
    return cfg, spec, output_dir


@click.group()
def main():
    """Reconstruction pipeline for boundary-current transport data."""


@main.command("gen-data")
@common_options
@pipeline_errors
def cmd_gen_data(config_path, output_override, seed, threads):
    """Synthesize detector data on the fine forward mesh."""
    from . import experiments, io

    cfg, spec, output_dir = _setup(config_path, output_override, seed, threads)
    t0 = time.time()
    data_sets = experiments.generate_synthetic_data(spec)
    outputs = []
    for level, data in sorted(data_sets.items()):
        for q in range(spec.n_sources):
            outputs.append(io.write_vector_csv(data[q], _data_file(output_dir, q, level)))
    io.write_manifest(output_dir, {"config": io.sha256_file(config_path)}, outputs)
    io.write_json({"gen_data_seconds": time.time() - t0}, output_dir / "timings.json")
    click.echo(f"wrote {len(outputs)} data files under {output_dir / 'data'}")


@main.command("precompute-svd")
@common_options
@pipeline_errors
def cmd_precompute_svd(config_path, output_override, seed, threads):
    """Assemble the data matrix and cache its SVD."""
    from . import experiments, io
    from .spectral import grid_fingerprint, load_cache

    cfg, spec, output_dir = _setup(config_path, output_override, seed, threads)
    cache_path = _cache_path(cfg, output_dir)
    t0 = time.time()

    mesh, angular = spec.inversion_grids()
    known = spec.known_field_on(mesh)
    if cache_path.exists():
        # cheap hash probe before assembling anything
        from .errors import CacheError

        fact_known = known.sigma_s if spec.mode == "absorption" else known.sigma_a
        fingerprint = grid_fingerprint(mesh, angular, spec.mode, fact_known)
        try:
            load_cache(cache_path, expected_hash=fingerprint)
            click.echo(f"cache hit: {cache_path} (hash {fingerprint.hex()[:12]}); skipping recompute")
            return
        except CacheError:
            click.echo("cache present but unusable for these grids; recomputing", err=True)

    fact, cache = experiments.prepare_inversion(spec, cache_path=cache_path)
    rank = cache.numerical_rank
    io.write_vector_csv(cache.mu[:rank], output_dir / "singular_values.csv", header="singular_values")
    io.write_json({"precompute_svd_seconds": time.time() - t0}, output_dir / "timings.json")
    click.echo(f"wrote {cache_path} ({rank} usable modes) and singular_values.csv")


@main.command("reconstruct")
@common_options
@pipeline_errors
def cmd_reconstruct(config_path, output_override, seed, threads):
    """Reconstruct the coefficient for every configured noise level."""
    from . import experiments, io
    from .errors import CacheError, ConfigError
    from .operators import build_factorization
    from .recon import reconstruct
    from .spectral import grid_fingerprint, load_cache

    cfg, spec, output_dir = _setup(config_path, output_override, seed, threads)
    cache_path = _cache_path(cfg, output_dir)
    t0 = time.time()

    mesh, angular = spec.inversion_grids()
    known = spec.known_field_on(mesh)
    fact = build_factorization(mesh, angular, spec.mode, known)
    fingerprint = grid_fingerprint(mesh, angular, spec.mode, fact.known)
    try:
        cache = load_cache(cache_path, expected_hash=fingerprint)
    except FileNotFoundError as exc:
        raise CacheError(f"no SVD cache at {cache_path}; run precompute-svd first") from exc

    recon_config = _recon_config(cfg, spec)
    truth = spec.truth_on(mesh)
    band = cfg["recon"].get("error_band")

    import numpy as np

    results_dir = output_dir / "results" / spec.name
    outputs = []
    summary_levels = {}
    timings = {}
    first = True
    for level in spec.noise_levels:
        rows = []
        for q in range(spec.n_sources):
            f = _data_file(output_dir, q, level)
            if not f.exists():
                raise ConfigError(f"missing data file {f}; run gen-data first")
            rows.append(io.read_vector_csv(f))
        data = np.stack(rows)
        t_level = time.time()
        result = reconstruct(fact, cache, data, recon_config, truth=truth)
        timings[f"noise{level:g}_seconds"] = time.time() - t_level

        tag = f"noise{level:g}"
        outputs.append(io.write_grid_csv(result.sigma, mesh.nx, mesh.ny, results_dir / f"sigma_est_{tag}.csv"))
        outputs.append(io.write_pgm(result.sigma, mesh.nx, mesh.ny, results_dir / f"sigma_est_{tag}.pgm"))
        outputs.append(io.write_history_csv(result.objective_history, results_dir / f"objective_history_{tag}.csv"))
        if first:
            outputs.append(io.write_grid_csv(result.sigma, mesh.nx, mesh.ny, results_dir / "sigma_est.csv"))
            outputs.append(io.write_history_csv(result.objective_history, results_dir / "objective_history.csv"))
            first = False
        entry = result.to_summary()
        entry["within_error_band"] = None if band is None else bool(result.error_vs_truth <= band)
        summary_levels[f"{level:g}"] = entry

    outputs.append(io.write_grid_csv(truth, mesh.nx, mesh.ny, results_dir / "truth.csv"))
    outputs.append(io.write_pgm(truth, mesh.nx, mesh.ny, results_dir / "truth.pgm"))
    rank = cache.numerical_rank
    outputs.append(io.write_vector_csv(cache.mu[:rank], results_dir / "singular_values.csv", header="singular_values"))
    summary = {
        "experiment": spec.name,
        "mode": spec.mode,
        "algorithm": recon_config.algorithm,
        "seed": spec.seed,
        "error_band": band,
        "levels": summary_levels,
    }
    outputs.append(io.write_json(summary, results_dir / "summary.json"))
    io.write_manifest(results_dir, {"config": io.sha256_file(config_path), "cache": io.sha256_file(cache_path)}, outputs)
    timings["total_seconds"] = time.time() - t0
    io.write_json(timings, results_dir / "timings.json")
    click.echo(f"reconstructions written under {results_dir}")


@main.command("report")
@click.option("--root", "root_dir", required=True, type=click.Path(), help="Directory tree to scan for summaries.")
@click.option("--output", "report_path", type=click.Path(), default=None, help="Report CSV path.")
@pipeline_errors
def cmd_report(root_dir, report_path):
    """Aggregate summary.json files into one CSV table."""
    from . import io

    root = Path(root_dir)
    rows = []
    for summary_file in sorted(root.rglob("summary.json")):
        summary = io.read_json(summary_file)
        for level, entry in sorted(summary.get("levels", {}).items(), key=lambda kv: float(kv[0])):
            rows.append(
                [
                    summary.get("experiment", summary_file.parent.name),
                    summary.get("mode", ""),
                    summary.get("algorithm", ""),
                    level,
                    entry.get("L", ""),
                    entry.get("relative_l2_error", ""),
                    entry.get("final_objective", ""),
                    entry.get("iterations", ""),
                    entry.get("status", ""),
                ]
            )
    target = Path(report_path or root / "report.csv")
    target.parent.mkdir(parents=True, exist_ok=True)
    header = "experiment,mode,algorithm,noise_percent,L,relative_l2_error,final_objective,iterations,status"
    lines = [header] + [",".join(str(v) for v in row) for row in rows]
    target.write_text("\n".join(lines) + "\n")
    click.echo(f"wrote {target} ({len(rows)} rows)")


if __name__ == "__main__":
    main()
