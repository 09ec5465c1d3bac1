"""Command-line interface: one config file, deterministic artifacts.

Exit codes: 0 success, 2 validation error, 3 dynamics failure,
4 horizon violation, 64 unknown command / usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import measure, response
from .config import RunConfig, apply_overrides, load_config, schema
from .errors import HorizonViolation, InputError, LorentzGasError
from .geometry import check_finite_horizon
from .io import (
    artifact_meta,
    file_sha256,
    read_csv,
    write_csv,
    write_json,
    write_run_meta,
)

COMMANDS = (
    "check-horizon", "simulate", "phi-density", "r-density",
    "spatial-density", "velocity-field", "theta-density", "current",
    "kawasaki", "linear-response", "conductivity", "sweep", "resume",
    "config-schema",
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="lorentzgas", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("target", nargs="?", default=None,
                   help="sweep directory (resume only)")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VALUE", help="dotted config override")
    p.add_argument("--observable", default=None,
                   help="observable name for kawasaki/linear-response")
    p.add_argument("--max-cells", type=int, default=None,
                   help="stop a sweep after N cells (testing hook)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 64

    if args.command == "config-schema":
        print(json.dumps(schema(), indent=2, sort_keys=True))
        return 0

    try:
        cfg = load_config(args.config)
        if args.override:
            cfg = apply_overrides(cfg, args.override)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            cfg.workers = args.workers
        if args.out is not None:
            cfg.output_dir = args.out
        if args.command == "resume":
            if args.target is None:
                raise InputError("resume requires a sweep directory argument")
            explicit = (args.config is not None or bool(args.override)
                        or args.seed is not None or args.workers is not None)
            return _resume(Path(args.target), cfg, explicit)
        return _dispatch(args.command, cfg, args)
    except InputError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return 2
    except HorizonViolation as e:
        print(f"horizon violation: {e}", file=sys.stderr)
        return 4
    except LorentzGasError as e:
        print(f"dynamics failure: {e}", file=sys.stderr)
        return 3


def _dispatch(command: str, cfg: RunConfig, args) -> int:
    started = time.time()
    out = Path(cfg.output_dir)
    handler = {
        "check-horizon": _cmd_check_horizon,
        "phi-density": _cmd_phi_density,
        "r-density": _cmd_r_density,
        "theta-density": _cmd_theta_density,
        "spatial-density": _cmd_spatial_density,
        "velocity-field": _cmd_velocity_field,
        "current": _cmd_current,
        "simulate": _cmd_simulate,
        "kawasaki": _cmd_kawasaki,
        "linear-response": _cmd_linear_response,
        "conductivity": _cmd_conductivity,
        "sweep": _cmd_sweep,
    }[command]
    code = handler(cfg, out, args)
    write_run_meta(out, started)
    return code


def _meta(cfg: RunConfig, flagged=0, **extra) -> dict:
    return artifact_meta(cfg.to_dict(), cfg.seed, cfg.workers, flagged,
                         extra or None)


def _density_rows(est):
    e = est.edges
    return [(e[i], e[i + 1], est.density[i], est.stderr[i])
            for i in range(len(est.density))]


def _cmd_check_horizon(cfg, out, args):
    table = cfg.build_table()
    rep = check_finite_horizon(table, n_origins=64, n_directions=128,
                               rng_seed=cfg.seed)
    write_json(out / "horizon.json", {
        "meta": _meta(cfg),
        "max_free_path": rep.max_free_path,
        "bound": rep.bound,
        "passes": rep.passes,
        "n_rays": rep.n_rays,
        "violating_ray": rep.violating_ray,
        "caveat": "sampling evidence only, not a proof",
    })
    if not rep.passes:
        print(f"horizon violation: free path {rep.max_free_path:.4f} "
              f">= {rep.bound}", file=sys.stderr)
        return 4
    return 0


def _cmd_phi_density(cfg, out, args):
    table, model = cfg.build_table(), cfg.build_force()
    est = measure.phi_density(table, model, cfg.run.n_collisions,
                              cfg.histogram.bins_1d, seed=cfg.seed,
                              workers=cfg.workers, burn_in=cfg.run.burn_in,
                              tol=cfg.integrator.stat_tol)
    write_csv(out / "phi_density.csv",
              ["bin_left", "bin_right", "density", "stderr"],
              _density_rows(est), _meta(cfg, kind="density1d", variable="phi"))
    return 0


def _cmd_r_density(cfg, out, args):
    table, model = cfg.build_table(), cfg.build_force()
    est = measure.r_density(table, model, cfg.run.n_collisions,
                            cfg.histogram.bins_1d, seed=cfg.seed,
                            workers=cfg.workers, burn_in=cfg.run.burn_in,
                            tol=cfg.integrator.stat_tol)
    write_csv(out / "r_density.csv",
              ["bin_left", "bin_right", "density", "stderr"],
              _density_rows(est), _meta(cfg, kind="density1d", variable="r"))
    return 0


def _cmd_theta_density(cfg, out, args):
    table, model = cfg.build_table(), cfg.build_force()
    est = measure.theta_density(table, model, cfg.run.flow_time,
                                cfg.histogram.bins_theta, seed=cfg.seed,
                                workers=cfg.workers,
                                dt_sample=cfg.run.dt_sample,
                                burn_in=cfg.run.burn_in,
                                tol=cfg.integrator.stat_tol)
    write_csv(out / "theta_density.csv",
              ["bin_left", "bin_right", "density", "stderr"],
              _density_rows(est), _meta(cfg, kind="density1d", variable="theta"))
    return 0


def _cmd_spatial_density(cfg, out, args):
    table, model = cfg.build_table(), cfg.build_force()
    est = measure.spatial_density(table, model, cfg.run.flow_time,
                                  cfg.histogram.grid, seed=cfg.seed,
                                  workers=cfg.workers,
                                  dt_sample=cfg.run.dt_sample,
                                  burn_in=cfg.run.burn_in,
                                  tol=cfg.integrator.stat_tol)
    xc, yc = est.centers
    rows = [(xc[i], yc[j], est.density[i, j], est.stderr[i, j])
            for i in range(len(xc)) for j in range(len(yc))]
    write_csv(out / "spatial_density.csv", ["x", "y", "density", "stderr"],
              rows, _meta(cfg, kind="density2d", variable="position"))
    return 0


def _cmd_velocity_field(cfg, out, args):
    table, model = cfg.build_table(), cfg.build_force()
    grid = measure.velocity_field(table, model, cfg.run.flow_time,
                                  cfg.histogram.grid, seed=cfg.seed,
                                  workers=cfg.workers,
                                  dt_sample=cfg.run.dt_sample,
                                  burn_in=cfg.run.burn_in,
                                  tol=cfg.integrator.stat_tol)
    vx, vy = grid.mean_velocity
    bad = grid.insufficient
    xc = 0.5 * (grid.x_edges[1:] + grid.x_edges[:-1])
    yc = 0.5 * (grid.y_edges[1:] + grid.y_edges[:-1])
    rows = []
    for i in range(len(xc)):
        for j in range(len(yc)):
            rows.append((xc[i], yc[j],
                         vx[i, j] if not bad[i, j] else float("nan"),
                         vy[i, j] if not bad[i, j] else float("nan"),
                         grid.weight[i, j]))
    write_csv(out / "velocity_field.csv", ["x", "y", "v1", "v2", "weight"],
              rows, _meta(cfg, kind="quiver"))
    return 0


def _cmd_current(cfg, out, args):
    table, model = cfg.build_table(), cfg.build_force()
    j1, j2 = measure.current(table, model, cfg.run.flow_time, seed=cfg.seed,
                             workers=cfg.workers, burn_in=cfg.run.burn_in,
                             dt_sample=cfg.run.dt_sample,
                             tol=cfg.integrator.stat_tol)
    write_json(out / "current.json", {
        "meta": _meta(cfg),
        "j1": {"mean": j1.mean, "stderr": j1.stderr},
        "j2": {"mean": j2.mean, "stderr": j2.stderr},
        "n_collisions": j1.n_samples,
    })
    return 0


def _cmd_simulate(cfg, out, args):
    for sub in (_cmd_phi_density, _cmd_r_density, _cmd_theta_density,
                _cmd_spatial_density, _cmd_velocity_field, _cmd_current):
        code = sub(cfg, out, args)
        if code != 0:
            return code
    write_json(out / "summary.json", {
        "meta": _meta(cfg),
        "artifacts": sorted(p.name for p in out.glob("*.csv")),
    })
    return 0


def _cmd_kawasaki(cfg, out, args):
    table, model = cfg.build_table(), cfg.build_force()
    obs = args.observable or "cos_phi"
    rep = response.kawasaki_rhs(
        table, model, obs, cfg.force.epsilon, cfg.response.n_samples,
        k_max=cfg.response.k_max, seed=cfg.seed, workers=cfg.workers,
        lhs_collisions=cfg.response.lhs_collisions,
        fd_step=cfg.response.fd_step)
    rows = [(k + 1, rep.terms[k], rep.term_stderr[k])
            for k in range(len(rep.terms)) if np.isfinite(rep.terms[k])]
    write_csv(out / "kawasaki_terms.csv", ["k", "T_k", "stderr"], rows,
              _meta(cfg, kind="series-decay", observable=obs,
                    truncation=rep.truncation))
    write_json(out / "kawasaki.json", {
        "meta": _meta(cfg),
        "observable": obs,
        "epsilon": rep.eps,
        "nu0_f": {"mean": rep.nu0_f.mean, "stderr": rep.nu0_f.stderr},
        "rhs_total": rep.rhs_total,
        "rhs_stderr": rep.rhs_stderr,
        "lhs": {"mean": rep.lhs.mean, "stderr": rep.lhs.stderr},
        "discrepancy_sigma": rep.discrepancy_sigma,
        "truncation": rep.truncation,
        "flagged_fraction": rep.flagged_fraction,
        "warning": rep.warning,
    })
    return 0


def _cmd_linear_response(cfg, out, args):
    table = cfg.build_table()
    family = cfg.build_force()
    obs = args.observable or "dx0"
    rep = response.linear_response_fit(
        table, family, obs, cfg.response.eps_grid,
        cfg.response.lhs_collisions, seed=cfg.seed, workers=cfg.workers,
        n_series_samples=cfg.response.series_samples,
        k_max=cfg.response.k_max, stat_tol=cfg.integrator.stat_tol)
    rows = [(rep.eps_grid[i], rep.nu_eps[i].mean, rep.nu_eps[i].stderr)
            for i in range(len(rep.eps_grid))]
    write_csv(out / "response_fit.csv", ["epsilon", "nu_f", "stderr"], rows,
              _meta(cfg, kind="response-fit", observable=obs,
                    slope=rep.slope, intercept=rep.intercept,
                    series_slope=rep.series_slope))
    write_json(out / "response.json", {
        "meta": _meta(cfg),
        "observable": obs,
        "slope": rep.slope, "slope_err": rep.slope_err,
        "intercept": rep.intercept, "intercept_err": rep.intercept_err,
        "series_slope": rep.series_slope,
        "series_slope_err": rep.series_slope_err,
        "series_truncation": rep.series_truncation,
        "agreement_sigma": rep.agreement_sigma,
        "agreement_ratio": rep.agreement_ratio,
        "nonlinearity_sigma": rep.nonlinearity_sigma,
        "recommendation": rep.recommendation,
    })
    return 0


def _cmd_conductivity(cfg, out, args):
    table = cfg.build_table()
    rep = response.conductivity(
        table, cfg.response.eps_grid, cfg.run.flow_time, seed=cfg.seed,
        workers=cfg.workers, direction_deg=cfg.force.direction_deg,
        stat_tol=cfg.integrator.stat_tol)
    rows = [(rep.eps_grid[i], rep.j1[i].mean, rep.j1[i].stderr,
             rep.j2[i].mean, rep.j2[i].stderr, rep.ratios[i])
            for i in range(len(rep.eps_grid))]
    write_csv(out / "conductivity.csv",
              ["epsilon", "j1", "j1_stderr", "j2", "j2_stderr", "ratio"],
              rows, _meta(cfg, kind="response-fit"))
    write_json(out / "conductivity.json", {
        "meta": _meta(cfg),
        "sigma_hat": rep.sigma_hat,
        "sigma_err": rep.sigma_err,
        "pairwise_max_sigma": rep.pairwise_max_sigma,
    })
    return 0


# ---------------------------------------------------------------------------
# sweep / resume

def _cell_dir_name(eps: float) -> str:
    return f"eps_{eps:g}"


def _cell_config(cfg: RunConfig, eps: float, cell_dir: Path) -> RunConfig:
    from .config import config_from_dict
    data = cfg.to_dict()
    data["force"]["epsilon"] = eps
    data["output_dir"] = str(cell_dir)
    return config_from_dict(data)


def _cell_hashes(cell_dir: Path) -> dict:
    out = {}
    for p in sorted(cell_dir.glob("*.csv")) + [cell_dir / "summary.json"]:
        if p.exists():
            out[p.name] = file_sha256(p)
    return out


def _cmd_sweep(cfg, out, args):
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    manifest = {
        "command": "simulate",
        "config_echo": cfg.to_dict(),
        "cells": [{"eps": e, "dir": _cell_dir_name(e), "status": "pending",
                   "seed": cfg.seed, "hashes": {}}
                  for e in cfg.response.eps_grid],
    }
    write_json(manifest_path, manifest)
    return _run_cells(cfg, out, manifest, args)


def _run_cells(cfg, out, manifest, args) -> int:
    max_cells = getattr(args, "max_cells", None)
    done = 0
    for cell in manifest["cells"]:
        if cell["status"] == "done":
            continue
        if max_cells is not None and done >= max_cells:
            break
        cell_dir = out / cell["dir"]
        sub = _cell_config(cfg, cell["eps"], cell_dir)
        code = _cmd_simulate(sub, cell_dir, args)
        if code != 0:
            return code
        cell["status"] = "done"
        cell["hashes"] = _cell_hashes(cell_dir)
        write_json(out / "manifest.json", manifest)
        done += 1
    return 0


def _resume(sweep_dir: Path, cfg: RunConfig, explicit: bool) -> int:
    manifest_path = sweep_dir / "manifest.json"
    if not manifest_path.exists():
        raise LorentzGasError(f"no manifest in {sweep_dir}")
    try:
        manifest = json.loads(manifest_path.read_text())
        cells = manifest["cells"]
        echo = manifest["config_echo"]
    except (json.JSONDecodeError, KeyError) as e:
        raise LorentzGasError(f"corrupted manifest: {e}") from e
    if explicit:
        # a config supplied at resume time must match the recorded one
        base = dict(cfg.to_dict())
        base["output_dir"] = echo.get("output_dir")
        if base != echo:
            raise InputError("config mismatch: manifest was written by a "
                             "different configuration")
    # completed cells must still match their recorded content
    for cell in cells:
        if cell["status"] != "done":
            continue
        cell_dir = sweep_dir / cell["dir"]
        if _cell_hashes(cell_dir) != cell["hashes"]:
            cell["status"] = "pending"
            cell["hashes"] = {}
    from .config import config_from_dict
    run_cfg = config_from_dict(echo)
    run_cfg.output_dir = str(sweep_dir)

    class _NoArgs:
        observable = None
        max_cells = None

    code = _run_cells(run_cfg, sweep_dir, manifest, _NoArgs())
    write_json(manifest_path, manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
