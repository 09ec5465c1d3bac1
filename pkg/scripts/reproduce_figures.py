#!/usr/bin/env python3
"""End-to-end figure pipeline at desk scale.

Runs the simulator for the two qualitative figure targets (velocity
field and angular density under a thermostatted field, plus the
response diagnostics) and renders every figure kind into
runs/figures/.  Requires both packages installed:

    pip install -e . --no-build-isolation
    pip install -e plots --no-build-isolation
    python3 scripts/reproduce_figures.py [--quick]
"""

import argparse
import sys
from pathlib import Path

from lorentzgas.cli import main as sim
from lorentzplots.cli import main as plot

ROOT = Path("runs/figures")


def run(cmd, out, *overrides):
    args = [cmd, "--out", str(out), "--seed", "20260801"]
    for ov in overrides:
        args += ["--override", ov]
    code = sim(args)
    if code != 0:
        sys.exit(f"{cmd} -> exit {code}")


def fig(kind, inputs, out):
    args = [kind]
    for p in inputs:
        args += ["--in", str(p)]
    args += ["--out", str(out)]
    if plot(args) != 0:
        sys.exit(f"plot {kind} failed")
    print("wrote", out)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true",
                    help="small runs for a fast smoke pass")
    opt = ap.parse_args()
    flow = "run.flow_time=20000" if opt.quick else "run.flow_time=2000000"
    coll = "run.n_collisions=200000" if opt.quick else "run.n_collisions=4000000"

    sim_dir = ROOT / "sim"
    run("simulate", sim_dir, "force.epsilon=0.01", flow, coll,
        "histogram.grid=25")
    run("kawasaki", ROOT / "kw", "force.epsilon=0.01",
        "response.n_samples=50000" if not opt.quick else "response.n_samples=5000")
    run("linear-response", ROOT / "lr",
        "response.lhs_collisions=2000000" if not opt.quick
        else "response.lhs_collisions=100000")

    fig("quiver", [sim_dir / "velocity_field.csv"], ROOT / "velocity_field.png")
    fig("density1d", [sim_dir / "theta_density.csv"], ROOT / "theta_density.png")
    fig("density1d", [sim_dir / "phi_density.csv"], ROOT / "phi_density.png")
    fig("density2d", [sim_dir / "spatial_density.csv"], ROOT / "spatial_density.png")
    fig("series-decay", [ROOT / "kw" / "kawasaki_terms.csv"], ROOT / "kawasaki_terms.png")
    fig("response-fit", [ROOT / "lr" / "response_fit.csv"], ROOT / "response_fit.png")


if __name__ == "__main__":
    main()
