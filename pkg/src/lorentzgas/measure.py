"""Steady-state sampling and marginal-density estimators.

The unperturbed billiard preserves the measure with density
proportional to cos(phi) dr dphi on the collision space; it is sampled
directly by inverse CDF.  Perturbed steady states are sampled by
Birkhoff averaging along long trajectories (the physical measure
attracts a full-volume set of initial conditions, so one trajectory per
stream suffices after burn-in).  Flow averages use the suspension
structure: a flow average is a ratio of collision-indexed sums.

Workers own independent RNG streams; merging their accumulators in
worker-id order is associative and order-fixed, so a run with fixed
(seed, workers) is bit-reproducible.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels, rng
from .dynamics import CollisionCoord, apply_map_batch, free_flight_data, kernel_force_params
from .errors import InputError, LorentzGasError
from .forces import ForceModel, thermostat_closed_form
from .geometry import Table
from .stats import (
    AverageEstimate,
    DensityEstimate,
    VelocityFieldGrid,
    batch_average,
    density_from_batches,
)

DEFAULT_BURN_IN = 1000
DEFAULT_BATCHES = 64
DEFAULT_DT_SAMPLE = 0.01
CHUNK = 1 << 20


# ---------------------------------------------------------------------------
# nu_0 sampling

def sample_nu0_batch(table: Table, gen: np.random.Generator, n: int) -> dict:
    """n independent draws from the billiard invariant measure.

    Disc picked with probability proportional to its circumference, s
    uniform along it, phi = arcsin(2u - 1) which inverts the CDF
    (1 + sin phi)/2 of the cos(phi)/2 marginal.
    """
    circ = 2.0 * np.pi * table.radii
    p = circ / circ.sum()
    disc = gen.choice(len(p), size=n, p=p)
    s = gen.random(n) * circ[disc]
    phi = np.arcsin(2.0 * gen.random(n) - 1.0)
    return {"disc": disc.astype(np.int64), "s": s, "phi": phi}


def sample_nu0(table: Table, gen: np.random.Generator) -> CollisionCoord:
    d = sample_nu0_batch(table, gen, 1)
    return CollisionCoord(int(d["disc"][0]), float(d["s"][0]), float(d["phi"][0]))


# ---------------------------------------------------------------------------
# observables on the collision space

def _obs_const(table, chunk):
    return np.ones_like(chunk["phi"])


def _obs_cos_phi(table, chunk):
    return np.cos(chunk["phi"])


def _obs_sin_phi(table, chunk):
    return np.sin(chunk["phi"])


def _obs_tau(table, chunk):
    return chunk["tau"]


def _obs_dx(table, chunk):
    return chunk["dx"]


def _obs_dx0(table, chunk):
    """Horizontal displacement of the zero-field flight from each coordinate.

    A fixed (field-independent) function on the collision space, evaluated
    through the exact straight-ray map.
    """
    if "dx0" in chunk:
        return chunk["dx0"]
    ff = free_flight_data(table, chunk["disc"], chunk["s"], chunk["phi"])
    return ff["dx"]


def _obs_tau0(table, chunk):
    if "tau0" in chunk:
        return chunk["tau0"]
    ff = free_flight_data(table, chunk["disc"], chunk["s"], chunk["phi"])
    return ff["tau"]


OBSERVABLES = {
    "const": _obs_const,
    "cos_phi": _obs_cos_phi,
    "sin_phi": _obs_sin_phi,
    "tau": _obs_tau,
    "dx": _obs_dx,
    "dx0": _obs_dx0,
    "tau0": _obs_tau0,
}


def resolve_observable(f):
    if callable(f):
        return f
    try:
        return OBSERVABLES[f]
    except KeyError:
        raise InputError(f"unknown observable {f!r}") from None


# ---------------------------------------------------------------------------
# trajectory drivers

def _split_counts(n: int, workers: int) -> list[int]:
    base = n // workers
    out = [base + (1 if i < n % workers else 0) for i in range(workers)]
    return out


def _map_worker(table, model, n, burn_in, seed, worker_id, funcs, n_batches,
                tol, chunk_hook=None):
    """One worker's trajectory: burn-in, then batch-binned observable sums.

    ``chunk_hook(start_index, chunk)``, when given, sees every post-burn-in
    chunk (used by histogram estimators).
    """
    eps, delta = kernel_force_params(model)
    gen = rng.stream(seed, worker_id, "init")
    start = sample_nu0(table, gen)
    disc, s, phi = start.disc_id, start.s, start.phi

    o_disc = np.empty(CHUNK, dtype=np.int64)
    o_s = np.empty(CHUNK)
    o_phi = np.empty(CHUNK)
    o_tau = np.empty(CHUNK)
    o_dx = np.empty(CHUNK)
    o_dy = np.empty(CHUNK)
    o_flag = np.empty(CHUNK, dtype=np.int64)

    def run(n_steps):
        nonlocal disc, s, phi
        status, n_done, disc, s, phi = _kernels.map_chunk(
            disc, s, phi, n_steps, table.unfolded, table.centers, table.radii,
            eps, delta, tol, 1e-12, table.horizon_bound,
            o_disc, o_s, o_phi, o_tau, o_dx, o_dy, o_flag)
        if status != 0:
            raise LorentzGasError(
                f"dynamics failed (status {status}) after {n_done} collisions "
                f"in worker {worker_id}")
        return n_done

    left = burn_in
    while left > 0:
        left -= run(min(left, CHUNK))

    sums = {name: np.zeros(n_batches) for name in funcs}
    counts = np.zeros(n_batches)
    flagged = 0
    done = 0
    while done < n:
        m = min(n - done, CHUNK)
        run(m)
        chunk = {"disc": o_disc[:m], "s": o_s[:m], "phi": o_phi[:m],
                 "tau": o_tau[:m], "dx": o_dx[:m], "dy": o_dy[:m]}
        batch_ids = (np.arange(done, done + m) * n_batches) // n
        flagged += int(o_flag[:m].sum())
        for name, fn in funcs.items():
            vals = fn(table, chunk)
            sums[name] += np.bincount(batch_ids, weights=vals, minlength=n_batches)
        counts += np.bincount(batch_ids, minlength=n_batches)
        if chunk_hook is not None:
            chunk_hook(done, chunk)
        done += m
    return {"sums": sums, "counts": counts, "flagged": flagged, "n": n}


def _run_workers(job, workers: int):
    """Run worker callables and return results in worker-id order."""
    if workers <= 1:
        return [job(0)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(job, w) for w in range(workers)]
        return [f.result() for f in futs]


def map_averages(
    table: Table, model: ForceModel, fs: dict, n_collisions: int,
    burn_in: int = DEFAULT_BURN_IN, seed: int = 0, workers: int = 1,
    n_batches: int = DEFAULT_BATCHES, tol: float = 1e-10,
) -> dict[str, AverageEstimate]:
    """Birkhoff averages of several observables along one run."""
    if n_collisions <= 0:
        raise InputError("n_collisions must be positive")
    funcs = {name: resolve_observable(f) for name, f in fs.items()}
    per = _split_counts(n_collisions, workers)

    def job(w):
        return _map_worker(table, model, per[w], burn_in, seed, w, funcs,
                           n_batches, tol)

    results = _run_workers(job, workers)
    out = {}
    flagged = sum(r["flagged"] for r in results)
    n_total = sum(r["n"] for r in results)
    for name in funcs:
        bm_parts = []
        total_sum = 0.0
        total_count = 0.0
        for r in results:
            ok = r["counts"] > 0
            bm_parts.append(r["sums"][name][ok] / r["counts"][ok])
            total_sum += r["sums"][name].sum()
            total_count += r["counts"].sum()
        est = batch_average(np.concatenate(bm_parts), n_total, flagged)
        # exact grand mean; batch means only set the error bar
        out[name] = AverageEstimate(float(total_sum / total_count), est.stderr,
                                    n_total, est.n_batches, est.flagged_fraction)
    return out


def birkhoff_map_average(
    table: Table, model: ForceModel, f, n_collisions: int,
    burn_in: int = DEFAULT_BURN_IN, seed: int = 0, workers: int = 1,
    n_batches: int = DEFAULT_BATCHES, tol: float = 1e-10,
) -> AverageEstimate:
    """Estimate the steady-state collision average of one observable."""
    if n_collisions <= burn_in:
        raise InputError("n_collisions must exceed burn_in")
    return map_averages(table, model, {"f": f}, n_collisions, burn_in,
                        seed, workers, n_batches, tol)["f"]


def map_histogram(
    table: Table, model: ForceModel, values, edges: np.ndarray, name: str,
    n_collisions: int, burn_in: int = DEFAULT_BURN_IN, seed: int = 0,
    workers: int = 1, n_batches: int = DEFAULT_BATCHES, tol: float = 1e-10,
) -> DensityEstimate:
    """Histogram density of a per-collision value along a run."""
    fn = resolve_observable(values)
    per = _split_counts(n_collisions, workers)
    nb = len(edges) - 1

    def job(w):
        counts = np.zeros((n_batches, nb))

        def hook(done, chunk):
            vals = fn(table, chunk)
            batch_ids = (np.arange(done, done + len(vals)) * n_batches) // per[w]
            for b in np.unique(batch_ids):
                counts[b] += np.histogram(vals[batch_ids == b], bins=edges)[0]

        _map_worker(table, model, per[w], burn_in, seed, w, {}, n_batches,
                    tol, chunk_hook=hook)
        return counts

    results = _run_workers(job, workers)
    total = np.zeros((n_batches, nb))
    for r in results:
        total += r
    return density_from_batches(name, total, edges)


def phi_density(
    table: Table, model: ForceModel, n_collisions: int, n_bins: int = 50,
    seed: int = 0, workers: int = 1, burn_in: int = DEFAULT_BURN_IN,
    tol: float = 1e-10,
) -> DensityEstimate:
    """Steady-state density of the reflection angle phi."""
    if n_bins < 10:
        raise InputError("need at least 10 bins")
    edges = np.linspace(-np.pi / 2, np.pi / 2, n_bins + 1)
    return map_histogram(table, model, lambda t, c: c["phi"], edges, "phi",
                         n_collisions, burn_in, seed, workers, tol=tol)


def r_density(
    table: Table, model: ForceModel, n_collisions: int, n_bins: int = 50,
    seed: int = 0, workers: int = 1, burn_in: int = DEFAULT_BURN_IN,
    tol: float = 1e-10,
) -> DensityEstimate:
    """Steady-state density of the flattened boundary arclength."""
    if n_bins < 10:
        raise InputError("need at least 10 bins")
    edges = np.linspace(0.0, table.boundary_length, n_bins + 1)

    def flat_r(t, c):
        return t.s_offsets[c["disc"]] + c["s"]

    return map_histogram(table, model, flat_r, edges, "r",
                         n_collisions, burn_in, seed, workers, tol=tol)


# ---------------------------------------------------------------------------
# flow drivers (time-sampled quantities)

@dataclass
class FlowAccumulators:
    spat: np.ndarray      # (B, g, g)
    thet: np.ndarray      # (B, nb)
    vel_w: np.ndarray     # (g, g)
    vel_vx: np.ndarray
    vel_vy: np.ndarray
    curr: np.ndarray      # (B, 3): dx, dy, tau sums
    n_collisions: int
    n_samples: int
    flagged: int
    flow_time: float


def run_flow(
    table: Table, model: ForceModel, flow_time: float, seed: int = 0,
    workers: int = 1, grid: int = 50, theta_bins: int = 64,
    dt_sample: float = DEFAULT_DT_SAMPLE, n_batches: int = DEFAULT_BATCHES,
    burn_in: int = DEFAULT_BURN_IN, tol: float = 1e-10,
) -> FlowAccumulators:
    """Advance the flow for a total time budget, accumulating samples."""
    eps, delta = kernel_force_params(model)
    budget = flow_time / workers

    def job(w):
        gen = rng.stream(seed, w, "init")
        jit_gen = rng.stream(seed, w, "jitter")
        start = sample_nu0(table, gen)
        disc, s, phi = start.disc_id, start.s, start.phi
        spat = np.zeros((n_batches, grid, grid))
        thet = np.zeros((n_batches, theta_bins))
        vel_w = np.zeros((grid, grid))
        vel_vx = np.zeros((grid, grid))
        vel_vy = np.zeros((grid, grid))
        curr = np.zeros((n_batches, 3))
        # burn-in: discard by running the plain map
        o = [np.empty(burn_in, dtype=np.int64), np.empty(burn_in), np.empty(burn_in),
             np.empty(burn_in), np.empty(burn_in), np.empty(burn_in),
             np.empty(burn_in, dtype=np.int64)]
        if burn_in > 0:
            status, _, disc, s, phi = _kernels.map_chunk(
                disc, s, phi, burn_in, table.unfolded, table.centers, table.radii,
                eps, delta, tol, 1e-12, table.horizon_bound, *o)
            if status != 0:
                raise LorentzGasError(f"dynamics failed during burn-in (status {status})")
        t = 0.0
        n_coll = 0
        n_samp = 0
        flagged = 0
        cap = 1 << 17
        while t < budget:
            jitter = jit_gen.random(cap)
            status, n_done, t, disc, s, phi, fl, ns = _kernels.flow_chunk(
                disc, s, phi, cap, t, budget, dt_sample, jitter,
                table.unfolded, table.centers, table.radii, eps, delta,
                tol, 1e-12, table.horizon_bound, n_batches,
                spat, thet, vel_w, vel_vx, vel_vy, curr)
            if status != 0:
                raise LorentzGasError(f"dynamics failed (status {status})")
            n_coll += n_done
            n_samp += ns
            flagged += fl
            if n_done == 0 and t < budget:
                raise LorentzGasError("flow made no progress")
        return FlowAccumulators(spat, thet, vel_w, vel_vx, vel_vy, curr,
                                n_coll, n_samp, flagged, t)

    results = _run_workers(job, workers)
    merged = results[0]
    for r in results[1:]:
        merged.spat += r.spat
        merged.thet += r.thet
        merged.vel_w += r.vel_w
        merged.vel_vx += r.vel_vx
        merged.vel_vy += r.vel_vy
        merged.curr += r.curr
        merged.n_collisions += r.n_collisions
        merged.n_samples += r.n_samples
        merged.flagged += r.flagged
        merged.flow_time += r.flow_time
    return merged


def spatial_density(
    table: Table, model: ForceModel, flow_time: float, grid: int = 50,
    seed: int = 0, workers: int = 1, **kw,
) -> DensityEstimate:
    """Occupation-time density of the position over the flow."""
    if grid < 10:
        raise InputError("grid must be at least 10x10")
    acc = run_flow(table, model, flow_time, seed, workers, grid=grid, **kw)
    edges = (np.linspace(0, 1, grid + 1), np.linspace(0, 1, grid + 1))
    return density_from_batches("position", acc.spat, edges)


def theta_density(
    table: Table, model: ForceModel, flow_time: float, n_bins: int = 64,
    seed: int = 0, workers: int = 1, **kw,
) -> DensityEstimate:
    """Time-sampled density of the direction of motion on (-pi, pi]."""
    acc = run_flow(table, model, flow_time, seed, workers, theta_bins=n_bins, **kw)
    edges = np.linspace(-np.pi, np.pi, n_bins + 1)
    return density_from_batches("theta", acc.thet, edges)


def velocity_field(
    table: Table, model: ForceModel, flow_time: float, grid: int = 50,
    seed: int = 0, workers: int = 1, min_weight: float = 10.0, **kw,
) -> VelocityFieldGrid:
    """Per-cell time-weighted mean velocity (the local current direction)."""
    if grid < 10:
        raise InputError("grid must be at least 10x10")
    acc = run_flow(table, model, flow_time, seed, workers, grid=grid, **kw)
    e = np.linspace(0, 1, grid + 1)
    return VelocityFieldGrid(e, e, acc.vel_w, acc.vel_vx, acc.vel_vy,
                             min_weight=min_weight)


def current(
    table: Table, model: ForceModel, flow_time: float, seed: int = 0,
    workers: int = 1, **kw,
) -> tuple[AverageEstimate, AverageEstimate]:
    """Global mean velocity J = (flow average of v1, v2).

    Per-flight displacement integrates the velocity exactly, so J is the
    summed displacement over the summed time, batch-ratio errors.
    """
    acc = run_flow(table, model, flow_time, seed, workers, **kw)
    out = []
    tau_tot = acc.curr[:, 2].sum()
    used = acc.curr[:, 2] > 0
    for i in (0, 1):
        ratios = acc.curr[used, i] / acc.curr[used, 2]
        est = batch_average(ratios, acc.n_collisions, acc.flagged)
        # center the batch-means estimate on the exact global ratio
        out.append(AverageEstimate(
            float(acc.curr[:, i].sum() / tau_tot), est.stderr,
            acc.n_collisions, int(used.sum()), est.flagged_fraction))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# generic flow averages via the suspension identity

def flow_average(
    table: Table, model: ForceModel, F, n_collisions: int,
    seed: int = 0, workers: int = 1, burn_in: int = DEFAULT_BURN_IN,
    n_batches: int = DEFAULT_BATCHES, quad_order: int = 8,
    kind: str = "smooth", dt_sample: float = DEFAULT_DT_SAMPLE,
    tol: float = 1e-10,
) -> AverageEstimate:
    """Flow (time) average of F(x, y, theta) over the steady state.

    Converts to a ratio of collision sums: sum of per-flight time
    integrals over the sum of flight times.  Smooth observables are
    integrated per flight with fixed-order Gauss-Legendre quadrature;
    ``kind="sampled"`` instead evaluates F at jittered uniform time
    samples (for indicator-type observables).  In-flight states come
    from the closed-form thermostat motion (exact for zero/thermostat).
    """
    if model.kind == "general":
        raise InputError("flow_average supports zero/thermostat models")
    nodes, weights = np.polynomial.legendre.leggauss(quad_order)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights

    def integrals(t, chunk, jit):
        x0, y0, th0 = _lift_batch(t, chunk)
        tau = chunk["tau"]
        fsum = np.zeros_like(tau)
        if kind == "smooth":
            for xi, wi in zip(nodes, weights):
                ts = xi * tau
                th, ddx, ddy = thermostat_closed_form(
                    th0, model.epsilon if model.kind == "thermostat" else 0.0,
                    ts, model.direction)
                fsum += wi * F(x0 + ddx, y0 + ddy, th)
            return fsum * tau
        # time-sampled: unbiased for indicators, weight dt per sample
        for i in range(len(tau)):
            ts = (jit[i] + np.arange(int(tau[i] / dt_sample) + 1)) * dt_sample
            ts = ts[ts < tau[i]]
            if len(ts) == 0:
                continue
            th, ddx, ddy = thermostat_closed_form(
                th0[i], model.epsilon if model.kind == "thermostat" else 0.0,
                ts, model.direction)
            fsum[i] = F(x0[i] + ddx, y0[i] + ddy, th).sum() * dt_sample
        return fsum

    per = _split_counts(n_collisions, workers)

    def job(w):
        jit_gen = rng.stream(seed, w, "jitter")

        def fn(t, chunk):
            jit = jit_gen.random(len(chunk["tau"])) if kind == "sampled" else None
            return integrals(t, chunk, jit)

        return _map_worker(table, model, per[w], burn_in, seed, w,
                           {"fint": fn, "tau": _obs_tau}, n_batches, tol)

    results = _run_workers(job, workers)
    ratios = []
    n_total = 0
    flagged = 0
    fsum_tot = 0.0
    tau_tot = 0.0
    for r in results:
        fs = r["sums"]["fint"]
        ts = r["sums"]["tau"]
        ok = ts > 0
        ratios.append(fs[ok] / ts[ok])
        fsum_tot += fs.sum()
        tau_tot += ts.sum()
        n_total += r["n"]
        flagged += r["flagged"]
    bm = np.concatenate(ratios)
    est = batch_average(bm, n_total, flagged)
    return AverageEstimate(float(fsum_tot / tau_tot), est.stderr,
                           n_total, est.n_batches, est.flagged_fraction)


def _lift_batch(table: Table, chunk):
    """Outgoing flow states for arrays of collision coordinates."""
    r = table.radii[chunk["disc"]]
    alpha = np.mod(chunk["s"], 2.0 * np.pi * r) / r
    x = table.centers[chunk["disc"], 0] + r * np.cos(alpha)
    y = table.centers[chunk["disc"], 1] + r * np.sin(alpha)
    th = alpha + chunk["phi"]
    return x, y, th


# ---------------------------------------------------------------------------
# diagnostics

def classify_homogeneity(phi: float, k0: int = 5):
    """Homogeneity-strip label of a reflection angle.

    Returns "bulk" for |phi| < pi/2 - 1/k0^2, otherwise (k, sign) with
    pi/2 - 1/k^2 <= |phi| < pi/2 - 1/(k+1)^2.  Diagnostic only.
    """
    if k0 < 2:
        raise InputError("k0 must be >= 2")
    gap = math.pi / 2 - abs(phi)
    if gap < 0:
        raise InputError("phi outside [-pi/2, pi/2]")
    if gap > 1.0 / (k0 * k0):
        return "bulk"
    sign = 1 if phi >= 0 else -1
    if gap == 0.0:
        return (10**9, sign)  # capped: exactly grazing
    k = int(math.floor(gap**-0.5))
    return (k, sign)


def strip_fractions(phis: np.ndarray, k0: int = 5) -> dict:
    """Fraction of collisions per homogeneity strip (bulk aggregated)."""
    out: dict = {}
    for p in np.asarray(phis).ravel():
        lab = classify_homogeneity(float(p), k0)
        out[lab] = out.get(lab, 0) + 1
    n = len(phis)
    return {k: v / n for k, v in out.items()}
