"""Linear-response machinery: map Jacobians, Kawasaki series, slope fits.

The density of the pulled-back billiard measure under the perturbed map,

    g(X) = [cos phi(F X) / cos phi(X)] * |det DF(X)|,

is evaluated with central-difference Jacobians in the (s, phi) chart.
Each determinant carries a Richardson consistency check (step halving
must agree to 3 significant digits) plus branch-coherence guards; a
sample failing either is flagged and excluded, and the excluded
fraction is reported rather than hidden.

From g the response kernel D(X) = (1 - g)/eps feeds the Kawasaki-type
series for the steady-state shift of an observable and, extrapolated to
eps -> 0, the first-order response slope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .dynamics import apply_map_batch, free_flight_data
from .errors import InputError
from .forces import ForceModel
from .geometry import Table
from .measure import (
    birkhoff_map_average,
    map_averages,
    resolve_observable,
    sample_nu0_batch,
)
from .stats import AverageEstimate, batch_average, wls_line_fit, wls_through_origin

FD_STEP = 1e-6
GRAZING_COS_JACOBIAN = 1e-4
RICHARDSON_RTOL = 1e-3
BRANCH_COHERENCE = 0.05  # max stencil spread in chart units
DELTA0_EPS_PAIR = (1e-3, 5e-4)
# tighter flight tolerances than statistical runs: FD differences of order
# 1e-6 must not be polluted by arrival noise
JAC_TOL = 1e-12
JAC_REFINE = 1e-13


def _wrap_ds(ds: np.ndarray, circ: np.ndarray) -> np.ndarray:
    """Arclength differences wrapped to the shorter way around the disc."""
    return (ds + 0.5 * circ) % circ - 0.5 * circ


def _stencil_maps(table, model, disc, s, phi, h):
    """Map the 4 central-difference stencil neighbors of each coordinate."""
    out = []
    for dd, dp in ((h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)):
        phis = np.clip(phi + dp, -math.pi / 2, math.pi / 2)
        out.append(apply_map_batch(table, model, disc, s + dd, phis,
                                   tol=JAC_TOL, refine_tol=JAC_REFINE))
    return out


def _det_from_stencil(table, sten, h):
    """2x2 central-difference determinant plus branch-coherence flags."""
    sp, sm, pp, pm = sten
    circ = 2.0 * np.pi * table.radii
    csten = circ[sp["disc"]]
    ds_ds = _wrap_ds(sp["s"] - sm["s"], csten) / (2 * h)
    dphi_ds = (sp["phi"] - sm["phi"]) / (2 * h)
    ds_dp = _wrap_ds(pp["s"] - pm["s"], csten) / (2 * h)
    dphi_dp = (pp["phi"] - pm["phi"]) / (2 * h)
    det = ds_ds * dphi_dp - ds_dp * dphi_ds
    bad = (sp["disc"] != sm["disc"]) | (pp["disc"] != pm["disc"]) \
        | (sp["disc"] != pp["disc"])
    spread = np.maximum(np.abs(_wrap_ds(sp["s"] - sm["s"], csten)),
                        np.abs(_wrap_ds(pp["s"] - pm["s"], csten)))
    bad |= spread > BRANCH_COHERENCE
    for st in sten:
        bad |= st["flag"] > 0
    return det, bad


def jacobian_det_batch(
    table: Table, model: ForceModel, disc, s, phi, fd_step: float = FD_STEP,
) -> tuple[np.ndarray, np.ndarray]:
    """|det DF| at each coordinate with Richardson verification.

    Returns (det, flagged).  Flagged samples crossed a discontinuity or
    failed the step-halving agreement and must be excluded by callers.
    """
    disc = np.asarray(disc, dtype=np.int64)
    s = np.asarray(s, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    det1, bad1 = _det_from_stencil(
        table, _stencil_maps(table, model, disc, s, phi, fd_step), fd_step)
    det2, bad2 = _det_from_stencil(
        table, _stencil_maps(table, model, disc, s, phi, fd_step / 2), fd_step / 2)
    flagged = bad1 | bad2
    flagged |= np.abs(det1 - det2) > RICHARDSON_RTOL * np.abs(det2)
    flagged |= np.cos(phi) < GRAZING_COS_JACOBIAN
    flagged |= det2 <= 0.0  # orientation must be preserved on one branch
    # both step sizes are in hand: extrapolate away the O(h^2) truncation
    det = (4.0 * det2 - det1) / 3.0
    return det, flagged


def jacobian_det(table, model, X, fd_step: float = FD_STEP):
    """Scalar convenience wrapper; returns (det, flagged)."""
    det, flag = jacobian_det_batch(
        table, model, np.array([X.disc_id]), np.array([X.s]), np.array([X.phi]),
        fd_step)
    return float(det[0]), bool(flag[0])


def g_eps_batch(
    table: Table, model: ForceModel, disc, s, phi, fd_step: float = FD_STEP,
) -> tuple[np.ndarray, np.ndarray]:
    """Jacobian of F_eps relative to the billiard measure, per sample."""
    det, flagged = jacobian_det_batch(table, model, disc, s, phi, fd_step)
    img = apply_map_batch(table, model, disc, s, phi,
                          tol=JAC_TOL, refine_tol=JAC_REFINE)
    g = np.cos(img["phi"]) / np.cos(phi) * det
    flagged = flagged | (img["flag"] > 0) | (np.cos(img["phi"]) < GRAZING_COS_JACOBIAN)
    return g, flagged


def g_eps(table, model, X, fd_step: float = FD_STEP):
    g, flag = g_eps_batch(table, model, np.array([X.disc_id]),
                          np.array([X.s]), np.array([X.phi]), fd_step)
    return float(g[0]), bool(flag[0])


def delta_eps_batch(table, model_family, disc, s, phi, eps: float,
                    fd_step: float = FD_STEP):
    """(1 - g_eps)/eps per sample for the family at field strength eps."""
    if eps <= 0:
        raise InputError("delta_eps requires eps > 0")
    g, flagged = g_eps_batch(table, model_family.with_epsilon(eps),
                             disc, s, phi, fd_step)
    return (1.0 - g) / eps, flagged


def delta0_batch(table, model_family, disc, s, phi, fd_step: float = FD_STEP):
    """Response kernel at eps -> 0 by two-point Richardson extrapolation.

    Uses the pair eps = (1e-3, 5e-4): Delta_0 ~= 2 Delta(5e-4) - Delta(1e-3),
    cancelling the first-order eps dependence.
    """
    e1, e2 = DELTA0_EPS_PAIR
    d1, f1 = delta_eps_batch(table, model_family, disc, s, phi, e1, fd_step)
    d2, f2 = delta_eps_batch(table, model_family, disc, s, phi, e2, fd_step)
    return 2.0 * d2 - d1, f1 | f2


@dataclass(frozen=True)
class KawasakiReport:
    eps: float
    observable: str
    nu0_f: AverageEstimate
    terms: np.ndarray            # T_k, k = 1..K_max (NaN beyond truncation)
    term_stderr: np.ndarray
    truncation: int
    rhs_total: float
    rhs_stderr: float
    lhs: AverageEstimate
    discrepancy_sigma: float
    flagged_fraction: float
    n_samples: int
    warning: str = ""


def _truncate_terms(terms: np.ndarray, stderr: np.ndarray, k_max: int) -> int:
    """Noise-floor rule: stop at the first k with 3 consecutive sub-2sigma terms."""
    run = 0
    for k in range(len(terms)):
        if abs(terms[k]) < 2.0 * stderr[k]:
            run += 1
            if run >= 3:
                return k + 1
        else:
            run = 0
    return min(len(terms), k_max)


class _SeriesMoments:
    """Streaming first/second moments of the per-sample series terms.

    v_ki = f(F^k X_i) * Delta(X_i).  Keeps sums and the k x k cross-moment
    matrix so the variance of any truncated sum includes the cross-term
    covariances (the terms share samples and are correlated).
    """

    def __init__(self, k_max: int):
        self.k_max = k_max
        self.n = 0
        self.s = np.zeros(k_max)
        self.m2 = np.zeros((k_max, k_max))

    def add(self, vals: np.ndarray):
        # vals: (k_max, n_chunk)
        self.n += vals.shape[1]
        self.s += vals.sum(axis=1)
        self.m2 += vals @ vals.T

    def add_from(self, other: "_SeriesMoments"):
        self.n += other.n
        self.s += other.s
        self.m2 += other.m2

    def terms(self):
        t = self.s / self.n
        cov = (self.m2 - np.outer(self.s, self.s) / self.n) / (self.n - 1)
        stderr = np.sqrt(np.diag(cov) / self.n)
        return t, stderr, cov

    def sum_stderr(self, K: int) -> float:
        _, _, cov = self.terms()
        return float(np.sqrt(cov[:K, :K].sum() / self.n))


def _series_moments(table, mapped_model, fn, disc, s, phi, weight, k_max,
                    chunk: int = 200_000) -> _SeriesMoments:
    """Accumulate f(F^k X) * weight(X) moments along orbits of the model."""
    mom = _SeriesMoments(k_max)
    n = len(disc)
    for i0 in range(0, n, chunk):
        i1 = min(n, i0 + chunk)
        cd, cs, cp = disc[i0:i1].copy(), s[i0:i1].copy(), phi[i0:i1].copy()
        w = weight[i0:i1]
        vals = np.empty((k_max, i1 - i0))
        for k in range(k_max):
            img = apply_map_batch(table, mapped_model, cd, cs, cp)
            cd, cs, cp = img["disc"], img["s"], img["phi"]
            vals[k] = fn(table, {"disc": cd, "s": cs, "phi": cp}) * w
        mom.add(vals)
    return mom


def kawasaki_rhs(
    table: Table, model: ForceModel, f, eps: float, n_samples: int,
    k_max: int = 30, seed: int = 0, workers: int = 1,
    lhs_collisions: int = 2_000_000, fd_step: float = FD_STEP,
) -> KawasakiReport:
    """Evaluate both sides of the Kawasaki identity for one observable.

    RHS: nu_0(f) + eps * sum_k mean[f(F_eps^k X) * Delta_eps(X)] over
    X ~ nu_0, truncated when terms drop below their noise floor.
    LHS: direct steady-state average of f from independent streams (both
    the stream purpose and the seed differ).
    """
    fname = f if isinstance(f, str) else getattr(f, "__name__", "custom")
    fn = resolve_observable(f)
    family = model
    mapped = family.with_epsilon(eps) if family.kind != "general" else family
    gen = rng.stream(seed, 0, "rhs")
    draws = sample_nu0_batch(table, gen, n_samples)
    disc, s, phi = draws["disc"], draws["s"], draws["phi"]

    f0_vals = fn(table, dict(draws))
    nu0_f = AverageEstimate(
        float(f0_vals.mean()), float(f0_vals.std(ddof=1) / math.sqrt(n_samples)),
        n_samples, 1, 0.0)

    if eps > 0:
        delta, flagged = delta_eps_batch(table, family, disc, s, phi, eps, fd_step)
    else:
        delta = np.zeros(n_samples)
        flagged = np.zeros(n_samples, dtype=bool)
    ok = ~flagged
    frac_flagged = 1.0 - ok.mean()

    mom = _series_moments(table, mapped, fn, disc[ok], s[ok], phi[ok],
                          delta[ok], k_max)
    terms, stderr, _ = mom.terms()
    K = _truncate_terms(terms, stderr, k_max)

    rhs_total = nu0_f.mean + eps * float(np.sum(terms[:K]))
    rhs_stderr = math.sqrt(nu0_f.stderr**2 + (eps * mom.sum_stderr(K)) ** 2)

    lhs = birkhoff_map_average(table, mapped, f, lhs_collisions,
                               seed=seed + 1, workers=workers)
    comb = math.hypot(rhs_stderr, lhs.stderr)
    disc_sigma = abs(lhs.mean - rhs_total) / comb if comb > 0 else math.inf
    warning = ""
    if frac_flagged > 0.05:
        warning = (f"flagged fraction {frac_flagged:.3f} exceeds 5%: "
                   "series bias risk")
    return KawasakiReport(
        eps=eps, observable=fname, nu0_f=nu0_f, terms=terms,
        term_stderr=stderr, truncation=K, rhs_total=rhs_total,
        rhs_stderr=rhs_stderr, lhs=lhs, discrepancy_sigma=disc_sigma,
        flagged_fraction=frac_flagged, n_samples=n_samples, warning=warning)


@dataclass(frozen=True)
class ResponseReport:
    observable: str
    eps_grid: np.ndarray
    nu_eps: list[AverageEstimate]
    slope: float
    slope_err: float
    intercept: float
    intercept_err: float
    series_slope: float
    series_slope_err: float
    series_truncation: int
    agreement_sigma: float
    agreement_ratio: float
    nonlinearity_sigma: float = 0.0
    recommendation: str = ""


def series_slope(
    table: Table, model_family: ForceModel, f, n_samples: int,
    k_max: int = 30, seed: int = 0, fd_step: float = FD_STEP,
    chunk: int = 200_000, workers: int = 1,
) -> tuple[float, float, int]:
    """First-order response slope from the zero-field series.

    sum_k nu_0[(f o F_0^k) Delta_0] over X ~ nu_0, truncated at the term
    noise floor.  Returns (slope, stderr, K); the stderr includes the
    cross-k covariances.
    """
    from .measure import _run_workers, _split_counts

    fn = resolve_observable(f)
    zero = ForceModel.zero()
    per = _split_counts(n_samples, workers)

    def job(w):
        gen = rng.stream(seed, w, "rhs")
        mom = _SeriesMoments(k_max)
        for i0 in range(0, per[w], chunk):
            m = min(chunk, per[w] - i0)
            draws = sample_nu0_batch(table, gen, m)
            disc, s, phi = draws["disc"], draws["s"], draws["phi"]
            delta0, flagged = delta0_batch(table, model_family, disc, s, phi,
                                           fd_step)
            ok = ~flagged
            mom.add_from(_series_moments(table, zero, fn, disc[ok], s[ok],
                                         phi[ok], delta0[ok], k_max, chunk))
        return mom

    mom = _SeriesMoments(k_max)
    for sub in _run_workers(job, workers):
        mom.add_from(sub)
    terms, stderr, _ = mom.terms()
    K = _truncate_terms(terms, stderr, k_max)
    return float(np.sum(terms[:K])), mom.sum_stderr(K), K


def linear_response_fit(
    table: Table, model_family: ForceModel, f, eps_grid, n_collisions: int,
    seed: int = 0, workers: int = 1, n_series_samples: int = 200_000,
    k_max: int = 30, stat_tol: float = 1e-9,
) -> ResponseReport:
    """Fit nu_eps(f) against eps and compare with the series prediction.

    ``f`` must be a fixed (eps-independent) observable.  The per-eps
    steady-state averages come from independent streams; the slope fit is
    weighted least squares with a free intercept.  A quadratic term
    significant at 3 sigma triggers a reduced-eps recommendation.
    """
    eps_grid = np.asarray(sorted(eps_grid), dtype=float)
    if len(eps_grid) < 4:
        raise InputError("need at least 4 field strengths")
    fname = f if isinstance(f, str) else getattr(f, "__name__", "custom")
    ests = []
    for i, e in enumerate(eps_grid):
        ests.append(birkhoff_map_average(
            table, model_family.with_epsilon(float(e)), f, n_collisions,
            seed=seed + 101 * i, workers=workers, tol=stat_tol))
    y = np.array([e.mean for e in ests])
    yerr = np.array([e.stderr for e in ests])
    yerr = np.maximum(yerr, 1e-15)  # constant observables have zero spread
    a, b, a_err, b_err = wls_line_fit(eps_grid, y, yerr)

    # quadratic check: refit with eps^2 term via normal equations
    nb_sig = _quadratic_significance(eps_grid, y, yerr)
    rec = ""
    if nb_sig > 3.0:
        rec = ("quadratic term significant at "
               f"{nb_sig:.1f} sigma: halve the eps grid")

    s_slope, s_err, K = series_slope(table, model_family, f,
                                     n_series_samples, k_max, seed + 7,
                                     workers=workers)
    comb = math.hypot(b_err, s_err)
    agree_sigma = abs(b - s_slope) / comb if comb > 0 else math.inf
    ratio = b / s_slope if s_slope != 0 else math.inf
    return ResponseReport(
        observable=fname, eps_grid=eps_grid, nu_eps=ests,
        slope=b, slope_err=b_err, intercept=a, intercept_err=a_err,
        series_slope=s_slope, series_slope_err=s_err, series_truncation=K,
        agreement_sigma=agree_sigma, agreement_ratio=ratio,
        nonlinearity_sigma=nb_sig, recommendation=rec)


def _quadratic_significance(x, y, yerr):
    """z-score of the quadratic coefficient in a weighted parabola fit."""
    w = 1.0 / np.asarray(yerr) ** 2
    A = np.vstack([np.ones_like(x), x, x * x]).T
    Aw = A * w[:, None]
    cov = np.linalg.inv(Aw.T @ A)
    coef = cov @ (Aw.T @ y)
    return abs(coef[2]) / math.sqrt(cov[2, 2])


@dataclass(frozen=True)
class ConductivityReport:
    eps_grid: np.ndarray
    j1: list[AverageEstimate]
    j2: list[AverageEstimate]
    sigma_hat: float
    sigma_err: float
    ratios: np.ndarray           # J1(eps)/eps
    ratio_err: np.ndarray
    pairwise_max_sigma: float    # worst pairwise ratio discrepancy


def conductivity(
    table: Table, eps_grid, flow_time: float, seed: int = 0,
    workers: int = 1, direction_deg: float = 0.0, stat_tol: float = 1e-9,
) -> ConductivityReport:
    """Ohmic conductivity from the current J(eps) = sigma eps + o(eps)."""
    from .measure import current

    eps_grid = np.asarray(sorted(eps_grid), dtype=float)
    j1, j2 = [], []
    for i, e in enumerate(eps_grid):
        model = ForceModel.thermostat(float(e), direction_deg)
        a, b = current(table, model, flow_time, seed=seed + 13 * i,
                       workers=workers, tol=stat_tol)
        j1.append(a)
        j2.append(b)
    y = np.array([e.mean for e in j1])
    yerr = np.maximum(np.array([e.stderr for e in j1]), 1e-15)
    sig, sig_err = wls_through_origin(eps_grid, y, yerr)
    ratios = y / eps_grid
    ratio_err = yerr / eps_grid
    worst = 0.0
    for i in range(len(eps_grid)):
        for j in range(i + 1, len(eps_grid)):
            comb = math.hypot(ratio_err[i], ratio_err[j])
            worst = max(worst, abs(ratios[i] - ratios[j]) / comb)
    return ConductivityReport(eps_grid, j1, j2, sig, sig_err,
                              ratios, ratio_err, worst)


@dataclass(frozen=True)
class ExpansionReport:
    log_factors: np.ndarray
    lyapunov_estimate: float | None
    restarts: int


def expansion_diagnostic(
    table: Table, model: ForceModel, X, n_iterations: int,
    slope: float = 1.0, fd_step: float = FD_STEP, seed: int = 0,
) -> ExpansionReport:
    """Finite-difference tangent propagation along one orbit.

    The tangent starts inside the unstable cone (d phi/d s = ``slope``)
    and is renormalized each step; the log growth factors accumulate an
    estimate of the expansion rate.  Branch crossings restart the
    tangent segment and are counted.
    """
    if n_iterations == 0:
        return ExpansionReport(np.empty(0), None, 0)
    disc = np.array([X.disc_id], dtype=np.int64)
    s = np.array([X.s])
    phi = np.array([X.phi])
    v = np.array([1.0, slope])
    v /= np.linalg.norm(v)
    logs = []
    restarts = 0
    for _ in range(n_iterations):
        sten = _stencil_maps(table, model, disc, s, phi, fd_step)
        det, bad = _det_from_stencil(table, sten, fd_step)
        img = apply_map_batch(table, model, disc, s, phi)
        if bool(bad[0]) or img["flag"][0] > 0:
            v = np.array([1.0, slope])
            v /= np.linalg.norm(v)
            restarts += 1
            disc, s, phi = img["disc"], img["s"], img["phi"]
            continue
        sp, sm, pp, pm = sten
        circ = 2.0 * np.pi * table.radii[sp["disc"]]
        J = np.array([
            [_wrap_ds(sp["s"] - sm["s"], circ)[0], _wrap_ds(pp["s"] - pm["s"], circ)[0]],
            [(sp["phi"] - sm["phi"])[0], (pp["phi"] - pm["phi"])[0]],
        ]) / (2 * fd_step)
        v = J @ v
        growth = np.linalg.norm(v)
        logs.append(math.log(growth))
        v /= growth
        disc, s, phi = img["disc"], img["s"], img["phi"]
    logs = np.array(logs)
    lam = float(np.exp(logs.mean())) if len(logs) else None
    return ExpansionReport(logs, lam, restarts)
