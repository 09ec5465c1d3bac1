import math

import numpy as np
import pytest
from scipy import stats as sstats

from lorentzgas.dynamics import apply_map_batch
from lorentzgas.errors import InputError
from lorentzgas.forces import ForceModel
from lorentzgas import measure, rng
from lorentzgas.measure import (
    birkhoff_map_average,
    classify_homogeneity,
    current,
    flow_average,
    map_averages,
    phi_density,
    r_density,
    run_flow,
    sample_nu0,
    sample_nu0_batch,
    spatial_density,
    theta_density,
    velocity_field,
)


class _StubGen:
    """Deterministic generator driving the inverse-CDF branch directly."""

    def __init__(self, u):
        self.u = u

    def choice(self, n, size, p):
        return np.zeros(size, dtype=np.int64)

    def random(self, n):
        return np.full(n, self.u)


class TestSampleNu0:
    def test_median_maps_to_zero(self, table):
        c = sample_nu0(table, _StubGen(0.5))
        assert c.phi == pytest.approx(0.0)

    def test_quantile_75_maps_to_pi_over_6(self, table):
        c = sample_nu0(table, _StubGen(0.75))
        assert c.phi == pytest.approx(math.asin(0.5), abs=1e-14)

    def test_phi_histogram_matches_half_cosine(self, table):
        gen = rng.stream(100, 0, "nu0")
        d = sample_nu0_batch(table, gen, 1_000_000)
        hist, edges = np.histogram(d["phi"], bins=50,
                                   range=(-math.pi / 2, math.pi / 2))
        width = edges[1] - edges[0]
        dens = hist / (1_000_000 * width)
        ref = 0.5 * np.cos(0.5 * (edges[1:] + edges[:-1]))
        assert np.abs(dens - ref).max() <= 0.01

    def test_disc_weights_by_circumference(self, table):
        gen = rng.stream(101, 0, "nu0")
        d = sample_nu0_batch(table, gen, 200_000)
        frac = (d["disc"] == 0).mean()
        assert frac == pytest.approx(0.4 / 0.6, abs=0.005)


class TestNu0Invariance:
    def test_pushforward_preserves_marginals(self, table, zero):
        n = 200_000
        gen = rng.stream(7, 0, "nu0")
        d = sample_nu0_batch(table, gen, n)
        out = apply_map_batch(table, zero, d["disc"], d["s"], d["phi"])
        r0 = table.s_offsets[d["disc"]] + d["s"]
        r1 = table.s_offsets[out["disc"]] + out["s"]
        crit = 1.628 * math.sqrt(2.0 / n)  # two-sample KS at the 1% level
        ks_phi = sstats.ks_2samp(d["phi"], out["phi"]).statistic
        ks_r = sstats.ks_2samp(r0, r1).statistic
        assert ks_phi < crit
        assert ks_r < crit


class TestBirkhoffAverages:
    def test_constant_observable(self, table, zero):
        est = birkhoff_map_average(table, zero, "const", 20_000, seed=1)
        assert est.mean == 1.0
        assert est.stderr == 0.0

    def test_sin_phi_vanishes_at_equilibrium(self, table, zero):
        est = birkhoff_map_average(table, zero, "sin_phi", 400_000, seed=2)
        assert abs(est.mean) <= 3 * est.stderr

    def test_cos_phi_equals_pi_over_four(self, table, zero):
        est = birkhoff_map_average(table, zero, "cos_phi", 400_000, seed=3)
        assert abs(est.mean - math.pi / 4) <= 3 * est.stderr
        assert est.stderr < 2e-3

    def test_mean_free_path(self, table, zero):
        # nu(tau) = pi |D| / |dD| for the billiard
        est = birkhoff_map_average(table, zero, "tau", 400_000, seed=4)
        expect = math.pi * (1 - 0.2 * math.pi) / (2 * math.pi * 0.6)
        assert abs(est.mean - expect) <= 3 * est.stderr

    def test_requires_more_than_burn_in(self, table, zero):
        with pytest.raises(InputError):
            birkhoff_map_average(table, zero, "const", 100, burn_in=1000)


class TestMergeLaw:
    def test_threaded_equals_repeat(self, table, thermo01):
        a = map_averages(table, thermo01, {"f": "cos_phi"}, 40_000,
                         seed=5, workers=2)["f"]
        b = map_averages(table, thermo01, {"f": "cos_phi"}, 40_000,
                         seed=5, workers=2)["f"]
        assert a == b

    def test_worker_merge_is_ordered_concatenation(self, table, zero):
        from lorentzgas.measure import _map_worker, _obs_cos_phi
        n, nb = 40_000, 64
        merged = map_averages(table, zero, {"f": "cos_phi"}, n, seed=6,
                              workers=2)["f"]
        parts = [_map_worker(table, zero, n // 2, 1000, 6, w,
                             {"f": _obs_cos_phi}, nb, 1e-10)
                 for w in range(2)]
        total = sum(p["sums"]["f"].sum() for p in parts)
        count = sum(p["counts"].sum() for p in parts)
        assert merged.mean == total / count
        bm = np.concatenate([p["sums"]["f"] / p["counts"] for p in parts])
        assert merged.stderr == bm.std(ddof=1) / math.sqrt(bm.size)

    def test_flow_threaded_deterministic(self, table, thermo01):
        a = run_flow(table, thermo01, 2000.0, seed=8, workers=2)
        b = run_flow(table, thermo01, 2000.0, seed=8, workers=2)
        assert np.array_equal(a.spat, b.spat)
        assert np.array_equal(a.curr, b.curr)
        assert a.n_collisions == b.n_collisions


class TestFlowAverage:
    def test_unit_observable_is_one(self, table, thermo01):
        est = flow_average(table, thermo01, lambda x, y, th: np.ones_like(x),
                           20_000, seed=9)
        assert est.mean == pytest.approx(1.0, abs=1e-12)

    def test_horizontal_velocity_vanishes_at_equilibrium(self, table, zero):
        est = flow_average(table, zero, lambda x, y, th: np.cos(th),
                           200_000, seed=10)
        assert abs(est.mean) <= 3 * est.stderr

    def test_suspension_identity_two_routes(self, table, thermo01):
        # flow average of F == nu(f)/nu(tau) with f the per-flight integral;
        # the right side is estimated by independent collision averages
        observables = [
            ("vx", lambda x, y, th: np.cos(th)),
            ("vy", lambda x, y, th: np.sin(th)),
            ("sin2", lambda x, y, th: np.sin(th) ** 2),
            ("posx", lambda x, y, th: np.cos(2 * np.pi * x)),
            ("mix", lambda x, y, th: np.cos(th) * np.sin(2 * np.pi * y)),
        ]
        n = 150_000
        for name, F in observables:
            lhs = flow_average(table, thermo01, F, n, seed=11)
            est = map_averages(
                table, thermo01,
                {"fint": _flight_integral(F, thermo01), "tau": "tau"},
                n, seed=12)
            rhs = est["fint"].mean / est["tau"].mean
            err = math.hypot(lhs.stderr,
                             est["fint"].stderr / max(est["tau"].mean, 1e-12))
            assert abs(lhs.mean - rhs) <= 3 * err, name

    def test_sampled_kind_close_to_smooth(self, table, thermo01):
        F = lambda x, y, th: np.cos(th)
        a = flow_average(table, thermo01, F, 60_000, seed=13, kind="smooth")
        b = flow_average(table, thermo01, F, 60_000, seed=13, kind="sampled")
        assert abs(a.mean - b.mean) <= 4 * math.hypot(a.stderr, b.stderr) + 1e-3


def _flight_integral(F, model):
    from lorentzgas.forces import thermostat_closed_form
    from lorentzgas.measure import _lift_batch
    nodes, weights = np.polynomial.legendre.leggauss(12)
    nodes = 0.5 * (nodes + 1)
    weights = 0.5 * weights

    def fn(table, chunk):
        x0, y0, th0 = _lift_batch(table, chunk)
        tau = chunk["tau"]
        acc = np.zeros_like(tau)
        for xi, wi in zip(nodes, weights):
            th, dx, dy = thermostat_closed_form(th0, model.epsilon, xi * tau,
                                                model.direction)
            acc += wi * F(x0 + dx, y0 + dy, th)
        return acc * tau

    return fn


class TestDensities:
    def test_phi_density_equilibrium(self, table, zero):
        est = phi_density(table, zero, 1_000_000, 50, seed=14)
        assert est.normalization() == pytest.approx(1.0, abs=1e-12)
        assert np.all(est.density >= 0)
        centers = est.centers
        assert np.abs(est.density - 0.5 * np.cos(centers)).max() <= 0.03

    def test_phi_density_even_under_field(self, table):
        model = ForceModel.thermostat(0.01)
        est = phi_density(table, model, 400_000, 50, seed=15)
        folded = est.density - est.density[::-1]
        err = np.hypot(est.stderr, est.stderr[::-1])
        assert np.all(np.abs(folded) <= 4 * err + 1e-12)

    def test_r_density_uniform(self, table, zero):
        est = r_density(table, zero, 1_000_000, 50, seed=16)
        expect = 1.0 / table.boundary_length
        assert np.abs(est.density / expect - 1).max() <= 0.05
        assert est.normalization() == pytest.approx(1.0, abs=1e-12)

    def test_r_density_positive_under_field(self, table, thermo01):
        est = r_density(table, thermo01, 200_000, 50, seed=17)
        assert np.all(est.density > 0)

    def test_equal_mass_for_symmetric_discs(self):
        from lorentzgas.geometry import Disc, Table, check_finite_horizon
        # reference layout plus an identical pair exchanged by y -> -y,
        # the reflection that also fixes the +x field
        t = Table((Disc((0.0, 0.0), 0.40), Disc((0.5, 0.5), 0.20),
                   Disc((0.9, 0.46), 0.035), Disc((0.9, 0.54), 0.035)))
        assert check_finite_horizon(t, 2.0, 16, 32, 0).passes
        model = ForceModel.thermostat(0.01)
        est = map_averages(
            t, model,
            {"mass2": lambda tb, c: (c["disc"] == 2).astype(float),
             "mass3": lambda tb, c: (c["disc"] == 3).astype(float)},
            400_000, seed=18)
        m2, m3 = est["mass2"], est["mass3"]
        assert m2.mean > 0 and m3.mean > 0
        assert abs(m2.mean - m3.mean) <= 3 * math.hypot(m2.stderr, m3.stderr)

    def test_spatial_density_equilibrium(self, table, zero):
        est = spatial_density(table, zero, 50_000.0, 20, seed=19)
        assert est.normalization() == pytest.approx(1.0, abs=1e-12)
        dens = est.density
        xc, yc = est.centers
        expect = 1.0 / (1 - 0.2 * math.pi)
        for i in range(20):
            for j in range(20):
                if _cell_free_fraction(table, xc[i], yc[j], 1 / 20) == 1.0:
                    assert abs(dens[i, j] / expect - 1) < 0.15
                elif _cell_free_fraction(table, xc[i], yc[j], 1 / 20) == 0.0:
                    assert dens[i, j] == 0.0

    def test_theta_density_uniform_at_equilibrium(self, table, zero):
        est = theta_density(table, zero, 50_000.0, 64, seed=20)
        assert np.abs(est.density - 1 / (2 * math.pi)).max() <= 0.02
        assert est.normalization() == pytest.approx(1.0, abs=1e-12)

    def test_theta_density_even_and_peaked_under_field(self, table):
        model = ForceModel.thermostat(0.01)
        est = theta_density(table, model, 100_000.0, 64, seed=21)
        folded = est.density - est.density[::-1]
        err = np.hypot(est.stderr, est.stderr[::-1])
        assert np.all(np.abs(folded) <= 4 * err + 1e-12)


def _cell_free_fraction(table, cx, cy, w):
    """1.0 / 0.0 / 0.5 for fully free / fully covered / boundary cells."""
    corners = [(cx + sx * w / 2, cy + sy * w / 2)
               for sx in (-1, 1) for sy in (-1, 1)]
    inside = []
    for px, py in corners + [(cx, cy)]:
        flag = False
        for d in table.discs:
            rel = (np.array([px, py]) - np.asarray(d.center) + 0.5) % 1.0 - 0.5
            if np.hypot(*rel) < d.radius:
                flag = True
        inside.append(flag)
    if all(inside):
        return 0.0
    if not any(inside):
        return 1.0
    return 0.5


class TestVelocityFieldAndCurrent:
    def test_equilibrium_field_is_zero(self, table, zero):
        grid = velocity_field(table, zero, 20_000.0, 10, seed=22)
        vx, vy = grid.mean_velocity
        ok = ~grid.insufficient
        # cell-mean speeds scatter around zero with ~1/sqrt(n) noise
        n = np.maximum(grid.weight, 1)
        bound = 4.0 / np.sqrt(n) + 0.02
        assert np.all(np.abs(vx[ok]) <= bound[ok])
        assert np.all(np.abs(vy[ok]) <= bound[ok])

    def test_covered_cells_have_no_weight(self, table, zero):
        grid = velocity_field(table, zero, 5_000.0, 20, seed=23)
        xc = 0.5 * (grid.x_edges[1:] + grid.x_edges[:-1])
        for i in range(20):
            for j in range(20):
                if _cell_free_fraction(table, xc[i], xc[j], 1 / 20) == 0.0:
                    assert grid.weight[i, j] == 0.0

    def test_mean_vertical_velocity_vanishes_by_symmetry(self, table):
        model = ForceModel.thermostat(0.01)
        j1, j2 = current(table, model, 50_000.0, seed=24)
        assert abs(j2.mean) <= 3 * j2.stderr

    def test_equilibrium_current_is_zero(self, table, zero):
        j1, j2 = current(table, zero, 50_000.0, seed=25)
        assert abs(j1.mean) <= 3 * j1.stderr
        assert abs(j2.mean) <= 3 * j2.stderr


class TestHomogeneityStrips:
    def test_bulk(self):
        assert classify_homogeneity(0.0, 5) == "bulk"

    def test_boundary_of_strip_six(self):
        # pi/2 - 1/36 is the inner edge of strip k = 6
        assert classify_homogeneity(math.pi / 2 - 1 / 36, 5) == (6, 1)

    def test_near_grazing_negative(self):
        k, sign = classify_homogeneity(-math.pi / 2 + 1e-9, 5)
        assert sign == -1
        assert k == int(math.floor((1e-9) ** -0.5))

    def test_rejects_out_of_range(self):
        with pytest.raises(InputError):
            classify_homogeneity(2.0)

    def test_fractions_sum_to_one(self, table, zero):
        d, s, phi = __import__("conftest").rand_nu0(table, 40, 2000)
        from lorentzgas.measure import strip_fractions
        fr = strip_fractions(phi, 5)
        assert sum(fr.values()) == pytest.approx(1.0)
        assert fr.get("bulk", 0) > 0.9
