import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorentzgas.errors import HorizonViolation, InputError
from lorentzgas.geometry import (
    BoundaryCoord,
    Disc,
    Table,
    boundary_point,
    check_finite_horizon,
    domain_area,
    first_hit_straight,
)

from conftest import brute_force_first_hit


class TestBoundaryPoint:
    def test_plus_x_point(self, table):
        pos, n = boundary_point(table, BoundaryCoord(0, 0.0))
        assert pos == pytest.approx([0.4, 0.0], abs=1e-14)
        assert n == pytest.approx([1.0, 0.0], abs=1e-14)

    def test_half_circumference_wraps(self, table):
        pos, n = boundary_point(table, BoundaryCoord(0, 0.40 * math.pi))
        assert pos == pytest.approx([0.6, 0.0], abs=1e-12)
        assert n == pytest.approx([-1.0, 0.0], abs=1e-12)

    def test_quarter_circumference(self, table):
        pos, n = boundary_point(table, BoundaryCoord(1, 0.20 * math.pi / 2))
        assert pos == pytest.approx([0.5, 0.7], abs=1e-12)
        assert n == pytest.approx([0.0, 1.0], abs=1e-12)

    def test_bad_disc_id(self, table):
        with pytest.raises(InputError):
            boundary_point(table, BoundaryCoord(5, 0.0))

    @given(disc_id=st.integers(0, 1), s=st.floats(-10, 10))
    @settings(max_examples=200, deadline=None)
    def test_point_on_circle(self, disc_id, s):
        table = Table((Disc((0.0, 0.0), 0.40), Disc((0.5, 0.5), 0.20)))
        d = table.discs[disc_id]
        pos, n = boundary_point(table, BoundaryCoord(disc_id, s))
        # undo the torus wrap before measuring the radius
        rel = (pos - np.asarray(d.center) + 0.5) % 1.0 - 0.5
        assert abs(np.hypot(*rel) - d.radius) <= 1e-12
        assert np.hypot(*n) == pytest.approx(1.0, abs=1e-12)


class TestDomainArea:
    def test_reference(self, table):
        assert domain_area(table) == pytest.approx(1 - 0.2 * math.pi, abs=1e-12)

    def test_empty(self):
        assert domain_area(Table(())) == 1.0

    def test_single(self):
        t = Table((Disc((0.5, 0.5), 0.25),))
        assert domain_area(t) == pytest.approx(1 - math.pi / 16, abs=1e-12)


class TestTableValidation:
    def test_overlap_rejected(self):
        with pytest.raises(InputError):
            Table((Disc((0.0, 0.0), 0.3), Disc((0.5, 0.0), 0.3)))

    def test_overlap_across_torus_rejected(self):
        # 0.95 and 0.05 are 0.1 apart around the torus
        with pytest.raises(InputError):
            Table((Disc((0.95, 0.5), 0.08), Disc((0.05, 0.5), 0.08)))

    @given(r=st.floats(-0.2, 0.9))
    @settings(max_examples=50, deadline=None)
    def test_radius_bounds(self, r):
        if 0.0 < r < 0.5:
            Disc((0.5, 0.5), r)
        else:
            with pytest.raises(InputError):
                Disc((0.5, 0.5), r)

    def test_boundary_length(self, table):
        assert table.boundary_length == pytest.approx(2 * math.pi * 0.6, abs=1e-12)


class TestFirstHit:
    def test_axis_hit_disc_a_copy(self, table):
        t, bc = first_hit_straight(table, (0.5, 0.0), (1.0, 0.0))
        assert t == pytest.approx(0.1, abs=1e-12)
        assert bc.disc_id == 0
        assert bc.s == pytest.approx(0.40 * math.pi, abs=1e-12)

    def test_axis_hit_disc_b_copy(self, table):
        t, bc = first_hit_straight(table, (0.5, 0.3), (0.0, -1.0))
        assert t == pytest.approx(0.6, abs=1e-12)
        assert bc.disc_id == 1
        assert bc.s == pytest.approx(0.20 * math.pi / 2, abs=1e-12)

    def test_against_brute_force_oracle(self, table):
        gen = np.random.default_rng(123)
        for _ in range(300):
            # random free-space origin
            while True:
                o = gen.random(2)
                if all(np.hypot(*((o - np.asarray(d.center) + 0.5) % 1 - 0.5))
                       > d.radius + 1e-6 for d in table.discs):
                    break
            a = gen.random() * 2 * math.pi
            u = (math.cos(a), math.sin(a))
            t, bc = first_hit_straight(table, o, u)
            t_ref, (disc_ref, s_ref) = brute_force_first_hit(table, o, u)
            assert abs(t - t_ref) <= 1e-10
            assert bc.disc_id == disc_ref
            assert abs(bc.s - s_ref) <= 1e-9

    def test_hit_point_on_circle(self, table):
        gen = np.random.default_rng(7)
        for _ in range(200):
            o = (0.45 + 0.02 * gen.random(), 0.05 + 0.02 * gen.random())
            a = gen.random() * 2 * math.pi
            t, bc = first_hit_straight(table, o, (math.cos(a), math.sin(a)))
            hit = np.asarray(o) + t * np.array([math.cos(a), math.sin(a)])
            d = table.discs[bc.disc_id]
            rel = (hit - np.asarray(d.center) + 0.5 + 3) % 1.0 - 0.5
            assert abs(np.hypot(*rel) - d.radius) <= 1e-10

    def test_reversed_recast_escapes(self, table):
        # re-casting from the hit point (nudged inward) along the reversed
        # direction must not immediately re-hit the same point
        gen = np.random.default_rng(11)
        for _ in range(100):
            o = (0.5, 0.05 + 0.01 * gen.random())
            a = gen.random() * 2 * math.pi
            u = np.array([math.cos(a), math.sin(a)])
            t, bc = first_hit_straight(table, o, u)
            pos, normal = boundary_point(table, bc)
            start = pos + 1e-9 * normal
            t_back, _ = first_hit_straight(table, start, -u)
            assert t_back > 1e-6


class TestFiniteHorizon:
    def test_reference_table_passes(self, table):
        rep = check_finite_horizon(table, 2.0, n_origins=64, n_directions=64,
                                   rng_seed=0)
        assert rep.passes
        assert rep.max_free_path < 2.0

    def test_single_disc_fails(self):
        t = Table((Disc((0.5, 0.5), 0.25),), horizon_bound=2.0)
        rep = check_finite_horizon(t, 2.0, n_origins=16, n_directions=16,
                                   rng_seed=0)
        assert not rep.passes
        assert rep.violating_ray is not None

    def test_shrunk_radii_fail(self):
        t = Table((Disc((0.0, 0.0), 0.1), Disc((0.5, 0.5), 0.1)),
                  horizon_bound=2.0)
        rep = check_finite_horizon(t, 2.0, n_origins=16, n_directions=16,
                                   rng_seed=0)
        assert not rep.passes

    def test_no_hit_raises_horizon_violation(self):
        t = Table((Disc((0.5, 0.5), 0.25),), horizon_bound=2.0)
        with pytest.raises(HorizonViolation):
            first_hit_straight(t, (0.5, 0.0), (1.0, 0.0))
