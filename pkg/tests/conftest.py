import numpy as np
import pytest

from lorentzgas.forces import ForceModel
from lorentzgas.geometry import reference_table


@pytest.fixture(scope="session")
def table():
    return reference_table()


@pytest.fixture(scope="session")
def zero():
    return ForceModel.zero()


@pytest.fixture(scope="session")
def thermo01():
    return ForceModel.thermostat(0.01)


def brute_force_first_hit(table, origin, direction, scan=None):
    """Independent ray oracle: scan every lattice copy, smallest positive root.

    Plain nested loops over |offset| <= ceil(L)+2 with the quadratic solved
    per circle; tangency skip mirrors the production tolerance.
    """
    import math

    L = table.horizon_bound if scan is None else scan
    m = int(math.ceil(L)) + 2
    ox, oy = float(origin[0]), float(origin[1])
    ux, uy = float(direction[0]), float(direction[1])
    best_t = math.inf
    best = None
    for i, d in enumerate(table.discs):
        r = d.radius
        for a in range(-m, m + 1):
            for b in range(-m, m + 1):
                cx = d.center[0] + a
                cy = d.center[1] + b
                bb = (cx - ox) * ux + (cy - oy) * uy
                cc = (cx - ox) ** 2 + (cy - oy) ** 2 - r * r
                disc = bb * bb - cc
                if disc < 1e-14:
                    continue
                t = bb - math.sqrt(disc)
                if 1e-12 < t < best_t:
                    best_t = t
                    alpha = math.atan2(oy + t * uy - cy, ox + t * ux - cx) % (2 * math.pi)
                    best = (i, r * alpha)
    return best_t, best


def rand_nu0(table, seed, n):
    """Independent nu_0 sampler used by oracle-side checks."""
    gen = np.random.default_rng(seed)
    circ = 2 * np.pi * table.radii
    disc = gen.choice(len(circ), size=n, p=circ / circ.sum())
    s = gen.random(n) * circ[disc]
    phi = np.arcsin(2 * gen.random(n) - 1)
    return disc.astype(np.int64), s, phi
