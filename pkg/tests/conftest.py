"""Shared fixtures and independent numeric oracles for the test suite."""

import numpy as np
import pytest

from conebarrier.scenarios import full_suite
from conebarrier.sim import run_scenario


@pytest.fixture(scope="session")
def suite_traces():
    """Every packaged scenario simulated once per session."""
    return {name: run_scenario(cfg) for name, cfg in full_suite().items()}


def directional_fd(h_of, x, direction, delta=1e-6):
    """Central finite difference of h along an unnormalized direction.

    Steps are taken along the normalized direction and rescaled, keeping the
    stencil width independent of the direction's magnitude.
    """
    direction = np.asarray(direction, dtype=float)
    nrm = float(np.linalg.norm(direction))
    if nrm == 0.0:
        return 0.0
    unit = direction / nrm
    hp = h_of(x + delta * unit)
    hm = h_of(x - delta * unit)
    return (hp - hm) / (2.0 * delta) * nrm


def grid_project(u_ref, rows, half_width=10.0, coarse=0.05, mid=0.005, fine=0.001,
                 deep=False):
    """Brute-force projection onto {u : lg u >= rhs} by grid refinement.

    Returns the best feasible grid point at the fine resolution, or None
    when the coarse grid over the box finds no feasible point. With
    ``deep=True`` an empty coarse pass triggers a full-box rescan at the mid
    resolution, catching feasible slivers thinner than the coarse lattice
    (worth the cost only when the instance is known to be feasible).
    """
    u_ref = np.asarray(u_ref, dtype=float)

    def best_on(lo, hi, step):
        ticks_x = np.arange(lo[0], hi[0] + step / 2, step)
        ticks_y = np.arange(lo[1], hi[1] + step / 2, step)
        uu, vv = np.meshgrid(ticks_x, ticks_y, indexing="ij")
        pts = np.column_stack([uu.ravel(), vv.ravel()])
        feas = np.ones(pts.shape[0], dtype=bool)
        for lg, rhs in rows:
            feas &= pts @ np.asarray(lg, dtype=float) >= rhs - 1e-9
        if not np.any(feas):
            return None
        pts = pts[feas]
        d2 = np.sum((pts - u_ref) ** 2, axis=1)
        return pts[int(np.argmin(d2))]

    lo = np.array([-half_width, -half_width])
    hi = np.array([half_width, half_width])
    best = best_on(lo, hi, coarse)
    if best is None:
        if not deep:
            return None
        best = best_on(lo, hi, mid)
        if best is None:
            return None
    for step, window in ((mid, 0.6), (fine, 0.03)):
        refined = best_on(best - window, best + window, step)
        if refined is not None:
            best = refined
    return best
