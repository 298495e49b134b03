import numpy as np
import pytest

from aimcf.anisotropy import ell, euclidean
from aimcf.grid import DomainSpec, WulffShape, build_grid
from aimcf.verify import oracle_flow_field


@pytest.fixture(scope="session")
def wulff_oracle_flow():
    """Analytic Wulff flow (euclid, R = 1) on a moderate grid; no solves."""
    F = euclidean()
    spec = DomainSpec([WulffShape(F, (0.0, 0.0), 1.0)])
    domain = build_grid(spec, F, R_out=12.0, h=1 / 16)
    return F, oracle_flow_field("wulff", domain, F, 1.0)


@pytest.fixture(scope="session")
def three_squares_oracle_flow():
    """Analytic fattening flow of the three unit squares under ell-1."""
    F = ell(1)
    centers = ((0.0, 2.0), (-2.0, -2.0), (2.0, -2.0))
    spec = DomainSpec([WulffShape(F, c, 0.5) for c in centers])
    domain = build_grid(spec, F, R_out=8.0, h=1 / 32)
    return F, oracle_flow_field("three_squares", domain)
