import numpy as np
import pytest

from qpskbf.array_model import (ScenarioDistribution, random_scenario, sample_covariance,
                                steering_vector, synthesize_snapshots, uca_geometry)
from qpskbf.linalg import HermitianMatrix


def random_psd(rng, n, rank=None):
    k = rank or n
    x = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
    return HermitianMatrix(x @ x.conj().T / k)


def random_unit_steering(rng, n):
    return np.exp(2j * np.pi * rng.uniform(size=n))


def scenario_instance(n, seed, dist=None):
    """(R, a_g, scenario) for one random jammed scenario on an N-element UCA."""
    geom = uca_geometry(n)
    sc = random_scenario(dist or ScenarioDistribution(), seed)
    r = sample_covariance(synthesize_snapshots(geom, sc))
    return r, steering_vector(geom, sc.sat_dir), sc


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
ACCEPTANCE_CRITERIA = 8


def record_criterion(number: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    ran = {r.nodeid.split("::")[0] for rs in terminalreporter.stats.values() for r in rs
           if hasattr(r, "nodeid")}
    if not any(p.endswith("test_acceptance.py") for p in ran):
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_CRITERIA + 1):
        passed, detail = ACCEPTANCE.get(n, (False, "did not complete"))
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
