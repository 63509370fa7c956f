import numpy as np
import pytest

from polyfwd.model import REFERENCE_PARAMS, ThreeFactorParams, params_from_dict


@pytest.fixture(scope="session")
def ref_params():
    return params_from_dict(REFERENCE_PARAMS)


@pytest.fixture(scope="session")
def three_factor():
    return ThreeFactorParams(c=0.2, alpha=8.0, beta=0.3, kappa_Z=0.05, kappa_Y=0.4, sigma_Z=0.4,
                             sigma_Y=0.8, kappa_R=1.0, theta_R=0.2, sigma_R=0.5,
                             z0=1.5, y0=1.2, r0=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; returns the verdict so tests can ``assert report(...)``."""

    def _report(label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return bool(ok)

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
