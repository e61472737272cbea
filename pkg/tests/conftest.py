import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gp_draws(rng, n, xi, nu, psi=0.0):
    """Inverse-CDF generalised Pareto draws."""
    u = rng.random(n)
    if abs(xi) < 1e-12:
        return psi - nu * np.log1p(-u)
    return psi + nu / xi * ((1.0 - u) ** (-xi) - 1.0)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def _report(criterion, ok, detail):
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
