import numpy as np
import pytest

from rsblab.core import ModelParams, derive_seed, sample_disorder


def instance(seed, **kw):
    """(params, disorder) with the given overrides; disorder drawn from ``seed``."""
    params = ModelParams(**kw)
    return params, sample_disorder(params, seed)


def random_couplings(rng, **fixed):
    kw = dict(beta=rng.uniform(0.3, 2.0), J1=rng.uniform(0.3, 1.5), J3=rng.uniform(0.3, 1.5),
              c=rng.uniform(-1.0, 1.0))
    kw.update(fixed)
    return kw


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)


@pytest.fixture
def seeds():
    return [derive_seed(7, 0, r) for r in range(64)]


_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line; all lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def report(k, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
        print(line)
        lines.append((k, line))
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
