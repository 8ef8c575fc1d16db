import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from surface_stokes.assembly import assemble
from surface_stokes.geometry import SurfaceGeometry
from surface_stokes.mesh import icosphere

settings.register_profile(
    "default", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def sphere():
    return SurfaceGeometry(1.0)


@pytest.fixture(scope="session")
def systems():
    """Small assembled systems keyed by (c, level, jitter), built on demand."""
    cache = {}

    def get(c, level, jitter=0.0, **kw):
        key = (c, level, jitter, tuple(sorted(kw.items())))
        if key not in cache:
            mesh = icosphere(SurfaceGeometry(c), level, jitter=jitter)
            cache[key] = assemble(mesh, **kw)
        return cache[key]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request, capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def report(name, ok, detail):
        line = f"CRITERION {name}: {'PASS' if ok else 'FAIL'} | {detail}"
        lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
