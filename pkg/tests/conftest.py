import os

import pytest
from hypothesis import HealthCheck, settings

from smpsee.forward import ControlProcess
from smpsee.galerkin import TimeGrid, sample_noise
from smpsee.optimizer import ProjectedGradientSMP
from smpsee.scenarios import build

import _acceptance

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_acceptance.RESULTS):
        ok, detail = _acceptance.RESULTS[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def lq_run():
    """Optimizer on the 8-mode linear-terminal problem: N = 50, 2000 paths, from zero."""
    import time
    spec, space = build("lq-linear-phi", n_state=8)
    grid = TimeGrid(1.0, 50)
    noise = sample_noise(space, grid, 2000, seed=7)
    t0 = time.perf_counter()
    est = ProjectedGradientSMP().fit(spec, space, grid, noise, ControlProcess.zeros(grid, 8))
    return {"spec": spec, "space": space, "grid": grid, "noise": noise, "est": est,
            "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def quad_run():
    """Optimizer on the quadratic-terminal problem (Z nonzero), 1000 paths."""
    spec, space = build("lq-quadratic-phi", n_state=4)
    grid = TimeGrid(1.0, 40)
    noise = sample_noise(space, grid, 1000, seed=3)
    est = ProjectedGradientSMP().fit(spec, space, grid, noise)
    return {"spec": spec, "space": space, "grid": grid, "noise": noise, "est": est}

