"""Shared benchmark runs and the acceptance summary printed after the session."""
import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from dpg_plate.benchmark import ExactSolution, RateTable, StudyConfig, convergence_study
from dpg_plate.diagnostics import galerkin_orthogonality

_ACCEPTANCE: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(cid, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    cid, title = marker.args
    entry = _ACCEPTANCE.setdefault(cid, {"title": title, "ok": True, "ran": False, "detail": []})
    if rep.when == "call" or rep.failed or rep.skipped:
        entry["ran"] = entry["ran"] or rep.when == "call" or rep.skipped
        entry["ok"] = entry["ok"] and rep.passed
    if rep.when == "call":
        entry["detail"] += [str(v) for k, v in item.user_properties if k == "detail"]
        if rep.failed:
            msg = str(rep.longrepr.reprcrash.message) if hasattr(rep.longrepr, "reprcrash") else ""
            entry["detail"].append(msg.splitlines()[0] if msg else "failed")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_ACCEPTANCE, key=lambda c: int(c)):
        e = _ACCEPTANCE[cid]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        detail = "; ".join(e["detail"])
        tr.write_line(f"criterion {cid}: {status}  {e['title']}" + (f"  [{detail}]" if detail else ""))


@dataclass
class StudyRun:
    """A benchmark study plus structural checks gathered on every mesh."""

    table: RateTable
    seconds: float
    s_symmetry: list = field(default_factory=list)
    a_symmetry: list = field(default_factory=list)
    galerkin: list = field(default_factory=list)
    spd: list = field(default_factory=list)
    residual: list = field(default_factory=list)


def run_study(config: StudyConfig, exact: ExactSolution) -> StudyRun:
    run = StudyRun(RateTable(), 0.0)

    def inspect(system, sol, load):
        S = system.condensed.S
        run.s_symmetry.append(float(np.abs(S - S.transpose(0, 2, 1)).max() / np.abs(S).max()))
        A = system.A
        run.a_symmetry.append(float(abs(A - A.T).max() / abs(A).max()))
        run.spd.append(bool(sol.info.positive_definite))
        run.residual.append(sol.info.residual)
        run.galerkin.append(galerkin_orthogonality(sol, load))

    start = time.perf_counter()
    run.table = convergence_study(config, exact=exact, inspect=inspect)
    run.seconds = time.perf_counter() - start
    return run


@pytest.fixture(scope="session")
def gate():
    """Verified benchmark solution at the reference parameters (raises if unverified)."""
    return ExactSolution.clamped_square(0.1, 0.3, 5 / 6, resolution=101, tol=1e-8)


@pytest.fixture(scope="session")
def thin_exact():
    return ExactSolution.clamped_square(0.001, 0.3, 5 / 6, resolution=101, tol=1e-8)


@pytest.fixture(scope="session")
def study_uniform(gate):
    return run_study(StudyConfig(thickness=0.1, mesh="uniform"), gate)


@pytest.fixture(scope="session")
def study_trapezoidal(gate):
    return run_study(StudyConfig(thickness=0.1, mesh="trapezoidal"), gate)


@pytest.fixture(scope="session")
def study_thin_trapezoidal(thin_exact):
    return run_study(StudyConfig(thickness=0.001, mesh="trapezoidal"), thin_exact)
