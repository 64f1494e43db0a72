import contextlib
import time

import numpy as np
import pytest

from diskoop import conic, dynsim, edmd, lifting, sequential
from diskoop.dissipativity import SupplyRate

# desk-scale benchmark setup shared by the sequential and acceptance suites
BENCH_M = 2000
BENCH_DT = 0.01
BENCH_EPS = 1e-6

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section('acceptance criteria')
        for line in sorted(ACCEPTANCE_LINES,
                           key=lambda s: int(s.split()[1].rstrip(':'))):
            terminalreporter.write_line(line)


def lmi_violation(prob, x):
    """Largest negative eigenvalue over all LMI blocks, computed afresh."""
    worst = 0.0
    for blk in prob.lmi_blocks:
        F = blk.F0 + np.tensordot(x, blk.Fs[:len(x)], axes=1)
        worst = max(worst, -np.linalg.eigvalsh(0.5 * (F + F.T)).min())
    return worst


@contextlib.contextmanager
def record_solves():
    """Record ``(status, fresh violation, tol)`` for every conic solve."""
    records = []
    original = conic.solve

    def wrapped(prob, *args, **kwargs):
        sol = original(prob, *args, **kwargs)
        tol = kwargs.get('tol', conic.DEFAULT_TOL)
        viol = lmi_violation(prob, sol.x) if sol.x is not None else np.inf
        records.append((sol.status, viol, tol))
        return sol

    conic.solve = wrapped
    try:
        yield records
    finally:
        conic.solve = original


@pytest.fixture(scope='session')
def relaxed_passivity():
    return SupplyRate.passivity(0.2)


@pytest.fixture(scope='session')
def benchmark_data():
    u = dynsim.generate_input('uniform_random', BENCH_M, seed=0)
    ds = dynsim.simulate(dynsim.BENCHMARK, np.zeros(2), u, BENCH_DT)
    dictionary = lifting.sample_dictionary(2, 8, seed=1)
    dm = edmd.assemble(ds, dictionary)
    base = edmd.fit_unconstrained(dm, dictionary)
    return ds, dictionary, dm, base


@pytest.fixture(scope='session')
def benchmark_run(benchmark_data, relaxed_passivity):
    _, dictionary, dm, base = benchmark_data
    with record_solves() as records:
        t0 = time.perf_counter()
        res = sequential.run_algorithm(
            dm, base.C, relaxed_passivity, dictionary,
            sequential.AlgorithmOptions(epsilon_margin=BENCH_EPS))
        elapsed = time.perf_counter() - t0
    res.solve_records = records
    return res, elapsed
