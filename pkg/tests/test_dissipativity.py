import json

import numpy as np
import pytest

from diskoop import dissipativity as dis
from diskoop.dynsim import TrajectoryDataset
from diskoop.edmd import KoopmanModel, predict
from diskoop.lifting import identity_dictionary

SCALAR_SR = dis.SupplyRate(1.0, 0.0, -2.0)


def random_system(rng, N=3, m=1, l=1, rho=0.7):
    A = rng.normal(size=(N, N))
    A *= rho / np.abs(np.linalg.eigvals(A)).max()
    return A, rng.normal(size=(N, m)), rng.normal(size=(l, N))


def gain_rate(gamma):
    return dis.SupplyRate.l2_gain(gamma)


@pytest.fixture(scope='module')
def certified():
    """A stable SISO model certified for a generous L2-gain supply rate."""
    rng = np.random.default_rng(0)
    A, B, C = random_system(rng)
    sr = gain_rate(200.0)
    P = dis.certify(A, B, C, sr)
    return A, B, C, sr, P


def test_supply_zero():
    sr = dis.SupplyRate(0.0, 0.0, 0.0)
    assert dis.supply_value(sr, [1.3], [-2.0]) == 0.0


def test_supply_passivity():
    assert dis.supply_value(dis.SupplyRate.passivity(), [3.0], [0.5]) == 3.0


def test_supply_gain():
    gamma, u, y = 4.0, 1.5, 2.0
    assert dis.supply_value(gain_rate(gamma), [u], [y]) == pytest.approx(
        gamma * u**2 - y**2)


def test_supply_dimension_mismatch():
    with pytest.raises(ValueError):
        dis.supply_value(SCALAR_SR, [1.0, 2.0], [1.0])


def test_theta_cases():
    assert not dis.theta(np.ones((1, 2)), dis.SupplyRate(0, 0, 0)).any()
    np.testing.assert_array_equal(
        dis.theta(np.array([[3.0]]), dis.SupplyRate.passivity()),
        [[0, -3], [-3, 0]])
    C = np.array([[1.0, 2.0]])
    np.testing.assert_allclose(
        dis.theta(C, dis.SupplyRate.passivity(0.2)),
        np.block([[np.zeros((2, 2)), -C.T], [-C, -0.2 * np.eye(1)]]))


def test_lemma_scalar_example():
    lhs = dis.lemma_lmi_lhs(2.0, 0.5, 0.0, 1.0, SCALAR_SR)
    np.testing.assert_allclose(lhs, [[-0.5, 0], [0, -2]], atol=1e-15)
    assert np.linalg.eigvalsh(lhs).max() == pytest.approx(-0.5)


def test_lemma_zero_P_is_theta():
    rng = np.random.default_rng(1)
    A, B, C = random_system(rng, N=3, m=2, l=2)
    sr = dis.SupplyRate(np.eye(2), rng.normal(size=(2, 2)), -np.eye(2))
    np.testing.assert_allclose(dis.lemma_lmi_lhs(np.zeros((3, 3)), A, B, C, sr),
                               dis.theta(C, sr), atol=1e-15)


def test_lemma_equals_negated_expanded_form():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        N, m, l = rng.integers(1, 5, size=3)
        A, B, C = rng.normal(size=(N, N)), rng.normal(size=(N, m)), \
            rng.normal(size=(l, N))
        P = rng.normal(size=(N, N))
        P = P + P.T
        X11 = rng.normal(size=(l, l))
        X22 = rng.normal(size=(m, m))
        sr = dis.SupplyRate(X11 + X11.T, rng.normal(size=(l, m)), X22 + X22.T)
        diff = dis.lemma_lmi_lhs(P, A, B, C, sr) + \
            dis.expanded_form(P, A, B, C, sr)
        worst = max(worst, np.abs(diff).max())
    assert worst < 1e-10


def test_lemma_dimension_checks():
    with pytest.raises(ValueError):
        dis.lemma_lmi_lhs(np.eye(2), np.eye(2), np.ones((2, 1)),
                          np.ones((2, 2)), SCALAR_SR)


def test_certify_scalar_interval():
    P = dis.certify(0.5, 0.0, 1.0, SCALAR_SR)
    assert P[0, 0] > 4 / 3
    assert np.linalg.eigvalsh(dis.lemma_lmi_lhs(P, 0.5, 0.0, 1.0,
                                                SCALAR_SR)).max() < 0


@pytest.mark.parametrize('backend', ['clarabel', 'cvxopt'])
def test_certify_scalar_trace_minimal(backend):
    # trace(P) is minimized, so P lands on the boundary (1 + margin) / 0.75
    P = dis.certify(0.5, 0.0, 1.0, SCALAR_SR, backend=backend)
    assert P[0, 0] == pytest.approx(4 / 3, abs=1e-4)


def test_certify_unstable_infeasible():
    with pytest.raises(dis.NotDissipativeError):
        dis.certify(2.0, 0.0, 1.0, SCALAR_SR)


def test_certify_infeasible_via_solver():
    # Xi11 indefinite skips the spectral shortcut; the LMI decides
    sr = dis.SupplyRate(-1.0, 0.0, 1.0)
    with pytest.raises(dis.NotDissipativeError):
        dis.certify(0.5, 1.0, 1.0, sr)


def test_certify_consistency(certified):
    A, B, C, sr, P = certified
    eps = dis.DEFAULT_MARGIN
    assert np.linalg.eigvalsh(dis.lemma_lmi_lhs(P, A, B, C, sr)).max() <= \
        -eps / 2
    assert np.linalg.eigvalsh(P).min() >= eps / 2


def test_one_step_dissipation(certified):
    A, B, C, sr, P = certified
    rng = np.random.default_rng(3)
    for _ in range(1000):
        psi = rng.normal(size=3) * 10**rng.uniform(-3, 3)
        u = rng.normal(size=1) * 10**rng.uniform(-3, 3)
        nxt = A @ psi + B @ u
        gap = nxt @ P @ nxt - psi @ P @ psi - dis.supply_value(sr, u, C @ psi)
        scale = max(1.0, psi @ psi + u @ u)
        assert gap <= 1e-12 * scale


def _dataset(model, psi0, u):
    u = np.atleast_2d(np.asarray(u, dtype=float).T).T
    psi, y = predict(model, psi0, u)
    return TrajectoryDataset(1.0, psi, u, y)


def _koopman(A, B, C, P=None):
    return KoopmanModel(np.atleast_2d(A), np.atleast_2d(B), np.atleast_2d(C),
                        identity_dictionary(np.atleast_2d(A).shape[0]), P)


def test_audit_zero_run(certified):
    A, B, C, sr, P = certified
    model = _koopman(A, B, C)
    ds = _dataset(model, np.zeros(3), np.zeros(50))
    assert dis.trajectory_audit(model, P, ds, sr) == 0.0


def test_audit_certified_random_inputs(certified):
    A, B, C, sr, P = certified
    model = _koopman(A, B, C)
    rng = np.random.default_rng(4)
    for _ in range(10):
        ds = _dataset(model, rng.normal(size=3), rng.uniform(-1, 1, 500))
        assert dis.trajectory_audit(model, P, ds, sr) >= -1e-8


def test_audit_sign_flip(certified):
    A, B, C, sr, P = certified
    model = _koopman(A, B, C)
    ds = _dataset(model, np.zeros(3), np.random.default_rng(5).uniform(
        -1, 1, 200))
    flipped = dis.SupplyRate(-sr.Xi11, -sr.Xi12, -sr.Xi22)
    assert dis.trajectory_audit(model, P, ds, sr) > 0
    assert dis.trajectory_audit(model, P, ds, flipped) < 0


def test_audit_matches_loop_oracle(certified):
    A, B, C, sr, P = certified
    model = _koopman(A, B, C)
    rng = np.random.default_rng(6)
    psi0, u = rng.normal(size=3), rng.uniform(-1, 1, 40)
    ds = _dataset(model, psi0, u)
    psi, acc, margins = psi0.copy(), 0.0, []
    V0 = psi0 @ P @ psi0
    for k in range(40):
        acc += dis.supply_value(sr, [u[k]], C @ psi)
        psi = A @ psi + B[:, 0] * u[k]
        margins.append(acc - (psi @ P @ psi - V0))
    np.testing.assert_allclose(dis.dissipation_margins(model, P, ds, sr),
                               margins, rtol=1e-12, atol=1e-12)


def test_frequency_unit_circle():
    model = _koopman(0.0, 1.0, 1.0)
    omegas = np.linspace(0, 2 * np.pi, 401)
    assert dis.frequency_margin(model, dis.SupplyRate.passivity(), 1.0,
                                omegas) == pytest.approx(-1.0, abs=1e-12)


def test_frequency_zero_input_matrix():
    model = _koopman(0.5, 0.0, 1.0)
    assert dis.frequency_margin(model, dis.SupplyRate.passivity(0.2),
                                0.01) == 0.0


def test_frequency_errors():
    with pytest.raises(ValueError, match='SISO'):
        dis.frequency_margin(_koopman(np.eye(2), np.ones((2, 2)),
                                      np.ones((1, 2))),
                             dis.SupplyRate.passivity(), 1.0)
    with pytest.raises(ValueError, match='singular'):
        dis.frequency_margin(_koopman(1.0, 1.0, 1.0),
                             dis.SupplyRate.passivity(), 1.0)
    with pytest.raises(ValueError):
        dis.frequency_bound(gain_rate(1.0))


def test_frequency_bound_and_grid():
    assert dis.frequency_bound(dis.SupplyRate.passivity(0.2)) == \
        pytest.approx(-0.1)
    grid = dis.default_omega_grid(0.01)
    assert len(grid) == 401 and grid[0] == 0.0
    assert grid[1] == pytest.approx(1.0) and grid[-1] == pytest.approx(
        np.pi / 0.01)


def test_certified_passive_model_meets_frequency_bound():
    # a certificate for (0, -1, -beta) implies Re G >= -beta / 2
    rng = np.random.default_rng(7)
    sr = dis.SupplyRate.passivity(0.2)
    found = 0
    for _ in range(30):
        A, B, C = random_system(rng, N=2, rho=0.5)
        try:
            dis.certify(A, B, C, sr)
        except dis.NotDissipativeError:
            continue
        found += 1
        assert dis.frequency_margin(_koopman(A, B, C), sr, 1.0) >= -0.1 - 1e-9
    assert found > 0


def test_supply_rate_strictness():
    assert dis.SupplyRate.passivity(0.2).strictly_usable
    assert not dis.SupplyRate.passivity().strictly_usable
    with pytest.raises(dis.UnusableSupplyRateError, match='relaxed'):
        dis.SupplyRate.passivity().require_strict()
    with pytest.raises(ValueError):
        dis.SupplyRate(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2), 0.0)


def test_supply_rate_round_trip():
    sr = dis.SupplyRate(np.eye(2), np.arange(2.0), -3.0)
    back = dis.SupplyRate.from_dict(json.loads(json.dumps(sr.to_dict())))
    for name in ('Xi11', 'Xi12', 'Xi22'):
        np.testing.assert_array_equal(getattr(back, name), getattr(sr, name))


def test_report_round_trip(certified):
    *_, P = certified
    rep = dis.DissipativityReport(-1e-3, P, -0.05, -0.1, 0.2, {'a': 1})
    back = dis.DissipativityReport.from_dict(
        json.loads(json.dumps(rep.to_dict())))
    np.testing.assert_array_equal(back.certificate, P)
    assert back.to_dict() == rep.to_dict()
    with pytest.raises(ValueError):
        dis.DissipativityReport(np.inf)
    with pytest.raises(ValueError):
        dis.DissipativityReport(-1.0, certificate=-np.eye(2))
