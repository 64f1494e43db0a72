"""Quadratic supply rates and dissipativity checks for lifted linear models.

The supply rate is ``s(u, y) = -[y; u]^T Xi [y; u]`` with
``Xi = [[Xi11, Xi12], [Xi12^T, Xi22]]``. A model ``(A, B, C)`` is certified
dissipative by a symmetric ``P > 0`` satisfying::

    [A B; I 0]^T diag(P, -P) [A B; I 0] + Theta < 0,
    Theta = [C 0; 0 I]^T Xi [C 0; 0 I].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from . import conic
from .dynsim import TrajectoryDataset
from .edmd import KoopmanModel, predict
from .lifting import lift

DEFAULT_MARGIN = 1e-6


class NotDissipativeError(conic.InfeasibleError):
    """No storage certificate exists at the requested margin."""


class UnusableSupplyRateError(ValueError):
    """Raised when ``-Xi22`` is not positive definite enough for the strict
    learning LMIs, which are then infeasible by construction."""


@dataclass(frozen=True)
class SupplyRate:
    """Block matrix ``Xi`` defining a quadratic supply rate.

    Attributes
    ----------
    Xi11 : np.ndarray
        Output block, ``l x l`` symmetric.
    Xi12 : np.ndarray
        Cross block, ``l x m``.
    Xi22 : np.ndarray
        Input block, ``m x m`` symmetric.
    """

    Xi11: np.ndarray
    Xi12: np.ndarray
    Xi22: np.ndarray

    def __post_init__(self) -> None:
        Xi11 = np.atleast_2d(np.asarray(self.Xi11, dtype=float))
        Xi22 = np.atleast_2d(np.asarray(self.Xi22, dtype=float))
        Xi12 = np.asarray(self.Xi12, dtype=float).reshape(
            Xi11.shape[0], Xi22.shape[0])
        for name, blk in (('Xi11', Xi11), ('Xi22', Xi22)):
            if blk.shape[0] != blk.shape[1] or not np.allclose(blk, blk.T):
                raise ValueError(f'`{name}` must be square and symmetric.')
        object.__setattr__(self, 'Xi11', Xi11)
        object.__setattr__(self, 'Xi12', Xi12)
        object.__setattr__(self, 'Xi22', Xi22)

    @classmethod
    def passivity(cls, relaxation: float = 0.0) -> 'SupplyRate':
        """SISO ``(0, -1, -relaxation)``; ``relaxation = 0`` is passivity."""
        return cls(np.zeros((1, 1)), -np.ones((1, 1)),
                   -relaxation * np.ones((1, 1)))

    @classmethod
    def l2_gain(cls, gamma: float) -> 'SupplyRate':
        return cls(np.ones((1, 1)), np.zeros((1, 1)), -gamma * np.ones((1, 1)))

    @property
    def n_outputs(self) -> int:
        return self.Xi11.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.Xi22.shape[0]

    @property
    def Xi(self) -> np.ndarray:
        return np.block([[self.Xi11, self.Xi12], [self.Xi12.T, self.Xi22]])

    @property
    def strictly_usable(self) -> bool:
        """Whether ``-Xi22 > 0``, needed by the strict learning LMIs."""
        return bool(np.linalg.eigvalsh(self.Xi22).max() < 0)

    def require_strict(self, margin: float = 0.0) -> None:
        """Raise unless ``-Xi22 >= margin I``."""
        eig = float(np.linalg.eigvalsh(self.Xi22).max())
        if eig >= 0 or -eig < margin:
            raise UnusableSupplyRateError(
                f'Supply rate has max eig(Xi22) = {eig:.3g}. The learning '
                f'LMIs contain -Xi22 as a diagonal block, so they are '
                f'infeasible unless -Xi22 >= {margin:g} I. Use a relaxed form '
                f'such as (Xi11, Xi12, Xi22) = (0, -1, -0.2) instead of pure '
                f'passivity.')

    def to_dict(self) -> Dict[str, Any]:
        return {
            'Xi11': self.Xi11.tolist(),
            'Xi12': self.Xi12.tolist(),
            'Xi22': self.Xi22.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SupplyRate':
        return cls(np.array(data['Xi11'], dtype=float),
                   np.array(data['Xi12'], dtype=float),
                   np.array(data['Xi22'], dtype=float))


def supply_value(sr: SupplyRate, u: np.ndarray, y: np.ndarray) -> float:
    """Evaluate ``-[y; u]^T Xi [y; u]``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if u.shape != (sr.n_inputs, ) or y.shape != (sr.n_outputs, ):
        raise ValueError('Dimension mismatch between (u, y) and supply rate.')
    w = np.concatenate([y, u])
    return float(-w @ sr.Xi @ w)


def _supply_series(sr: SupplyRate, U: np.ndarray, Y: np.ndarray) -> np.ndarray:
    W = np.hstack([Y, U])
    return -np.einsum('ki,ij,kj->k', W, sr.Xi, W)


def _check_dims(A, B, C, sr: SupplyRate) -> None:
    N = A.shape[0]
    if A.shape != (N, N) or B.shape[0] != N or C.shape[1] != N:
        raise ValueError('Dimension mismatch among (A, B, C).')
    if C.shape[0] != sr.n_outputs or B.shape[1] != sr.n_inputs:
        raise ValueError('Dimension mismatch between model and supply rate.')


def theta(C: np.ndarray, sr: SupplyRate) -> np.ndarray:
    """``[C 0; 0 I]^T Xi [C 0; 0 I]``."""
    C = np.atleast_2d(C)
    if C.shape[0] != sr.n_outputs:
        raise ValueError('C has the wrong number of rows for the supply rate.')
    return np.block([[C.T @ sr.Xi11 @ C, C.T @ sr.Xi12],
                     [sr.Xi12.T @ C, sr.Xi22]])


def lemma_lmi_lhs(P: np.ndarray, A: np.ndarray, B: np.ndarray, C: np.ndarray,
                  sr: SupplyRate) -> np.ndarray:
    """Left-hand side of the dissipation LMI; certified iff ``< 0``."""
    P, A, B, C = (np.atleast_2d(np.asarray(M, dtype=float))
                  for M in (P, A, B, C))
    _check_dims(A, B, C, sr)
    if P.shape != A.shape:
        raise ValueError('P must match A.')
    AB = np.hstack([A, B])
    N, m = B.shape
    E = np.hstack([np.eye(N), np.zeros((N, m))])
    out = AB.T @ P @ AB - E.T @ P @ E + theta(C, sr)
    return 0.5 * (out + out.T)


def expanded_form(P: np.ndarray, A: np.ndarray, B: np.ndarray, C: np.ndarray,
                  sr: SupplyRate) -> np.ndarray:
    """``[[P - C'Xi11 C, -C'Xi12], [-Xi12'C, -Xi22]] - [A B]' P [A B]``.

    Equal to ``-lemma_lmi_lhs``; written out separately as a cross-check.
    """
    P, A, B, C = (np.atleast_2d(np.asarray(M, dtype=float))
                  for M in (P, A, B, C))
    AB = np.hstack([A, B])
    F = np.block([[P - C.T @ sr.Xi11 @ C, -C.T @ sr.Xi12],
                  [-sr.Xi12.T @ C, -sr.Xi22]])
    return F - AB.T @ P @ AB


def certify(A: np.ndarray,
            B: np.ndarray,
            C: np.ndarray,
            sr: SupplyRate,
            margin: float = DEFAULT_MARGIN,
            backend: str = 'clarabel',
            tol: float = conic.DEFAULT_TOL) -> np.ndarray:
    """Search for a storage certificate ``P``.

    Minimizes ``trace(P)`` subject to ``P >= margin I`` and
    ``lemma_lmi_lhs(P) <= -margin I``.

    Raises
    ------
    NotDissipativeError
        If no certificate exists at this margin.
    conic.SolverError
        If the solver fails.
    """
    A, B, C = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, C))
    _check_dims(A, B, C, sr)
    N, m = B.shape
    if np.linalg.eigvalsh(sr.Xi11).min() >= 0:
        # the top-left block then forces A^T P A - P < 0, i.e. Schur stability
        rho = float(np.abs(np.linalg.eigvals(A)).max())
        if rho >= 1.0:
            raise NotDissipativeError(
                f'Model is not dissipative: A has spectral radius {rho:.6g} '
                f'>= 1 while Xi11 is positive semidefinite.')
    prob = conic.ConicProblem()
    Pv = prob.var(prob.add_symmetric_matrix_var(N))
    AB = np.hstack([A, B])
    E = np.hstack([np.eye(N), np.zeros((N, m))])
    lhs = AB.T @ Pv @ AB - E.T @ Pv @ E + theta(C, sr)
    prob.add_lmi(Pv - margin * np.eye(N), 'P')
    prob.add_lmi(-lhs - margin * np.eye(N + m), 'dissipation')
    prob.objective_linear = np.trace(Pv.coef, axis1=1, axis2=2).copy()
    sol = conic.solve(prob, tol=tol, backend=backend)
    if sol.status == conic.Status.INFEASIBLE:
        raise NotDissipativeError(
            f'Model is not certifiably dissipative at margin {margin:g}.',
            sol)
    if not sol.ok:
        raise conic.SolverError(f'Certificate search failed: {sol.info}',
                                sol)
    P = Pv.value(sol.x)
    return 0.5 * (P + P.T)


def default_omega_grid(T: float, points: int = 400) -> np.ndarray:
    """``0`` plus ``points`` log-spaced frequencies on ``[1e-2/T, pi/T]``."""
    return np.concatenate(
        [[0.0], np.logspace(np.log10(1e-2 / T), np.log10(np.pi / T), points)])


def frequency_response(A: np.ndarray, B: np.ndarray, C: np.ndarray,
                       omegas: np.ndarray, T: float) -> np.ndarray:
    """``G(e^{j w T}) = C (e^{j w T} I - A)^{-1} B`` at each ``w``.

    Returns an array of shape ``(len(omegas), l, m)``.
    """
    N = A.shape[0]
    out = np.empty((len(omegas), C.shape[0], B.shape[1]), dtype=complex)
    eye = np.eye(N)
    for k, w in enumerate(omegas):
        z = np.exp(1j * w * T)
        M = z * eye - A
        if np.linalg.cond(M) > 1e14:
            raise ValueError(f'Resolvent singular at omega = {w:g}.')
        out[k] = C @ np.linalg.solve(M, B)
    return out


def frequency_bound(sr: SupplyRate) -> float:
    """Lower bound on ``Re G`` implied by a ``(0, -1, -beta)`` supply rate."""
    _require_relaxed_passivity(sr)
    return float(sr.Xi22[0, 0]) / 2.0


def _require_relaxed_passivity(sr: SupplyRate) -> None:
    if sr.n_inputs != 1 or sr.n_outputs != 1:
        raise ValueError('Frequency check requires a SISO supply rate.')
    if sr.Xi11[0, 0] != 0 or sr.Xi12[0, 0] != -1 or sr.Xi22[0, 0] > 0:
        raise ValueError('Frequency check requires a supply rate of the form '
                         '(0, -1, -beta) with beta >= 0.')


def frequency_margin(model: KoopmanModel,
                     sr: SupplyRate,
                     T: float,
                     omegas: Optional[np.ndarray] = None) -> float:
    """Minimum of ``Re G(e^{j w T})`` over the frequency grid.

    Compare against :func:`frequency_bound` (``-beta / 2``).
    """
    _require_relaxed_passivity(sr)
    if model.n_inputs != 1 or model.n_outputs != 1:
        raise ValueError('Frequency margin is defined for SISO models only.')
    if omegas is None:
        omegas = default_omega_grid(T)
    G = frequency_response(model.A, model.B, model.C, omegas, T)
    return float(np.min(G[:, 0, 0].real))


def dissipation_margins(model: KoopmanModel, P: np.ndarray,
                        dataset: TrajectoryDataset,
                        sr: SupplyRate) -> np.ndarray:
    """Per-step slack of the dissipation inequality along a model rollout.

    With ``V(psi) = psi^T P psi`` and the model started at the lifted
    initial state, entry ``k`` is
    ``sum_{tau <= k} s(u(tau), y(tau)) - (V(psi(k+1)) - V(psi(0)))``.
    """
    P = np.asarray(P, dtype=float)
    if P.shape != (model.lifted_dim, model.lifted_dim):
        raise ValueError('P does not match the model dimension.')
    if dataset.n_inputs != model.n_inputs:
        raise ValueError('Dataset inputs do not match the model.')
    psi0 = lift(model.dictionary, dataset.states[0])
    psi, y = predict(model, psi0, dataset.inputs)
    V = np.einsum('ki,ij,kj->k', psi, P, psi)
    supply = np.cumsum(_supply_series(sr, dataset.inputs, y))
    return supply - (V[1:] - V[0])


def trajectory_audit(model: KoopmanModel, P: np.ndarray,
                     dataset: TrajectoryDataset, sr: SupplyRate) -> float:
    """Smallest dissipation-inequality slack; ``>= 0`` means it holds."""
    return float(np.min(dissipation_margins(model, P, dataset, sr)))


@dataclass
class DissipativityReport:
    lmi_eigmax: float
    certificate: Optional[np.ndarray] = None
    frequency_margin: Optional[float] = None
    frequency_bound: Optional[float] = None
    trajectory_margin: Optional[float] = None
    notes: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not np.isfinite(self.lmi_eigmax):
            raise ValueError('`lmi_eigmax` must be finite.')
        if self.certificate is not None:
            P = np.asarray(self.certificate, dtype=float)
            if not np.allclose(P, P.T) or np.linalg.eigvalsh(P).min() <= 0:
                raise ValueError('Certificate must be symmetric positive '
                                 'definite.')
            self.certificate = P

    def to_dict(self) -> Dict[str, Any]:
        return {
            'lmi_eigmax': self.lmi_eigmax,
            'certificate': (None if self.certificate is None else
                            self.certificate.tolist()),
            'frequency_margin': self.frequency_margin,
            'frequency_bound': self.frequency_bound,
            'trajectory_margin': self.trajectory_margin,
            'notes': self.notes,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DissipativityReport':
        cert = data.get('certificate')
        return cls(
            lmi_eigmax=float(data['lmi_eigmax']),
            certificate=None if cert is None else np.array(cert, dtype=float),
            frequency_margin=data.get('frequency_margin'),
            frequency_bound=data.get('frequency_bound'),
            trajectory_margin=data.get('trajectory_margin'),
            notes=dict(data.get('notes', {})),
        )
