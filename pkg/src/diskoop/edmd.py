"""Snapshot matrices and unconstrained (least-squares) Koopman fitting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .dynsim import TrajectoryDataset
from .lifting import LiftingDictionary, lift

RANK_RTOL = 1e-10


class RankDeficiencyError(ValueError):
    """Raised when a regression matrix lacks full row rank."""

    def __init__(self, block: str, rank: int, required: int) -> None:
        super().__init__(
            f'Data matrix `{block}` is rank deficient: numerical rank '
            f'{rank} < {required} rows. Use more (or more exciting) data, '
            f'or fewer / better-spread dictionary centers.')
        self.block = block
        self.rank = rank
        self.required = required


@dataclass(frozen=True)
class DataMatrices:
    """Snapshot matrices with one column per sample.

    Attributes
    ----------
    U : np.ndarray
        Inputs, shape ``(m, M)``.
    Y : np.ndarray
        Outputs, shape ``(l, M)``.
    Psi : np.ndarray
        Lifted states ``psi(x(k))``, shape ``(N, M)``.
    PsiNext : np.ndarray
        Lifted successor states ``psi(x(k+1))``, shape ``(N, M)``.
    """

    U: np.ndarray
    Y: np.ndarray
    Psi: np.ndarray
    PsiNext: np.ndarray

    def __post_init__(self) -> None:
        cols = {a.shape[1] for a in (self.U, self.Y, self.Psi, self.PsiNext)}
        if len(cols) != 1:
            raise ValueError('Data matrices must share a column count.')
        if self.Psi.shape != self.PsiNext.shape:
            raise ValueError('`Psi` and `PsiNext` must have equal shapes.')

    @property
    def n_samples(self) -> int:
        return self.Psi.shape[1]

    @property
    def lifted_dim(self) -> int:
        return self.Psi.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.U.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.Y.shape[0]

    @property
    def Z(self) -> np.ndarray:
        """Stacked regressor ``[Psi; U]``."""
        return np.vstack([self.Psi, self.U])


@dataclass(frozen=True)
class KoopmanModel:
    """Lifted linear model ``psi+ = A psi + B u``, ``y = C psi``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dictionary: LiftingDictionary
    P: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        N = self.dictionary.lifted_dim
        if self.A.shape != (N, N) or self.B.shape[0] != N \
                or self.C.shape[1] != N:
            raise ValueError(
                f'Model matrices inconsistent with lifted dimension {N}: '
                f'A {self.A.shape}, B {self.B.shape}, C {self.C.shape}.')
        if self.P is not None:
            if self.P.shape != (N, N):
                raise ValueError('Certificate `P` must be N x N.')
            if not np.allclose(self.P, self.P.T, rtol=0, atol=1e-12 *
                               max(1.0, np.abs(self.P).max())):
                raise ValueError('Certificate `P` must be symmetric.')
            if np.linalg.eigvalsh(self.P).min() <= 0:
                raise ValueError('Certificate `P` must be positive definite.')

    @property
    def lifted_dim(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


def assemble(
    datasets: Union[TrajectoryDataset, Sequence[TrajectoryDataset]],
    dictionary: LiftingDictionary,
) -> DataMatrices:
    """Build snapshot matrices from one or more trajectories.

    Snapshot pairs never straddle two trajectories.
    """
    if isinstance(datasets, TrajectoryDataset):
        datasets = [datasets]
    U, Y, Psi, PsiNext = [], [], [], []
    for ds in datasets:
        if ds.n_states != dictionary.state_dim:
            raise ValueError(
                f'Dimension mismatch: dataset state dimension {ds.n_states} '
                f'vs dictionary state dimension {dictionary.state_dim}.')
        if ds.states.shape[0] < 2:
            raise ValueError('Dataset needs at least two states.')
        lifted = lift(dictionary, ds.states).T
        Psi.append(lifted[:, :-1])
        PsiNext.append(lifted[:, 1:])
        U.append(ds.inputs.T)
        Y.append(ds.outputs.T)
    return DataMatrices(U=np.hstack(U), Y=np.hstack(Y), Psi=np.hstack(Psi),
                        PsiNext=np.hstack(PsiNext))


def _lstsq_rows(target: np.ndarray, regressor: np.ndarray,
                block: str) -> np.ndarray:
    """Solve ``min ||target - X regressor||_F`` by SVD, checking rank."""
    U, s, Vt = np.linalg.svd(regressor, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        raise RankDeficiencyError(block, 0, regressor.shape[0])
    rank = int(np.sum(s > RANK_RTOL * s[0]))
    if rank < regressor.shape[0]:
        raise RankDeficiencyError(block, rank, regressor.shape[0])
    # regressor = U diag(s) Vt, so X = target Vt^T diag(1/s) U^T
    return ((target @ Vt.T) / s) @ U.T


def fit_ab(dm: DataMatrices) -> Tuple[np.ndarray, np.ndarray]:
    """Least-squares ``(A, B)`` minimizing :func:`j1`."""
    N = dm.lifted_dim
    AB = _lstsq_rows(dm.PsiNext, dm.Z, '[Psi; U]')
    return AB[:, :N], AB[:, N:]


def fit_c(dm: DataMatrices) -> np.ndarray:
    """Least-squares ``C`` minimizing :func:`j2`."""
    return _lstsq_rows(dm.Y, dm.Psi, 'Psi')


def fit_unconstrained(dm: DataMatrices,
                      dictionary: LiftingDictionary) -> KoopmanModel:
    """Fit ``(A, B)`` and ``C`` independently by least squares."""
    if dictionary.lifted_dim != dm.lifted_dim:
        raise ValueError('Dictionary does not match data matrices.')
    A, B = fit_ab(dm)
    C = fit_c(dm)
    return KoopmanModel(A=A, B=B, C=C, dictionary=dictionary)


def j1(A: np.ndarray, B: np.ndarray, dm: DataMatrices) -> float:
    """Squared Frobenius norm of ``PsiNext - [A B] [Psi; U]``."""
    if A.shape != (dm.lifted_dim, dm.lifted_dim) or \
            B.shape != (dm.lifted_dim, dm.n_inputs):
        raise ValueError('Dimension mismatch between (A, B) and data.')
    res = dm.PsiNext - A @ dm.Psi - B @ dm.U
    return float(np.sum(res**2))


def j2(C: np.ndarray, dm: DataMatrices) -> float:
    """Squared Frobenius norm of ``Y - C Psi``."""
    if C.shape != (dm.n_outputs, dm.lifted_dim):
        raise ValueError('Dimension mismatch between C and data.')
    res = dm.Y - C @ dm.Psi
    return float(np.sum(res**2))


def predict(model: KoopmanModel, psi0: np.ndarray,
            inputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Roll the lifted model forward.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        Lifted states, shape ``(M + 1, N)``, and outputs ``C psi(k)`` for
        ``k = 0..M-1``, shape ``(M, l)``.
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    psi0 = np.asarray(psi0, dtype=float)
    if psi0.shape != (model.lifted_dim,) or \
            inputs.shape[1] != model.n_inputs:
        raise ValueError('Dimension mismatch in prediction inputs.')
    M = inputs.shape[0]
    psi = np.empty((M + 1, model.lifted_dim))
    psi[0] = psi0
    for k in range(M):
        psi[k + 1] = model.A @ psi[k] + model.B @ inputs[k]
    return psi, psi[:-1] @ model.C.T
