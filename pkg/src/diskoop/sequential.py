"""Dissipativity-constrained Koopman learning by sequential convex programming.

The learning problem minimizes ``J1(A, B) = ||Psi+ - [A B][Psi; U]||_F^2``
subject to the (bilinear) dissipation LMI in ``(P, A, B)`` for a fixed
output matrix ``C``. It is attacked in two stages:

1. :func:`solve_problem2` -- a convex initialization. The substitution
   ``R = P A``, ``S = P B`` turns the constraint into an LMI in
   ``(P, R, S)`` and the cost is replaced by the ``P``-weighted surrogate
   ``||P Psi+ - [R S][Psi; U]||_F^2``.
2. :func:`solve_problem3` -- repeated convex overbounding of the bilinear
   constraint around the current iterate ``(P, A, B)`` with slack matrices
   ``G`` (decision variable) and ``H`` (fixed). Every feasible step remains
   dissipative and the exact ``J1`` never increases.

All problems can be solved in a diagonally rescaled lifted coordinate
system (``psi_scaled = D psi``) for numerical conditioning. The rescaling is
an exact congruence: margins and objectives are mapped back so that the
scaled problem is mathematically identical to the original one.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg

from . import conic
from .dissipativity import SupplyRate, lemma_lmi_lhs
from .edmd import DataMatrices, KoopmanModel, j1
from .lifting import LiftingDictionary

log = logging.getLogger(__name__)


class AlgorithmError(RuntimeError):
    """A convex subproblem failed inside the sequential algorithm."""

    def __init__(self, message: str, iteration: int,
                 solution: Optional[conic.ConicSolution] = None) -> None:
        super().__init__(f'Iteration {iteration}: {message}')
        self.iteration = iteration
        self.solution = solution


@dataclass
class AlgorithmOptions:
    """Options for :func:`run_algorithm`.

    Attributes
    ----------
    epsilon_margin : float
        Margin realizing strict inequalities (``> 0`` becomes ``>= eps I``).
    max_iterations : int
        Maximum number of overbounding iterations.
    rel_descent_tol : float
        Stop once the relative decrease of ``J1`` falls below this value.
    solver_tol : float
        Feasibility tolerance of the conic backend.
    backend : str
        Conic backend name.
    rescale : bool
        Rescale lifted coordinates to unit RMS before solving.
    """

    epsilon_margin: float = 1e-6
    max_iterations: int = 30
    rel_descent_tol: float = 1e-6
    solver_tol: float = conic.DEFAULT_TOL
    backend: str = 'clarabel'
    rescale: bool = True

    def __post_init__(self) -> None:
        for name in ('epsilon_margin', 'max_iterations', 'rel_descent_tol',
                     'solver_tol'):
            if not getattr(self, name) > 0:
                raise ValueError(f'`{name}` must be positive.')

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class IterateState:
    """Current iterate ``(P, A, B)`` with slack ``H``, in original coordinates."""

    P: np.ndarray
    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    j1: float
    iteration: int = 0


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    j1: float
    lmi_margin: float
    eigmin_P: float
    eigmin_HplusHT: float
    solver_status: str


# ---------------------------------------------------------------------------
# Shared pieces
# ---------------------------------------------------------------------------


def scaling_vector(dm: DataMatrices, rescale: bool = True) -> np.ndarray:
    """Per-coordinate factors ``d`` with ``D psi`` having unit RMS rows."""
    if not rescale:
        return np.ones(dm.lifted_dim)
    rms = np.sqrt(np.mean(dm.Psi**2, axis=1))
    d = np.ones_like(rms)
    nz = rms > 0
    d[nz] = 1.0 / rms[nz]
    return d


def schur_lmi(P: np.ndarray, R: np.ndarray, S: np.ndarray, C: np.ndarray,
              sr: SupplyRate) -> np.ndarray:
    """Three-by-three block LMI in ``(P, R, S)``; dissipative iff ``> 0``."""
    P, R, S, C = (np.atleast_2d(np.asarray(M, dtype=float))
                  for M in (P, R, S, C))
    return np.block([
        [P - C.T @ sr.Xi11 @ C, -C.T @ sr.Xi12, R.T],
        [-sr.Xi12.T @ C, -sr.Xi22, S.T],
        [R, S, P],
    ])


def j1_weighted(P: np.ndarray, R: np.ndarray, S: np.ndarray,
                dm: DataMatrices) -> float:
    """``||P Psi+ - [R S][Psi; U]||_F^2``."""
    res = P @ dm.PsiNext - R @ dm.Psi - S @ dm.U
    return float(np.sum(res**2))


def _spd_solve(P: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        factor = linalg.cho_factor(P)
    except linalg.LinAlgError:
        raise ValueError('P is not positive definite.') from None
    return linalg.cho_solve(factor, rhs)


def recover_AB(P: np.ndarray, R: np.ndarray,
               S: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Undo the change of variables: ``A = P^{-1} R``, ``B = P^{-1} S``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if not np.allclose(P, P.T, rtol=0, atol=1e-12 * np.abs(P).max()):
        raise ValueError('P must be symmetric.')
    N = P.shape[0]
    AB = _spd_solve(P, np.hstack([np.atleast_2d(R), np.atleast_2d(S)]))
    return AB[:, :N], AB[:, N:]


def _inv_square(d: np.ndarray) -> np.ndarray:
    return np.diag(1.0 / d**2)


# ---------------------------------------------------------------------------
# Problem 2: convex initialization
# ---------------------------------------------------------------------------


def solve_problem2(
    C: np.ndarray,
    sr: SupplyRate,
    dm: DataMatrices,
    eps: float = 1e-6,
    rescale: bool = True,
    backend: str = 'clarabel',
    tol: float = conic.DEFAULT_TOL,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimize the ``P``-weighted cost over the LMI in ``(P, R, S)``.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray, np.ndarray]
        ``(P, R, S)`` in original coordinates.

    Raises
    ------
    ValueError
        If ``-Xi22 >= eps I`` fails (the LMI is then infeasible).
    conic.InfeasibleError
        If no dissipative model of this structure exists.
    conic.SolverError
        On solver failure.
    """
    sr.require_strict(eps)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    N, m = dm.lifted_dim, dm.n_inputs
    d = scaling_vector(dm, rescale)
    D = np.diag(d)
    Cs = C / d  # C D^{-1}

    prob = conic.ConicProblem()
    Pv = prob.var(prob.add_symmetric_matrix_var(N))
    Rv = prob.var(prob.add_matrix_var(N, N))
    Sv = prob.var(prob.add_matrix_var(N, m))

    lmi = conic.bmat([
        [Pv - Cs.T @ sr.Xi11 @ Cs, -Cs.T @ sr.Xi12, Rv.T],
        [-sr.Xi12.T @ Cs, -sr.Xi22, Sv.T],
        [Rv, Sv, Pv],
    ])
    margin = linalg.block_diag(_inv_square(d), np.eye(m), _inv_square(d))
    prob.add_lmi(lmi - eps * margin, 'schur')
    prob.add_lmi(Pv - eps * _inv_square(d), 'P')

    # ||D [P, -R, -S] W||_F with W = [Psi+; Psi; U] in scaled coordinates
    W = np.vstack([d[:, None] * dm.PsiNext, d[:, None] * dm.Psi, dm.U])
    Rw = linalg.qr(W.T, mode='r')[0][:W.shape[0]]
    stacked = conic.bmat([[Pv, -1.0 * Rv, -1.0 * Sv]])
    prob.set_quadratic_objective(D @ stacked @ Rw.T)

    sol = conic.solve(prob, tol=tol, backend=backend)
    if sol.status == conic.Status.INFEASIBLE:
        raise conic.InfeasibleError(
            'Convex initialization is infeasible: no model with this C is '
            'dissipative at the requested margin. Check Xi22 (its negative '
            'must be positive definite) and the margin.', sol)
    if not sol.ok:
        raise conic.SolverError(f'Convex initialization failed: {sol.info}',
                                sol)
    Ps, Rs, Ss = Pv.value(sol.x), Rv.value(sol.x), Sv.value(sol.x)
    Ps = 0.5 * (Ps + Ps.T)
    return D @ Ps @ D, D @ Rs @ D, D @ Ss


# ---------------------------------------------------------------------------
# Problem 3: sequential convex overbounding
# ---------------------------------------------------------------------------


def overbounding_matrix(P: Any, A: Any, B: Any, C: np.ndarray, sr: SupplyRate,
                        H: np.ndarray, dP: Any, dA: Any, dB: Any,
                        G: Any) -> conic.AffineExpr:
    """Assemble ``He(M)`` for the overbounding constraint ``He(M) < 0``.

    Arguments may be arrays or :class:`conic.AffineExpr`; the result is an
    affine expression (``.const`` holds the value when all inputs are
    numeric). ``M`` is::

        [[Q(dP, dA, dB), [0; dP], 0],
         [0,             -G,      G],
         [-H [dA dB 0],  0,      -H]]

    with ``Q = -1/2 diag(F(dP), P + dP) + [0; -(P+dP)A - P dA, ...]``, the
    sign chosen so that ``He(Q(0, 0, 0))`` is minus the three-by-three block
    LMI evaluated at ``(P, A, B)``.
    """
    wrap = (lambda X: X if isinstance(X, conic.AffineExpr) else
            conic.AffineExpr.constant(np.atleast_2d(X)))
    dP, dA, dB, G = wrap(dP), wrap(dA), wrap(dB), wrap(G)
    P, A, B, H = (np.atleast_2d(np.asarray(M, dtype=float))
                  for M in (P, A, B, H))
    C = np.atleast_2d(C)
    N, m = B.shape
    Pn = dP + P
    F = conic.bmat([
        [Pn - C.T @ sr.Xi11 @ C, -C.T @ sr.Xi12],
        [-sr.Xi12.T @ C, -sr.Xi22],
    ])
    lower_A = -1.0 * (dP @ A) - P @ dA - P @ A
    lower_B = -1.0 * (dP @ B) - P @ dB - P @ B
    Q = conic.bmat([
        [-0.5 * F, None],
        [conic.bmat([[lower_A, lower_B]]), -0.5 * Pn],
    ])
    zeros_col = conic.bmat([[np.zeros((N + m, N))], [dP]])
    bottom = -1.0 * (H @ conic.bmat([[dA, dB, np.zeros((N, N))]]))
    M = conic.bmat([
        [Q, zeros_col, np.zeros((2 * N + m, N))],
        [np.zeros((N, 2 * N + m)), -1.0 * G, G],
        [bottom, np.zeros((N, N)), -H],
    ])
    return M.he()


@dataclass
class Problem3:
    """Built overbounding subproblem and the decoding of its variables."""

    problem: conic.ConicProblem
    dP: conic.AffineExpr
    dA: conic.AffineExpr
    dB: conic.AffineExpr
    G: conic.AffineExpr
    d: np.ndarray
    j1_constant: float

    @property
    def constraint_size(self) -> int:
        return self.problem.lmi_blocks[0].size

    def decode(self, x: np.ndarray):
        """Map a solution vector to ``(dP, dA, dB, G)`` in original coordinates."""
        d = self.d
        dP = self.dP.value(x)
        dP = 0.5 * (dP + dP.T)
        return (d[:, None] * dP * d[None, :],
                (self.dA.value(x) / d[:, None]) * d[None, :],
                self.dB.value(x) / d[:, None],
                d[:, None] * self.G.value(x) * d[None, :])

    def encode(self, dP, dA, dB, G) -> np.ndarray:
        """Inverse of :meth:`decode` (used to evaluate given points)."""
        d = self.d
        x = np.zeros(self.problem.num_vars)
        for expr, val in ((self.dP, dP / np.outer(d, d)),
                          (self.dA, d[:, None] * dA / d[None, :]),
                          (self.dB, d[:, None] * dB),
                          (self.G, G / np.outer(d, d))):
            idx = np.argmax(expr.coef, axis=0)
            x[idx.ravel()] = np.asarray(val).ravel()
        return x


def build_problem3(
    it: IterateState,
    C: np.ndarray,
    sr: SupplyRate,
    dm: DataMatrices,
    eps: float = 1e-6,
    rescale: bool = True,
) -> Problem3:
    """Build the convex overbounding subproblem around ``it``.

    Decision variables are ``dP`` (symmetric), ``dA``, ``dB`` and ``G``.
    Constraints are ``He(M) <= -eps I`` and ``P + dP >= eps I``; the
    objective is the exact ``J1(A + dA, B + dB)``.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    N, m = dm.lifted_dim, dm.n_inputs
    if it.A.shape != (N, N) or it.B.shape != (N, m) or \
            it.P.shape != (N, N) or it.H.shape != (N, N):
        raise ValueError('Iterate dimensions do not match the data.')
    d = scaling_vector(dm, rescale)
    outer = np.outer(d, d)
    Ps = it.P / outer
    As = d[:, None] * it.A / d[None, :]
    Bs = d[:, None] * it.B
    Hs = it.H / outer
    Cs = C / d

    prob = conic.ConicProblem()
    dP = prob.var(prob.add_symmetric_matrix_var(N))
    dA = prob.var(prob.add_matrix_var(N, N))
    dB = prob.var(prob.add_matrix_var(N, m))
    G = prob.var(prob.add_matrix_var(N, N))

    heM = overbounding_matrix(Ps, As, Bs, Cs, sr, Hs, dP, dA, dB, G)
    inv2 = _inv_square(d)
    margin = linalg.block_diag(inv2, np.eye(m), inv2, inv2, inv2)
    prob.add_lmi(-1.0 * heM - eps * margin, 'overbounding')
    prob.add_lmi(dP + Ps - eps * inv2, 'P')

    # J1 = ||D^{-1}(Psi+_s - [A_s B_s] Z_s)||^2, reduced on range(Z_s^T)
    Zs = np.vstack([d[:, None] * dm.Psi, dm.U])
    Q_, R_ = linalg.qr(Zs.T, mode='economic')
    target = dm.PsiNext @ Q_
    const = float(np.sum((dm.PsiNext - target @ Q_.T)**2))
    theta = conic.bmat([[dA + As, dB + Bs]])
    residual = np.diag(1.0 / d) @ theta @ R_.T - target
    prob.set_quadratic_objective(residual, constant=const)
    return Problem3(problem=prob, dP=dP, dA=dA, dB=dB, G=G, d=d,
                    j1_constant=const)


@dataclass
class Problem3Result:
    dP: np.ndarray
    dA: np.ndarray
    dB: np.ndarray
    G: np.ndarray
    j1_new: float
    solution: conic.ConicSolution


def _safeguarded(p3: Problem3, x: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Never return a point worse than the known feasible fallback.

    Interior-point answers can land slightly above the fallback objective
    when the optimum is flat.  Both points are feasible and the objective is
    a convex quadratic, so an exact line search on the segment between them
    stays feasible and cannot increase the objective.
    """
    x0 = p3.encode(np.zeros((len(H), len(H))), np.zeros((len(H), len(H))),
                   np.zeros_like(p3.dB.value(x)), 0.5 * (H + H.T))
    f = p3.problem.objective
    f0, f1 = f(x0), f(x)
    if f1 <= f0:
        return x
    # f(theta) = f0 + b theta + a theta^2 on the segment
    fh = f(x0 + 0.5 * (x - x0))
    a = 2.0 * (f1 - 2.0 * fh + f0)
    b = f1 - f0 - a
    theta = float(np.clip(-b / (2.0 * a), 0.0, 1.0)) if a > 0 else 0.0
    log.info('Solver point above fallback by %.3e; line search theta=%.3g.',
             f1 - f0, theta)
    return x0 + theta * (x - x0)


def solve_problem3(
    it: IterateState,
    C: np.ndarray,
    sr: SupplyRate,
    dm: DataMatrices,
    eps: float = 1e-6,
    rescale: bool = True,
    backend: str = 'clarabel',
    tol: float = conic.DEFAULT_TOL,
) -> Problem3Result:
    """Solve one overbounding step and re-verify the resulting iterate.

    Raises
    ------
    AlgorithmError
        If the subproblem is not solved to optimality or the recovered
        point fails the dissipation LMI.
    """
    p3 = build_problem3(it, C, sr, dm, eps=eps, rescale=rescale)
    sol = conic.solve(p3.problem, tol=tol, backend=backend)
    if not sol.ok:
        raise AlgorithmError(
            f'overbounding subproblem returned {sol.status.value} '
            f'(a strictly feasible iterate should keep it feasible; this '
            f'points to solver tolerance): {sol.info}', it.iteration, sol)
    x = _safeguarded(p3, sol.x, it.H)
    if x is not sol.x:
        sol.info['safeguard'] = 'line search toward the fallback point'
    dP, dA, dB, G = p3.decode(x)
    P_new = it.P + dP
    A_new, B_new = it.A + dA, it.B + dB
    eigmax = float(np.linalg.eigvalsh(
        lemma_lmi_lhs(P_new, A_new, B_new, C, sr)).max())
    if eigmax >= 0 or np.linalg.eigvalsh(P_new).min() <= 0:
        raise AlgorithmError(
            f'recovered iterate violates the dissipation LMI '
            f'(eigmax {eigmax:.3e})', it.iteration, sol)
    return Problem3Result(dP=dP, dA=dA, dB=dB, G=G,
                          j1_new=j1(A_new, B_new, dm), solution=sol)


# ---------------------------------------------------------------------------
# Outer algorithm
# ---------------------------------------------------------------------------


def _guard_H(G: np.ndarray, eps: float) -> np.ndarray:
    """Next slack matrix; keeps ``H + H^T`` safely positive definite.

    The fallback point of the next subproblem meets the ``eps`` margin only
    if ``eig_min(H + H^T) >= 2 eps``; a floor of ``4 eps`` leaves room for
    solver tolerance.
    """
    floor = 4.0 * eps
    eigmin = float(np.linalg.eigvalsh(G + G.T).min())
    if eigmin >= floor:
        return G
    log.info('Shifting H: eig_min(G + G^T) = %.3e below %.1e.', eigmin,
             floor)
    return 0.5 * (G + G.T) + 0.5 * (floor - eigmin + 1e-8) * np.eye(len(G))


def _record(state: IterateState, C: np.ndarray, sr: SupplyRate,
            status: str) -> IterationRecord:
    eigmax = float(np.linalg.eigvalsh(
        lemma_lmi_lhs(state.P, state.A, state.B, C, sr)).max())
    return IterationRecord(
        iteration=state.iteration,
        j1=state.j1,
        lmi_margin=-eigmax,
        eigmin_P=float(np.linalg.eigvalsh(state.P).min()),
        eigmin_HplusHT=float(np.linalg.eigvalsh(state.H + state.H.T).min()),
        solver_status=status,
    )


@dataclass
class AlgorithmResult:
    model: KoopmanModel
    log: List[IterationRecord]
    iterates: List[IterateState] = field(default_factory=list)
    stop_reason: str = ''

    @property
    def j1_history(self) -> np.ndarray:
        return np.array([rec.j1 for rec in self.log])


def run_algorithm(
    dm: DataMatrices,
    C: np.ndarray,
    sr: SupplyRate,
    dictionary: LiftingDictionary,
    opts: Optional[AlgorithmOptions] = None,
) -> AlgorithmResult:
    """Convex initialization followed by sequential overbounding steps.

    Each iteration solves the overbounding subproblem at the current
    ``(P, A, B, H)`` and applies ``(P, A, B, H) <- (P + dP, A + dA,
    B + dB, G)``. Stops after ``opts.max_iterations`` steps, when the
    relative decrease of ``J1`` drops below ``opts.rel_descent_tol``, when a
    step brings no decrease (``no_descent``) or when a subproblem cannot be
    solved (``solver_failure``); the last certified iterate is returned.
    """
    opts = opts or AlgorithmOptions()
    eps = opts.epsilon_margin
    C = np.atleast_2d(np.asarray(C, dtype=float))
    N = dm.lifted_dim
    try:
        P, R, S = solve_problem2(C, sr, dm, eps=eps, rescale=opts.rescale,
                                 backend=opts.backend, tol=opts.solver_tol)
    except conic.SolverError as err:
        raise AlgorithmError(str(err), 0, err.solution) from err
    A, B = recover_AB(P, R, S)
    state = IterateState(P=P, A=A, B=B, H=np.eye(N), j1=j1(A, B, dm))
    records = [_record(state, C, sr, 'Optimal')]
    iterates = [state]
    if records[0].lmi_margin <= 0:
        raise AlgorithmError('convex initialization is not dissipative', 0)
    stop_reason = 'max_iterations'
    for i in range(opts.max_iterations):
        try:
            res = solve_problem3(state, C, sr, dm, eps=eps,
                                 rescale=opts.rescale, backend=opts.backend,
                                 tol=opts.solver_tol)
        except AlgorithmError as err:
            # the current iterate is certified; keep it rather than abort
            stop_reason = 'solver_failure'
            log.warning('Stopping at the last certified iterate: %s', err)
            break
        if res.j1_new >= state.j1:
            stop_reason = 'no_descent'
            log.info('Iteration %d gave no descent (%.6e > %.6e); stopping.',
                     i, res.j1_new, state.j1)
            break
        new_state = IterateState(P=state.P + res.dP, A=state.A + res.dA,
                                 B=state.B + res.dB, H=_guard_H(res.G, eps),
                                 j1=res.j1_new, iteration=i + 1)
        rel = (state.j1 - new_state.j1) / max(state.j1, 1e-12)
        state = new_state
        iterates.append(state)
        records.append(_record(state, C, sr, res.solution.status.value))
        log.info('Iteration %d: j1 = %.8e (rel. decrease %.3e)', i + 1,
                 state.j1, rel)
        if rel < opts.rel_descent_tol:
            stop_reason = 'rel_descent_tol'
            break
    P = 0.5 * (state.P + state.P.T)
    model = KoopmanModel(A=state.A, B=state.B, C=C, dictionary=dictionary,
                         P=P)
    return AlgorithmResult(model=model, log=records, iterates=iterates,
                           stop_reason=stop_reason)
