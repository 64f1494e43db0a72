"""Solver-agnostic LMI-constrained convex programs.

A :class:`ConicProblem` has the form::

    minimize    c^T x + ||L x - b||^2 + const
    subject to  F0_j + sum_i x_i F_ij >= 0   (PSD) for every block j

Builders declare matrix-valued decision variables, combine them into
:class:`AffineExpr` objects and register LMI blocks. :func:`solve` lowers the
problem to a backend (Clarabel by default, CVXOPT as an alternative) and
independently re-checks every LMI block by eigenvalue computation.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, TextIO, Union

import numpy as np
import scipy.sparse

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7
MAX_TIGHTENING_RETRIES = 3


class Status(str, enum.Enum):
    OPTIMAL = 'Optimal'
    INFEASIBLE = 'Infeasible'
    NUMERICAL_FAILURE = 'NumericalFailure'


class SolverError(RuntimeError):
    """Raised by callers when a solve does not return an optimal point."""

    def __init__(self, message: str, solution: 'ConicSolution' = None):
        super().__init__(message)
        self.solution = solution


class InfeasibleError(SolverError):
    """The problem was detected infeasible."""


class AffineExpr:
    """Matrix ``const + sum_i x_i coef[i]`` affine in the decision vector.

    ``coef`` has shape ``(d, rows, cols)`` where ``d`` is the number of
    variables known when the expression was created. Expressions with
    different ``d`` are zero-padded when combined.
    """

    __array_ufunc__ = None

    def __init__(self, const: np.ndarray, coef: np.ndarray) -> None:
        self.const = np.asarray(const, dtype=float)
        self.coef = np.asarray(coef, dtype=float)
        if self.const.ndim != 2 or self.coef.shape[1:] != self.const.shape:
            raise ValueError('Inconsistent affine expression shapes.')

    @classmethod
    def constant(cls, value: np.ndarray, num_vars: int = 0) -> 'AffineExpr':
        value = np.atleast_2d(np.asarray(value, dtype=float))
        return cls(value, np.zeros((num_vars, ) + value.shape))

    @property
    def shape(self):
        return self.const.shape

    @property
    def num_vars(self) -> int:
        return self.coef.shape[0]

    def _padded(self, d: int) -> np.ndarray:
        if self.num_vars == d:
            return self.coef
        pad = np.zeros((d - self.num_vars, ) + self.shape)
        return np.concatenate([self.coef, pad], axis=0)

    @staticmethod
    def _lift(other: Any) -> 'AffineExpr':
        if isinstance(other, AffineExpr):
            return other
        return AffineExpr.constant(other)

    def __add__(self, other: Any) -> 'AffineExpr':
        if np.isscalar(other):
            other = np.full(self.shape, float(other))
        other = self._lift(other)
        if other.shape != self.shape:
            raise ValueError(f'Shape mismatch {self.shape} vs {other.shape}.')
        d = max(self.num_vars, other.num_vars)
        return AffineExpr(self.const + other.const,
                          self._padded(d) + other._padded(d))

    __radd__ = __add__

    def __neg__(self) -> 'AffineExpr':
        return AffineExpr(-self.const, -self.coef)

    def __sub__(self, other: Any) -> 'AffineExpr':
        return self + (-other if np.isscalar(other) else -self._lift(other))

    def __rsub__(self, other: Any) -> 'AffineExpr':
        return (-self) + other

    def __mul__(self, scalar: float) -> 'AffineExpr':
        return AffineExpr(self.const * scalar, self.coef * scalar)

    __rmul__ = __mul__

    def __matmul__(self, other: np.ndarray) -> 'AffineExpr':
        other = np.atleast_2d(np.asarray(other, dtype=float))
        return AffineExpr(self.const @ other, self.coef @ other)

    def __rmatmul__(self, other: np.ndarray) -> 'AffineExpr':
        other = np.atleast_2d(np.asarray(other, dtype=float))
        return AffineExpr(other @ self.const, other @ self.coef)

    @property
    def T(self) -> 'AffineExpr':
        return AffineExpr(self.const.T, np.swapaxes(self.coef, 1, 2))

    def he(self) -> 'AffineExpr':
        """Return ``X + X^T``."""
        return self + self.T

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.const + np.tensordot(x[:self.num_vars], self.coef, 1)


def bmat(blocks: Sequence[Sequence[Any]]) -> AffineExpr:
    """Assemble a block matrix of expressions, constants, or ``None``/0.

    ``None`` or scalar ``0`` entries are zero blocks whose size is inferred
    from the rest of their block row and column.
    """
    n_rows, n_cols = len(blocks), len(blocks[0])
    heights = [None] * n_rows
    widths = [None] * n_cols
    for i, row in enumerate(blocks):
        if len(row) != n_cols:
            raise ValueError('Ragged block matrix.')
        for j, blk in enumerate(row):
            if _is_zero(blk):
                continue
            shape = blk.shape if isinstance(blk, AffineExpr) else \
                np.atleast_2d(blk).shape
            for store, k, size in ((heights, i, shape[0]),
                                   (widths, j, shape[1])):
                if store[k] is not None and store[k] != size:
                    raise ValueError('Incompatible block sizes.')
                store[k] = size
    if None in heights or None in widths:
        raise ValueError('Cannot infer size of an all-zero block row/column.')
    d = max([b.num_vars for row in blocks for b in row
             if isinstance(b, AffineExpr)] or [0])
    const = np.zeros((sum(heights), sum(widths)))
    coef = np.zeros((d, sum(heights), sum(widths)))
    r0 = 0
    for i, row in enumerate(blocks):
        c0 = 0
        for j, blk in enumerate(row):
            rs = slice(r0, r0 + heights[i])
            cs = slice(c0, c0 + widths[j])
            if isinstance(blk, AffineExpr):
                const[rs, cs] = blk.const
                coef[:, rs, cs] = blk._padded(d)
            elif not _is_zero(blk):
                const[rs, cs] = np.atleast_2d(blk)
            c0 += widths[j]
        r0 += heights[i]
    return AffineExpr(const, coef)


def _is_zero(blk: Any) -> bool:
    return blk is None or (np.isscalar(blk) and blk == 0)


@dataclass
class LmiBlock:
    """Constraint ``F0 + sum_i x_i Fs[i] >= 0``."""

    F0: np.ndarray
    Fs: np.ndarray
    name: str = ''

    @property
    def size(self) -> int:
        return self.F0.shape[0]

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.F0 + np.tensordot(x[:self.Fs.shape[0]], self.Fs, 1)


@dataclass
class ConicProblem:
    """Linear plus convex quadratic objective under LMI constraints."""

    num_vars: int = 0
    objective_linear: np.ndarray = field(
        default_factory=lambda: np.zeros(0))
    L: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    objective_constant: float = 0.0
    lmi_blocks: List[LmiBlock] = field(default_factory=list)

    def _grow(self, count: int) -> np.ndarray:
        start = self.num_vars
        self.num_vars += count
        self.objective_linear = np.concatenate(
            [self.objective_linear, np.zeros(count)])
        if self.L is not None:
            self.L = np.hstack([self.L, np.zeros((self.L.shape[0], count))])
        return np.arange(start, start + count)

    def add_symmetric_matrix_var(self, size: int) -> np.ndarray:
        """Register a symmetric variable; returns its ``size x size`` index map.

        Scalars are the upper triangle in row-major order, so entries
        ``(i, j)`` and ``(j, i)`` share one index.
        """
        if size < 1:
            raise ValueError('`size` must be at least 1.')
        idx = self._grow(size * (size + 1) // 2)
        index_map = np.empty((size, size), dtype=int)
        iu = np.triu_indices(size)
        index_map[iu] = idx
        index_map.T[iu] = idx
        return index_map

    def add_matrix_var(self, rows: int, cols: int) -> np.ndarray:
        """Register a general variable; returns its row-major index map."""
        if rows < 1 or cols < 1:
            raise ValueError('Matrix variable sizes must be at least 1.')
        return self._grow(rows * cols).reshape(rows, cols)

    def var(self, index_map: np.ndarray) -> AffineExpr:
        """Affine expression equal to the matrix variable ``index_map``."""
        rows, cols = index_map.shape
        coef = np.zeros((self.num_vars, rows, cols))
        r, c = np.indices((rows, cols))
        coef[index_map.ravel(), r.ravel(), c.ravel()] = 1.0
        return AffineExpr(np.zeros((rows, cols)), coef)

    def add_lmi(self, expr: AffineExpr, name: str = '') -> LmiBlock:
        """Require ``expr >= 0`` in the PSD sense; ``expr`` must be symmetric."""
        if expr.shape[0] != expr.shape[1]:
            raise ValueError('LMI expression must be square.')
        scale = max(1.0, np.abs(expr.const).max(initial=0.0),
                    np.abs(expr.coef).max(initial=0.0))
        asym = max(np.abs(expr.const - expr.const.T).max(initial=0.0),
                   np.abs(expr.coef - np.swapaxes(expr.coef, 1,
                                                  2)).max(initial=0.0))
        if asym > 1e-12 * scale:
            raise ValueError(f'LMI `{name}` is not symmetric '
                             f'(asymmetry {asym:.2e}).')
        F0 = 0.5 * (expr.const + expr.const.T)
        Fs = expr._padded(self.num_vars)
        Fs = 0.5 * (Fs + np.swapaxes(Fs, 1, 2))
        block = LmiBlock(F0=F0, Fs=Fs, name=name)
        self.lmi_blocks.append(block)
        return block

    def set_quadratic_objective(self, residual: AffineExpr,
                                constant: float = 0.0) -> None:
        """Set the quadratic term to ``||residual||_F^2 + constant``."""
        coef = residual._padded(self.num_vars)
        self.L = coef.reshape(self.num_vars, -1).T.copy()
        self.b = -residual.const.ravel().copy()
        self.objective_constant = float(constant)

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        val = float(self.objective_linear @ x) + self.objective_constant
        if self.L is not None:
            r = self.L @ x - self.b
            val += float(r @ r)
        return val

    def constraint_violation(self, x: np.ndarray) -> float:
        """Largest negative eigenvalue magnitude across LMI blocks."""
        worst = 0.0
        for blk in self.lmi_blocks:
            worst = max(worst, -float(np.linalg.eigvalsh(blk.value(x)).min()))
        return worst

    def validate(self) -> None:
        for blk in self.lmi_blocks:
            if blk.Fs.shape[0] < self.num_vars:
                blk.Fs = np.concatenate([
                    blk.Fs,
                    np.zeros((self.num_vars - blk.Fs.shape[0], ) +
                             blk.F0.shape)
                ])
            if blk.Fs.shape[1:] != blk.F0.shape:
                raise ValueError(f'Block `{blk.name}` has inconsistent sizes.')


@dataclass(frozen=True)
class ConicSolution:
    x: np.ndarray
    objective_value: float
    status: Status
    max_constraint_violation: float
    iterations: int = 0
    info: Dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == Status.OPTIMAL


def _svec_indices(n: int):
    """Upper-triangle indices in column-major order and sqrt(2) scales."""
    cols, rows = np.triu_indices(n)[::-1]
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return rows, cols, scale


@dataclass
class _StandardForm:
    """``min c^T z`` s.t. ``h_k - G_k z`` in cone ``k`` (SOC or PSD).

    ``z = [x, t]`` where ``t`` is the epigraph variable of the quadratic
    term (absent when there is none). PSD cones are stored as ``(F0, Fs)``.
    """

    c: np.ndarray
    socs: List[tuple]
    psds: List[LmiBlock]
    n_x: int
    hessian: Optional[np.ndarray] = None


def _lower(prob: ConicProblem, epigraph: bool = True) -> _StandardForm:
    """Lower the quadratic term natively or through an epigraph.

    Natively, ``||Lx - b||^2`` becomes the Hessian ``2 L^T L`` plus the
    linear term ``-2 L^T b``. Through an epigraph, without a linear term ``||Lx - b||^2`` is replaced by ``||Lx - b|| <= t``
    (same minimizer). Otherwise ``t >= ||Lx - b||^2`` is encoded as
    ``||(2(Lx - b), t - 1)|| <= t + 1``.
    """
    d = prob.num_vars
    if prob.L is None or not prob.L.size:
        return _StandardForm(prob.objective_linear.copy(), [],
                             prob.lmi_blocks, d)
    L, b = prob.L, prob.b
    if not epigraph:
        return _StandardForm(prob.objective_linear - 2.0 * (L.T @ b), [],
                             prob.lmi_blocks, d, hessian=2.0 * (L.T @ L))
    r = L.shape[0]
    c = np.concatenate([prob.objective_linear, [1.0]])
    if not np.any(prob.objective_linear):
        G = np.zeros((r + 1, d + 1))
        G[0, d] = -1.0
        G[1:, :d] = -L
        h = np.concatenate([[0.0], -b])
    else:
        G = np.zeros((r + 2, d + 1))
        G[0, d] = -1.0
        G[1, d] = -1.0
        G[2:, :d] = -2.0 * L
        h = np.concatenate([[1.0, -1.0], -2.0 * b])
    psds = [
        LmiBlock(blk.F0, np.concatenate([blk.Fs,
                                         np.zeros((1, ) + blk.F0.shape)]),
                 blk.name) for blk in prob.lmi_blocks
    ]
    return _StandardForm(c, [(G, h)], psds, d)


def _solve_clarabel(prob: ConicProblem, tol: float, max_iter: int,
                    epigraph: bool = False):
    import clarabel

    sf = _lower(prob, epigraph)
    nz = len(sf.c)
    A_rows, b_rows, cones = [], [], []
    for G, h in sf.socs:
        A_rows.append(G)
        b_rows.append(h)
        cones.append(clarabel.SecondOrderConeT(len(h)))
    for blk in sf.psds:
        r, c, s = _svec_indices(blk.size)
        b_rows.append(blk.F0[r, c] * s)
        A_rows.append(-(blk.Fs[:, r, c] * s).T)
        cones.append(clarabel.PSDTriangleConeT(blk.size))
    A = scipy.sparse.csc_matrix(np.vstack(A_rows)) if A_rows else \
        scipy.sparse.csc_matrix((0, nz))
    b = np.concatenate(b_rows) if b_rows else np.zeros(0)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = 1e-12
    settings.tol_gap_rel = min(1e-8, tol * 1e-1)
    settings.tol_feas = min(1e-8, tol * 1e-1)
    hess = np.zeros((nz, nz)) if sf.hessian is None else np.triu(sf.hessian)
    sol = clarabel.DefaultSolver(scipy.sparse.csc_matrix(hess), sf.c, A, b,
                                 cones, settings).solve()
    name = str(sol.status)
    if name in ('Solved', 'AlmostSolved'):
        status = Status.OPTIMAL
    elif name in ('PrimalInfeasible', 'AlmostPrimalInfeasible'):
        status = Status.INFEASIBLE
    else:
        status = Status.NUMERICAL_FAILURE
    info = {
        'backend': 'clarabel',
        'backend_status': name,
        'solve_time': float(sol.solve_time),
        'r_prim': float(sol.r_prim),
        'r_dual': float(sol.r_dual),
    }
    x = np.array(sol.x, dtype=float)[:sf.n_x]
    return x, status, int(sol.iterations), info


def _solve_cvxopt(prob: ConicProblem, tol: float, max_iter: int,
                  epigraph: bool = False):
    import cvxopt
    from cvxopt import solvers

    sf = _lower(prob, epigraph)
    nz = len(sf.c)
    G_rows, h_rows = [], []
    dims = {'l': 0, 'q': [], 's': []}
    for G, h in sf.socs:
        G_rows.append(G)
        h_rows.append(h)
        dims['q'].append(len(h))
    for blk in sf.psds:
        n = blk.size
        G_rows.append(-blk.Fs.reshape(nz, n * n, order='F').T)
        h_rows.append(blk.F0.ravel(order='F'))
        dims['s'].append(n)
    info = {'backend': 'cvxopt'}
    if not G_rows:
        info.update(backend_status='exception', reason='no constraints')
        return np.zeros(sf.n_x), Status.NUMERICAL_FAILURE, 0, info
    G = np.vstack(G_rows)
    # variables absent from every term are free and irrelevant; CVXOPT
    # would reject the singular KKT system they create
    used = np.any(G != 0, axis=0) | (sf.c != 0)
    if sf.hessian is not None:
        used |= np.any(sf.hessian != 0, axis=0)
    options = {
        'show_progress': False,
        'maxiters': max_iter,
        'abstol': 1e-12,
        'reltol': min(1e-8, tol * 1e-1),
        'feastol': min(1e-8, tol * 1e-1),
    }
    args = (cvxopt.matrix(G[:, used]), cvxopt.matrix(np.concatenate(h_rows)),
            dims)
    try:
        if sf.hessian is None:
            res = solvers.conelp(cvxopt.matrix(sf.c[used]), *args,
                                 options=options)
        else:
            res = solvers.coneqp(cvxopt.matrix(sf.hessian[np.ix_(used, used)]),
                                 cvxopt.matrix(sf.c[used]), *args,
                                 options=options)
    except (ValueError, ArithmeticError) as err:
        # CVXOPT rejects rank-deficient KKT systems outright
        info.update(backend_status='exception', reason=str(err))
        return np.zeros(sf.n_x), Status.NUMERICAL_FAILURE, 0, info
    name = res['status']
    rel_gap = res.get('relative gap')
    if name == 'optimal':
        status = Status.OPTIMAL
    elif name == 'primal infeasible':
        status = Status.INFEASIBLE
    elif (name == 'unknown' and rel_gap is not None and 0 <= rel_gap <= 1e-6
          and (res.get('primal infeasibility') or np.inf) <= 1e-6):
        # stalled short of the tight gap target; feasibility is re-checked
        status = Status.OPTIMAL
    else:
        status = Status.NUMERICAL_FAILURE
    x = np.zeros(nz)
    if res['x'] is not None:
        x[used] = np.array(res['x']).ravel()
    info.update({
        'backend_status': name,
        'primal_infeasibility': res.get('primal infeasibility'),
        'dual_infeasibility': res.get('dual infeasibility'),
        'relative_gap': rel_gap,
    })
    return x[:sf.n_x], status, int(res.get('iterations', 0)), info


def _normalized(prob: ConicProblem) -> ConicProblem:
    """Copy of ``prob`` with the objective scaled to unit magnitude."""
    mag = float(np.abs(prob.objective_linear).max(initial=0.0))
    if prob.L is not None and prob.L.size:
        mag = max(mag, float(np.linalg.norm(prob.L, 2))**2)
    if mag == 0.0:
        return prob
    root = 1.0 / np.sqrt(mag)
    return ConicProblem(
        num_vars=prob.num_vars,
        objective_linear=prob.objective_linear / mag,
        L=None if prob.L is None else prob.L * root,
        b=None if prob.b is None else prob.b * root,
        objective_constant=prob.objective_constant / mag,
        lmi_blocks=prob.lmi_blocks,
    )




def _centered(prob: ConicProblem):
    """Shift variables to the unconstrained least-squares point ``x_ls``.

    With ``x = x_ls + y`` the quadratic term keeps its Hessian but its
    optimal value becomes small, so relative gap tests are not swamped by
    the constant ``||L x_ls||^2``. Returns the shifted problem and ``x_ls``.
    """
    center = np.zeros(prob.num_vars)
    if prob.L is None or not prob.L.size:
        return prob, center
    center = np.linalg.lstsq(prob.L, prob.b, rcond=None)[0]
    blocks = [
        LmiBlock(blk.F0 + np.tensordot(center, blk.Fs, 1), blk.Fs, blk.name)
        for blk in prob.lmi_blocks
    ]
    shifted = ConicProblem(
        num_vars=prob.num_vars, objective_linear=prob.objective_linear,
        L=prob.L, b=prob.b - prob.L @ center,
        objective_constant=prob.objective_constant +
        float(prob.objective_linear @ center), lmi_blocks=blocks)
    return shifted, center


def _attempt(backend_fn, prob: ConicProblem, tol: float, max_iter: int):
    """Native lowering first; the epigraph form if that fails numerically."""
    x, status, iters, info = backend_fn(prob, tol, max_iter)
    if status == Status.NUMERICAL_FAILURE and prob.L is not None:
        log.info('Native solve failed (%s); retrying with epigraph form.',
                 info.get('backend_status'))
        x, status, more, retry = backend_fn(prob, tol, max_iter,
                                            epigraph=True)
        retry['native_attempt'] = info
        return x, status, iters + more, retry
    return x, status, iters, info


def _tightened(prob: ConicProblem, shift: float) -> ConicProblem:
    """Copy of ``prob`` with every LMI ``F(x) >= 0`` replaced by
    ``F(x) >= shift I``."""
    blocks = [
        LmiBlock(blk.F0 - shift * np.eye(blk.size), blk.Fs, blk.name)
        for blk in prob.lmi_blocks
    ]
    return ConicProblem(num_vars=prob.num_vars,
                        objective_linear=prob.objective_linear, L=prob.L,
                        b=prob.b, objective_constant=prob.objective_constant,
                        lmi_blocks=blocks)


_BACKENDS = {'clarabel': _solve_clarabel, 'cvxopt': _solve_cvxopt}


def solve(prob: ConicProblem,
          tol: float = DEFAULT_TOL,
          backend: str = 'clarabel',
          max_iter: int = 200) -> ConicSolution:
    """Solve ``prob`` and re-verify LMI feasibility independently.

    The objective is normalized and the variables are centered at the
    unconstrained least-squares point before reaching the backend. A quadratic
    objective is lowered natively, falling back to the epigraph form when
    the native solve fails numerically. An ``Optimal`` answer that misses
    the LMIs by more than ``tol`` is re-solved on a tightened feasible set
    (at most :data:`MAX_TIGHTENING_RETRIES` times) and otherwise downgraded
    to ``NumericalFailure``.
    """
    try:
        backend_fn = _BACKENDS[backend]
    except KeyError:
        raise ValueError(f'Unknown backend `{backend}`.') from None
    prob.validate()
    normalized, center = _centered(_normalized(prob))
    x, status, iters, info = _attempt(backend_fn, normalized, tol, max_iter)
    x = x + center
    shift = 0.0
    for _ in range(MAX_TIGHTENING_RETRIES):
        if status != Status.OPTIMAL or not np.all(np.isfinite(x)):
            break
        violation = prob.constraint_violation(x)
        if violation <= tol:
            break
        # inaccurate near the boundary: retry on a tightened set
        shift += 2.0 * violation
        log.info('Retrying with LMIs tightened by %.2e', shift)
        x, status, more, info = _attempt(backend_fn,
                                         _tightened(normalized, shift), tol,
                                         max_iter)
        x = x + center
        iters += more
        info['tightening'] = shift
    if status == Status.INFEASIBLE:
        return ConicSolution(x=x, objective_value=np.inf, status=status,
                             max_constraint_violation=np.inf,
                             iterations=iters, info=info)
    if not np.all(np.isfinite(x)):
        info['reason'] = 'non-finite iterate'
        return ConicSolution(x=x, objective_value=np.nan,
                             status=Status.NUMERICAL_FAILURE,
                             max_constraint_violation=np.inf,
                             iterations=iters, info=info)
    violation = prob.constraint_violation(x)
    if status == Status.OPTIMAL and violation > tol:
        info['reason'] = (f'eigenvalue recheck violation {violation:.3e} '
                          f'exceeds tolerance {tol:.1e}')
        status = Status.NUMERICAL_FAILURE
    if status != Status.OPTIMAL:
        log.warning('Conic solve failed: %s', info)
    return ConicSolution(x=x, objective_value=prob.objective(x),
                         status=status, max_constraint_violation=violation,
                         iterations=iters, info=info)


def dump_sparse(prob: ConicProblem, stream: TextIO,
                threshold: float = 0.0) -> None:
    """Write LMI data as ``block row col var value`` lines.

    ``var`` is ``-1`` for the constant term ``F0``. Only the upper triangle
    is written.
    """
    stream.write(f'# num_vars {prob.num_vars}\n')
    stream.write('# block row col var value\n')
    for k, blk in enumerate(prob.lmi_blocks):
        stream.write(f'# block {k} size {blk.size} name {blk.name}\n')
        for var, mat in [(-1, blk.F0)] + list(enumerate(blk.Fs)):
            rows, cols = np.nonzero(np.triu(np.abs(mat) > threshold))
            for i, j in zip(rows, cols):
                stream.write(f'{k} {i} {j} {var} {float(mat[i, j])!r}\n')
