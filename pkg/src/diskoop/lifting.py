"""Lifting dictionaries mapping a state ``x`` to a feature vector ``psi(x)``.

Two dictionaries are supported: the state stacked with thin plate spline
radial basis functions, and the identity dictionary (no centers), which
gives an ordinary linear state-space model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

RNG_ALGORITHM = 'numpy.random.PCG64'


def eval_tps(x: np.ndarray, r: np.ndarray) -> float:
    """Evaluate the thin plate spline ``|x - r|^2 ln |x - r|``.

    The value at ``x == r`` is the analytic limit ``0``.
    """
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    if x.shape != r.shape:
        raise ValueError(f'Dimension mismatch: x has shape {x.shape}, '
                         f'center has shape {r.shape}.')
    dist = float(np.linalg.norm(x - r))
    if dist == 0.0:
        return 0.0
    return dist**2 * np.log(dist)


def _tps_matrix(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Vectorized TPS features, shape ``(n_samples, n_centers)``."""
    diff = X[:, None, :] - centers[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    out = np.zeros_like(dist)
    nz = dist > 0
    out[nz] = dist[nz]**2 * np.log(dist[nz])
    return out


@dataclass(frozen=True)
class LiftingDictionary:
    """State-plus-thin-plate-spline dictionary.

    Attributes
    ----------
    state_dim : int
        Dimension ``n`` of the original state.
    centers : np.ndarray
        TPS centers, shape ``(K, n)``, in generation order.
    include_state : bool
        If true, the state itself forms the first ``n`` lifted coordinates.
    rng : dict
        Metadata describing how the centers were drawn (may be empty).
    """

    state_dim: int
    centers: np.ndarray
    include_state: bool = True
    rng: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        centers = np.array(self.centers, dtype=float).reshape(
            -1, self.state_dim)
        centers.setflags(write=False)
        object.__setattr__(self, 'centers', centers)
        if self.state_dim < 1:
            raise ValueError('`state_dim` must be at least 1.')
        if centers.shape[0] > 1:
            dists = np.linalg.norm(centers[:, None, :] - centers[None, :, :],
                                   axis=-1)
            iu = np.triu_indices(centers.shape[0], k=1)
            if np.any(dists[iu] == 0.0):
                raise ValueError('Dictionary centers must be pairwise '
                                 'distinct.')
        if not self.include_state and centers.shape[0] == 0:
            raise ValueError('Empty dictionary: no state and no centers.')

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]

    @property
    def lifted_dim(self) -> int:
        return self.state_dim * int(self.include_state) + self.n_centers

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LiftingDictionary):
            return NotImplemented
        return (self.state_dim == other.state_dim
                and self.include_state == other.include_state
                and np.array_equal(self.centers, other.centers))

    def __hash__(self) -> int:
        return hash((self.state_dim, self.include_state,
                     self.centers.tobytes()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'state_dim': self.state_dim,
            'include_state': self.include_state,
            'centers': self.centers.tolist(),
            'rng': dict(self.rng),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'LiftingDictionary':
        return cls(
            state_dim=int(data['state_dim']),
            centers=np.array(data['centers'], dtype=float),
            include_state=bool(data['include_state']),
            rng=dict(data.get('rng', {})),
        )


def identity_dictionary(n: int) -> LiftingDictionary:
    """Dictionary with ``psi(x) = x``."""
    return LiftingDictionary(state_dim=n, centers=np.zeros((0, n)))


def lift(dictionary: LiftingDictionary, x: np.ndarray) -> np.ndarray:
    """Lift a single state, or a batch of states stacked as rows.

    Parameters
    ----------
    dictionary : LiftingDictionary
        Dictionary to evaluate.
    x : np.ndarray
        State of shape ``(n,)`` or batch of shape ``(n_samples, n)``.

    Returns
    -------
    np.ndarray
        Lifted state of shape ``(N,)`` or ``(n_samples, N)``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.ndim != 2 or X.shape[1] != dictionary.state_dim:
        raise ValueError(f'Dimension mismatch: expected states of length '
                         f'{dictionary.state_dim}, got shape {x.shape}.')
    blocks = []
    if dictionary.include_state:
        blocks.append(X)
    if dictionary.n_centers > 0:
        blocks.append(_tps_matrix(X, dictionary.centers))
    out = np.hstack(blocks)
    return out[0] if single else out


def sample_dictionary(
    n: int,
    K: int,
    seed: int,
    box: Optional[Tuple[float, float]] = None,
) -> LiftingDictionary:
    """Draw ``K`` TPS centers uniformly from a box, default ``[0, 1]^n``.

    The generator is ``numpy.random.default_rng(seed)``, so identical
    arguments give identical dictionaries.
    """
    if n < 1:
        raise ValueError('`n` must be at least 1.')
    if K < 0:
        raise ValueError('`K` must be nonnegative.')
    lo, hi = (0.0, 1.0) if box is None else (float(box[0]), float(box[1]))
    if not hi > lo:
        raise ValueError('Center box must satisfy lo < hi.')
    rng = np.random.default_rng(seed)
    centers = rng.uniform(lo, hi, size=(K, n))
    return LiftingDictionary(
        state_dim=n,
        centers=centers,
        include_state=True,
        rng={
            'algorithm': RNG_ALGORITHM,
            'seed': int(seed),
            'box': [lo, hi],
        },
    )


def lift_states(dictionary: LiftingDictionary,
                states: Sequence[np.ndarray]) -> np.ndarray:
    """Lift a sequence of states into a matrix with one column per state."""
    return lift(dictionary, np.atleast_2d(np.asarray(states, dtype=float))).T
