"""Trajectory generation for continuous-time systems under sampled inputs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional

import numpy as np

from .lifting import RNG_ALGORITHM

VectorField = Callable[[np.ndarray, np.ndarray], np.ndarray]


class NumericalBlowupError(RuntimeError):
    """Raised when integration produces a non-finite state."""

    def __init__(self, message: str, step: Optional[int] = None) -> None:
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class System:
    """Continuous-time input-output system ``xdot = f(x, u)``, ``y = h(x)``."""

    name: str
    n_states: int
    n_inputs: int
    n_outputs: int
    rhs: VectorField
    output: Callable[[np.ndarray], np.ndarray]
    notes: str = ''


def benchmark_rhs(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Right-hand side of the two-state passive benchmark.

    ``x1' = x2``, ``x2' = -2 x2 + x1 cos(x1 + x2) + u``.
    """
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape != (2,) or u.shape != (1,):
        raise ValueError(f'Benchmark expects x in R^2 and u in R^1, got '
                         f'shapes {x.shape} and {u.shape}.')
    x1, x2 = x
    return np.array([x2, -2.0 * x2 + x1 * np.cos(x1 + x2) + u[0]])


def benchmark_output(x: np.ndarray) -> np.ndarray:
    return np.array([np.asarray(x, dtype=float)[1]])


BENCHMARK = System(
    name='benchmark',
    n_states=2,
    n_inputs=1,
    n_outputs=1,
    rhs=benchmark_rhs,
    output=benchmark_output,
    notes=('second state equation read as -2*x2 + x1*cos(x1 + x2) + u; '
           'the source writes the coefficient as "x(1)"'),
)

SYSTEMS: Dict[str, System] = {'benchmark': BENCHMARK}


def get_system(name: str) -> System:
    try:
        return SYSTEMS[name]
    except KeyError:
        raise ValueError(f'Unknown system `{name}`. Available: '
                         f'{sorted(SYSTEMS)}.') from None


def rk4_step(f: VectorField, x: np.ndarray, u: np.ndarray,
             dt: float) -> np.ndarray:
    """One classical Runge-Kutta step with the input held constant."""
    if not dt > 0:
        raise ValueError('`dt` must be positive.')
    x = np.asarray(x, dtype=float)
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise NumericalBlowupError('RK4 step produced a non-finite state.')
    return x_next


def generate_input(
    kind: str,
    M: int,
    seed: int = 0,
    n_inputs: int = 1,
    dt: float = 0.01,
    low: float = -1.0,
    high: float = 1.0,
    amplitude: float = 1.0,
    omega: float = 1.0,
) -> np.ndarray:
    """Generate an input sequence of shape ``(M, n_inputs)``.

    Parameters
    ----------
    kind : str
        ``'uniform_random'`` (i.i.d. on ``[low, high]``), ``'sine'``
        (``amplitude * sin(omega * k * dt)``), or ``'zero'``.
    M : int
        Number of samples.
    seed : int
        Seed for ``'uniform_random'``.
    """
    if M < 1:
        raise ValueError('`M` must be at least 1.')
    if kind == 'uniform_random':
        rng = np.random.default_rng(seed)
        return rng.uniform(low, high, size=(M, n_inputs))
    if kind == 'sine':
        t = np.arange(M) * dt
        return np.tile((amplitude * np.sin(omega * t))[:, None],
                       (1, n_inputs))
    if kind == 'zero':
        return np.zeros((M, n_inputs))
    raise ValueError(f'Unknown input kind `{kind}`.')


@dataclass(frozen=True)
class TrajectoryDataset:
    """Sampled trajectory.

    ``states`` has one more row than ``inputs`` and ``outputs``: the last
    row is the terminal state reached after the final input.
    """

    dt: float
    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        for name in ('states', 'inputs', 'outputs'):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not self.dt > 0:
            raise ValueError('`dt` must be positive.')
        M = self.inputs.shape[0]
        if self.states.shape[0] != M + 1 or self.outputs.shape[0] != M:
            raise ValueError(
                f'Inconsistent lengths: {self.states.shape[0]} states, '
                f'{M} inputs, {self.outputs.shape[0]} outputs.')

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_states(self) -> int:
        return self.states.shape[1]

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.outputs.shape[1]


def simulate(
    system: System,
    x0: np.ndarray,
    inputs: np.ndarray,
    dt: float,
    metadata: Optional[Dict[str, Any]] = None,
) -> TrajectoryDataset:
    """Integrate ``system`` with RK4 under zero-order-hold ``inputs``."""
    if not dt > 0:
        raise ValueError('`dt` must be positive.')
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    M = inputs.shape[0]
    states = np.empty((M + 1, system.n_states))
    outputs = np.empty((M, system.n_outputs))
    states[0] = np.asarray(x0, dtype=float)
    for k in range(M):
        outputs[k] = system.output(states[k])
        try:
            states[k + 1] = rk4_step(system.rhs, states[k], inputs[k], dt)
        except NumericalBlowupError as err:
            raise NumericalBlowupError(
                f'Simulation of `{system.name}` blew up at step {k}.',
                step=k) from err
    meta = {'system': system.name, 'rng_algorithm': RNG_ALGORITHM}
    if system.notes:
        meta['system_notes'] = system.notes
    meta.update(metadata or {})
    return TrajectoryDataset(dt=dt, states=states, inputs=inputs,
                             outputs=outputs, metadata=meta)
