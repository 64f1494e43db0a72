"""Command-line front end: ``simulate``, ``fit``, ``verify``, ``compare``.

Every command reads an optional JSON config (``--config``) merged over
:data:`DEFAULT_CONFIG`; explicit flags override the config. Exit status is
0 on success, 2 when a dissipativity problem is infeasible and 1 on any
other error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import conic, dissipativity, dynsim, edmd, formats, lifting, sequential
from .dissipativity import SupplyRate

log = logging.getLogger('diskoop')

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2

MODES = ('constrained', 'unconstrained', 'linear_constrained')

DEFAULT_CONFIG: Dict[str, Any] = {
    'system': 'benchmark',
    'dt': 0.01,
    'n_samples': 5000,
    'x0': [0.0, 0.0],
    'seed': 0,
    'input': {
        'kind': 'uniform_random',
        'low': -1.0,
        'high': 1.0,
        'amplitude': 1.0,
        'omega': 1.0,
    },
    'dictionary': {
        'n_centers': 8,
        'seed': 1,
        'box': [0.0, 1.0],
    },
    'supply_rate': {
        'Xi11': [[0.0]],
        'Xi12': [[-1.0]],
        'Xi22': [[-0.2]],
    },
    'algorithm': sequential.AlgorithmOptions().to_dict(),
    'verify': {
        'omega_points': 400,
        'validation_samples': 1000,
        'validation_seed': None,
        'certify_margin': None,
    },
    'compare': {
        'n_samples': 2000,
        'x0': None,
        'input': {
            'kind': 'sine',
            'amplitude': 1.0,
            'omega': 1.0,
        },
    },
}


class ConfigError(ValueError):
    pass


def _merge(base: Dict[str, Any], override: Dict[str, Any],
           path: str = '') -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f'Unknown config key `{path}{key}`.')
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, f'{path}{key}.')
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    """Validated run configuration (a nested JSON-like dictionary)."""

    data: Dict[str, Any]

    def __post_init__(self) -> None:
        self.data = _merge(DEFAULT_CONFIG, self.data)
        d = self.data
        dynsim.get_system(d['system'])
        if not d['dt'] > 0:
            raise ConfigError('`dt` must be positive.')
        if int(d['n_samples']) < 2:
            raise ConfigError('`n_samples` must be at least 2.')
        if d['dictionary']['n_centers'] < 0:
            raise ConfigError('`dictionary.n_centers` must be >= 0.')
        if d['verify']['omega_points'] < 1:
            raise ConfigError('`verify.omega_points` must be >= 1.')
        self.supply_rate()
        self.algorithm()

    @classmethod
    def load(cls, path: Optional[str]) -> 'RunConfig':
        if path is None:
            return cls({})
        with open(path) as fh:
            return cls(json.load(fh))

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.data)

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    def system(self) -> dynsim.System:
        return dynsim.get_system(self.data['system'])

    def supply_rate(self) -> SupplyRate:
        try:
            return SupplyRate.from_dict(self.data['supply_rate'])
        except (KeyError, ValueError) as err:
            raise ConfigError(f'Invalid supply rate: {err}') from err

    def algorithm(self) -> sequential.AlgorithmOptions:
        try:
            return sequential.AlgorithmOptions(**self.data['algorithm'])
        except (TypeError, ValueError) as err:
            raise ConfigError(f'Invalid algorithm options: {err}') from err

    def validation_seed(self) -> int:
        seed = self.data['verify']['validation_seed']
        return int(self.data['seed']) + 1 if seed is None else int(seed)


def _inputs(spec: Dict[str, Any], M: int, seed: int, m: int,
            dt: float) -> np.ndarray:
    spec = dict(spec)
    kind = spec.pop('kind')
    return dynsim.generate_input(kind, M, seed=seed, n_inputs=m, dt=dt,
                                 **spec)


def _simulate(cfg: RunConfig, M: int, seed: int, input_spec: Dict[str, Any],
              x0: Sequence[float]) -> dynsim.TrajectoryDataset:
    system = cfg.system()
    u = _inputs(input_spec, M, seed, system.n_inputs, cfg['dt'])
    meta = {'seed': seed, 'input': input_spec, 'x0': list(map(float, x0))}
    return dynsim.simulate(system, np.asarray(x0, dtype=float), u, cfg['dt'],
                           metadata=meta)


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out: Path) -> Path:
    """Write the training trajectory CSV (plus metadata sidecar)."""
    ds = _simulate(cfg, int(cfg['n_samples']), int(cfg['seed']),
                   cfg['input'], cfg['x0'])
    formats.write_trajectory(out, ds)
    return out


def _dictionary(cfg: RunConfig, mode: str, n: int) -> lifting.LiftingDictionary:
    if mode == 'linear_constrained':
        return lifting.identity_dictionary(n)
    spec = cfg['dictionary']
    return lifting.sample_dictionary(n, int(spec['n_centers']),
                                     seed=int(spec['seed']),
                                     box=tuple(spec['box']))


def cmd_fit(cfg: RunConfig, trajectory: Path, mode: str, out: Path) -> Path:
    """Fit one of the three model types and write the model JSON.

    Constrained modes also write ``<out stem>.iterations.csv``.
    """
    if mode not in MODES:
        raise ConfigError(f'Unknown mode `{mode}`; choose from {MODES}.')
    ds = formats.read_trajectory(trajectory)
    dictionary = _dictionary(cfg, mode, ds.n_states)
    dm = edmd.assemble(ds, dictionary)
    base = edmd.fit_unconstrained(dm, dictionary)
    sr = cfg.supply_rate()
    extra: Dict[str, Any] = {
        'mode': mode,
        'dt': ds.dt,
        'trajectory': str(trajectory),
        'config': cfg.to_dict(),
    }
    if mode == 'unconstrained':
        model = base
        extra.update(j1=edmd.j1(model.A, model.B, dm), iteration_log=None)
    else:
        opts = cfg.algorithm()
        res = sequential.run_algorithm(dm, base.C, sr, dictionary, opts)
        model = res.model
        log_path = _sibling(out, '.iterations.csv')
        formats.write_iteration_log(log_path, res.log)
        extra.update(j1=float(res.j1_history[-1]),
                     j1_initial=float(res.j1_history[0]),
                     iteration_log=log_path.name,
                     stop_reason=res.stop_reason)
    extra['j2'] = edmd.j2(model.C, dm)
    formats.write_model(out, model, sr, **extra)
    return out


def cmd_verify(cfg: RunConfig, model_path: Path,
               out: Path) -> dissipativity.DissipativityReport:
    """Fresh certificate search, frequency sweep and trajectory audit.

    Writes the report JSON to ``out`` and ``<out stem>.nyquist.csv``.
    """
    raw = formats.read_model_file(model_path)
    model = formats.model_from_dict(raw, what=str(model_path))
    sr = (SupplyRate.from_dict(raw['supply_rate'])
          if raw.get('supply_rate') else cfg.supply_rate())
    dt = float(raw.get('dt') or cfg['dt'])
    opts = cfg.algorithm()
    margin = cfg['verify']['certify_margin']
    margin = opts.epsilon_margin / 10 if margin is None else float(margin)
    notes: Dict[str, Any] = {'model': str(model_path), 'dt': dt,
                             'certify_margin': margin}

    P = None
    try:
        P = dissipativity.certify(model.A, model.B, model.C, sr,
                                  margin=margin, backend=opts.backend,
                                  tol=opts.solver_tol)
        notes['certified'] = True
    except dissipativity.NotDissipativeError as err:
        notes['certified'] = False
        notes['certify_error'] = str(err)
    except conic.SolverError as err:
        notes['certified'] = False
        notes['certify_error'] = str(err)
        notes['certify_solver_failure'] = True
    P_eval = P if P is not None else model.P
    if P_eval is None:
        P_eval = np.zeros((model.lifted_dim, model.lifted_dim))
        notes['lmi_eigmax_source'] = 'P = 0'
    else:
        notes['lmi_eigmax_source'] = ('fresh certificate' if P is not None
                                      else 'stored certificate')
    lmi_eigmax = float(
        np.linalg.eigvalsh(
            dissipativity.lemma_lmi_lhs(P_eval, model.A, model.B, model.C,
                                        sr)).max())

    freq_margin = freq_bound = None
    try:
        omegas = dissipativity.default_omega_grid(
            dt, int(cfg['verify']['omega_points']))
        G = dissipativity.frequency_response(model.A, model.B, model.C,
                                             omegas, dt)
        freq_margin = dissipativity.frequency_margin(model, sr, dt, omegas)
        freq_bound = dissipativity.frequency_bound(sr)
        formats.write_nyquist(_sibling(out, '.nyquist.csv'), omegas,
                              G[:, 0, 0] if G.shape[1:] == (1, 1) else G)
    except ValueError as err:
        notes['frequency_skipped'] = str(err)
        log.warning('Frequency check skipped: %s', err)

    traj_margin = None
    P_audit = P if P is not None else model.P
    if P_audit is not None:
        val = _simulate(cfg, int(cfg['verify']['validation_samples']),
                        cfg.validation_seed(), DEFAULT_CONFIG['input'],
                        cfg['x0'])
        traj_margin = dissipativity.trajectory_audit(model, P_audit, val, sr)
        notes['validation_seed'] = cfg.validation_seed()
        notes['validation_samples'] = val.n_samples

    report = dissipativity.DissipativityReport(
        lmi_eigmax=lmi_eigmax, certificate=P, frequency_margin=freq_margin,
        frequency_bound=freq_bound, trajectory_margin=traj_margin,
        notes=notes)
    formats.write_report(out, report)
    return report


def _unique_names(paths: Sequence[Path]) -> List[str]:
    names: List[str] = []
    for p in paths:
        name, k = p.stem, 2
        while name in names:
            name, k = f'{p.stem}_{k}', k + 1
        names.append(name)
    return names


def cmd_compare(cfg: RunConfig, model_paths: Sequence[Path],
                out: Path) -> Dict[str, float]:
    """Roll every model and the true system forward under the test input.

    Writes the per-step comparison CSV and ``<out stem>.rms.json``; returns
    the RMS output error per model.
    """
    if not model_paths:
        raise ConfigError('`compare` needs at least one model.')
    models = [formats.read_model(p, check_certificate=False)
              for p in model_paths]
    dims = {(m.n_inputs, m.n_outputs, m.dictionary.state_dim)
            for m in models}
    if len(dims) != 1:
        raise ValueError(f'Models disagree on (inputs, outputs, states): '
                         f'{sorted(dims)}.')
    spec = cfg['compare']
    x0 = cfg['x0'] if spec['x0'] is None else spec['x0']
    truth = _simulate(cfg, int(spec['n_samples']), int(cfg['seed']),
                      spec['input'], x0)
    t = np.arange(truth.n_samples) * truth.dt
    preds: Dict[str, np.ndarray] = {}
    rms: Dict[str, float] = {}
    for name, model in zip(_unique_names(model_paths), models):
        psi0 = lifting.lift(model.dictionary, truth.states[0])
        _, y = edmd.predict(model, psi0, truth.inputs)
        preds[name] = y
        rms[name] = float(np.sqrt(np.mean((y - truth.outputs)**2)))
    formats.write_comparison(out, t, truth.outputs, preds)
    with open(_sibling(out, '.rms.json'), 'w') as fh:
        json.dump({'rms_output_error': rms}, fh, indent=2, sort_keys=True)
        fh.write('\n')
    return rms


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON config file.')
    common.add_argument('--seed', type=int, help='Input seed.')
    common.add_argument('--out', required=True, help='Output path.')
    common.add_argument('-v', '--verbose', action='store_true')

    parser = argparse.ArgumentParser(
        prog='diskoop',
        description='Dissipativity-constrained Koopman model learning.')
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('simulate', parents=[common],
                   help='Generate a training trajectory CSV.')
    fit = sub.add_parser('fit', parents=[common], help='Fit a model.')
    fit.add_argument('trajectory')
    fit.add_argument('--mode', choices=MODES, default='constrained')
    fit.add_argument('--max-iters', type=int, dest='max_iters')
    verify = sub.add_parser('verify', parents=[common],
                            help='Check dissipativity of a model.')
    verify.add_argument('model')
    verify.add_argument('--omega-points', type=int, dest='omega_points')
    compare = sub.add_parser('compare', parents=[common],
                             help='Compare models against the true system.')
    compare.add_argument('models', nargs='+')
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    override: Dict[str, Any] = {}
    if args.config:
        with open(args.config) as fh:
            override = json.load(fh)
    cfg = RunConfig(override)
    if args.seed is not None:
        cfg.data['seed'] = args.seed
    if getattr(args, 'max_iters', None) is not None:
        cfg.data['algorithm']['max_iterations'] = args.max_iters
    if getattr(args, 'omega_points', None) is not None:
        cfg.data['verify']['omega_points'] = args.omega_points
    return RunConfig(cfg.data)


def _is_infeasible(err: BaseException) -> bool:
    while err is not None:
        if isinstance(err, (conic.InfeasibleError,
                            dissipativity.UnusableSupplyRateError)):
            return True
        err = err.__cause__
    return False


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else
                        logging.WARNING, format='%(levelname)s: %(message)s')
    out = Path(args.out)
    try:
        cfg = _config_from_args(args)
        if args.command == 'simulate':
            cmd_simulate(cfg, out)
        elif args.command == 'fit':
            cmd_fit(cfg, Path(args.trajectory), args.mode, out)
        elif args.command == 'verify':
            report = cmd_verify(cfg, Path(args.model), out)
            if not report.notes.get('certified'):
                print(f'error: {report.notes.get("certify_error")}',
                      file=sys.stderr)
                return (EXIT_ERROR
                        if report.notes.get('certify_solver_failure') else
                        EXIT_INFEASIBLE)
        elif args.command == 'compare':
            for name, value in cmd_compare(cfg, [Path(p) for p in args.models],
                                           out).items():
                print(f'{name}: rms output error {value:.6g}')
    except Exception as err:  # noqa: BLE001 - mapped to exit codes
        print(f'error: {err}', file=sys.stderr)
        if _is_infeasible(err):
            return EXIT_INFEASIBLE
        if isinstance(err, edmd.RankDeficiencyError):
            print('hint: use more samples or fewer / better-spread centers.',
                  file=sys.stderr)
        log.debug('Traceback', exc_info=True)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
