"""File formats: trajectory CSV, model and report JSON, plot-data CSVs.

Floats are written with ``repr`` so every value round-trips exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .dissipativity import DissipativityReport, SupplyRate, lemma_lmi_lhs
from .dynsim import TrajectoryDataset
from .edmd import KoopmanModel
from .lifting import LiftingDictionary
from .sequential import IterationRecord

PathLike = Union[str, Path]

MODEL_SCHEMA = 'diskoop.model'
MODEL_VERSION = 1
REPORT_SCHEMA = 'diskoop.report'
REPORT_VERSION = 1


class SchemaError(ValueError):
    """Raised when a file does not match its documented schema."""


def _write_json(path: PathLike, data: Dict[str, Any]) -> None:
    with open(path, 'w') as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write('\n')


def _read_json(path: PathLike) -> Dict[str, Any]:
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


def _num(v: Any) -> str:
    return repr(float(v))


def sidecar_path(path: PathLike) -> Path:
    """Metadata file stored next to a trajectory CSV."""
    path = Path(path)
    return path.with_name(path.name + '.meta.json')


def trajectory_header(n: int, m: int, l: int) -> List[str]:
    return (['k', 't'] + [f'x_{i + 1}' for i in range(n)] +
            [f'u_{i + 1}' for i in range(m)] +
            [f'y_{i + 1}' for i in range(l)])


def write_trajectory(path: PathLike, ds: TrajectoryDataset,
                     metadata: bool = True) -> None:
    """Write one row per sample; the last row holds the terminal state only.

    The metadata dictionary goes to a JSON sidecar (see :func:`sidecar_path`).
    """
    M = ds.n_samples
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(trajectory_header(ds.n_states, ds.n_inputs, ds.n_outputs))
        for k in range(M + 1):
            row = [k, _num(k * ds.dt)] + [_num(v) for v in ds.states[k]]
            if k < M:
                row += [_num(v) for v in ds.inputs[k]]
                row += [_num(v) for v in ds.outputs[k]]
            else:
                row += [''] * (ds.n_inputs + ds.n_outputs)
            w.writerow(row)
    if metadata:
        _write_json(sidecar_path(path), {'dt': ds.dt, **ds.metadata})


def read_trajectory(path: PathLike) -> TrajectoryDataset:
    """Inverse of :func:`write_trajectory`; the sidecar is optional."""
    with open(path, newline='') as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f'{path}: empty trajectory file.')
    header = rows[0]
    n = sum(h.startswith('x_') for h in header)
    m = sum(h.startswith('u_') for h in header)
    l = sum(h.startswith('y_') for h in header)
    if header != trajectory_header(n, m, l):
        raise SchemaError(f'{path}: unexpected header {header}.')
    body = rows[1:]
    if len(body) < 2:
        raise SchemaError(f'{path}: need at least two samples.')
    t = np.array([float(r[1]) for r in body])
    states = np.array([[float(v) for v in r[2:2 + n]] for r in body])
    inputs = np.array([[float(v) for v in r[2 + n:2 + n + m]]
                       for r in body[:-1]])
    outputs = np.array([[float(v) for v in r[2 + n + m:]]
                        for r in body[:-1]])
    if any(v != '' for v in body[-1][2 + n:]):
        raise SchemaError(f'{path}: terminal row must leave u and y empty.')
    meta: Dict[str, Any] = {}
    side = sidecar_path(path)
    if side.exists():
        meta = _read_json(side)
    dt = float(meta.pop('dt', t[1] - t[0]))
    return TrajectoryDataset(dt=dt, states=states, inputs=inputs.reshape(
        -1, m), outputs=outputs.reshape(-1, l), metadata=meta)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


def model_to_dict(model: KoopmanModel,
                  supply_rate: Optional[SupplyRate] = None,
                  **extra: Any) -> Dict[str, Any]:
    data = {
        'schema': MODEL_SCHEMA,
        'version': MODEL_VERSION,
        'A': model.A.tolist(),
        'B': model.B.tolist(),
        'C': model.C.tolist(),
        'P': None if model.P is None else model.P.tolist(),
        'dictionary': model.dictionary.to_dict(),
        'supply_rate': None if supply_rate is None else supply_rate.to_dict(),
    }
    data.update(extra)
    return data


def _check_schema(data: Dict[str, Any], schema: str, version: int,
                  what: str) -> None:
    if data.get('schema') != schema:
        raise SchemaError(f'{what}: expected schema `{schema}`, got '
                          f'`{data.get("schema")}`.')
    if data.get('version') != version:
        raise SchemaError(f'{what}: unsupported version '
                          f'{data.get("version")!r} (expected {version}).')


def model_from_dict(data: Dict[str, Any], check_certificate: bool = True,
                    what: str = 'model') -> KoopmanModel:
    """Rebuild a model; a stored certificate is re-checked against the
    stored supply rate unless ``check_certificate`` is false."""
    _check_schema(data, MODEL_SCHEMA, MODEL_VERSION, what)
    P = data.get('P')
    model = KoopmanModel(
        A=np.array(data['A'], dtype=float),
        B=np.array(data['B'], dtype=float),
        C=np.array(data['C'], dtype=float),
        dictionary=LiftingDictionary.from_dict(data['dictionary']),
        P=None if P is None else np.array(P, dtype=float),
    )
    sr = data.get('supply_rate')
    if check_certificate and model.P is not None and sr is not None:
        lhs = lemma_lmi_lhs(model.P, model.A, model.B, model.C,
                            SupplyRate.from_dict(sr))
        eigmax = float(np.linalg.eigvalsh(lhs).max())
        if not eigmax < 0:
            raise SchemaError(f'{what}: stored certificate fails the '
                              f'dissipation LMI (eigmax {eigmax:.3e}).')
    return model


def write_model(path: PathLike, model: KoopmanModel,
                supply_rate: Optional[SupplyRate] = None,
                **extra: Any) -> None:
    _write_json(path, model_to_dict(model, supply_rate, **extra))


def read_model_file(path: PathLike) -> Dict[str, Any]:
    """Raw model JSON, schema-checked."""
    data = _read_json(path)
    _check_schema(data, MODEL_SCHEMA, MODEL_VERSION, str(path))
    return data


def read_model(path: PathLike, check_certificate: bool = True) -> KoopmanModel:
    return model_from_dict(_read_json(path), check_certificate, str(path))


# ---------------------------------------------------------------------------
# Reports and plot data
# ---------------------------------------------------------------------------


def report_to_dict(report: DissipativityReport) -> Dict[str, Any]:
    return {'schema': REPORT_SCHEMA, 'version': REPORT_VERSION,
            **report.to_dict()}


def report_from_dict(data: Dict[str, Any]) -> DissipativityReport:
    _check_schema(data, REPORT_SCHEMA, REPORT_VERSION, 'report')
    return DissipativityReport.from_dict(data)


def write_report(path: PathLike, report: DissipativityReport) -> None:
    _write_json(path, report_to_dict(report))


def read_report(path: PathLike) -> DissipativityReport:
    return report_from_dict(_read_json(path))


def _write_rows(path: PathLike, header: Sequence[str],
                rows: Iterable[Sequence[Any]]) -> None:
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating))
                        else v for v in row])


def write_nyquist(path: PathLike, omegas: np.ndarray, G: np.ndarray) -> None:
    """``omega, re_G, im_G`` for a SISO frequency response."""
    G = np.asarray(G).reshape(len(omegas))
    _write_rows(path, ['omega', 're_G', 'im_G'],
                zip(map(float, omegas), map(float, G.real),
                    map(float, G.imag)))


def write_iteration_log(path: PathLike,
                        records: Sequence[IterationRecord]) -> None:
    _write_rows(path, [
        'iteration', 'j1', 'lmi_margin', 'eigmin_P', 'eigmin_HplusHT',
        'solver_status'
    ], ((r.iteration, float(r.j1), float(r.lmi_margin), float(r.eigmin_P),
         float(r.eigmin_HplusHT), r.solver_status) for r in records))


def read_iteration_log(path: PathLike) -> List[IterationRecord]:
    with open(path, newline='') as fh:
        return [
            IterationRecord(iteration=int(r['iteration']), j1=float(r['j1']),
                            lmi_margin=float(r['lmi_margin']),
                            eigmin_P=float(r['eigmin_P']),
                            eigmin_HplusHT=float(r['eigmin_HplusHT']),
                            solver_status=r['solver_status'])
            for r in csv.DictReader(fh)
        ]


def write_comparison(path: PathLike, t: np.ndarray, truth: np.ndarray,
                     predictions: Dict[str, np.ndarray]) -> None:
    """Per-step true vs. predicted outputs.

    Columns are ``k, t, y_true_i...`` followed by ``<name>_y_i...`` for each
    model in insertion order.
    """
    truth = np.atleast_2d(np.asarray(truth, dtype=float).T).T
    l = truth.shape[1]
    header = ['k', 't'] + [f'y_true_{i + 1}' for i in range(l)]
    blocks = [truth]
    for name, pred in predictions.items():
        header += [f'{name}_y_{i + 1}' for i in range(l)]
        blocks.append(np.asarray(pred, dtype=float).reshape(len(t), l))
    data = np.hstack(blocks)
    _write_rows(path, header, ([k, float(t[k])] + [float(v) for v in data[k]]
                               for k in range(len(t))))
