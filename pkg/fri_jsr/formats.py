# fri_jsr/formats.py
"""
On-disk artifacts:

  FRIDS1   binary dataset (header, pulse spectrum, amplitudes; measurements
           are recomputed on load, never stored). Split sets whose example
           indices are not 0..Q-1 carry a trailing block of Q uint64 indices
           so their noise draws survive a save/load.
  PAT1     sampling pattern with its selection cost trajectory (JSON)
  LISTA1   learned LISTA parameters (JSON, W/V as row-major [re, im] pairs)
  KERNEL1  SoS kernel description (YAML)
  metrics  CSV rows method,K,snr_db,nmse_db,hit_rate,wall_seconds,seed
  summary  CSV rows method,K,snr_db,seeds and mean/std of nmse_db and hit_rate
"""
import csv
import json
import math
import os
import struct
from typing import Iterable, List, Optional, Sequence

import numpy as np
import yaml

from .core_model import Dataset, GridConfig, PulseSpectrum, SamplingPattern, SparsityModel
from .errors import FormatError
from .sparse_recovery import ListaParams

DATASET_MAGIC = b"FRIDS1"
_HEADER = struct.Struct("<6sIIIdQ")

PATTERN_SCHEMA = "PAT1"
PARAMS_SCHEMA = "LISTA1"
KERNEL_SCHEMA = "KERNEL1"

METRICS_HEADER = ["method", "K", "snr_db", "nmse_db", "hit_rate", "wall_seconds", "seed"]
SUMMARY_HEADER = ["method", "K", "snr_db", "seeds", "nmse_db_mean", "nmse_db_std", "hit_rate_mean", "hit_rate_std"]


def write_json(path: str, obj: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def read_json(path: str, schema: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read {path}: {e}") from e
    if not isinstance(obj, dict) or obj.get("schema") != schema:
        raise FormatError(f"{path} is not a {schema} file")
    return obj


def encode_float(value: float):
    """JSON-safe float: non-finite values become the strings inf / -inf / nan."""
    value = float(value)
    return value if math.isfinite(value) else repr(value)


# ---------------------------------------------------------------------------
# FRIDS1
# ---------------------------------------------------------------------------

def save_dataset(dataset: Dataset, path: str) -> None:
    grid = dataset.grid
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    pulse = np.empty((grid.N, 2), dtype="<f8")
    pulse[:, 0] = dataset.pulse.samples.real
    pulse[:, 1] = dataset.pulse.samples.imag
    with open(path, "wb") as f:
        f.write(_HEADER.pack(DATASET_MAGIC, grid.N, grid.L, dataset.Q, grid.t_max, int(dataset.seed)))
        f.write(pulse.tobytes())
        f.write(np.ascontiguousarray(dataset.amplitudes, dtype="<f8").tobytes())
        if not np.array_equal(dataset.index, np.arange(dataset.Q)):
            f.write(np.ascontiguousarray(dataset.index, dtype="<u8").tobytes())


def load_dataset(path: str, snr_db=None, sparsity: Optional[SparsityModel] = None) -> Dataset:
    """Read a FRIDS1 file. The noise level is not part of the file; pass it here."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, N, L, Q, t_max, seed = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 16 * N + 8 * Q * N
    if len(raw) not in (expected, expected + 8 * Q):
        raise FormatError(f"{path}: expected {expected} bytes for N={N}, Q={Q}, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f8", count=2 * N + Q * N, offset=_HEADER.size)
    pulse = body[:2 * N].reshape(N, 2)
    amplitudes = body[2 * N:].reshape(Q, N).astype(np.float64)
    index = None
    if len(raw) > expected:
        index = np.frombuffer(raw, dtype="<u8", count=Q, offset=expected).astype(np.int64)
    grid = GridConfig(N, L, t_max)
    return Dataset(grid, PulseSpectrum(pulse[:, 0] + 1j * pulse[:, 1]), amplitudes, int(seed),
                   snr_db, sparsity or SparsityModel.uniform(), index)


# ---------------------------------------------------------------------------
# PAT1
# ---------------------------------------------------------------------------

def pattern_record(pattern: SamplingPattern, method: str, costs: Sequence[float] = ()) -> dict:
    return {
        "schema": PATTERN_SCHEMA,
        "N": pattern.N,
        "K": pattern.count,
        "indices": list(pattern.indices),
        "method": method,
        "costs": [encode_float(c) for c in costs],
    }


def save_pattern(path: str, pattern: SamplingPattern, method: str, costs: Sequence[float] = ()) -> None:
    write_json(path, pattern_record(pattern, method, costs))


def load_pattern(path: str):
    """Returns (pattern, method, costs)."""
    obj = read_json(path, PATTERN_SCHEMA)
    try:
        pattern = SamplingPattern.from_indices(int(obj["N"]), obj["indices"])
        costs = [float(c) for c in obj.get("costs", [])]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed pattern record: {e}") from e
    if pattern.count != int(obj.get("K", pattern.count)):
        raise FormatError(f"{path}: K={obj['K']} disagrees with {pattern.count} listed indices")
    return pattern, obj.get("method", ""), costs


# ---------------------------------------------------------------------------
# LISTA1
# ---------------------------------------------------------------------------

def _pairs(a: np.ndarray) -> list:
    return np.stack([a.real, a.imag], axis=-1).tolist()


def params_record(params: ListaParams) -> dict:
    return {
        "schema": PARAMS_SCHEMA,
        "P": params.P,
        "N": params.N,
        "lam": params.lam.tolist(),
        "W": _pairs(params.W),
        "V": _pairs(params.V),
    }


def params_from_record(obj: dict) -> ListaParams:
    try:
        P, N = int(obj["P"]), int(obj["N"])
        W = np.asarray(obj["W"], dtype=np.float64)
        V = np.asarray(obj["V"], dtype=np.float64)
        if W.shape != (P, N, N, 2) or V.shape != (P, N, N, 2):
            raise ValueError(f"W {W.shape} / V {V.shape} do not match P={P}, N={N}")
        return ListaParams(np.asarray(obj["lam"], dtype=np.float64),
                           W[..., 0] + 1j * W[..., 1], V[..., 0] + 1j * V[..., 1])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed LISTA parameters: {e}") from e


def save_params(path: str, params: ListaParams) -> None:
    write_json(path, params_record(params))


def load_params(path: str) -> ListaParams:
    return params_from_record(read_json(path, PARAMS_SCHEMA))


# ---------------------------------------------------------------------------
# KERNEL1
# ---------------------------------------------------------------------------

def save_kernel(path: str, description: dict) -> None:
    if description.get("schema") != KERNEL_SCHEMA:
        raise FormatError("kernel description lacks the KERNEL1 schema tag")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(description, f, sort_keys=False)


def load_kernel(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        obj = yaml.safe_load(f)
    if not isinstance(obj, dict) or obj.get("schema") != KERNEL_SCHEMA:
        raise FormatError(f"{path} is not a {KERNEL_SCHEMA} file")
    return obj


# ---------------------------------------------------------------------------
# metrics CSV
# ---------------------------------------------------------------------------

def _write_rows(path: str, header: List[str], rows: Iterable) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow(row.as_csv_row())


def _read_rows(path: str, header: List[str]) -> List[dict]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != header:
            raise FormatError(f"{path}: unexpected header {reader.fieldnames}, expected {header}")
        return list(reader)


def write_metrics(path: str, rows: Iterable) -> None:
    """Rows are objects exposing as_csv_row(); an empty iterable gives a header-only file."""
    _write_rows(path, METRICS_HEADER, rows)


def read_metrics(path: str) -> List[dict]:
    return _read_rows(path, METRICS_HEADER)


def write_summary(path: str, rows: Iterable) -> None:
    """Seed-averaged rows, one per (method, K, snr_db)."""
    _write_rows(path, SUMMARY_HEADER, rows)


def read_summary(path: str) -> List[dict]:
    return _read_rows(path, SUMMARY_HEADER)
