"""On-disk artifacts: CSV matrices, JSON manifests, hashes and the directory lock."""

import hashlib
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mgan.errors import ConfigurationError
from mgan.settings import current_time

logger = logging.getLogger(__name__)

CSV_FORMAT = '%.17g'
LOCK_NAME = '.lock'
MANIFEST_NAME = 'manifest.json'


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n')
    return path


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f'{path} is not valid JSON: {exc}') from exc


def write_manifest(directory, stage: str, payload: dict) -> Path:
    """Write ``manifest.json`` recording enough to re-run ``stage``."""
    record = {'stage': stage, 'created_at': current_time().isoformat(), **payload}
    return write_json(Path(directory) / MANIFEST_NAME, record)


def file_sha256(*paths) -> str:
    digest = hashlib.sha256()
    for path in paths:
        digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def write_matrix_csv(path, matrix: np.ndarray, columns: list[str], comments: list[str] | None = None) -> Path:
    """Write a 2-D array as CSV: optional ``# ...`` lines, a header row, then rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if matrix.shape[1] != len(columns):
        raise ValueError(f'{len(columns)} column names for a matrix of width {matrix.shape[1]}')
    with path.open('w', newline='') as fh:
        for line in comments or []:
            fh.write(f'# {line}\n')
        fh.write(','.join(columns) + '\n')
        if matrix.shape[0]:
            np.savetxt(fh, matrix, fmt=CSV_FORMAT, delimiter=',')
    return path


def read_matrix_csv(path) -> tuple[list[str], np.ndarray, list[str]]:
    """Inverse of :func:`write_matrix_csv`: ``(columns, matrix, comments)``."""
    path = Path(path)
    comments: list[str] = []
    with path.open() as fh:
        line = fh.readline()
        while line.startswith('#'):
            comments.append(line[1:].strip())
            line = fh.readline()
        columns = [c.strip() for c in line.strip().split(',') if c.strip()]
        rows = np.loadtxt(fh, delimiter=',', ndmin=2)
    if rows.size == 0:
        rows = np.zeros((0, len(columns)))
    return columns, rows, comments


@dataclass
class MetricRow:
    metric: str
    value: float
    std: float
    scale: float = 1.0
    label: str = ''


def write_metric_report(path, rows: list[MetricRow]) -> Path:
    """Metric CSV; ``scale`` records the display factor, values are never pre-scaled."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='') as fh:
        fh.write('metric,label,value,std,scale\n')
        for row in rows:
            fh.write(f'{row.metric},{row.label},{row.value:.17g},{row.std:.17g},{row.scale:g}\n')
    return path


@contextmanager
def experiment_lock(directory):
    """Hold ``<directory>/.lock`` for the duration of a stage."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock_path = directory / LOCK_NAME
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigurationError(f'{directory} is locked by another run ({lock_path} exists)') from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield lock_path
    finally:
        lock_path.unlink(missing_ok=True)
