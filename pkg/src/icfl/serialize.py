"""On-disk formats: ensemble snapshots, report JSON, log CSV, flat configs.

Ensemble snapshots are a versioned text table: one header line carrying
(k, d, N), then N rows of `weight a... w...` at full float precision.
Every emitted CSV starts with a provenance comment line followed by the
column header row.
"""

from __future__ import annotations

import json
import os
from typing import Iterable

import numpy as np

from . import __version__
from .ensembles import Ensemble
from .dynamics import TrainLog

ENSEMBLE_FORMAT = "icfl-ensemble v1"


def save_ensemble(path: str, mu: Ensemble) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {ENSEMBLE_FORMAT} k={mu.k} d={mu.d} n={mu.n}\n")
        for j in range(mu.n):
            row = np.concatenate([[mu.weights[j]], mu.a[j], mu.w[j]])
            fh.write(" ".join(format(v, ".17g") for v in row) + "\n")


def load_ensemble(path: str) -> Ensemble:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith(f"# {ENSEMBLE_FORMAT}"):
            raise ValueError(f"{path}: unrecognized ensemble format header {header!r}")
        fields = dict(tok.split("=") for tok in header.split()[3:])
        k, d, n = int(fields["k"]), int(fields["d"]), int(fields["n"])
        data = np.loadtxt(fh, ndmin=2)
    if data.shape != (n, 1 + k + d):
        raise ValueError(f"{path}: expected {n} rows of {1 + k + d} values, "
                         f"got {data.shape}")
    return Ensemble(data[:, 1:1 + k], data[:, 1 + k:], data[:, 0])


# ---------------------------------------------------------------------------
# JSON reports
# ---------------------------------------------------------------------------

def write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

def provenance_line(scenario_hash: str, seed: int) -> str:
    return f"# provenance: scenario={scenario_hash} seed={seed} version={__version__}"


def write_csv(path: str, header: Iterable[str], rows: Iterable[Iterable],
              scenario_hash: str, seed: int) -> None:
    with open(path, "w") as fh:
        fh.write(provenance_line(scenario_hash, seed) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def trainlog_csv(path: str, log: TrainLog, scenario_hash: str, seed: int) -> None:
    write_csv(path, ["step", "loss", "m_a", "sigma_min", "sigma_max", "event"],
              ((r.step, r.loss, r.m_a, r.sigma_min, r.sigma_max, r.event)
               for r in log.records),
              scenario_hash, seed)


# ---------------------------------------------------------------------------
# flat key = value config files
# ---------------------------------------------------------------------------

def parse_config(path: str) -> dict:
    """Read a flat `key = value` file; '#' starts a comment."""
    out: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
