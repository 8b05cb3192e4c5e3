"""Event-log files and run manifests.

An event log is CSV. Line 1 is a comment, ``# qlink-event-log <json>``,
holding the config hash, run header and summary. Line 2 is the column
header, exactly ``EventLog.COLUMNS``. Floats are written with ``repr`` so
outputs are byte-stable. The manifest is a JSON sidecar named
``<log>.manifest.json``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError
from .simengine import ATOM_OUTCOMES, BASIS_CODES, ORIGINS, OUTCOMES, EventLog

MAGIC = "# qlink-event-log "


def _fmt(x: float) -> str:
    return repr(float(x))


def format_log(log: EventLog, config_sha256: str) -> str:
    meta = {"config_sha256": config_sha256, "header": log.header, "summary": log.summary}
    buf = io.StringIO()
    buf.write(MAGIC + json.dumps(meta, sort_keys=True) + "\n")
    buf.write(",".join(EventLog.COLUMNS) + "\n")
    basis = [b.value for b in BASIS_CODES]
    for i in range(len(log)):
        buf.write(",".join((
            str(int(log.attempt_index[i])),
            _fmt(log.sim_time[i]),
            str(int(log.detector[i])),
            basis[log.photon_basis[i]],
            OUTCOMES[log.photon_outcome[i]],
            _fmt(log.atom_alpha[i]),
            ATOM_OUTCOMES[log.atom_outcome[i]],
            ORIGINS[log.origin[i]],
            _fmt(log.readout_delay[i]),
        )) + "\n")
    return buf.getvalue()


def write_log(path: str | Path, log: EventLog, config_sha256: str) -> None:
    try:
        Path(path).write_text(format_log(log, config_sha256))
    except OSError as exc:
        raise DataError(f"{path}: cannot write ({exc.strerror})") from None


def read_log(path: str | Path) -> tuple[EventLog, dict]:
    """Parse a log file; returns the log and its metadata line."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise DataError(f"{p}: cannot read ({exc.strerror})") from None
    lines = text.splitlines()
    if not lines or not lines[0].startswith(MAGIC):
        raise DataError(f"{p}: not an event log (missing metadata line)")
    try:
        meta = json.loads(lines[0][len(MAGIC):])
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: corrupt metadata line ({exc.msg})") from None
    if len(lines) < 2 or lines[1].split(",") != list(EventLog.COLUMNS):
        raise DataError(f"{p}: column header must be {','.join(EventLog.COLUMNS)}")
    basis_idx = {b.value: i for i, b in enumerate(BASIS_CODES)}
    n = len(lines) - 2
    cols = {
        "attempt_index": np.empty(n, dtype=np.int64),
        "sim_time": np.empty(n),
        "detector": np.empty(n, dtype=np.int8),
        "photon_basis": np.empty(n, dtype=np.int8),
        "photon_outcome": np.empty(n, dtype=np.int8),
        "atom_alpha": np.empty(n),
        "atom_outcome": np.empty(n, dtype=np.int8),
        "origin": np.empty(n, dtype=np.int8),
        "readout_delay": np.empty(n),
    }
    for i, row in enumerate(csv.reader(lines[2:])):
        try:
            if len(row) != len(EventLog.COLUMNS):
                raise ValueError(f"expected {len(EventLog.COLUMNS)} fields, got {len(row)}")
            a, t, det, b, o, al, at, org, rd = row
            cols["attempt_index"][i] = int(a)
            cols["sim_time"][i] = float(t)
            d = int(det)
            if d not in (1, 2):
                raise ValueError(f"detector {d}")
            cols["detector"][i] = d
            cols["photon_basis"][i] = basis_idx[b]
            cols["photon_outcome"][i] = OUTCOMES.index(o)
            cols["atom_alpha"][i] = float(al)
            cols["atom_outcome"][i] = ATOM_OUTCOMES.index(at)
            cols["origin"][i] = ORIGINS.index(org)
            cols["readout_delay"][i] = float(rd)
            if not (math.isfinite(cols["sim_time"][i]) and math.isfinite(cols["atom_alpha"][i])):
                raise ValueError("non-finite value")
        except (ValueError, KeyError) as exc:
            raise DataError(f"{p}: bad record {i} (line {i + 3}): {exc}") from None
    expected = meta.get("summary", {}).get("events")
    if expected is not None and expected != n:
        raise DataError(f"{p}: truncated log, record {n} missing ({n} of {expected} records present)")
    log = EventLog(**cols, header=meta.get("header", {}), summary=meta.get("summary", {}))
    return log, meta


def manifest_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".manifest.json")


def write_manifest(path: str | Path, config_sha256: str, seed: int | None, outputs: list[str],
                   started: float, extra: dict | None = None) -> Path:
    finished = time.time()
    data = {
        "config_sha256": config_sha256,
        "seed": seed,
        "code_version": __version__,
        "outputs": outputs,
        "wall_clock": {
            "started_unix": started,
            "finished_unix": finished,
            "elapsed_s": finished - started,
        },
    }
    if extra:
        data.update(extra)
    mp = manifest_path(path)
    try:
        mp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise DataError(f"{mp}: cannot write ({exc.strerror})") from None
    return mp
