"""CSV and JSON writers.  CSV bodies are deterministic; run metadata lives in JSON only."""
from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .pde import fmt


def cell(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([cell(v) for v in r])
    return path


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def metadata(scenario, command: str) -> dict:
    from . import __version__

    return {
        "command": command,
        "scenario": scenario.name,
        "origin": scenario.origin,
        "scenario_sha256": scenario.digest,
        "seed": scenario.seed,
        "grid": scenario.grid.to_dict(),
        "version": __version__,
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def write_json(path: Path, payload: dict, meta: dict | None = None) -> Path:
    body = dict(payload)
    if meta is not None:
        body = {"meta": meta, **body}
    path.write_text(json.dumps(_jsonable(body), indent=2, sort_keys=False) + "\n")
    return path
