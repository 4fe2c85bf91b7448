"""CSV ingestion, key=value configs and output writers.

All CSV files are UTF-8, comma separated, with a mandatory header row.
``region_id`` is the integer region index used by the adjacency graph.
Floats are written with ``repr`` so reruns reproduce files byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .crc import CaptureTable, build_intersection_table
from .gaussian import RegionData
from .graph import AdjacencyGraph, build_grid_graph, read_edge_list
from .negbin import NbRegionData


class InputError(ValueError):
    """Malformed or inconsistent input file."""


def read_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys use underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def load_graph(spec: str) -> AdjacencyGraph:
    """``grid:RxC`` for a rook grid, otherwise an edge-list file path."""
    if spec.startswith("grid:"):
        try:
            rows, cols = (int(v) for v in spec[5:].lower().split("x"))
        except ValueError as exc:
            raise InputError(f"bad grid spec {spec!r}; expected grid:RxC") from exc
        return build_grid_graph(rows, cols)
    if not Path(spec).is_file():
        raise InputError(f"graph file not found: {spec}")
    return read_edge_list(spec)


def _read_rows(path) -> tuple[list[str], list[dict]]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InputError(f"{path}: missing header row")
        fields = [f.strip() for f in reader.fieldnames]
        rows = [{k.strip(): (v or "").strip() for k, v in r.items()} for r in reader]
    return fields, rows


def _covariate_columns(fields, path) -> list[str]:
    xs = [f for f in fields if f.startswith("x") and f[1:].isdigit()]
    xs.sort(key=lambda f: int(f[1:]))
    if not xs:
        raise InputError(f"{path}: no covariate columns x1..xp")
    if [int(f[1:]) for f in xs] != list(range(1, len(xs) + 1)):
        raise InputError(f"{path}: covariate columns must be x1..xp without gaps")
    return xs


def _region_index(value: str, n: int, path, lineno: int) -> int:
    try:
        i = int(value)
    except ValueError as exc:
        raise InputError(f"{path}:{lineno}: region_id {value!r} is not an integer") from exc
    if not 0 <= i < n:
        raise InputError(f"{path}:{lineno}: region_id {i} outside graph of {n} regions")
    return i


def _parse_regression(path, n_regions: int, with_time: bool):
    fields, rows = _read_rows(path)
    for need in ("region_id", "y"):
        if need not in fields:
            raise InputError(f"{path}: missing column {need!r}")
    xs = _covariate_columns(fields, path)
    has_time = with_time and "time" in fields
    per = [[] for _ in range(n_regions)]
    for lineno, r in enumerate(rows, 2):
        i = _region_index(r["region_id"], n_regions, path, lineno)
        try:
            vals = [float(r["y"])] + [float(r[x]) for x in xs]
            t = int(r["time"]) if has_time else None
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from exc
        per[i].append((vals, t))
    empty = [i for i, rs in enumerate(per) if not rs]
    if empty:
        raise InputError(f"{path}: no rows for regions {empty}")
    return per, xs, has_time


def read_gaussian_csv(path, n_regions: int) -> tuple[list[RegionData], list[str]]:
    """Columns ``region_id, y, x1..xp``. An intercept column of ones is prepended."""
    per, xs, _ = _parse_regression(path, n_regions, with_time=False)
    regions = []
    for rs in per:
        a = np.array([v for v, _ in rs])
        regions.append(RegionData(np.column_stack([np.ones(len(a)), a[:, 1:]]), a[:, 0]))
    return regions, ["intercept"] + xs


def read_nb_csv(path, n_regions: int) -> tuple[list[NbRegionData], list[str], list[int]]:
    """Columns ``region_id, [time,] y, x1..xp``; returns (regions, covariates, time labels)."""
    per, xs, has_time = _parse_regression(path, n_regions, with_time=True)
    tlabels = sorted({t for rs in per for _, t in rs}) if has_time else []
    tpos = {t: k for k, t in enumerate(tlabels)}
    regions = []
    for rs in per:
        a = np.array([v for v, _ in rs])
        tidx = np.array([tpos[t] for _, t in rs]) if has_time else None
        try:
            regions.append(NbRegionData(np.column_stack([np.ones(len(a)), a[:, 1:]]), a[:, 0], tidx))
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from exc
    return regions, ["intercept"] + xs, tlabels


def read_capture_csv(path, n_regions: int, K: int | None = None) -> CaptureTable:
    """Columns ``region_id, time, pattern``; every graph region gets a stratum per time."""
    fields, rows = _read_rows(path)
    for need in ("region_id", "pattern"):
        if need not in fields:
            raise InputError(f"{path}: missing column {need!r}")
    hist = []
    for lineno, r in enumerate(rows, 2):
        i = _region_index(r["region_id"], n_regions, path, lineno)
        t = r.get("time", "") or "0"
        hist.append((i, t, r["pattern"]))
    times = sorted({t for _, t, _ in hist}, key=_time_key) or ["0"]
    try:
        return build_intersection_table(hist, K=K, regions=range(n_regions), times=times)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def _time_key(t: str):
    try:
        return (0, int(t), t)
    except ValueError:
        return (1, 0, t)


def read_groups(path) -> dict[int, str]:
    """Aggregation spec: columns ``region_id, group``."""
    fields, rows = _read_rows(path)
    if "region_id" not in fields or "group" not in fields:
        raise InputError(f"{path}: need columns region_id, group")
    return {int(r["region_id"]): r["group"] for r in rows}


# writers --------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, rows: list[dict], columns: list[str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n",
                          encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating, np.bool_)):
        return o.item()
    return str(o)


def chain_dump_rows(chain, names=("beta", "gamma", "Z", "sigma2", "mu", "tau2", "rho", "alpha",
                                  "tau_alpha", "zeta_t", "omega_mean")) -> tuple[list[dict], list[str]]:
    """Long format: chain, draw, quantity, index, value (index is ``i`` or ``i:j``)."""
    rows = []
    for name in names:
        if name not in chain:
            continue
        arr = chain[name]
        for c in range(arr.shape[0]):
            for d in range(arr.shape[1]):
                v = np.asarray(arr[c, d])
                for idx in np.ndindex(v.shape):
                    rows.append({"chain": c, "draw": d, "quantity": name,
                                 "index": ":".join(map(str, idx)), "value": v[idx]})
    return rows, ["chain", "draw", "quantity", "index", "value"]
