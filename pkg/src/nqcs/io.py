"""Deterministic CSV/JSON writers and the run-directory manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os

import numpy as np


def fmt(v):
    """Floats with 17 significant digits; everything else via str."""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def _plain(o):
    if isinstance(o, dict):
        return {str(k): _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, np.ndarray):
        return _plain(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        # JSON has no inf/nan; keep them readable instead of emitting invalid tokens
        return f if math.isfinite(f) else repr(f)
    if hasattr(o, "to_dict"):
        return _plain(o.to_dict())
    return o


def to_json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    with open(path, "w", newline="") as fh:
        fh.write(to_json(obj))
    return path


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir, files, extra=None):
    """manifest.json listing every output (relative name, bytes, sha256)."""
    entries = []
    for f in sorted(set(files)):
        entries.append({"file": os.path.relpath(f, outdir), "bytes": os.path.getsize(f),
                        "sha256": sha256_file(f)})
    body = {"files": entries}
    if extra:
        body.update(extra)
    return write_json(os.path.join(outdir, "manifest.json"), body)
