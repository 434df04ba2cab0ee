"""Feature-file emission in the exact format the forecasting pipeline
ingests: a text variant with repr-precision floats and a length-prefixed
binary variant that round-trips 64-bit values bit-exactly."""

from __future__ import annotations

import struct
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .extract import FEATURE_DIM, FeatureRecord

TEXT_HEADER = "# kpcast-imgfeat 1"
BINARY_MAGIC = b"KPCAST-IMGF-1\n"


def _iso_hour(dt: datetime) -> str:
    dt = dt.astimezone(timezone.utc) if dt.tzinfo else dt.replace(tzinfo=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + "Z"


def emit_feature_file(
    records: list[FeatureRecord], path: str | Path, binary: bool = False
) -> None:
    """Write records sorted by hour; duplicate hours are an error. An empty
    record list still produces a valid, parseable file."""
    keys = [_iso_hour(r.hour) for r in records]
    if len(set(keys)) != len(keys):
        dupes = sorted({k for k in keys if keys.count(k) > 1})
        raise ValueError(f"duplicate hour keys: {dupes}")
    order = np.argsort(np.array(keys)) if keys else []
    dim = FEATURE_DIM
    if binary:
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(struct.pack("<IQ", dim, len(records)))
            for i in order:
                key = keys[i].encode("utf-8")
                fh.write(struct.pack("<I", len(key)))
                fh.write(key)
                fh.write(
                    np.ascontiguousarray(records[i].vector, dtype="<f8").tobytes()
                )
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{TEXT_HEADER} dim={dim}\n")
            for i in order:
                fh.write(keys[i])
                for v in records[i].vector:
                    fh.write(" " + repr(float(v)))
                fh.write("\n")
