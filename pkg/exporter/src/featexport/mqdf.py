"""Writer for the MQDF binary feature container consumed by the bayesqda
CLI (little-endian): magic "MQDF", version byte 1, d (u32), class count
(u32), n (u64), n*d float32 features row-major, n uint32 labels."""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MQDF"
VERSION = 1
_HEADER = struct.Struct("<4sBIIQ")


def write_mqdf(path, features: np.ndarray, labels: np.ndarray, class_count: int) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    labels = np.ascontiguousarray(labels, dtype="<u4")
    n, d = features.shape
    if labels.shape != (n,):
        raise ValueError(f"{n} feature rows but {labels.shape[0]} labels")
    if labels.size and int(labels.max()) >= class_count:
        raise ValueError(f"label {int(labels.max())} >= class count {class_count}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, d, class_count, n))
        fh.write(features.tobytes())
        fh.write(labels.tobytes())
