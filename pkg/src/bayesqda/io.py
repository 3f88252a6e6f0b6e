"""File formats: the MQDF binary feature container and text checkpoints.

MQDF layout (all little-endian):

    magic   4 bytes  "MQDF"
    version u8       1
    d       u32      feature dimension
    classes u32      class count; every label < classes
    n       u64      row count
    features n*d f32 row-major
    labels   n   u32

Total length is exactly 21 + 4nd + 4n bytes; anything else is rejected.

Checkpoints are small, diff-friendly key=value text files. Floats are
written with 17 significant digits, which round-trips IEEE doubles
exactly, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .episodes import FeatureDataset
from .errors import (
    BadMagic,
    DataError,
    LabelOutOfRange,
    TruncatedFile,
    UnsupportedVersion,
)
from .niw import NiwPrior

MAGIC = b"MQDF"
VERSION = 1
_HEADER = struct.Struct("<4sBIIQ")


def write_feature_file(dataset: FeatureDataset, path, class_count: int | None = None) -> None:
    labels = dataset.labels
    if labels.size and labels.min() < 0:
        raise LabelOutOfRange("labels must be non-negative")
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 0
    if labels.size and labels.max() >= class_count:
        raise LabelOutOfRange(
            f"label {int(labels.max())} >= class count {class_count}"
        )
    n, d = dataset.features.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, d, class_count, n))
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(labels, dtype="<u4").tobytes())


def read_feature_file(path, name: str | None = None) -> FeatureDataset:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEADER.size:
        raise TruncatedFile(
            f"file is {len(buf)} bytes, header needs {_HEADER.size}"
        )
    magic, version, d, class_count, n = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported version {version}, expected {VERSION}")
    expected = _HEADER.size + 4 * n * d + 4 * n
    if len(buf) != expected:
        raise TruncatedFile(
            f"file is {len(buf)} bytes, expected {expected} "
            f"(payload mismatch at offset {min(len(buf), expected)})"
        )
    off = _HEADER.size
    features = np.frombuffer(buf, dtype="<f4", count=n * d, offset=off)
    features = features.reshape(n, d).astype(np.float64)
    labels = np.frombuffer(buf, dtype="<u4", count=n, offset=off + 4 * n * d)
    labels = labels.astype(np.int64)
    if labels.size and labels.max() >= class_count:
        raise LabelOutOfRange(
            f"label {int(labels.max())} >= class count {class_count}"
        )
    return FeatureDataset(
        features=features, labels=labels, name=name or str(path)
    )


@dataclass(frozen=True)
class PriorCheckpoint:
    prior: NiwPrior
    mode: str
    cl2n: bool = False


_F = "{:.17g}".format
CHECKPOINT_FORMAT = "bayesqda-prior-1"


def save_checkpoint(ckpt: PriorCheckpoint, path) -> None:
    p = ckpt.prior
    d = p.d
    tril = np.tril_indices(d)
    lines = [
        f"format={CHECKPOINT_FORMAT}",
        f"d={d}",
        f"mode={ckpt.mode}",
        f"cl2n={int(ckpt.cl2n)}",
        f"kappa={_F(p.kappa)}",
        f"nu={_F(p.nu)}",
        "m=" + " ".join(_F(v) for v in p.m),
        "L=" + " ".join(_F(v) for v in p.chol_s[tril]),
    ]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> PriorCheckpoint:
    fields = {}
    try:
        with open(path, "r", encoding="ascii") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise DataError(f"{path}:{lineno}: expected key=value")
                key, value = line.split("=", 1)
                if key in fields:
                    raise DataError(f"{path}:{lineno}: duplicate key {key!r}")
                fields[key] = value
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not a text checkpoint: {exc}") from exc
    required = {"format", "d", "mode", "cl2n", "kappa", "nu", "m", "L"}
    missing = required - fields.keys()
    if missing:
        raise DataError(f"{path}: missing checkpoint keys {sorted(missing)}")
    unknown = fields.keys() - required
    if unknown:
        raise DataError(f"{path}: unknown checkpoint keys {sorted(unknown)}")
    if fields["format"] != CHECKPOINT_FORMAT:
        raise UnsupportedVersion(
            f"{path}: unknown checkpoint format {fields['format']!r}"
        )
    try:
        d = int(fields["d"])
        kappa = float(fields["kappa"])
        nu = float(fields["nu"])
        m = np.array([float(v) for v in fields["m"].split()], dtype=np.float64)
        packed = np.array([float(v) for v in fields["L"].split()], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: malformed numeric field: {exc}") from exc
    if m.shape != (d,):
        raise DataError(f"{path}: m has {m.size} entries, expected {d}")
    tril = np.tril_indices(d)
    if packed.size != len(tril[0]):
        raise DataError(
            f"{path}: L has {packed.size} entries, expected {len(tril[0])}"
        )
    chol = np.zeros((d, d))
    chol[tril] = packed
    try:
        prior = NiwPrior(m=m, kappa=kappa, chol_s=chol, nu=nu)
    except ValueError as exc:
        raise DataError(f"{path}: invalid prior parameters: {exc}") from exc
    return PriorCheckpoint(prior=prior, mode=fields["mode"], cl2n=bool(int(fields["cl2n"])))
