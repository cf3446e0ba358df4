"""File formats: IDX datasets, the HOPE model container, feature matrices
and line-delimited training reports.

Model container layout (all integers little-endian)::

    b"HOPE" | u32 version | u32 section count
    section*: 4-byte tag | u32 name length | name (utf-8) | u64 payload length | payload
    u32 CRC32 of every preceding byte

Tag ``META`` carries a JSON document (object kind, hyperparameters, producing
config); tag ``ARRY`` carries one named array encoded as
``u8 dtype-string length | dtype string | u32 ndim | u64 shape[ndim] | raw bytes``.
"""

import gzip
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ChecksumError,
    FormatError,
    InvalidArgumentError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .features import FeatureExtractor
from .gmm import DiagonalGmm
from .model import HopeModel
from .movmf import MovMf
from .nn import DenseLayer, HopeLayer, Network
from .trainer import TrainReport

__all__ = [
    "IdxDataset",
    "ModelFile",
    "MODEL_MAGIC",
    "MODEL_VERSION",
    "FEATURE_MAGIC",
    "read_idx",
    "write_idx",
    "load_idx",
    "save_model",
    "load_model",
    "load_model_file",
    "write_features",
    "read_features",
    "write_report",
    "read_report",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
MODEL_MAGIC = b"HOPE"
MODEL_VERSION = 1
FEATURE_MAGIC = b"HOPF"

_IDX_TYPES = {
    0x08: np.dtype("u1"),
    0x09: np.dtype("i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v: k for k, v in _IDX_TYPES.items()}


def _read_bytes(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _parse_idx(data, path):
    if len(data) < 4:
        raise TruncatedFileError(f"{path}: {len(data)} bytes is too short for an IDX header")
    magic = struct.unpack(">I", data[:4])[0]
    if data[0] != 0 or data[1] != 0 or data[2] not in _IDX_TYPES:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}")
    dtype = _IDX_TYPES[data[2]]
    ndim = data[3]
    header = 4 + 4 * ndim
    if len(data) < header:
        raise TruncatedFileError(f"{path}: header needs {header} bytes, file has {len(data)}")
    shape = struct.unpack(f">{ndim}I", data[4:header])
    expected = header + int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(data) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, found {len(data)}")
    if len(data) > expected:
        raise FormatError(f"{path}: {len(data) - expected} trailing bytes after IDX payload")
    arr = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)), offset=header)
    return magic, arr.reshape(shape).astype(dtype.newbyteorder("="))


def read_idx(path):
    """Any IDX array; gzip-compressed files are detected by their header."""
    return _parse_idx(_read_bytes(path), path)[1]


def write_idx(path, array):
    array = np.asarray(array)
    key = array.dtype.newbyteorder(">") if array.dtype.itemsize > 1 else array.dtype
    if key not in _IDX_CODES:
        raise InvalidArgumentError(f"dtype {array.dtype} has no IDX type code")
    header = bytes([0, 0, _IDX_CODES[key], array.ndim])
    header += struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header + array.astype(key).tobytes())


@dataclass
class IdxDataset:
    images: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def load_idx(images_path, labels_path):
    """Images (N x H x W uint8) and labels (N uint8) with magic checks."""
    magic, images = _parse_idx(_read_bytes(images_path), images_path)
    if magic != IMAGE_MAGIC:
        raise FormatError(
            f"{images_path}: expected image magic 0x{IMAGE_MAGIC:08x}, found 0x{magic:08x}"
        )
    magic, labels = _parse_idx(_read_bytes(labels_path), labels_path)
    if magic != LABEL_MAGIC:
        raise FormatError(
            f"{labels_path}: expected label magic 0x{LABEL_MAGIC:08x}, found 0x{magic:08x}"
        )
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    return IdxDataset(images, labels)


# ---------------------------------------------------------------- model files


@dataclass
class ModelFile:
    """A decoded container: the object, its kind and the stored metadata."""

    kind: str
    obj: object
    meta: dict = field(default_factory=dict)


def _state(obj):
    """(meta, arrays) for a supported object."""
    if isinstance(obj, HopeModel):
        mix = obj.mixture
        arrays = {"projection": obj.projection, "weights": mix.weights, "means": mix.means}
        if obj.kind == "gmm":
            arrays["variances"] = mix.variances
        meta = {
            "kind": "hope-model", "mixture": obj.kind, "sigma2": obj.sigma2,
            "noise_mode": obj.noise_mode, "normalize_z": obj.normalize_z, "meta": obj.meta,
        }
        return meta, arrays
    if isinstance(obj, HopeLayer):
        meta = {"kind": "hope-layer", "threshold": obj.threshold, "normalize_z": obj.normalize_z}
        return meta, {k: v for k, v in obj.params().items()}
    if isinstance(obj, DenseLayer):
        return {"kind": "dense-layer", "activation": obj.activation}, obj.params()
    if isinstance(obj, Network):
        layers, arrays = [], {}
        for i, layer in enumerate(obj.all_layers()):
            m, a = _state(layer)
            layers.append(m)
            arrays.update({f"layer{i}.{k}": v for k, v in a.items()})
        return {"kind": "network", "layers": layers}, arrays
    if isinstance(obj, FeatureExtractor):
        meta = {
            "kind": "feature-extractor", "extractor": obj.kind, "threshold": obj.threshold,
            "side": obj.side, "info": obj.info,
        }
        return meta, obj.params()
    raise InvalidArgumentError(f"cannot serialize objects of type {type(obj).__name__}")


def _from_state(meta, arrays):
    kind = meta["kind"]
    if kind == "hope-model":
        if meta["mixture"] == "gmm":
            mix = DiagonalGmm(arrays["weights"], arrays["means"], arrays["variances"])
        else:
            mix = MovMf(arrays["weights"], arrays["means"])
        return HopeModel(
            arrays["projection"], mix, meta["sigma2"], meta["noise_mode"],
            meta["normalize_z"], meta.get("meta", {}),
        )
    if kind == "hope-layer":
        return HopeLayer(
            arrays["projection"], arrays["means"], weights=arrays.get("weights"),
            bias=arrays.get("bias"), threshold=meta["threshold"], normalize_z=meta["normalize_z"],
        )
    if kind == "dense-layer":
        return DenseLayer(arrays["weights"], arrays["bias"], meta["activation"])
    if kind == "network":
        layers = []
        for i, m in enumerate(meta["layers"]):
            prefix = f"layer{i}."
            sub = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
            layers.append(_from_state(m, sub))
        return Network(layers[:-1], layers[-1])
    if kind == "feature-extractor":
        return FeatureExtractor(
            meta["extractor"], meta["threshold"], side=meta["side"], info=meta.get("info", {}),
            **arrays,
        )
    raise FormatError(f"unknown object kind {kind!r} in model file")


def _section(tag, name, payload):
    name_b = name.encode("utf-8")
    return tag + struct.pack("<I", len(name_b)) + name_b + struct.pack("<Q", len(payload)) + payload


def _encode_array(a):
    a = np.ascontiguousarray(a)
    dt = a.dtype.newbyteorder("<") if a.dtype.itemsize > 1 else a.dtype
    dstr = dt.str.encode("ascii")
    head = struct.pack("<B", len(dstr)) + dstr + struct.pack("<I", a.ndim)
    head += struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.astype(dt, copy=False).tobytes()


def _decode_array(payload):
    n = payload[0]
    dt = np.dtype(payload[1:1 + n].decode("ascii"))
    off = 1 + n
    ndim = struct.unpack_from("<I", payload, off)[0]
    off += 4
    shape = struct.unpack_from(f"<{ndim}Q", payload, off)
    off += 8 * ndim
    count = int(np.prod(shape, dtype=np.int64))
    if len(payload) - off != count * dt.itemsize:
        raise FormatError("array payload length does not match its shape")
    return np.frombuffer(payload, dtype=dt, count=count, offset=off).reshape(shape).astype(
        dt.newbyteorder("="), copy=True
    )


def save_model(obj, path, config=None):
    """Write a HopeModel, HopeLayer, DenseLayer, Network or FeatureExtractor.

    ``config`` (a dict or an object with ``to_dict``) is stored as the
    producing configuration.
    """
    meta, arrays = _state(obj)
    if config is not None:
        meta["config"] = config.to_dict() if hasattr(config, "to_dict") else dict(config)
    sections = [_section(b"META", "meta", json.dumps(meta, sort_keys=True).encode("utf-8"))]
    sections += [_section(b"ARRY", name, _encode_array(a)) for name, a in arrays.items()]
    body = MODEL_MAGIC + struct.pack("<II", MODEL_VERSION, len(sections)) + b"".join(sections)
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


def load_model_file(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise TruncatedFileError(f"{path}: {len(data)} bytes is too short for a model file")
    if data[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {MODEL_MAGIC!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != MODEL_VERSION:
        raise UnsupportedVersionError(
            f"{path}: model file version {version}, this library reads version {MODEL_VERSION}"
        )
    body, stored = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != stored:
        raise ChecksumError(f"{path}: checksum mismatch (file is corrupted)")
    off = 12
    meta, arrays = None, {}
    try:
        for _ in range(count):
            tag = body[off:off + 4]
            (nlen,) = struct.unpack_from("<I", body, off + 4)
            name = body[off + 8:off + 8 + nlen].decode("utf-8")
            off += 8 + nlen
            (plen,) = struct.unpack_from("<Q", body, off)
            off += 8
            payload = body[off:off + plen]
            if len(payload) != plen:
                raise TruncatedFileError(f"{path}: section {name!r} is truncated")
            off += plen
            if tag == b"META":
                meta = json.loads(payload.decode("utf-8"))
            elif tag == b"ARRY":
                arrays[name] = _decode_array(payload)
            else:
                raise FormatError(f"{path}: unknown section tag {tag!r}")
    except struct.error as exc:
        raise TruncatedFileError(f"{path}: {exc}") from exc
    if meta is None:
        raise FormatError(f"{path}: no META section")
    return ModelFile(meta["kind"], _from_state(meta, arrays), meta)


def load_model(path):
    """The object stored by :func:`save_model`."""
    return load_model_file(path).obj


# ------------------------------------------------------------- feature files


def write_features(path, F):
    """Header (magic, u64 rows, u64 cols, u32 element width) then row-major
    little-endian float32 values."""
    F = np.asarray(F)
    if F.ndim != 2:
        raise InvalidArgumentError(f"feature matrix must be 2-D, got shape {F.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<QQI", F.shape[0], F.shape[1], 4))
        fh.write(np.ascontiguousarray(F, dtype="<f4").tobytes())


def read_features(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 24:
        raise TruncatedFileError(f"{path}: too short for a feature header")
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {FEATURE_MAGIC!r}")
    rows, cols, width = struct.unpack_from("<QQI", data, 4)
    if width != 4:
        raise FormatError(f"{path}: unsupported element width {width}")
    if len(data) != 24 + rows * cols * 4:
        raise TruncatedFileError(f"{path}: expected {24 + rows * cols * 4} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=24).reshape(rows, cols).astype(np.float32)


def write_report(report, path):
    report.write(path)


def read_report(path, record_type=None):
    with open(path) as fh:
        return TrainReport.from_jsonl(fh.read(), record_type)
