"""Versioned model files.

Layout: a text header of ``key=value`` lines introduced by the magic line and
ended by a blank line, followed by the parameter blobs as little-endian
float64, row-major, in the order listed under ``blobs``.
"""
from __future__ import annotations

import numpy as np

from .model import FismParams, NaisParams

MAGIC = "NAISMODEL"
VERSION = 1
_DTYPE = np.dtype("<f8")


class ModelFileError(ValueError):
    pass


class BadMagicError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class TruncatedModelError(ModelFileError):
    pass


class DimensionMismatchError(ModelFileError):
    pass


class PopModel:
    """Item popularity counts, persisted so they can be evaluated like a trained model."""

    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=np.float64)

    @property
    def num_items(self) -> int:
        return len(self.scores)


def _layout(params):
    if isinstance(params, NaisParams):
        header = {
            "kind": "nais",
            "num_items": params.num_items,
            "k": params.k,
            "a": params.a,
            "beta": repr(float(params.beta)),
            "variant": params.variant,
        }
        blobs = {n: getattr(params, n) for n in ("P", "Q", "W", "b", "h")}
    elif isinstance(params, FismParams):
        header = {
            "kind": "fism",
            "num_items": params.num_items,
            "k": params.k,
            "alpha": repr(float(params.alpha)),
        }
        blobs = {"P": params.P, "Q": params.Q}
    elif isinstance(params, PopModel):
        header = {"kind": "pop", "num_items": params.num_items}
        blobs = {"scores": params.scores}
    else:
        raise TypeError(f"cannot save {type(params).__name__}")
    return header, blobs


def save_model(params, path) -> None:
    header, blobs = _layout(params)
    lines = [MAGIC, f"version={VERSION}"]
    lines += [f"{k}={v}" for k, v in header.items()]
    lines.append("blobs=" + ",".join(blobs))
    for name, arr in blobs.items():
        lines.append(f"shape.{name}=" + ",".join(str(s) for s in arr.shape))
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n\n").encode("ascii"))
        for arr in blobs.values():
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())


def _expected_shapes(meta):
    I = int(meta["num_items"])
    kind = meta["kind"]
    if kind == "pop":
        return {"scores": (I,)}
    k = int(meta["k"])
    shapes = {"P": (I, k), "Q": (I, k)}
    if kind == "nais":
        a = int(meta["a"])
        d = 2 * k if meta["variant"] == "concat" else k
        shapes.update(W=(a, d), b=(a,), h=(a,))
    elif kind != "fism":
        raise ModelFileError(f"unknown model kind {kind!r}")
    return shapes


def read_header(path) -> dict:
    return _read(path)[0]


def _read(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    first = raw.split(b"\n", 1)[0]
    if first != MAGIC.encode():
        raise BadMagicError(f"{path}: not a model file (magic {first[:16]!r})")
    end = raw.find(b"\n\n")
    if end < 0:
        raise TruncatedModelError(f"{path}: header is not terminated")
    meta = {}
    for line in raw[len(first) + 1:end].decode("ascii").splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise ModelFileError(f"{path}: malformed header line {line!r}")
        meta[key] = value
    return meta, raw[end + 2:]


def load_model(path):
    meta, body = _read(path)
    if int(meta.get("version", -1)) != VERSION:
        raise VersionMismatchError(
            f"{path}: format version {meta.get('version')} (expected {VERSION})"
        )
    expected = _expected_shapes(meta)
    names = meta["blobs"].split(",")
    if names != list(expected):
        raise DimensionMismatchError(f"{path}: blob list {names} does not match kind")
    arrays, offset = {}, 0
    for name in names:
        declared = tuple(int(s) for s in meta[f"shape.{name}"].split(","))
        if declared != expected[name]:
            raise DimensionMismatchError(
                f"{path}: {name} declared {declared}, header dims imply {expected[name]}"
            )
        nbytes = int(np.prod(declared)) * _DTYPE.itemsize
        if offset + nbytes > len(body):
            raise TruncatedModelError(
                f"{path}: blob {name} needs {nbytes} bytes, {len(body) - offset} remain"
            )
        arrays[name] = (
            np.frombuffer(body, dtype=_DTYPE, count=nbytes // 8, offset=offset)
            .reshape(declared)
            .astype(np.float64)
        )
        offset += nbytes
    if offset != len(body):
        raise DimensionMismatchError(f"{path}: {len(body) - offset} trailing bytes")
    kind = meta["kind"]
    if kind == "pop":
        return PopModel(arrays["scores"])
    if kind == "fism":
        return FismParams(arrays["P"], arrays["Q"], float(meta["alpha"]))
    return NaisParams(
        arrays["P"], arrays["Q"], arrays["W"], arrays["b"], arrays["h"],
        float(meta["beta"]), meta["variant"],
    )
