"""Versioned binary checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"HLCM"
    version u32      format version (currently 1)
    hdrlen  u64      byte length of the JSON header
    header  utf-8    {"format_version", "config", "epoch",
                      "train_config", "tensor_names"}
    tensors repeated name_len:u32, name:utf-8, ndim:u32,
                      dims:u64 * ndim, data:float64 little-endian C-order

Model tensors appear in the declaration order of
``model.named_tensors``; optimizer velocity tensors, when saved, follow
with an ``opt.`` name prefix. Round-trips are bit-exact.
"""

import json
import os
import struct
import tempfile

import numpy as np

from .model import HlstcmConfig, init_model_params, named_tensors

MAGIC = b"HLCM"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed, truncated, or incompatible checkpoint file."""


def _write_tensor(fh, name, arr):
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<Q", d))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, count, what):
    buf = fh.read(count)
    if len(buf) != count:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def _read_tensor(fh, expect_name):
    (name_len,) = struct.unpack("<I", _read_exact(fh, 4, f"tensor {expect_name}"))
    name = _read_exact(fh, name_len, f"tensor {expect_name}").decode("utf-8")
    if name != expect_name:
        raise CheckpointError(f"expected tensor {expect_name!r}, found {name!r}")
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4, name))
    dims = tuple(
        struct.unpack("<Q", _read_exact(fh, 8, name))[0] for _ in range(ndim)
    )
    n = int(np.prod(dims)) if dims else 1
    data = np.frombuffer(_read_exact(fh, 8 * n, name), dtype="<f8")
    return name, data.astype(np.float64).reshape(dims)


def save_checkpoint(params, config, path, velocities=None, epoch=None, train_config=None):
    """Write params (+ optional optimizer velocities) atomically to ``path``."""
    tensors = named_tensors(params)
    names = [n for n, _ in tensors]
    opt_tensors = []
    if velocities is not None:
        opt_tensors = [("opt." + n, a) for n, a in named_tensors(velocities)]
        names += [n for n, _ in opt_tensors]
    header = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "epoch": epoch,
        "train_config": train_config,
        "tensor_names": names,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", FORMAT_VERSION))
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            for name, arr in tensors + opt_tensors:
                _write_tensor(fh, name, arr)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint format version {version} (expected {FORMAT_VERSION})"
            )
        (hdrlen,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
        header = json.loads(_read_exact(fh, hdrlen, "header").decode("utf-8"))
        config = HlstcmConfig.from_dict(header["config"])
        params = init_model_params(config, seed=0).zeros_like()
        expected = named_tensors(params)
        listed = header.get("tensor_names", [])
        model_names = [n for n, _ in expected]
        if listed[:len(model_names)] != model_names:
            raise CheckpointError(
                "checkpoint tensor list does not match its config "
                f"(expected {model_names[:3]}..., found {listed[:3]}...)"
            )
        for name, arr in expected:
            _, loaded = _read_tensor(fh, name)
            if loaded.shape != arr.shape:
                raise CheckpointError(
                    f"tensor {name!r} has shape {loaded.shape}, config implies {arr.shape}"
                )
            arr[...] = loaded
        velocities = None
        opt_names = listed[len(model_names):]
        if opt_names:
            velocities = params.zeros_like()
            for name, arr in named_tensors(velocities):
                _, loaded = _read_tensor(fh, "opt." + name)
                if loaded.shape != arr.shape:
                    raise CheckpointError(
                        f"tensor opt.{name!r} has shape {loaded.shape}, expected {arr.shape}"
                    )
                arr[...] = loaded
    return params, config, velocities, header


def load_checkpoint(path):
    """Read a checkpoint; returns (params, config). Bit-exact round-trip."""
    params, config, _, _ = _load(path)
    return params, config


def load_training_state(path):
    """Read params plus optimizer state for resuming.

    Returns (params, config, velocities_or_None, epoch_or_None,
    train_config_dict_or_None).
    """
    params, config, velocities, header = _load(path)
    return params, config, velocities, header.get("epoch"), header.get("train_config")
