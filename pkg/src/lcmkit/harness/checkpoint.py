"""Binary checkpoint archive.

Layout (little-endian throughout)::

    b"ALCM"                magic
    uint32                 format version
    uint32                 header length in bytes
    header                 UTF-8 JSON: kind, arch, schedule, hyper, tensor index
    float32[...]           parameter arrays, in index order (theta, then theta-ema)
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from ..lcm import ConsistencyModel
from ..nn import Arch, DenoiserNet
from ..schedule import make_schedule
from ..teacher import TeacherModel

MAGIC = b"ALCM"
VERSION = 1
_LE_F32 = np.dtype("<f4")


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ArchitectureMismatchError(CheckpointError):
    pass


def atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _index(net: DenoiserNet) -> list:
    return [[name, list(p.shape)] for name, p in net.params.items()]


def to_bytes(model) -> bytes:
    if isinstance(model, ConsistencyModel):
        kind, nets, hyper = "lcm", [model.net, model.ema_net], model.hyperparams()
        schedule = model.schedule
    elif isinstance(model, TeacherModel):
        kind, nets, hyper = "teacher", [model.net], None
        schedule = model.schedule
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    header = {
        "kind": kind,
        "arch": nets[0].arch.to_dict(),
        "schedule": schedule.params(),
        "hyper": hyper,
        "params": _index(nets[0]),
        "ema_params": _index(nets[1]) if len(nets) > 1 else None,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    for net in nets:
        for p in net.params.values():
            parts.append(np.ascontiguousarray(p.data, dtype=_LE_F32).tobytes())
    return b"".join(parts)


def save_checkpoint(model, path) -> None:
    atomic_write(path, to_bytes(model))


def _read(buf: memoryview, offset: int, size: int, what: str) -> tuple[memoryview, int]:
    if offset + size > len(buf):
        raise TruncatedCheckpointError(f"file ends inside {what}")
    return buf[offset:offset + size], offset + size


def from_bytes(data: bytes, expect_arch: Arch | dict | None = None):
    buf = memoryview(data)
    magic, off = _read(buf, 0, 4, "magic")
    if bytes(magic) != MAGIC:
        raise BadMagicError(f"bad magic {bytes(magic)!r}, expected {MAGIC!r}")
    raw, off = _read(buf, off, 8, "version header")
    version, hlen = struct.unpack("<II", raw)
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, this build reads {VERSION}")
    raw, off = _read(buf, off, hlen, "JSON header")
    try:
        header = json.loads(bytes(raw).decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None

    arch = Arch(**header["arch"])
    if expect_arch is not None:
        want = expect_arch.to_dict() if isinstance(expect_arch, Arch) else dict(expect_arch)
        if want != arch.to_dict():
            diff = {k: (arch.to_dict().get(k), v) for k, v in want.items() if arch.to_dict().get(k) != v}
            raise ArchitectureMismatchError(f"architecture differs (found, expected): {diff}")

    def load_net(index) -> tuple[DenoiserNet, int]:
        nonlocal off
        net = DenoiserNet(arch)
        expected = [[n, list(p.shape)] for n, p in net.params.items()]
        if expected != index:
            raise ArchitectureMismatchError("tensor index does not match the declared architecture")
        state = {}
        for name, shape in index:
            count = int(np.prod(shape)) if shape else 1
            raw, off = _read(buf, off, 4 * count, f"tensor {name}")
            state[name] = np.frombuffer(raw, dtype=_LE_F32).astype(np.float32).reshape(shape)
        net.load_state_dict(state)
        return net, off

    net, off = load_net(header["params"])
    schedule = make_schedule(**header["schedule"])
    if header["kind"] == "teacher":
        model = TeacherModel(net, schedule)
    elif header["kind"] == "lcm":
        ema, off = load_net(header["ema_params"])
        hp = header["hyper"]
        model = ConsistencyModel(
            net, ema, schedule, hp["k"], (hp["omega_min"], hp["omega_max"]), hp["mu"], hp["eta"]
        )
    else:
        raise CheckpointError(f"unknown checkpoint kind {header['kind']!r}")
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes after the last tensor")
    return model


def load_checkpoint(path, expect_arch: Arch | dict | None = None):
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), expect_arch)
