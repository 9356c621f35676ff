"""Binary checkpoint container.

Layout (all integers and floats little-endian)::

    b"TAPN"                 magic
    u16  version            currently 1
    u16  flags              bit 0: optimizer state present
    u32  L                  embedding length
    u32  n_way_train        reference rows
    str  arch               JSON architecture descriptor
    [flags & 1]  u64 adam_t, f64 beta1, f64 beta2, f64 eps
    u32  n_blocks
    n_blocks x block:
        str  name           "param/<name>", "bank/phi", "adam_m/<name>", "adam_v/<name>"
        u8   ndim
        u64  dims[ndim]
        f64  data[prod(dims)]   C order
    str  metadata           JSON, keys sorted
    u32  crc32              of every preceding byte

``str`` is a u32 byte length followed by UTF-8 bytes.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .nn import EmbeddingNetwork, build_network
from .optim import Adam
from .references import ReferenceBank

MAGIC = b"TAPN"
VERSION = 1
_F64 = np.dtype("<f8")


@dataclass
class Checkpoint:
    arch: dict
    L: int
    n_way_train: int
    params: dict  # name -> ndarray
    phi: np.ndarray
    optimizer: dict | None = None  # Adam.state_dict() plus beta1/beta2/eps
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, net: EmbeddingNetwork, bank: ReferenceBank, optimizer: Adam | None = None, metadata=None):
        opt = None
        if optimizer is not None:
            opt = optimizer.state_dict()
            opt.update(beta1=optimizer.beta1, beta2=optimizer.beta2, eps=optimizer.eps)
        return cls(net.descriptor, net.output_dim, bank.n_way, net.state_dict(), bank.rows.copy(), opt, dict(metadata or {}))

    def build(self) -> tuple[EmbeddingNetwork, ReferenceBank]:
        net = build_network(self.arch)
        net.load_state_dict(self.params)
        if net.output_dim != self.L:
            raise CheckpointError(f"architecture yields L={net.output_dim}, header says {self.L}")
        return net, ReferenceBank(self.phi.copy())

    def build_optimizer(self) -> Adam | None:
        if self.optimizer is None:
            return None
        opt = Adam(self.optimizer["beta1"], self.optimizer["beta2"], self.optimizer["eps"])
        opt.load_state_dict(self.optimizer)
        return opt


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _block(name: str, arr) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=_F64)
    head = _str(name) + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes(order="C")


def encode(ckpt: Checkpoint) -> bytes:
    flags = 1 if ckpt.optimizer is not None else 0
    out = [MAGIC, struct.pack("<HHII", VERSION, flags, ckpt.L, ckpt.n_way_train)]
    out.append(_str(json.dumps(ckpt.arch, sort_keys=True, separators=(",", ":"))))
    blocks = [_block(f"param/{k}", v) for k, v in ckpt.params.items()]
    blocks.append(_block("bank/phi", ckpt.phi))
    if flags & 1:
        o = ckpt.optimizer
        out.append(struct.pack("<Qddd", o["t"], o["beta1"], o["beta2"], o["eps"]))
        for k in sorted(o["m"]):
            blocks.append(_block(f"adam_m/{k}", o["m"][k]))
            blocks.append(_block(f"adam_v/{k}", o["v"][k]))
    out.append(struct.pack("<I", len(blocks)))
    out.extend(blocks)
    out.append(_str(json.dumps(ckpt.metadata, sort_keys=True)))
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        b = self.buf[self.pos : self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"corrupt string at offset {self.pos - n}") from exc

    def array(self) -> tuple[str, np.ndarray]:
        name = self.string()
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}Q")
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(self.take(8 * count), dtype=_F64).astype(np.float64)
        return name, data.reshape(shape)


def decode(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    version, flags, L, n_way = r.unpack("<HHII")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        arch = json.loads(r.string())
    except json.JSONDecodeError as exc:
        raise CheckpointError("corrupt architecture descriptor") from exc
    opt = None
    if flags & 1:
        t, b1, b2, eps = r.unpack("<Qddd")
        opt = {"t": t, "beta1": b1, "beta2": b2, "eps": eps, "m": {}, "v": {}}
    (n_blocks,) = r.unpack("<I")
    params, phi = {}, None
    for _ in range(n_blocks):
        name, arr = r.array()
        kind, _, key = name.partition("/")
        if kind == "param":
            params[key] = arr
        elif kind == "bank" and key == "phi":
            phi = arr
        elif kind == "adam_m" and opt is not None:
            opt["m"][key] = arr
        elif kind == "adam_v" and opt is not None:
            opt["v"][key] = arr
        else:
            raise CheckpointError(f"unknown block {name!r}")
    try:
        meta = json.loads(r.string())
    except json.JSONDecodeError as exc:
        raise CheckpointError("corrupt metadata block") from exc
    end = r.pos
    (crc,) = r.unpack("<I")
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after checkpoint")
    if zlib.crc32(buf[:end]) != crc:
        raise CheckpointError("checkpoint checksum mismatch")
    if phi is None:
        raise CheckpointError("checkpoint has no reference bank block")
    if phi.shape != (n_way, L):
        raise CheckpointError(f"reference bank shape {phi.shape} != header ({n_way}, {L})")
    return Checkpoint(arch, L, n_way, params, phi, opt, meta)


def save(path, ckpt: Checkpoint) -> bytes:
    data = encode(ckpt)
    Path(path).write_bytes(data)
    return data


def load(path) -> Checkpoint:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(buf)
