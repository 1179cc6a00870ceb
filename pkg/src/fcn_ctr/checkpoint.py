"""Versioned binary checkpoints: schema + model config + parameter tensors.

Byte layout (all integers little-endian, documented in the README):

    magic   8 bytes  b"FCNCKPT1"
    version u32      currently 1
    config  u32 field count, u32 d, u32 lcn_depth, u32 ecn_depth,
            u32 mask mode (0 paper, 1 no_ln, 2 identity),
            f64 dropout_rate, f64 ln_epsilon,
            u32 discretize mode (0 lnsq, 1 log2)
    schema  per field: u32 name length + UTF-8 name,
            u32 kind (0 categorical, 1 numeric), u32 min_count,
            u32 vocab size, then vocab tokens as u32 length + UTF-8
            in id order (id 0, the OOV token, first)
    tensors in the fixed order: embeddings per field, then per lcn layer
            (w, b, gain, beta), per ecn layer likewise, then w_deep, b_deep,
            w_shallow, b_shallow. Each tensor: u32 rank, u32 dims, payload
            float32 little-endian.
    crc     u32 CRC32 of every preceding byte

Loading reproduces the float32-stored values exactly (widened to float64)
and fails with a distinct error for a bad magic, an unsupported version, a
truncated file, or a checksum mismatch.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from fcn_ctr.features import DISCRETIZE_MODES, FeatureSchema, FieldSpec
from fcn_ctr.model import (CrossLayerParams, HeadParams, MASK_MODES,
                           ModelConfig, ModelParams)

MAGIC = b"FCNCKPT1"
VERSION = 1

_FIELD_KINDS = ("categorical", "numeric")


class CheckpointError(Exception):
    """Base class for malformed checkpoint files."""


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def _iter_tensors(params: ModelParams):
    for e in params.embeddings:
        yield e
    for layer in params.lcn_layers:
        yield from (layer.w, layer.b, layer.gain, layer.beta)
    for layer in params.ecn_layers:
        yield from (layer.w, layer.b, layer.gain, layer.beta)
    h = params.heads
    yield from (h.w_deep, h.b_deep, h.w_shallow, h.b_shallow)


def checkpoint_bytes(params: ModelParams, config: ModelConfig,
                     schema: FeatureSchema) -> bytes:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    buf += struct.pack(
        "<IIIII", schema.num_fields, config.d, config.lcn_depth,
        config.ecn_depth, MASK_MODES.index(config.mask_mode),
    )
    buf += struct.pack("<dd", config.dropout_rate, config.ln_epsilon)
    buf += struct.pack("<I", DISCRETIZE_MODES.index(schema.discretize))

    for spec, vocab, size in zip(schema.fields, schema.vocabs, schema.sizes):
        name = spec.name.encode("utf-8")
        buf += struct.pack("<I", len(name)) + name
        buf += struct.pack("<II", _FIELD_KINDS.index(spec.kind), spec.min_count)
        tokens = sorted(vocab, key=vocab.get)
        if len(tokens) != size:
            raise ValueError(f"field {spec.name!r}: vocab size {len(tokens)} != {size}")
        buf += struct.pack("<I", size)
        for tok in tokens:
            tb = tok.encode("utf-8")
            buf += struct.pack("<I", len(tb)) + tb

    for tensor in _iter_tensors(params):
        buf += struct.pack("<I", tensor.ndim)
        buf += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        buf += np.ascontiguousarray(tensor, dtype="<f4").tobytes()

    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    return bytes(buf)


def save_checkpoint(path, params: ModelParams, config: ModelConfig,
                    schema: FeatureSchema) -> None:
    data = checkpoint_bytes(params, config, schema)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"checkpoint truncated: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def parse_checkpoint(data: bytes):
    """Decode checkpoint bytes into (params, config, schema)."""
    r = _Reader(data)
    magic = r.take(len(MAGIC))
    if magic != MAGIC:
        raise BadMagicError(f"not a checkpoint: magic {magic!r}")
    version = r.u32()
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}")

    num_fields = r.u32()
    d = r.u32()
    lcn_depth = r.u32()
    ecn_depth = r.u32()
    mask_idx = r.u32()
    if mask_idx >= len(MASK_MODES):
        raise ChecksumError(f"invalid mask mode code {mask_idx}")
    dropout = r.f64()
    ln_epsilon = r.f64()
    disc_idx = r.u32()
    if disc_idx >= len(DISCRETIZE_MODES):
        raise ChecksumError(f"invalid discretize mode code {disc_idx}")

    fields = []
    vocabs = []
    sizes = []
    for _ in range(num_fields):
        name = r.string()
        kind_idx = r.u32()
        if kind_idx >= len(_FIELD_KINDS):
            raise ChecksumError(f"invalid field kind code {kind_idx}")
        min_count = r.u32()
        size = r.u32()
        tokens = [r.string() for _ in range(size)]
        fields.append(FieldSpec(name, _FIELD_KINDS[kind_idx], max(1, min_count)))
        vocabs.append({tok: i for i, tok in enumerate(tokens)})
        sizes.append(size)
    schema = FeatureSchema(fields, vocabs, sizes, DISCRETIZE_MODES[disc_idx])

    def tensor() -> np.ndarray:
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank)) if rank else ()
        count = int(np.prod(dims)) if dims else 1
        raw = np.frombuffer(r.take(4 * count), dtype="<f4")
        return raw.astype(np.float64).reshape(dims)

    embeddings = [tensor() for _ in range(num_fields)]

    def layer() -> CrossLayerParams:
        return CrossLayerParams(tensor(), tensor(), tensor(), tensor())

    lcn = [layer() for _ in range(lcn_depth)]
    ecn = [layer() for _ in range(ecn_depth)]
    heads = HeadParams(tensor(), tensor(), tensor(), tensor())

    stored_crc = r.u32()
    if r.pos != len(data):
        raise ChecksumError(f"{len(data) - r.pos} trailing bytes after checksum")
    actual_crc = zlib.crc32(data[:r.pos - 4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )

    config = ModelConfig(d=d, lcn_depth=lcn_depth, ecn_depth=ecn_depth,
                         mask_mode=MASK_MODES[mask_idx], dropout_rate=dropout,
                         ln_epsilon=ln_epsilon, seed=0)
    params = ModelParams(embeddings, lcn, ecn, heads)
    return params, config, schema


def load_checkpoint(path):
    """Read and validate a checkpoint file. Returns (params, config, schema)."""
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_checkpoint(data)
