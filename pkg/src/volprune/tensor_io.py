"""Binary volume/attention containers and the JSON result document.

MPRV (volume), little-endian::

    magic "MPRV" | version u8 = 1 | dtype u8 = 1 (f32) | reserved u16 = 0
    D u32 | H u32 | W u32 | D*H*W f32

MPRA (attention)::

    magic "MPRA" | version u8 = 1 | reserved 3 bytes | num_slices u32
    per slice: heads u32 | tokens u32 | head_dim u32 | Q f32[...] | K f32[...]

MPRC (contextual tokens referenced from the result JSON)::

    magic "MPRC" | version u8 = 1 | dtype u8 = 1 | reserved u16 = 0
    count u32 | dim u32 | count*dim f32

Header sizes are checked against the file length before any payload is
materialized, so a hostile header cannot trigger a large allocation.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .core import (
    DataError,
    FormatError,
    PrimarySet,
    PruneConfig,
    PruneResult,
    SliceResult,
    SliceSelection,
    TruncationError,
    Volume,
)
from .saliency import HeadStack

VOLUME_MAGIC = b"MPRV"
ATTENTION_MAGIC = b"MPRA"
CONTEXT_MAGIC = b"MPRC"
VERSION = 1
DTYPE_F32 = 1
SCHEMA_VERSION = 1

_VOLUME_HEADER = struct.Struct("<4sBBHIII")
_ATTENTION_HEADER = struct.Struct("<4sB3sI")
_BLOCK_HEADER = struct.Struct("<III")
_CONTEXT_HEADER = struct.Struct("<4sBBHII")
_F32 = np.dtype("<f4")


def _check_magic(magic: bytes, expected: bytes, path) -> None:
    if magic != expected:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {expected!r}")


def _check_finite(arr: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(arr.ravel()))
    if bad.size:
        raise DataError(f"{what}: non-finite value at index {int(bad[0])}")


def _take_f32(buf: memoryview, offset: int, count: int, what: str, path) -> np.ndarray:
    end = offset + count * _F32.itemsize
    if end > len(buf):
        raise TruncationError(
            f"{path}: {what} declares {count} floats but only "
            f"{max(0, len(buf) - offset) // _F32.itemsize} are present"
        )
    return np.frombuffer(buf, dtype=_F32, count=count, offset=offset)


def write_volume(vol: Volume, path) -> None:
    d, h, w = vol.data.shape
    with open(path, "wb") as f:
        f.write(_VOLUME_HEADER.pack(VOLUME_MAGIC, VERSION, DTYPE_F32, 0, d, h, w))
        f.write(vol.data.astype(_F32, copy=False).tobytes())


def read_volume(path) -> Volume:
    buf = memoryview(Path(path).read_bytes())
    if len(buf) < _VOLUME_HEADER.size:
        raise TruncationError(f"{path}: file shorter than the {_VOLUME_HEADER.size}-byte header")
    magic, version, dtype, _reserved, d, h, w = _VOLUME_HEADER.unpack_from(buf)
    _check_magic(magic, VOLUME_MAGIC, path)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype} (only 1 = f32)")
    if min(d, h, w) < 1:
        raise FormatError(f"{path}: dimensions must be >= 1, got D={d} H={h} W={w}")
    count = d * h * w
    expected = _VOLUME_HEADER.size + count * _F32.itemsize
    if len(buf) != expected:
        raise TruncationError(
            f"{path}: header declares {count} floats ({expected} bytes) "
            f"but file has {len(buf)} bytes"
        )
    data = _take_f32(buf, _VOLUME_HEADER.size, count, "volume payload", path)
    _check_finite(data, str(path))
    return Volume(data.reshape(d, h, w).astype(np.float32))


def write_attention(stacks, path) -> None:
    with open(path, "wb") as f:
        f.write(_ATTENTION_HEADER.pack(ATTENTION_MAGIC, VERSION, b"\0\0\0", len(stacks)))
        for stack in stacks:
            f.write(_BLOCK_HEADER.pack(stack.num_heads, stack.tokens, stack.head_dim))
            f.write(np.asarray(stack.q, dtype=_F32).tobytes())
            f.write(np.asarray(stack.k, dtype=_F32).tobytes())


def read_attention(path) -> list:
    """Parse an MPRA file into one HeadStack (float32 Q/K) per slice."""
    buf = memoryview(Path(path).read_bytes())
    if len(buf) < _ATTENTION_HEADER.size:
        raise TruncationError(f"{path}: file shorter than the {_ATTENTION_HEADER.size}-byte header")
    magic, version, _reserved, num_slices = _ATTENTION_HEADER.unpack_from(buf)
    _check_magic(magic, ATTENTION_MAGIC, path)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")

    stacks = []
    offset = _ATTENTION_HEADER.size
    tokens = None
    for s in range(num_slices):
        if offset + _BLOCK_HEADER.size > len(buf):
            raise TruncationError(f"{path}: missing header of slice block {s} of {num_slices}")
        heads, m, head_dim = _BLOCK_HEADER.unpack_from(buf, offset)
        offset += _BLOCK_HEADER.size
        if min(heads, m, head_dim) < 1:
            raise FormatError(f"{path}: slice block {s} has a zero dimension ({heads}, {m}, {head_dim})")
        if tokens is None:
            tokens = m
        elif m != tokens:
            raise FormatError(
                f"{path}: inconsistent token count: block {s} has M={m}, earlier blocks M={tokens}"
            )
        count = heads * m * head_dim
        q = _take_f32(buf, offset, count, f"slice block {s} Q", path)
        offset += count * _F32.itemsize
        k = _take_f32(buf, offset, count, f"slice block {s} K", path)
        offset += count * _F32.itemsize
        _check_finite(q, f"{path} slice block {s} Q")
        _check_finite(k, f"{path} slice block {s} K")
        shape = (heads, m, head_dim)
        stacks.append(HeadStack(q.reshape(shape).copy(), k.reshape(shape).copy()))
    if offset != len(buf):
        raise TruncationError(f"{path}: {len(buf) - offset} trailing bytes after {num_slices} slice blocks")
    return stacks


def write_contextual_tokens(tokens: np.ndarray, path) -> None:
    tokens = np.asarray(tokens, dtype=_F32)
    count, dim = tokens.shape
    with open(path, "wb") as f:
        f.write(_CONTEXT_HEADER.pack(CONTEXT_MAGIC, VERSION, DTYPE_F32, 0, count, dim))
        f.write(tokens.tobytes())


def read_contextual_tokens(path) -> np.ndarray:
    buf = memoryview(Path(path).read_bytes())
    if len(buf) < _CONTEXT_HEADER.size:
        raise TruncationError(f"{path}: file shorter than the {_CONTEXT_HEADER.size}-byte header")
    magic, version, dtype, _reserved, count, dim = _CONTEXT_HEADER.unpack_from(buf)
    _check_magic(magic, CONTEXT_MAGIC, path)
    if version != VERSION or dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported version {version} / dtype {dtype}")
    if len(buf) != _CONTEXT_HEADER.size + count * dim * _F32.itemsize:
        raise TruncationError(f"{path}: payload does not match {count} x {dim} floats")
    data = _take_f32(buf, _CONTEXT_HEADER.size, count * dim, "contextual tokens", path)
    return data.reshape(count, dim).copy()


def fmt_number(x: float) -> float:
    """Round to 12 significant digits for stable serialization."""
    return float(f"{float(x):.12g}")


def context_path_for(json_path) -> Path:
    p = Path(json_path)
    return p.with_name(p.stem + ".ctx.bin")


def result_to_dict(res: PruneResult, context_file: str, include_timings: bool = True) -> dict:
    cfg = res.config
    return {
        "schema_version": SCHEMA_VERSION,
        "config": {
            "gamma": fmt_number(cfg.gamma),
            "tau": fmt_number(cfg.tau),
            "temperature": fmt_number(cfg.temperature),
            "contextual_ratio": fmt_number(cfg.contextual_ratio),
            "patch_size": cfg.patch_size,
            "embed_dim": cfg.embed_dim,
            "num_heads": cfg.num_heads,
            "head_dim": cfg.head_dim,
        },
        "attention_source": res.attention_source,
        "original_depth": res.slice_selection.original_depth,
        "tokens_per_slice": res.tokens_per_slice,
        "retained_slices": list(res.slice_selection.retained),
        "per_slice": [
            {
                "slice_index": s.slice_index,
                "primary_indices": list(s.primary.indices),
                "primary_mass": fmt_number(s.primary.cumulative_mass),
                "clusters": [{"center": c, "members": list(m)} for c, m in s.clusters],
                "contextual_dim": int(s.contextual_tokens.shape[1]),
            }
            for s in res.slices
        ],
        "original_tokens": res.original_tokens,
        "retained_tokens": res.retained_tokens,
        "r_rate": fmt_number(res.r_rate),
        "timings_ms": (
            {k: fmt_number(res.timings_ms.get(k, 0.0))
             for k in ("iaf", "saliency", "dins", "merge", "total")}
            if include_timings else None
        ),
        "contextual_tokens_file": context_file,
    }


def write_result_json(res: PruneResult, path, include_timings: bool = True) -> None:
    """Write the result document plus its sibling ``<stem>.ctx.bin`` token file.

    Contextual tokens of all slices are stacked in slice order, clusters in
    ascending center order. ``include_timings=False`` writes ``null`` timings
    so identical runs produce identical bytes.
    """
    ctx_path = context_path_for(path)
    dim = res.slices[0].contextual_tokens.shape[1] if res.slices else 0
    stacked = np.concatenate([s.contextual_tokens for s in res.slices]) if res.slices else np.zeros((0, dim))
    write_contextual_tokens(stacked.reshape(-1, dim), ctx_path)
    doc = result_to_dict(res, ctx_path.name, include_timings)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def read_result_json(path) -> PruneResult:
    """Rebuild a PruneResult (contextual tokens as float32) from its JSON document."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    tokens = read_contextual_tokens(Path(os.path.dirname(os.fspath(path))) / doc["contextual_tokens_file"])
    slices = []
    row = 0
    for entry in doc["per_slice"]:
        n = len(entry["clusters"])
        slices.append(SliceResult(
            slice_index=entry["slice_index"],
            primary=PrimarySet(entry["primary_indices"], entry["primary_mass"]),
            clusters=tuple((c["center"], tuple(c["members"])) for c in entry["clusters"]),
            contextual_tokens=tokens[row:row + n],
        ))
        row += n
    return PruneResult(
        config=PruneConfig(**doc["config"]),
        slice_selection=SliceSelection(doc["retained_slices"], doc["original_depth"]),
        slices=tuple(slices),
        tokens_per_slice=doc["tokens_per_slice"],
        timings_ms=doc["timings_ms"] or {},
        attention_source=doc["attention_source"],
    )
