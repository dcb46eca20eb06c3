"""Versioned binary checkpoint files for parameter stores.

Layout (all integers little-endian):

    magic       4 bytes  b"OSCK"
    version     u32      currently 1
    header_len  u32      UTF-8 JSON metadata (may be empty)
    header      bytes
    count       u32      number of parameter tensors
    per parameter tensor, in store order:
        name_len u32, name bytes (UTF-8), rows u32, cols u32,
        rows*cols float64 payload
    Adam moments in the same record layout, two tensors per parameter
    ("<name>#m", "<name>#v") followed by a 1x1 "<name>#t" step counter.

Round-trips are bit-exact: save -> load -> save yields identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError
from .params import ParamStore

MAGIC = b"OSCK"
VERSION = 1


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    rows, cols = arr.shape
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<II", rows, cols))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", fh.read(4))
    name = fh.read(name_len).decode("utf-8")
    rows, cols = struct.unpack("<II", fh.read(8))
    payload = fh.read(rows * cols * 8)
    if len(payload) != rows * cols * 8:
        raise ConfigurationError(f"truncated checkpoint while reading '{name}'")
    arr = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)
    return name, arr


def save_store(path: str | Path, store: ParamStore, header: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header_bytes = json.dumps(header or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        names = store.names()
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            _write_tensor(fh, name, store.entry(name).value)
        for name in names:
            entry = store.entry(name)
            _write_tensor(fh, f"{name}#m", entry.m)
            _write_tensor(fh, f"{name}#v", entry.v)
            _write_tensor(fh, f"{name}#t", np.array([[float(entry.step)]]))


def load_store(path: str | Path, seed: int = 0) -> tuple[ParamStore, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ConfigurationError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ConfigurationError(f"{path}: unsupported format version {version}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8")) if header_len else {}
        (count,) = struct.unpack("<I", fh.read(4))
        store = ParamStore(seed=seed)
        for _ in range(count):
            name, arr = _read_tensor(fh)
            store.add(name, arr)
        for _ in range(count):
            m_name, m = _read_tensor(fh)
            v_name, v = _read_tensor(fh)
            t_name, t_arr = _read_tensor(fh)
            base = m_name.rsplit("#", 1)[0]
            if v_name != f"{base}#v" or t_name != f"{base}#t":
                raise ConfigurationError(f"{path}: moment records out of order near '{m_name}'")
            entry = store.entry(base)
            entry.m[:] = m
            entry.v[:] = v
            entry.step = int(t_arr[0, 0])
    return store, header
