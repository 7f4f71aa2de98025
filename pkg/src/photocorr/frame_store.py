"""PFS1/PFA1 stack files and CSV export.

Layout (all little-endian)::

    magic     4s   b"PFS1" binary events, b"PFA1" analog readouts
    version   u16
    width     u32
    height    u32
    frames    u64
    flags     u16  bit 0 set for analog stacks
    meta_len  u32
    metadata  meta_len bytes of UTF-8 JSON
    frame records: u32 event count, then (u16 x, u16 y[, f32 S]) per event

Control frames travel inside the metadata blob as base64-encoded uint32 maps.
"""

from __future__ import annotations

import base64
import csv
import dataclasses
import io
import json
import math
import os
import struct
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import CorruptionError, FormatError, ParameterError, ValidationError
from .frames import ANALOG, BINARY, ControlFrame, FrameStack

VERSION = 1
HEADER = struct.Struct("<4sHIIQHI")
MAGIC = {BINARY: b"PFS1", ANALOG: b"PFA1"}
FLAG_ANALOG = 0x1
_COUNT = np.dtype("<u4")
_EVENT = {
    BINARY: np.dtype([("x", "<u2"), ("y", "<u2")]),
    ANALOG: np.dtype([("x", "<u2"), ("y", "<u2"), ("s", "<f4")]),
}
_WRITE_CHUNK = 1 << 16
_CONTROL_KEY = "control_frames"


# ---------------------------------------------------------------------------
# writing

def _encode_metadata(stack: FrameStack) -> bytes:
    meta = dict(stack.metadata)
    if stack.control_frames:
        meta[_CONTROL_KEY] = [
            {"frame_index": int(cf.frame_index), "shape": list(cf.counts.shape),
             "data": base64.b64encode(np.ascontiguousarray(cf.counts, "<u4").tobytes()).decode()}
            for cf in stack.control_frames]
    return json.dumps(meta, sort_keys=True, allow_nan=False).encode("utf-8")


def encode_frames(stack: FrameStack) -> bytes:
    """Frame records of ``stack`` as one byte string."""
    dtype = _EVENT[stack.mode]
    n_frames, n_events = stack.n_frames, stack.n_events
    offsets = stack.offsets - stack.offsets[0]
    out = np.empty(4 * n_frames + dtype.itemsize * n_events, np.uint8)
    starts = 4 * np.arange(n_frames, dtype=np.int64) + dtype.itemsize * offsets[:-1]
    counts = np.diff(offsets).astype(_COUNT).view(np.uint8).reshape(-1, 4)
    out[starts[:, None] + np.arange(4)] = counts
    if n_events:
        ev = np.empty(n_events, dtype)
        ev["x"], ev["y"] = stack.x, stack.y
        if stack.is_analog:
            ev["s"] = stack.signal
        frame = stack.frame_index()
        ev_start = 4 * (frame + 1) + dtype.itemsize * np.arange(n_events, dtype=np.int64)
        out[ev_start[:, None] + np.arange(dtype.itemsize)] = ev.view(np.uint8).reshape(
            -1, dtype.itemsize)
    return out.tobytes()


def write_stack(stack: FrameStack, destination) -> int:
    """Write ``stack`` to a path or binary file object; returns bytes written."""
    stack.validate()
    meta = _encode_metadata(stack)
    header = HEADER.pack(MAGIC[stack.mode], VERSION, stack.grid_width, stack.grid_height,
                         stack.n_frames, FLAG_ANALOG if stack.is_analog else 0, len(meta))
    own = isinstance(destination, (str, os.PathLike))
    fh = open(destination, "wb") if own else destination
    try:
        written = fh.write(header) + fh.write(meta)
        for chunk in stack.iter_chunks(_WRITE_CHUNK):
            written += fh.write(encode_frames(chunk))
    finally:
        if own:
            fh.close()
    return written


# ---------------------------------------------------------------------------
# reading

class StackReader:
    """Streaming reader; frames are decoded chunk by chunk on demand.

    Use as a context manager or call :meth:`close`. The header and metadata
    are parsed on construction.
    """

    def __init__(self, source):
        self._own = isinstance(source, (str, os.PathLike))
        self._fh = open(source, "rb") if self._own else source
        raw = self._fh.read(HEADER.size)
        if len(raw) < 4 or raw[:4] not in MAGIC.values():
            self.close()
            raise FormatError(f"unrecognized magic {raw[:4]!r}")
        if len(raw) < HEADER.size:
            self.close()
            raise CorruptionError("file ends inside the header", None)
        magic, version, width, height, n_frames, flags, meta_len = HEADER.unpack(raw)
        if version != VERSION:
            self.close()
            raise FormatError(f"unsupported format version {version}")
        self.mode = ANALOG if magic == MAGIC[ANALOG] else BINARY
        if bool(flags & FLAG_ANALOG) != (self.mode == ANALOG):
            self.close()
            raise FormatError("mode flags disagree with the magic")
        blob = self._fh.read(meta_len)
        if len(blob) < meta_len:
            self.close()
            raise CorruptionError("file ends inside the metadata blob", None)
        try:
            meta = json.loads(blob.decode("utf-8")) if meta_len else {}
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            self.close()
            raise FormatError(f"metadata blob is not valid JSON: {exc}") from None
        self.control_frames = [
            ControlFrame(int(c["frame_index"]),
                         np.frombuffer(base64.b64decode(c["data"]), "<u4").astype(np.uint32)
                         .reshape(c["shape"]))
            for c in meta.pop(_CONTROL_KEY, [])]
        self.metadata = meta
        self.grid_width, self.grid_height, self.n_frames = width, height, n_frames
        declared = meta.get("frame_count")
        if declared is not None and declared != n_frames:
            self.close()
            raise ValidationError(
                f"metadata declares {declared} frames, header declares {n_frames}")
        self._event = _EVENT[self.mode]
        self._next_frame = 0
        self._buffer = b""

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._own and self._fh is not None:
            self._fh.close()
            self._fh = None

    def _fill(self, need: int) -> bool:
        while len(self._buffer) < need:
            more = self._fh.read(max(need - len(self._buffer), 1 << 20))
            if not more:
                return False
            self._buffer += more
        return True

    def _read_chunk(self, n: int) -> FrameStack:
        size = self._event.itemsize
        counts = np.zeros(n, np.int64)
        starts = np.zeros(n, np.int64)
        pos = 0
        for i in range(n):
            frame = self._next_frame + i
            if not self._fill(pos + 4):
                raise CorruptionError(f"file truncated at frame {frame}", frame)
            c = int.from_bytes(self._buffer[pos:pos + 4], "little")
            body = pos + 4
            if not self._fill(body + c * size):
                raise CorruptionError(f"file truncated inside frame {frame}", frame)
            counts[i], starts[i] = c, body
            pos = body + c * size
        data = np.frombuffer(self._buffer, np.uint8, count=pos)
        self._buffer = self._buffer[pos:]
        total = int(counts.sum())
        frame_of = np.repeat(np.arange(n), counts)
        first = np.concatenate([[0], np.cumsum(counts)[:-1]])
        within = np.arange(total) - first[frame_of]
        byte_pos = starts[frame_of] + within * size
        ev = data[byte_pos[:, None] + np.arange(size)].copy().view(self._event).ravel() \
            if total else np.zeros(0, self._event)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        x, y = ev["x"].astype(np.uint16), ev["y"].astype(np.uint16)
        signal = ev["s"].astype(np.float32) if self.mode == ANALOG else None
        chunk_start = self._next_frame
        self._next_frame += n
        if total and (x.max() >= self.grid_width or y.max() >= self.grid_height):
            bad = int(frame_of[(x >= self.grid_width) | (y >= self.grid_height)][0])
            raise ValidationError(f"event outside the grid in frame {chunk_start + bad}")
        if total > 1:
            key = (frame_of * self.grid_height + y.astype(np.int64)) * self.grid_width + x
            order = np.argsort(key, kind="stable")
            sorted_key = key[order]
            dup = np.flatnonzero(np.diff(sorted_key) == 0)
            if dup.size:
                bad = int(frame_of[order[dup[0]]])
                raise ValidationError(f"duplicate event in frame {chunk_start + bad}")
            if not np.all(order == np.arange(total)):
                x, y = x[order], y[order]
                signal = signal[order] if signal is not None else None
        if signal is not None and not np.all(np.isfinite(signal)):
            raise ValidationError("non-finite readout value")
        return FrameStack(self.mode, self.grid_width, self.grid_height, offsets, x, y, signal,
                          self.metadata, start_frame=chunk_start)

    def iter_chunks(self, chunk_frames: int = 1 << 16) -> Iterator[FrameStack]:
        """Yield consecutive sub-stacks of at most ``chunk_frames`` frames."""
        if chunk_frames < 1:
            raise ParameterError("chunk_frames must be >= 1")
        while self._next_frame < self.n_frames:
            yield self._read_chunk(min(chunk_frames, self.n_frames - self._next_frame))
        self._check_end()

    def _check_end(self):
        if self._buffer or self._fh.read(1):
            raise CorruptionError(
                f"bytes remain after the declared {self.n_frames} frames", self.n_frames)

    def read_all(self) -> FrameStack:
        chunks = list(self.iter_chunks())
        if not chunks:
            stack = FrameStack.empty(self.mode, self.grid_width, self.grid_height, 0,
                                     self.metadata)
        else:
            stack = concatenate(chunks)
        stack.control_frames = self.control_frames
        return stack


def concatenate(chunks: Sequence[FrameStack]) -> FrameStack:
    """Join consecutive sub-stacks into one stack."""
    first = chunks[0]
    offsets = [np.zeros(1, np.int64)]
    base = 0
    for c in chunks:
        rel = c.offsets[1:] - c.offsets[0]
        offsets.append(rel + base)
        base += int(rel[-1]) if rel.size else 0
    signal = np.concatenate([c.signal for c in chunks]) if first.is_analog else None
    return FrameStack(first.mode, first.grid_width, first.grid_height, np.concatenate(offsets),
                      np.concatenate([c.x for c in chunks]), np.concatenate([c.y for c in chunks]),
                      signal, first.metadata, start_frame=first.start_frame)


def read_stack(source) -> FrameStack:
    """Read a whole stack file (path or binary file object) into memory."""
    with StackReader(source) as reader:
        return reader.read_all()


# ---------------------------------------------------------------------------
# tables

def _row_dict(row) -> dict:
    if dataclasses.is_dataclass(row) and not isinstance(row, type):
        return {f.name: getattr(row, f.name) for f in dataclasses.fields(row)}
    if isinstance(row, dict):
        return dict(row)
    raise ParameterError(f"cannot export a row of type {type(row).__name__}")


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return format(v, ".6g")
    return str(value)


def export_table(rows: Iterable, destination, format: str = "csv",
                 columns: Optional[Sequence[str]] = None) -> None:
    """Write homogeneous records (dataclasses or dicts) as CSV.

    ``columns`` fixes the header and its order; it is required to produce a
    header for an empty table.
    """
    if format != "csv":
        raise ParameterError(f"unsupported table format {format!r}")
    records = [_row_dict(r) for r in rows]
    if columns is None:
        columns = list(records[0]) if records else []
    columns = list(columns)
    for i, rec in enumerate(records):
        if set(rec) != set(columns):
            raise ParameterError(f"row {i} has columns {sorted(rec)}, expected {sorted(columns)}")
    own = isinstance(destination, (str, os.PathLike))
    fh = open(destination, "w", newline="", encoding="utf-8") if own else destination
    try:
        writer = csv.writer(fh, lineterminator="\r\n")
        if columns:
            writer.writerow(columns)
        for rec in records:
            writer.writerow([format_cell(rec[c]) for c in columns])
    finally:
        if own:
            fh.close()


def table_to_string(rows: Iterable, columns: Optional[Sequence[str]] = None) -> str:
    buf = io.StringIO()
    export_table(rows, buf, columns=columns)
    return buf.getvalue()
