"""Deterministic JSONL trace serialization shared by the engine and validator."""

from __future__ import annotations

import json

SCHEMA_VERSION = 1


def rounded(obj, ndigits: int = 4):
    """Round every float in a nested structure so output bytes are stable."""
    if isinstance(obj, float):
        v = round(obj, ndigits)
        return 0.0 if v == 0 else v  # avoid -0.0
    if isinstance(obj, dict):
        return {k: rounded(v, ndigits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v, ndigits) for v in obj]
    return obj


def encode_line(record: dict) -> str:
    return json.dumps(rounded(record), sort_keys=True, separators=(",", ":"))


class TraceWriter:
    """Appends one JSON object per line; keeps counts for quick stats."""

    def __init__(self, path=None):
        self.path = path
        self._fh = open(path, "w") if path else None
        self.lines = [] if path is None else None
        self.count = 0

    def emit(self, record: dict):
        line = encode_line(record)
        if self._fh is not None:
            self._fh.write(line + "\n")
        else:
            self.lines.append(line)
        self.count += 1

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def text(self) -> str:
        if self.lines is None:
            with open(self.path) as f:
                return f.read()
        return "\n".join(self.lines) + ("\n" if self.lines else "")


def read_trace(source):
    """Yield records from a path, text blob, or iterable of lines."""
    if isinstance(source, str) and "\n" not in source:
        with open(source) as f:
            for line in f:
                if line.strip():
                    yield json.loads(line)
        return
    lines = source.splitlines() if isinstance(source, str) else source
    for line in lines:
        if line.strip():
            yield json.loads(line)
