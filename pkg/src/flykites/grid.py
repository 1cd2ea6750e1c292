"""Occupancy grids: ternary cell maps shared by sensing, planning and comms.

Cell values are UNKNOWN (0), FREE (1), OCCUPIED (2), stored row-major in a
(height, width) uint8 array. World coordinates are metric; cell (cx, cy)
covers [origin + cx*res, origin + (cx+1)*res) on each axis. In the ASCII
map format the first text line is the top row (cy = height - 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MapInconsistencyError, ScenarioError

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

_ASCII_CHARS = {UNKNOWN: "?", FREE: ".", OCCUPIED: "#"}
_ASCII_VALUES = {"?": UNKNOWN, ".": FREE, "#": OCCUPIED}


@dataclass
class OccupancyGrid:
    width: int
    height: int
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)
    cells: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.resolution <= 0:
            raise ScenarioError(f"resolution must be positive, got {self.resolution}")
        if self.cells is None:
            self.cells = np.full((self.height, self.width), UNKNOWN, dtype=np.uint8)
        else:
            self.cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
            if self.cells.shape != (self.height, self.width):
                raise ScenarioError(
                    f"cell array shape {self.cells.shape} does not match "
                    f"{self.height}x{self.width}"
                )

    # -- constructors ------------------------------------------------------

    @classmethod
    def blank(cls, width, height, resolution, origin=(0.0, 0.0), fill=UNKNOWN):
        g = cls(width, height, resolution, origin)
        g.cells.fill(fill)
        return g

    @classmethod
    def from_ascii(cls, text: str) -> "OccupancyGrid":
        """Parse the `W H RESOLUTION` header plus one row of symbols per line."""
        lines = text.splitlines()
        if not lines:
            raise ScenarioError("empty map file")
        header = lines[0].split()
        if len(header) != 3:
            raise ScenarioError(f"line 1: expected 'W H RESOLUTION', got {lines[0]!r}")
        try:
            w, h, res = int(header[0]), int(header[1]), float(header[2])
        except ValueError as e:
            raise ScenarioError(f"line 1: bad header value: {e}") from None
        rows = [ln for ln in lines[1:] if ln.strip() != ""]
        if len(rows) != h:
            raise ScenarioError(f"expected {h} map rows, found {len(rows)}")
        cells = np.empty((h, w), dtype=np.uint8)
        for r, line in enumerate(rows):
            if len(line) != w:
                raise ScenarioError(f"line {r + 2}: expected {w} columns, found {len(line)}")
            for c, ch in enumerate(line):
                if ch not in _ASCII_VALUES:
                    raise ScenarioError(f"line {r + 2}, column {c + 1}: bad symbol {ch!r}")
                # first text line is the top row
                cells[h - 1 - r, c] = _ASCII_VALUES[ch]
        return cls(w, h, res, (0.0, 0.0), cells)

    @classmethod
    def from_pgm(cls, data: bytes, resolution: float = 0.1) -> "OccupancyGrid":
        """Parse a P2/P5 PGM; values > 127 map to Free, the rest to Occupied."""
        magic, pos = _pgm_token(data, 0)
        if magic not in (b"P2", b"P5"):
            raise ScenarioError(f"not a P2/P5 PGM (magic {magic!r})")
        try:
            w_tok, pos = _pgm_token(data, pos)
            h_tok, pos = _pgm_token(data, pos)
            max_tok, pos = _pgm_token(data, pos)
            w, h, maxval = int(w_tok), int(h_tok), int(max_tok)
        except ValueError as e:
            raise ScenarioError(f"malformed PGM header near byte {pos}: {e}") from None
        if w <= 0 or h <= 0 or maxval <= 0 or maxval > 65535:
            raise ScenarioError(f"bad PGM dimensions/maxval {w}x{h}/{maxval}")
        if magic == b"P2":
            try:
                vals = np.array(data[pos:].split(), dtype=np.int64)
            except ValueError as e:
                raise ScenarioError(f"bad P2 sample: {e}") from None
        else:
            # exactly one whitespace byte separates the header from the raster
            dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
            raster = data[pos + 1 : pos + 1 + w * h * dtype.itemsize]
            vals = np.frombuffer(raster, dtype=dtype).astype(np.int64)
        if vals.size != w * h:
            raise ScenarioError(f"PGM raster has {vals.size} samples, expected {w * h}")
        cells = np.where(vals.reshape(h, w) > 127, FREE, OCCUPIED).astype(np.uint8)
        return cls(w, h, resolution, (0.0, 0.0), cells[::-1].copy())  # PGM row 0 is top

    @classmethod
    def load(cls, path, resolution: float = 0.1) -> "OccupancyGrid":
        with open(path, "rb") as f:
            data = f.read()
        if data[:2] in (b"P2", b"P5"):
            return cls.from_pgm(data, resolution)
        try:
            return cls.from_ascii(data.decode("utf-8"))
        except UnicodeDecodeError:
            raise ScenarioError(f"{path}: neither PGM nor ASCII map") from None

    # -- serialization -----------------------------------------------------

    def to_ascii(self) -> str:
        lines = [f"{self.width} {self.height} {self.resolution:g}"]
        for r in range(self.height - 1, -1, -1):
            lines.append("".join(_ASCII_CHARS[v] for v in self.cells[r]))
        return "\n".join(lines) + "\n"

    # -- geometry ----------------------------------------------------------

    def world_to_cell(self, p) -> tuple[int, int]:
        cx = int((p[0] - self.origin[0]) // self.resolution)
        cy = int((p[1] - self.origin[1]) // self.resolution)
        return cx, cy

    def cell_center(self, cx: int, cy: int) -> tuple[float, float]:
        return (
            self.origin[0] + (cx + 0.5) * self.resolution,
            self.origin[1] + (cy + 0.5) * self.resolution,
        )

    def in_bounds(self, cx: int, cy: int) -> bool:
        return 0 <= cx < self.width and 0 <= cy < self.height

    def at(self, cx: int, cy: int) -> int:
        return int(self.cells[cy, cx])

    def value_at(self, p) -> int:
        cx, cy = self.world_to_cell(p)
        if not self.in_bounds(cx, cy):
            return OCCUPIED
        return int(self.cells[cy, cx])

    def is_free_at(self, p) -> bool:
        return self.value_at(p) == FREE

    # -- derived -----------------------------------------------------------

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.width, self.height, self.resolution, self.origin, self.cells.copy())

    def known_count(self) -> int:
        return int(np.count_nonzero(self.cells != UNKNOWN))

    def free_count(self) -> int:
        return int(np.count_nonzero(self.cells == FREE))

    def fully_known(self) -> bool:
        return not bool((self.cells == UNKNOWN).any())

    def same_frame(self, other: "OccupancyGrid") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and abs(self.resolution - other.resolution) < 1e-12
            and self.origin == other.origin
        )


def merge(a: OccupancyGrid, b: OccupancyGrid) -> OccupancyGrid:
    """Cellwise merge of two maps sharing one frame; Unknown yields to either side."""
    if not a.same_frame(b):
        raise MapInconsistencyError("cannot merge grids with different frames")
    conflict = (a.cells != UNKNOWN) & (b.cells != UNKNOWN) & (a.cells != b.cells)
    if conflict.any():
        cy, cx = np.argwhere(conflict)[0]
        raise MapInconsistencyError(
            f"Free/Occupied conflict at cell ({cx}, {cy}); noiseless sensing forbids this"
        )
    out = a.copy()
    mask = out.cells == UNKNOWN
    out.cells[mask] = b.cells[mask]
    return out


def merge_into(dst: OccupancyGrid, src: OccupancyGrid) -> None:
    """In-place variant of merge used by the engine's data exchanges."""
    if not dst.same_frame(src):
        raise MapInconsistencyError("cannot merge grids with different frames")
    conflict = (dst.cells != UNKNOWN) & (src.cells != UNKNOWN) & (dst.cells != src.cells)
    if conflict.any():
        cy, cx = np.argwhere(conflict)[0]
        raise MapInconsistencyError(
            f"Free/Occupied conflict at cell ({cx}, {cy}); noiseless sensing forbids this"
        )
    mask = dst.cells == UNKNOWN
    dst.cells[mask] = src.cells[mask]


def _pgm_token(data: bytes, i: int) -> tuple[bytes, int]:
    """Return the next whitespace/comment-delimited PGM header token and the index just past it."""
    n = len(data)
    while i < n:
        if data[i : i + 1].isspace():
            i += 1
        elif data[i : i + 1] == b"#":
            while i < n and data[i] != 0x0A:
                i += 1
        else:
            break
    if i >= n:
        raise ScenarioError(f"truncated PGM header at byte {i}")
    j = i
    while j < n and not data[j : j + 1].isspace():
        j += 1
    return data[i:j], j
