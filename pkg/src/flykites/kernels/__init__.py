"""Grid kernel backend selection.

Prefers the compiled _gridcore extension; falls back to the pure-Python
implementation with identical semantics. `FLYKITES_PURE=1` forces the
fallback (used by the backend-equivalence tests and the benchmark).
"""

import os

from . import pyfallback

if os.environ.get("FLYKITES_PURE") == "1":
    _impl = pyfallback
    BACKEND = "python"
else:
    try:
        from . import _gridcore as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = pyfallback
        BACKEND = "python"

line_cells = _impl.line_cells
los = _impl.los
reveal = _impl.reveal
visible_mask = _impl.visible_mask
astar = _impl.astar
distance_field = _impl.distance_field
