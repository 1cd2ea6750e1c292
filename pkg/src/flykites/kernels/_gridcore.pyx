# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled grid kernels: ray-cast sensing, LOS, A*, Dijkstra distance fields.

Mirrors flykites.kernels.pyfallback exactly (same costs, same tie-breaking);
only faster.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY
from libc.stdlib cimport malloc, free, realloc

cnp.import_array()

cdef int UNKNOWN = 0
cdef int FREE = 1
cdef int OCCUPIED = 2

cdef double SQRT2 = sqrt(2.0)

cdef int MOVE_DX[8]
cdef int MOVE_DY[8]
cdef double MOVE_COST[8]
MOVE_DX[0] = 1;  MOVE_DY[0] = 0;  MOVE_COST[0] = 1.0
MOVE_DX[1] = -1; MOVE_DY[1] = 0;  MOVE_COST[1] = 1.0
MOVE_DX[2] = 0;  MOVE_DY[2] = 1;  MOVE_COST[2] = 1.0
MOVE_DX[3] = 0;  MOVE_DY[3] = -1; MOVE_COST[3] = 1.0
MOVE_DX[4] = 1;  MOVE_DY[4] = 1;  MOVE_COST[4] = SQRT2
MOVE_DX[5] = 1;  MOVE_DY[5] = -1; MOVE_COST[5] = SQRT2
MOVE_DX[6] = -1; MOVE_DY[6] = 1;  MOVE_COST[6] = SQRT2
MOVE_DX[7] = -1; MOVE_DY[7] = -1; MOVE_COST[7] = SQRT2


def line_cells(int ax, int ay, int bx, int by):
    """Cells on the Bresenham traversal from (ax, ay) to (bx, by), endpoints included."""
    cdef list cells = []
    cdef int dx = abs(bx - ax)
    cdef int dy = abs(by - ay)
    cdef int sx = 1 if ax < bx else -1
    cdef int sy = 1 if ay < by else -1
    cdef int err = dx - dy
    cdef int x = ax, y = ay, e2
    while True:
        cells.append((x, y))
        if x == bx and y == by:
            return cells
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy


def los(cnp.uint8_t[:, ::1] cells, int ax, int ay, int bx, int by, bint unknown_blocks=True):
    """True iff no cell on the Bresenham traversal (endpoints included) blocks the segment."""
    cdef int h = cells.shape[0], w = cells.shape[1]
    cdef int dx = abs(bx - ax)
    cdef int dy = abs(by - ay)
    cdef int sx = 1 if ax < bx else -1
    cdef int sy = 1 if ay < by else -1
    cdef int err = dx - dy
    cdef int x = ax, y = ay, e2
    cdef int v
    while True:
        if x < 0 or x >= w or y < 0 or y >= h:
            return False
        v = cells[y, x]
        if v == OCCUPIED or (unknown_blocks and v == UNKNOWN):
            return False
        if x == bx and y == by:
            return True
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy


cdef inline bint _ray_clear(cnp.uint8_t[:, ::1] truth, int ax, int ay, int bx, int by) nogil:
    # True if no Occupied cell lies strictly between (ax, ay) and (bx, by)
    cdef int dx = abs(bx - ax)
    cdef int dy = abs(by - ay)
    cdef int sx = 1 if ax < bx else -1
    cdef int sy = 1 if ay < by else -1
    cdef int err = dx - dy
    cdef int x = ax, y = ay, e2
    while True:
        if x == bx and y == by:
            return True
        if truth[y, x] == OCCUPIED:
            return False
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy


def reveal(cnp.uint8_t[:, ::1] local, cnp.uint8_t[:, ::1] truth,
           double px, double py, double range_m, double resolution,
           double ox, double oy):
    """Copy every truth cell visible by ray casting within range_m of (px, py) into local."""
    cdef int h = truth.shape[0], w = truth.shape[1]
    cdef int cx0 = <int>((px - ox) // resolution)
    cdef int cy0 = <int>((py - oy) // resolution)
    cdef int r_cells = <int>(range_m / resolution) + 1
    cdef int changed = 0
    cdef int cx, cy, ylo, yhi, xlo, xhi
    cdef double ccx, ccy, r2 = range_m * range_m
    ylo = cy0 - r_cells
    if ylo < 0: ylo = 0
    yhi = cy0 + r_cells + 1
    if yhi > h: yhi = h
    xlo = cx0 - r_cells
    if xlo < 0: xlo = 0
    xhi = cx0 + r_cells + 1
    if xhi > w: xhi = w
    for cy in range(ylo, yhi):
        for cx in range(xlo, xhi):
            ccx = ox + (cx + 0.5) * resolution
            ccy = oy + (cy + 0.5) * resolution
            if (ccx - px) * (ccx - px) + (ccy - py) * (ccy - py) > r2:
                continue
            if local[cy, cx] != UNKNOWN:
                continue
            if _ray_clear(truth, cx0, cy0, cx, cy):
                local[cy, cx] = truth[cy, cx]
                changed += 1
    return changed


def visible_mask(cnp.uint8_t[:, ::1] truth, double px, double py,
                 double range_m, double resolution, double ox, double oy):
    """Boolean mask of cells a reveal() call from this pose would make known."""
    local = np.zeros((truth.shape[0], truth.shape[1]), dtype=np.uint8)
    reveal(local, truth, px, py, range_m, resolution, ox, oy)
    return np.asarray(local) != UNKNOWN


# -- binary heap on (f, h, idx) triples --------------------------------------

cdef struct HeapItem:
    double f
    double h
    int idx

cdef inline bint _less(HeapItem a, HeapItem b) nogil:
    if a.f != b.f:
        return a.f < b.f
    if a.h != b.h:
        return a.h < b.h
    return a.idx < b.idx

cdef struct Heap:
    HeapItem* items
    int size
    int cap

cdef inline void heap_push(Heap* hp, double f, double h, int idx) nogil:
    cdef int i, p
    cdef HeapItem tmp
    if hp.size == hp.cap:
        hp.cap *= 2
        hp.items = <HeapItem*>realloc(hp.items, hp.cap * sizeof(HeapItem))
    hp.items[hp.size].f = f
    hp.items[hp.size].h = h
    hp.items[hp.size].idx = idx
    i = hp.size
    hp.size += 1
    while i > 0:
        p = (i - 1) // 2
        if _less(hp.items[i], hp.items[p]):
            tmp = hp.items[i]; hp.items[i] = hp.items[p]; hp.items[p] = tmp
            i = p
        else:
            break

cdef inline HeapItem heap_pop(Heap* hp) nogil:
    cdef HeapItem top = hp.items[0]
    cdef int i = 0, l, r, m
    cdef HeapItem tmp
    hp.size -= 1
    hp.items[0] = hp.items[hp.size]
    while True:
        l = 2 * i + 1
        r = l + 1
        m = i
        if l < hp.size and _less(hp.items[l], hp.items[m]):
            m = l
        if r < hp.size and _less(hp.items[r], hp.items[m]):
            m = r
        if m == i:
            return top
        tmp = hp.items[i]; hp.items[i] = hp.items[m]; hp.items[m] = tmp
        i = m

cdef inline bint _diag_ok(cnp.uint8_t[:, ::1] cells, int x, int y, int nx, int ny) nogil:
    if nx == x or ny == y:
        return True
    return cells[y, nx] == FREE and cells[ny, x] == FREE


def astar(cnp.uint8_t[:, ::1] cells, int sx, int sy, int gx, int gy):
    """Min-cost 8-connected path over Free cells, or None; matches pyfallback.astar."""
    cdef int h = cells.shape[0], w = cells.shape[1]
    if cells[sy, sx] != FREE or cells[gy, gx] != FREE:
        return None
    if sx == gx and sy == gy:
        return [(sx, sy)]
    cdef int n = w * h
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g_arr = np.full(n, np.inf)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] parent_arr = np.full(n, -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] closed_arr = np.zeros(n, dtype=np.uint8)
    cdef double[::1] g = g_arr
    cdef int[::1] parent = parent_arr
    cdef cnp.uint8_t[::1] closed = closed_arr

    cdef Heap hp
    hp.cap = 1024
    hp.size = 0
    hp.items = <HeapItem*>malloc(hp.cap * sizeof(HeapItem))

    cdef double adx = abs(sx - gx), ady = abs(sy - gy)
    cdef double h0 = (adx + ady) + (SQRT2 - 2.0) * (adx if adx < ady else ady)
    g[sy * w + sx] = 0.0
    heap_push(&hp, h0, h0, sy * w + sx)

    cdef HeapItem it
    cdef int x, y, nx, ny, k, idx, nidx
    cdef double gxy, ng, hn, ddx, ddy
    try:
        while hp.size > 0:
            it = heap_pop(&hp)
            idx = it.idx
            if closed[idx]:
                continue
            x = idx % w
            y = idx // w
            if x == gx and y == gy:
                path = []
                while idx != -1:
                    path.append((idx % w, idx // w))
                    idx = parent[idx]
                path.reverse()
                return path
            closed[idx] = 1
            gxy = g[idx]
            for k in range(8):
                nx = x + MOVE_DX[k]
                ny = y + MOVE_DY[k]
                if nx < 0 or nx >= w or ny < 0 or ny >= h:
                    continue
                if cells[ny, nx] != FREE or not _diag_ok(cells, x, y, nx, ny):
                    continue
                nidx = ny * w + nx
                ng = gxy + MOVE_COST[k]
                if ng < g[nidx] - 1e-12:
                    g[nidx] = ng
                    parent[nidx] = idx
                    ddx = abs(nx - gx)
                    ddy = abs(ny - gy)
                    hn = (ddx + ddy) + (SQRT2 - 2.0) * (ddx if ddx < ddy else ddy)
                    heap_push(&hp, ng + hn, hn, nidx)
        return None
    finally:
        free(hp.items)


def distance_field(cnp.uint8_t[:, ::1] cells, int sx, int sy):
    """Dijkstra cost-to-reach (in cell units) from (sx, sy) over Free cells; inf elsewhere."""
    cdef int h = cells.shape[0], w = cells.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dist_arr = np.full((h, w), np.inf)
    cdef double[:, ::1] dist = dist_arr
    if sx < 0 or sx >= w or sy < 0 or sy >= h or cells[sy, sx] != FREE:
        return dist_arr
    cdef Heap hp
    hp.cap = 1024
    hp.size = 0
    hp.items = <HeapItem*>malloc(hp.cap * sizeof(HeapItem))
    dist[sy, sx] = 0.0
    heap_push(&hp, 0.0, 0.0, sy * w + sx)
    cdef HeapItem it
    cdef int x, y, nx, ny, k
    cdef double d, nd
    try:
        while hp.size > 0:
            it = heap_pop(&hp)
            x = it.idx % w
            y = it.idx // w
            d = it.f
            if d > dist[y, x] + 1e-12:
                continue
            for k in range(8):
                nx = x + MOVE_DX[k]
                ny = y + MOVE_DY[k]
                if nx < 0 or nx >= w or ny < 0 or ny >= h:
                    continue
                if cells[ny, nx] != FREE or not _diag_ok(cells, x, y, nx, ny):
                    continue
                nd = d + MOVE_COST[k]
                if nd < dist[ny, nx] - 1e-12:
                    dist[ny, nx] = nd
                    heap_push(&hp, nd, 0.0, ny * w + nx)
        return dist_arr
    finally:
        free(hp.items)
