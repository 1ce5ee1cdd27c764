"""Slow, loop-based reference implementations used as test oracles."""

from collections import deque
from fractions import Fraction

import numpy as np


def ref_dilate(img, kernel):
    h, w = img.shape
    r = kernel // 2
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            if img[y, x]:
                for yy in range(max(0, y - r), min(h, y + r + 1)):
                    for xx in range(max(0, x - r), min(w, x + r + 1)):
                        out[yy, xx] = 1
    return out


def _nb(img, y, x):
    h, w = len(img), len(img[0])

    def at(yy, xx):
        return int(img[yy][xx]) if 0 <= yy < h and 0 <= xx < w else 0

    # P2..P9 clockwise from north
    return [at(y - 1, x), at(y - 1, x + 1), at(y, x + 1), at(y + 1, x + 1),
            at(y + 1, x), at(y + 1, x - 1), at(y, x - 1), at(y - 1, x - 1)]


def _zs_ok(img, y, x, step):
    p = _nb(img, y, x)
    b = sum(p)
    a = sum(1 for i in range(8) if p[i] == 0 and p[(i + 1) % 8] == 1)
    p2, p4, p6, p8 = p[0], p[2], p[4], p[6]
    if not (2 <= b <= 6 and a == 1):
        return False
    if step == 0:
        return p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
    return p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0


def ref_thin(img):
    """Zhang-Suen where only isolated candidates are removed in parallel.

    Candidates touching another candidate are re-tested one by one in
    raster order against the image as it is being updated.
    """
    g = [[int(v != 0) for v in row] for row in np.asarray(img)]
    h, w = len(g), len(g[0])
    while True:
        changed = False
        for step in (0, 1):
            cand = {(y, x) for y in range(h) for x in range(w) if g[y][x] and _zs_ok(g, y, x, step)}
            if not cand:
                continue
            changed = True
            clustered = []
            for y, x in sorted(cand):
                near = any((y + dy, x + dx) in cand for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx)
                if near:
                    clustered.append((y, x))
            for y, x in cand:
                if (y, x) not in clustered:
                    g[y][x] = 0
            for y, x in clustered:
                if _zs_ok(g, y, x, step):
                    g[y][x] = 0
        if not changed:
            break
    return np.array(g, dtype=np.uint8)


def flood_label(mask, conn=4):
    """BFS labelling of True cells, labels assigned in raster-scan order."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    lab = np.zeros((h, w), dtype=np.int32)
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if conn == 8:
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    n = 0
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not lab[y, x]:
                n += 1
                lab[y, x] = n
                q = deque([(y, x)])
                while q:
                    cy, cx = q.popleft()
                    for dy, dx in steps:
                        yy, xx = cy + dy, cx + dx
                        if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and not lab[yy, xx]:
                            lab[yy, xx] = n
                            q.append((yy, xx))
    return lab, n


def acf_bruteforce(series, k):
    """Lag-k autocorrelation with the T/(T-k) factor, exact rational double loop."""
    s = [Fraction(float(v)) for v in series]
    T = len(s)
    mean = sum(s) / T
    num = Fraction(0)
    for t in range(T - k):
        num += (s[t] - mean) * (s[t + k] - mean)
    den = Fraction(0)
    for t in range(T):
        den += (s[t] - mean) ** 2
    return float(T * num / ((T - k) * den))


_B32 = "0123456789bcdefghjkmnpqrstuvwxyz"


def geohash_by_hand(lat, lon, precision=8):
    """Interval halving with longitude first, five bits per character."""
    lo_lat, hi_lat = Fraction(-90), Fraction(90)
    lo_lon, hi_lon = Fraction(-180), Fraction(180)
    lat, lon = Fraction(lat), Fraction(lon)
    bits = []
    for i in range(precision * 5):
        if i % 2 == 0:
            mid = (lo_lon + hi_lon) / 2
            if lon >= mid:
                bits.append(1)
                lo_lon = mid
            else:
                bits.append(0)
                hi_lon = mid
        else:
            mid = (lo_lat + hi_lat) / 2
            if lat >= mid:
                bits.append(1)
                lo_lat = mid
            else:
                bits.append(0)
                hi_lat = mid
    out = ""
    for c in range(precision):
        v = 0
        for b in bits[5 * c : 5 * c + 5]:
            v = 2 * v + b
        out += _B32[v]
    return out
