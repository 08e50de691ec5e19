"""Brute-force integer oracles, written independently of the engines under test."""

from fractions import Fraction


def round_half_away(q: Fraction) -> int:
    n = abs(q)
    r = int(n)
    if n - r >= Fraction(1, 2):
        r += 1
    return r if q >= 0 else -r


def requant(acc: int, shift: int, width: int) -> int:
    """acc * 2**-shift, rounded half away from zero, saturated to `width` bits."""
    v = round_half_away(Fraction(acc, 1) / Fraction(2) ** shift)
    lo, hi = -(1 << (width - 1)), (1 << (width - 1)) - 1
    return max(lo, min(hi, v))


def conv(x, w, bias_acc):
    """Same-padded cross-correlation; x [c][h][w] and w [o][c][k][k] nested lists of ints."""
    c_in, h, wd = len(x), len(x[0]), len(x[0][0])
    k = len(w[0][0])
    p = k // 2
    out = []
    for o in range(len(w)):
        plane = []
        for i in range(h):
            row = []
            for j in range(wd):
                s = bias_acc[o] if bias_acc else 0
                for c in range(c_in):
                    for a in range(k):
                        for b in range(k):
                            ii, jj = i + a - p, j + b - p
                            if 0 <= ii < h and 0 <= jj < wd:
                                s += x[c][ii][jj] * w[o][c][a][b]
                row.append(s)
            plane.append(row)
        out.append(plane)
    return out


def dense(x, w, bias_acc):
    return [sum(xi * wi for xi, wi in zip(x, row)) + (bias_acc[o] if bias_acc else 0)
            for o, row in enumerate(w)]


def maxpool(x, m):
    return [[[max(x[c][i * m + a][j * m + b] for a in range(m) for b in range(m))
              for j in range(len(x[0][0]) // m)]
             for i in range(len(x[0]) // m)]
            for c in range(len(x))]
