"""Exact matrix algebra over canonical fractions (small dimensions)."""

from __future__ import annotations

from typing import Sequence

from .canon import ONE_RAT, ZERO, Rat


def det(a: Sequence[Sequence[Rat]]) -> Rat:
    """Determinant by cofactor expansion with memoised minors."""
    n = len(a)
    if n == 0:
        return ONE_RAT
    return _minor_det(a, tuple(range(n)), tuple(range(n)), {})


def _minor_det(a, rows: tuple, cols: tuple, memo: dict) -> Rat:
    if len(rows) == 1:
        return a[rows[0]][cols[0]]
    key = (rows, cols)
    hit = memo.get(key)
    if hit is not None:
        return hit
    r0, rest = rows[0], rows[1:]
    total = ZERO
    for pos, c in enumerate(cols):
        entry = a[r0][c]
        if entry.is_zero:
            continue
        sub = _minor_det(a, rest, cols[:pos] + cols[pos + 1:], memo)
        if sub.is_zero:
            continue
        term = entry * sub
        total = total - term if pos % 2 else total + term
    memo[key] = total
    return total


def adjugate(a: Sequence[Sequence[Rat]]) -> list[list[Rat]]:
    n = len(a)
    if n == 1:
        return [[ONE_RAT]]
    memo: dict = {}
    out = [[ZERO] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            rows = tuple(r for r in range(n) if r != j)
            cols = tuple(c for c in range(n) if c != i)
            minor = _minor_det(a, rows, cols, memo)
            out[i][j] = -minor if (i + j) % 2 else minor
    return out


def inverse(a: Sequence[Sequence[Rat]]) -> tuple[list[list[Rat]], Rat]:
    """``(inverse, determinant)``; raises ZeroDivisionError-like DomainError if singular."""
    d = det(a)
    inv_d = d.inverse()
    adj = adjugate(a)
    return [[x * inv_d for x in row] for row in adj], d


def matmul(a, b) -> list[list[Rat]]:
    n, k, m = len(a), len(b), len(b[0]) if b else 0
    out = []
    for i in range(n):
        row = []
        for j in range(m):
            acc = ZERO
            for t in range(k):
                if a[i][t].is_zero or b[t][j].is_zero:
                    continue
                acc = acc + a[i][t] * b[t][j]
            row.append(acc)
        out.append(row)
    return out
