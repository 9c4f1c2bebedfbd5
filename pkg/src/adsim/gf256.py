"""GF(2^8) arithmetic with the 0x11d reduction polynomial.

Scalars are Python ints in [0, 255]; bulk multiplication of byte arrays by
a constant uses a 256x256 product table and ``np.take``.
"""

from __future__ import annotations

import numpy as np

POLY = 0x11D

EXP = np.zeros(512, dtype=np.int64)
LOG = np.zeros(256, dtype=np.int64)
_x = 1
for _i in range(255):
    EXP[_i] = _x
    LOG[_x] = _i
    _x <<= 1
    if _x & 0x100:
        _x ^= POLY
EXP[255:510] = EXP[:255]

MUL = np.zeros((256, 256), dtype=np.uint8)
_nz = np.arange(1, 256)
MUL[1:, 1:] = EXP[(LOG[_nz][:, None] + LOG[_nz][None, :])]


def mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return int(EXP[LOG[a] + LOG[b]])


def inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(256)")
    return int(EXP[255 - LOG[a]])


def power(a: int, e: int) -> int:
    if e == 0:
        return 1
    if a == 0:
        return 0
    return int(EXP[(LOG[a] * e) % 255])


def mat_mul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.uint8)
    B = np.asarray(B, dtype=np.uint8)
    out = np.zeros((A.shape[0], B.shape[1]), dtype=np.uint8)
    for i in range(A.shape[0]):
        acc = np.zeros(B.shape[1], dtype=np.uint8)
        for t in range(A.shape[1]):
            acc ^= MUL[A[i, t]][B[t]]
        out[i] = acc
    return out


def mat_inv(A: np.ndarray) -> np.ndarray:
    """Gauss-Jordan inverse; raises ValueError on a singular matrix."""
    A = np.array(A, dtype=np.uint8)
    n = A.shape[0]
    M = np.concatenate([A, np.eye(n, dtype=np.uint8)], axis=1)
    for col in range(n):
        piv = next((r for r in range(col, n) if M[r, col]), None)
        if piv is None:
            raise ValueError("singular matrix over GF(256)")
        if piv != col:
            M[[col, piv]] = M[[piv, col]]
        M[col] = MUL[inv(int(M[col, col]))][M[col]]
        for r in range(n):
            if r != col and M[r, col]:
                M[r] ^= MUL[M[r, col]][M[col]]
    return M[:, n:]


def vandermonde(rows: int, cols: int) -> np.ndarray:
    return np.array([[power(i, j) for j in range(cols)] for i in range(rows)], dtype=np.uint8)


def combine(coefs, blocks) -> np.ndarray:
    """XOR-sum of coef_i * block_i over equal-length uint8 blocks."""
    acc = None
    for c, blk in zip(coefs, blocks):
        c = int(c)
        if c == 0:
            continue
        term = blk if c == 1 else np.take(MUL[c], blk)
        acc = term.copy() if acc is None else np.bitwise_xor(acc, term, out=acc)
    if acc is None:
        acc = np.zeros_like(blocks[0])
    return acc
