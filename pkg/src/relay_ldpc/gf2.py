"""Bit-packed GF(2) elimination and systematic encoding."""

from __future__ import annotations

import numpy as np

from .errors import RankDeficient

_WORD = 64


def pack_rows(dense: np.ndarray) -> np.ndarray:
    """uint8 0/1 matrix (m, n) -> uint64 words (m, ceil(n/64)), bit j of word w is column 64w+j."""
    dense = np.asarray(dense, dtype=np.uint8)
    m, n = dense.shape
    width = -(-n // _WORD) * _WORD
    padded = np.zeros((m, width), dtype=np.uint8)
    padded[:, :n] = dense
    return np.packbits(padded, axis=1, bitorder="little").view(np.uint64).reshape(m, -1)


def unpack_rows(words: np.ndarray, n: int) -> np.ndarray:
    bytes_ = np.ascontiguousarray(words).view(np.uint8).reshape(words.shape[0], -1)
    return np.unpackbits(bytes_, axis=1, bitorder="little")[:, :n]


def row_reduce(dense: np.ndarray):
    """Reduced row echelon form over GF(2).

    Pivot rows are chosen with the smallest original index, so the rows that
    never become pivots are exactly those dependent on earlier-chosen rows.

    Returns ``(R, pivot_cols, pivot_rows, dependent_rows)`` where R holds the
    reduced pivot rows (rank x n, uint8) in pivot-column order.
    """
    dense = np.asarray(dense, dtype=np.uint8)
    m, n = dense.shape
    words = pack_rows(dense)
    origin = np.arange(m)
    free = np.ones(m, dtype=bool)  # not yet used as pivot
    pivot_cols, pivot_rows, pivot_slots = [], [], []
    for col in range(n):
        w, b = divmod(col, _WORD)
        bit = np.uint64(1) << np.uint64(b)
        has = (words[:, w] & bit) != 0
        cand = np.flatnonzero(has & free)
        if cand.size == 0:
            continue
        slot = cand[np.argmin(origin[cand])]
        others = np.flatnonzero(has)
        others = others[others != slot]
        if others.size:
            words[others] ^= words[slot]
        free[slot] = False
        pivot_cols.append(col)
        pivot_rows.append(int(origin[slot]))
        pivot_slots.append(slot)
        if len(pivot_cols) == m:
            break
    R = unpack_rows(words[pivot_slots], n) if pivot_slots else np.zeros((0, n), np.uint8)
    dependent = sorted(int(origin[i]) for i in np.flatnonzero(free))
    return R, np.array(pivot_cols, dtype=int), np.array(pivot_rows, dtype=int), dependent


def rank(dense: np.ndarray) -> int:
    return int(row_reduce(dense)[1].size)


class SystematicEncoder:
    """Encoder for the null space of H: message bits sit on the non-pivot columns."""

    def __init__(self, dense_h: np.ndarray, required_rank: int | None = None):
        R, pivots, _, dependent = row_reduce(dense_h)
        n = dense_h.shape[1]
        if required_rank is not None and pivots.size != required_rank:
            raise RankDeficient(
                f"rank {pivots.size} below required {required_rank}; dependent rows {dependent[:8]}")
        self.n = n
        self.rank = int(pivots.size)
        self.pivot_cols = pivots
        mask = np.ones(n, dtype=bool)
        mask[pivots] = False
        self.info_cols = np.flatnonzero(mask)
        self.k = self.info_cols.size
        # parity on pivot column j equals A[j] . message
        self._A = R[:, self.info_cols].astype(np.float32)

    def encode(self, message: np.ndarray) -> np.ndarray:
        msg = np.asarray(message, dtype=np.uint8)
        if msg.shape[-1] != self.k:
            raise ValueError(f"message length {msg.shape[-1]} != {self.k}")
        flat = msg.reshape(-1, self.k)
        out = np.zeros((flat.shape[0], self.n), dtype=np.uint8)
        out[:, self.info_cols] = flat
        if self.rank:
            par = (flat.astype(np.float32) @ self._A.T).astype(np.int64) & 1
            out[:, self.pivot_cols] = par
        return out.reshape(msg.shape[:-1] + (self.n,))

    def extract(self, codeword: np.ndarray) -> np.ndarray:
        return np.asarray(codeword)[..., self.info_cols]
