"""Adaptive order-0 byte coder (32-bit integer arithmetic coding).

Each byte is coded with a frequency model over 256 symbols that starts
uniform and is bumped after every symbol, halving counts when the total
grows past ``_MAX_TOTAL``.
"""

from __future__ import annotations

import numpy as np

_BITS = 32
_FULL = 1 << _BITS
_HALF = _FULL >> 1
_QUARTER = _HALF >> 1
_MASK = _FULL - 1
_INC = 32
_MAX_TOTAL = 1 << 16


class _Model:
    """Fenwick tree over symbol counts."""

    def __init__(self):
        self.freq = [1] * 256
        self._build()

    def _build(self):
        self.tree = [0] * 257
        for i, f in enumerate(self.freq):
            j = i + 1
            while j <= 256:
                self.tree[j] += f
                j += j & -j
        self.total = sum(self.freq)

    def cum(self, sym):
        """Sum of counts of symbols strictly below ``sym``."""
        s, j = 0, sym
        while j > 0:
            s += self.tree[j]
            j -= j & -j
        return s

    def find(self, value):
        """Symbol whose cumulative interval contains ``value``."""
        pos, rem, step = 0, value, 256
        while step:
            nxt = pos + step
            if nxt <= 256 and self.tree[nxt] <= rem:
                pos = nxt
                rem -= self.tree[nxt]
            step >>= 1
        return pos

    def update(self, sym):
        self.freq[sym] += _INC
        self.total += _INC
        if self.total > _MAX_TOTAL:
            self.freq = [max(1, f >> 1) for f in self.freq]
            self._build()
            return
        j = sym + 1
        while j <= 256:
            self.tree[j] += _INC
            j += j & -j


def encode(data: bytes) -> bytes:
    model = _Model()
    low, high, pending = 0, _MASK, 0
    bits: list[int] = []
    for sym in data:
        rng = high - low + 1
        total = model.total
        lo = model.cum(sym)
        hi = lo + model.freq[sym]
        high = low + hi * rng // total - 1
        low = low + lo * rng // total
        while ((low ^ high) & _HALF) == 0:
            b = low >> (_BITS - 1)
            bits.append(b)
            if pending:
                bits.extend([b ^ 1] * pending)
                pending = 0
            low = (low << 1) & _MASK
            high = ((high << 1) & _MASK) | 1
        while (low & ~high & _QUARTER) != 0:
            pending += 1
            low = (low << 1) ^ _HALF
            high = ((high ^ _HALF) << 1) | _HALF | 1
        model.update(sym)
    bits.append(1)
    if pending:
        bits.extend([0] * pending)
    return np.packbits(np.array(bits, dtype=np.uint8)).tobytes()


def decode(payload: bytes, n: int) -> bytes:
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8)).tolist()
    nbits = len(bits)
    pos = 0

    def read():
        nonlocal pos
        b = bits[pos] if pos < nbits else 0
        pos += 1
        return b

    model = _Model()
    low, high = 0, _MASK
    code = 0
    for _ in range(_BITS):
        code = (code << 1) | read()
    out = bytearray()
    for _ in range(n):
        rng = high - low + 1
        total = model.total
        value = ((code - low + 1) * total - 1) // rng
        sym = model.find(value)
        lo = model.cum(sym)
        hi = lo + model.freq[sym]
        high = low + hi * rng // total - 1
        low = low + lo * rng // total
        while ((low ^ high) & _HALF) == 0:
            code = ((code << 1) & _MASK) | read()
            low = (low << 1) & _MASK
            high = ((high << 1) & _MASK) | 1
        while (low & ~high & _QUARTER) != 0:
            code = (code & _HALF) | ((code << 1) & (_MASK >> 1)) | read()
            low = (low << 1) ^ _HALF
            high = ((high ^ _HALF) << 1) | _HALF | 1
        out.append(sym)
        model.update(sym)
    return bytes(out)
