"""Index arithmetic shared by both kernel backends."""
import numpy as np

MODE_ZERO = 0
MODE_CIRCULAR = 1
MODE_REFLECT = 2
MODE_REPLICATE = 3

MODE_CODES = {
    "zero": MODE_ZERO,
    "circular": MODE_CIRCULAR,
    "reflect": MODE_REFLECT,
    "replicate": MODE_REPLICATE,
}

# CRC-64/XZ (ECMA-182 polynomial, reflected)
CRC64_POLY = 0xC96C5795D7870F42


def group_offsets(s, d):
    """Displacement of channel group ``g`` for shift size ``s`` and dilation ``d``."""
    half = s // 2
    return [(g - half) * d for g in range(s)]


def source_index(i, L, mode):
    """Map a (possibly out-of-range) position onto the input axis of length ``L``.

    Returns -1 when the position falls in zero padding.
    """
    if 0 <= i < L:
        return i
    if mode == MODE_ZERO:
        return -1
    if mode == MODE_CIRCULAR:
        return i % L
    if mode == MODE_REPLICATE:
        return 0 if i < 0 else L - 1
    # reflect, edge excluded; caller guarantees |overhang| < L
    return -i if i < 0 else 2 * (L - 1) - i


def crc64_table():
    table = np.zeros(256, dtype=np.uint64)
    for n in range(256):
        c = n
        for _ in range(8):
            c = (c >> 1) ^ CRC64_POLY if c & 1 else c >> 1
        table[n] = c
    return table
