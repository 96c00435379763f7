"""Column-major run-length masks in the bundle wire form.

The format contract with the consuming engine: counts run column-major
starting with the zero count, compressed to ASCII with 5 data bits per
character (offset 48, bit 0x20 continues, counts after the third stored
as deltas against the count two back).
"""

from __future__ import annotations

import numpy as np


def encode_counts(arr: np.ndarray) -> list[int]:
    flat = (np.asarray(arr) != 0).ravel(order="F")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def counts_to_string(counts: list[int]) -> str:
    chars: list[str] = []
    for i, count in enumerate(counts):
        x = count - counts[i - 2] if i > 2 else count
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            chars.append(chr(c + 48))
    return "".join(chars)


def mask_to_wire(arr: np.ndarray) -> dict:
    h, w = arr.shape
    return {"size": [int(h), int(w)], "counts": counts_to_string(encode_counts(arr))}


def string_to_counts(text: str) -> list[int]:
    counts: list[int] = []
    pos = 0
    while pos < len(text):
        x = 0
        k = 0
        more = True
        while more:
            c = ord(text[pos]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            pos += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def wire_to_mask(wire: dict) -> np.ndarray:
    h, w = wire["size"]
    counts = string_to_counts(wire["counts"])
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    if flat.size != h * w:
        raise ValueError("run counts do not cover the mask")
    return flat.reshape((h, w), order="F")
