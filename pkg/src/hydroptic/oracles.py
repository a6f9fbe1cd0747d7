"""Slow scalar reference implementations used by the self-check command.

These deliberately avoid numpy linear algebra and the vectorized kernels in
:mod:`hydroptic.losses`: plain loops over Python floats.
"""

from __future__ import annotations

import math


def cosine(u, v) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return dot / (nu * nv)


def infonce_scalar(v, v_pos, v_negs, tau: float) -> float:
    logits = [cosine(v, v_pos) / tau] + [cosine(v, n) / tau for n in v_negs]
    m = max(logits)
    lse = m + math.log(sum(math.exp(z - m) for z in logits))
    return lse - logits[0]


def patchnce_bruteforce(layers_x, layers_gx, tau: float) -> float:
    total = 0.0
    for x, gx in zip(layers_x, layers_gx):
        rows_x = [list(map(float, row)) for row in x]
        rows_gx = [list(map(float, row)) for row in gx]
        for s in range(len(rows_x)):
            negs = [rows_x[j] for j in range(len(rows_x)) if j != s]
            total += infonce_scalar(rows_gx[s], rows_x[s], negs, tau)
    return total
