"""Compiled inner loops for the fp64 coordinate-descent solvers.

These mirror the NumPy reference loops in ``uplink.cd_sweeps`` and
``downlink.cd_precode_sweeps`` operation for operation, with strictly
sequential accumulation. They are used when no intermediate rounding is
requested.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def cd_detect_kernel(cols, y, m, n, T):
    # cols: (S, U, B) channel columns; y: (S, B); m, n: (S, U)
    S, U, B = cols.shape
    x = np.zeros((S, U), dtype=np.complex128)
    r = np.empty(B, dtype=np.complex128)
    for s in range(S):
        for b in range(B):
            r[b] = y[s, b]
        for _ in range(T):
            for u in range(U):
                acc = 0j
                for b in range(B):
                    acc += np.conj(cols[s, u, b]) * r[b]
                x_new = m[s, u] * acc + n[s, u] * x[s, u]
                dx = x_new - x[s, u]
                for b in range(B):
                    r[b] = r[b] - cols[s, u, b] * dx
                x[s, u] = x_new
    return x


@njit(cache=True)
def cd_precode_kernel(rows, sbar, T):
    # rows: (S, U, B) unit-norm downlink rows; sbar: (S, U)
    S, U, B = rows.shape
    x = np.zeros((S, B), dtype=np.complex128)
    for s in range(S):
        for _ in range(T):
            for u in range(U):
                acc = 0j
                for b in range(B):
                    acc += rows[s, u, b] * x[s, b]
                e = acc - sbar[s, u]
                for b in range(B):
                    x[s, b] = x[s, b] - e * np.conj(rows[s, u, b])
    return x
