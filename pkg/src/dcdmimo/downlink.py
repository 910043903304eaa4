"""Downlink precoding: exact ZF, CD-based ZF, decentralized power allocation.

Downlink channels are ``(..., U, B)`` with one row per user, i.e. the
conjugate transpose of the uplink channel. Symbol vectors ``s`` are
``(..., U)`` and beamformers ``x`` are ``(..., B)``.

The CD precoder works on the dual of the min-norm ZF problem. Updating dual
coordinate ``u`` and mapping back to the primal gives

    x <- x - (hbar_u^T x - sbar_u) conj(hbar_u)

where ``hbar_u`` is row ``u`` scaled to unit norm and ``sbar_u`` is ``s_u``
scaled by the same factor. Each update zeroes the ``u``-th constraint residual
and keeps ``x`` in the row space of the channel, so the iterates converge to
the min-norm solution ``H^H (H H^H)^{-1} s``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from dcdmimo._kernels import cd_precode_kernel
from dcdmimo.model import Constellation, awgn, demodulate_hard
from dcdmimo.numerics import (
    FP64,
    DimensionError,
    PrecisionMode,
    dotc,
    dotu,
    hermitian_solve,
    sqnorm,
    vecnorm2,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PrecoderConfig:
    rho: float = 1.0
    T_max: int = 3
    precision: PrecisionMode = field(default=FP64)

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.T_max < 1:
            raise ValueError("T_max must be at least 1")


@dataclass(frozen=True)
class NormalizedRows:
    scale: np.ndarray
    rows: np.ndarray
    targets: np.ndarray


@dataclass
class PrecodeResult:
    """Precoded beamformer with its genie receive gain.

    ``gain`` is ``Re(s^H H x) / ||s||^2``, the common scale the UEs see.
    """

    x: np.ndarray
    gain: np.ndarray
    blocks: list[np.ndarray] = field(default_factory=list)


@dataclass
class BerCount:
    errors: np.ndarray
    bits: int
    flagged: np.ndarray

    @property
    def total_errors(self) -> int:
        return int(np.sum(self.errors))


def _check_downlink(H, s):
    H = np.asarray(H, dtype=np.complex128)
    s = np.asarray(s, dtype=np.complex128)
    if H.ndim < 2:
        raise DimensionError("H must be at least two-dimensional")
    if s.shape[-1] != H.shape[-2]:
        raise DimensionError(
            f"s has length {s.shape[-1]} but H has {H.shape[-2]} rows"
        )
    return H, s


def zf_exact(H, s) -> np.ndarray:
    """Minimum-norm solution of ``H x = s`` (zero-forcing beamformer)."""
    H, s = _check_downlink(H, s)
    U, B = H.shape[-2:]
    if B < U:
        raise ValueError(f"ZF needs B >= U, got B={B}, U={U}")
    HH = np.conj(np.swapaxes(H, -1, -2))
    z = hermitian_solve(H @ HH, s)
    return dotu(HH, z[..., None, :])


def normalize_rows(H, s) -> NormalizedRows:
    """Scale every row of ``H`` to unit norm and ``s`` by the same factors."""
    H, s = _check_downlink(H, s)
    norms = vecnorm2(H)
    if np.any(norms == 0):
        raise ValueError("channel has an all-zero user row")
    p = 1.0 / norms
    return NormalizedRows(scale=p, rows=H * p[..., None], targets=s * p)


def dual_objective(Hbar, sbar, z) -> np.ndarray:
    """``f(z) = 0.5 ||Hbar^H z||^2 - Re(sbar^H z)``.

    Only the real part of the linear term matters for real-valued descent on
    the complex variable.
    """
    x = dotu(np.conj(np.swapaxes(Hbar, -1, -2)), np.asarray(z)[..., None, :])
    return 0.5 * sqnorm(x) - np.real(dotc(sbar, z))


def dual_gradient(Hbar, sbar, z) -> np.ndarray:
    """Gradient ``Hbar Hbar^H z - sbar`` of the dual objective.

    Real part is the derivative along ``Re z``, imaginary part along ``Im z``.
    """
    x = dotu(np.conj(np.swapaxes(Hbar, -1, -2)), np.asarray(z)[..., None, :])
    return dotu(Hbar, x[..., None, :]) - sbar


def cd_precode_sweeps(
    H,
    s,
    T_max: int = 3,
    precision: PrecisionMode = FP64,
    every_update: bool = False,
) -> Iterator[tuple[int, int, np.ndarray]]:
    """Reference CD precoder loop.

    Yields ``(sweep, user, x)`` after every sweep (``user == U - 1``), or
    after every single coordinate update if ``every_update`` is set.
    """
    if T_max < 1:
        raise ValueError("T_max must be at least 1")
    store = precision.store
    nr = normalize_rows(store(np.asarray(H)), store(np.asarray(s)))
    rows = store(nr.rows)
    sbar = store(nr.targets)
    U, B = rows.shape[-2:]
    x = np.zeros(rows.shape[:-2] + (B,), dtype=np.complex128)
    for t in range(1, T_max + 1):
        for u in range(U):
            g = rows[..., u, :]
            e = store(dotu(g, x) - sbar[..., u])
            x = store(x - e[..., None] * np.conj(g))
            if every_update:
                yield t, u, x
        if not every_update:
            yield t, U - 1, x


def cd_precode(H, s, T_max: int = 3, precision: PrecisionMode = FP64) -> np.ndarray:
    """CD zero-forcing beamformer after ``T_max`` sweeps, before power scaling."""
    if T_max < 1:
        raise ValueError("T_max must be at least 1")
    if precision.rounds_internally:
        x = None
        for _, _, x in cd_precode_sweeps(H, s, T_max, precision):
            pass
        return x
    nr = normalize_rows(H, s)
    batch = nr.rows.shape[:-2]
    U, B = nr.rows.shape[-2:]
    x = cd_precode_kernel(
        np.ascontiguousarray(nr.rows).reshape(-1, U, B),
        np.ascontiguousarray(nr.targets).reshape(-1, U),
        int(T_max),
    )
    return x.reshape(batch + (B,))


def power_scale(x, rho: float) -> np.ndarray:
    """Rescale ``x`` to norm ``rho``."""
    x = np.asarray(x, dtype=np.complex128)
    norm = vecnorm2(x)
    if np.any(norm == 0):
        raise ValueError("cannot power-scale a zero beamformer")
    return x * (rho / norm)[..., None]


def receive_gain(H, x, s) -> np.ndarray:
    """Genie UE gain ``Re(s^H H x) / ||s||^2``."""
    H, s = _check_downlink(H, s)
    Hx = dotu(H, np.asarray(x)[..., None, :])
    return np.real(dotc(s, Hx)) / sqnorm(s)


def _cluster_gain(blocks, Hs, s):
    Hx = dotu(Hs[0], blocks[0][..., None, :])
    for H_c, x_c in zip(Hs[1:], blocks[1:]):
        Hx = Hx + dotu(H_c, x_c[..., None, :])
    return np.real(dotc(s, Hx)) / sqnorm(s)


def _check_clusters(clusters: Sequence, s):
    Hs = [np.asarray(H_c, dtype=np.complex128) for H_c in clusters]
    if not Hs:
        raise ValueError("need at least one cluster")
    s = np.asarray(s, dtype=np.complex128)
    U = s.shape[-1]
    for c, H_c in enumerate(Hs):
        if H_c.shape[-2] != U:
            raise DimensionError(f"cluster {c} has {H_c.shape[-2]} users, expected {U}")
    return Hs, s


def local_precode(H_c, s_local, rho_c: float, T_max: int, precision: PrecisionMode):
    """Work done at one cluster: CD precode then scale to ``rho_c``."""
    x_c = cd_precode(H_c, s_local, T_max, precision)
    return precision.store(power_scale(x_c, rho_c))


def decentralized_cd_precode(
    clusters: Sequence,
    s,
    rho: float,
    T_max: int = 3,
    precision: PrecisionMode = FP64,
) -> PrecodeResult:
    """Feedforward decentralized ZF precoding with equal per-cluster power.

    ``s`` is broadcast to every cluster, each cluster solves its local ZF
    problem by CD and scales to ``rho / sqrt(C)``, and the blocks are stacked.
    """
    Hs, s = _check_clusters(clusters, s)
    U = s.shape[-1]
    for c, H_c in enumerate(Hs):
        if H_c.shape[-1] < U:
            raise ValueError(
                f"cluster {c} has {H_c.shape[-1]} antennas for {U} users; "
                "local zero-forcing is infeasible"
            )
    C = len(Hs)
    rho_c = rho / np.sqrt(C)
    s_local = precision.message(s)
    blocks = [local_precode(H_c, s_local, rho_c, T_max, precision) for H_c in Hs]
    return PrecodeResult(
        x=np.concatenate(blocks, axis=-1),
        gain=_cluster_gain(blocks, Hs, s),
        blocks=blocks,
    )


def mf_precode_decentralized(clusters: Sequence, s, rho: float) -> PrecodeResult:
    """Per-cluster matched filter ``H_c^H s`` at power ``rho^2 / C``."""
    Hs, s = _check_clusters(clusters, s)
    C = len(Hs)
    blocks = []
    for c, H_c in enumerate(Hs):
        if not np.any(H_c):
            raise ValueError(f"cluster {c} has an all-zero channel")
        x_c = dotc(np.swapaxes(H_c, -1, -2), s[..., None, :])
        blocks.append(power_scale(x_c, rho / np.sqrt(C)))
    return PrecodeResult(
        x=np.concatenate(blocks, axis=-1),
        gain=_cluster_gain(blocks, Hs, s),
        blocks=blocks,
    )


def downlink_receive_and_ber(
    H,
    x,
    s,
    N0: float,
    constellation: Constellation,
    seed,
    bits=None,
):
    """Pass ``x`` through the downlink channel and count UE bit errors.

    UEs divide by the genie gain ``beta = Re(s^H H x) / ||s||^2`` before hard
    demapping. Instances with ``beta <= 0`` are flagged and charged half of
    their bits as errors.

    Returns
    -------
    y : numpy.ndarray
        Noisy UE receive vector ``H x + n``.
    count : BerCount
        Per-instance error counts, bits per instance and flags.
    """
    H, s = _check_downlink(H, s)
    x = np.asarray(x, dtype=np.complex128)
    if x.shape[-1] != H.shape[-1]:
        raise DimensionError(f"x has length {x.shape[-1]}, H has {H.shape[-1]} columns")
    if bits is None:
        bits = demodulate_hard(s, constellation)
    bits = np.asarray(bits)
    Hx = dotu(H, x[..., None, :])
    beta = np.real(dotc(s, Hx)) / sqnorm(s)
    y = awgn(Hx, N0, seed)
    flagged = ~(beta > 0)
    safe_beta = np.where(flagged, 1.0, beta)
    s_hat = y / np.asarray(safe_beta)[..., None]
    errors = np.sum(demodulate_hard(s_hat, constellation) != bits, axis=-1)
    n_bits = bits.shape[-1]
    if np.any(flagged):
        log.warning("%d instance(s) with nonpositive receive gain", int(np.sum(flagged)))
        errors = np.where(flagged, n_bits // 2, errors)
    return y, BerCount(errors=np.asarray(errors), bits=n_bits, flagged=np.asarray(flagged))
