"""Uplink equalization: exact L-MMSE, coordinate-descent L-MMSE, and fusion.

Shapes follow the uplink model ``y = H x + n``: ``H`` is ``(..., B, U)``, ``y``
is ``(..., B)`` and estimates are ``(..., U)``. Any leading axes are treated
as independent problem instances (subcarriers / Monte Carlo trials).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Literal, Sequence

import numpy as np

from dcdmimo._kernels import cd_detect_kernel
from dcdmimo.numerics import (
    FP64,
    DimensionError,
    PrecisionMode,
    dotc,
    dotu,
    hermitian_solve,
    sqnorm,
)

Fusion = Literal["optimal", "uniform"]


@dataclass(frozen=True)
class DetectorConfig:
    N0: float
    E_x: float = 1.0
    T_max: int = 3
    fusion: Fusion = "optimal"
    precision: PrecisionMode = field(default=FP64)

    def __post_init__(self):
        if self.T_max < 1:
            raise ValueError("T_max must be at least 1")
        if self.N0 < 0:
            raise ValueError("N0 must be nonnegative")
        if self.E_x <= 0:
            raise ValueError("E_x must be positive")
        if self.fusion not in ("optimal", "uniform"):
            raise ValueError(f"unknown fusion mode {self.fusion!r}")


@dataclass
class CdDetectorState:
    """Working set of one cluster's CD detector."""

    m: np.ndarray
    n: np.ndarray
    residual: np.ndarray
    x: np.ndarray
    sweep: int
    user: int


@dataclass(frozen=True)
class FusionWeights:
    weights: np.ndarray
    variances: np.ndarray | None = None


def _gram(H: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(H, -1, -2)) @ H


def _check_system(H, y):
    H = np.asarray(H, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    if H.ndim < 2:
        raise DimensionError("H must be at least two-dimensional")
    if y.shape[-1] != H.shape[-2]:
        raise DimensionError(
            f"y has length {y.shape[-1]} but H has {H.shape[-2]} rows"
        )
    return H, y


def lmmse_objective(H, y, x, N0: float, E_x: float = 1.0) -> np.ndarray:
    """``||y - Hx||^2 + (N0/E_x) ||x||^2``."""
    H, y = _check_system(H, y)
    r = y - (H @ np.asarray(x)[..., None])[..., 0]
    return sqnorm(r) + (N0 / E_x) * sqnorm(x)


def lmmse_exact(H, y, N0: float, E_x: float = 1.0) -> np.ndarray:
    """Closed-form L-MMSE estimate ``(H^H H + N0/E_x I)^{-1} H^H y``.

    Serves as the reference the CD detectors are checked against.
    """
    H, y = _check_system(H, y)
    U = H.shape[-1]
    A = _gram(H) + (N0 / E_x) * np.eye(U)
    rhs = dotc(np.swapaxes(H, -1, -2), y[..., None, :])
    return hermitian_solve(A, rhs)


def cd_sweeps(
    H,
    y,
    N0: float,
    E_x: float = 1.0,
    T_max: int = 3,
    precision: PrecisionMode = FP64,
    every_update: bool = False,
    x0=None,
) -> Iterator[CdDetectorState]:
    """Run CD detection and yield the state after every sweep.

    Each user coordinate is set to its exact minimizer of the regularized
    least-squares objective, in ascending user order, while the residual
    ``r = y - H x`` is kept up to date with a rank-one correction.

    With ``every_update`` the state is yielded after each coordinate update
    instead (``user`` names the coordinate just updated). ``x0`` overrides the
    zero starting point.
    """
    H, y = _check_system(H, y)
    if T_max < 1:
        raise ValueError("T_max must be at least 1")
    store = precision.store
    H = store(H)
    y = store(y)
    U = H.shape[-1]
    # column-major copy so each h_u is contiguous
    cols = np.ascontiguousarray(np.swapaxes(H, -1, -2))
    energy = sqnorm(cols)
    m = store(1.0 / (energy + N0 / E_x))
    n = store(m * energy)
    if x0 is None:
        x = np.zeros(H.shape[:-2] + (U,), dtype=np.complex128)
        r = y.copy()
    else:
        x = np.array(np.broadcast_to(x0, H.shape[:-2] + (U,)), dtype=np.complex128)
        r = store(y - dotu(H, x[..., None, :]))
    for t in range(1, T_max + 1):
        for u in range(U):
            h = cols[..., u, :]
            x_new = store(m[..., u] * dotc(h, r) + n[..., u] * x[..., u])
            dx = store(x_new - x[..., u])
            r = store(r - h * dx[..., None])
            x[..., u] = x_new
            if every_update:
                yield CdDetectorState(m, n, r, x.copy(), sweep=t, user=u)
        if not every_update:
            yield CdDetectorState(m, n, r, x.copy(), sweep=t, user=U - 1)


def cd_detect(
    H,
    y,
    N0: float,
    E_x: float = 1.0,
    T_max: int = 3,
    precision: PrecisionMode = FP64,
) -> np.ndarray:
    """Coordinate-descent L-MMSE estimate after ``T_max`` sweeps."""
    if precision.rounds_internally:
        state = None
        for state in cd_sweeps(H, y, N0, E_x, T_max, precision):
            pass
        return state.x
    H, y = _check_system(H, y)
    if T_max < 1:
        raise ValueError("T_max must be at least 1")
    batch = H.shape[:-2]
    B, U = H.shape[-2:]
    cols = np.ascontiguousarray(np.swapaxes(H, -1, -2)).reshape(-1, U, B)
    energy = sqnorm(cols)
    m = 1.0 / (energy + N0 / E_x)
    n = m * energy
    x = cd_detect_kernel(cols, np.ascontiguousarray(y).reshape(-1, B), m, n, int(T_max))
    return x.reshape(batch + (U,))


def post_eq_variance(H_c, N0: float, E_x: float = 1.0) -> np.ndarray:
    """Mean per-user MMSE error variance of a cluster.

    ``(1/U) trace(E_x (I + (E_x/N0) H_c^H H_c)^{-1})``.
    """
    if N0 <= 0:
        raise ValueError("post-equalization variance needs N0 > 0")
    H_c = np.asarray(H_c, dtype=np.complex128)
    U = H_c.shape[-1]
    eye = np.eye(U)
    A = eye + (E_x / N0) * _gram(H_c)
    inv = hermitian_solve(A, np.broadcast_to(eye, A.shape).copy())
    return E_x * np.real(np.trace(inv, axis1=-2, axis2=-1)) / U


def fusion_weights(variances) -> FusionWeights:
    """Inverse-variance weights over the last (cluster) axis."""
    var = np.asarray(variances, dtype=np.float64)
    if var.ndim == 0 or var.shape[-1] == 0:
        raise ValueError("need at least one cluster variance")
    if np.any(~(var > 0)):
        raise ValueError("cluster variances must be positive")
    inv = 1.0 / var
    total = np.add.accumulate(inv, axis=-1)[..., -1:]
    return FusionWeights(weights=inv / total, variances=var)


def _split_clusters(clusters):
    Hs, ys = [], []
    for H_c, y_c in clusters:
        H_c, y_c = _check_system(H_c, y_c)
        Hs.append(H_c)
        ys.append(y_c)
    if not Hs:
        raise ValueError("need at least one cluster")
    U = Hs[0].shape[-1]
    for c, H_c in enumerate(Hs):
        if H_c.shape[-1] != U:
            raise DimensionError(
                f"cluster {c} has {H_c.shape[-1]} users, expected {U}"
            )
    return Hs, ys


def fuse(estimates: Sequence[np.ndarray], weights: np.ndarray) -> np.ndarray:
    """Weighted sum of local estimates, accumulated in cluster order.

    ``weights`` has the cluster index on its last axis.
    """
    acc = weights[..., 0, None] * estimates[0]
    for c in range(1, len(estimates)):
        acc = acc + weights[..., c, None] * estimates[c]
    return acc


def local_detect(H_c, y_c, config: DetectorConfig):
    """Work done at one cluster: local CD estimate and, if needed, its variance.

    Both outputs are rounded as outgoing messages.
    """
    x_c = cd_detect(H_c, y_c, config.N0, config.E_x, config.T_max, config.precision)
    x_c = config.precision.message(x_c)
    var = None
    if config.fusion == "optimal":
        var = config.precision.message(post_eq_variance(H_c, config.N0, config.E_x))
    return x_c, var


def fusion_for(config: DetectorConfig, variances, C: int, batch_shape) -> np.ndarray:
    if config.fusion == "optimal":
        return fusion_weights(np.stack(variances, axis=-1)).weights
    return np.full(tuple(batch_shape) + (C,), 1.0 / C)


def decentralized_cd_detect(clusters, config: DetectorConfig) -> np.ndarray:
    """Feedforward decentralized CD detection.

    Parameters
    ----------
    clusters : sequence of (H_c, y_c)
        Local channel blocks ``(..., B_c, U)`` and observations ``(..., B_c)``.
    config : DetectorConfig

    Returns
    -------
    numpy.ndarray
        Fused estimate ``sum_c lambda_c x_c`` of shape ``(..., U)``.
    """
    Hs, ys = _split_clusters(clusters)
    if config.fusion == "optimal" and config.N0 <= 0:
        raise ValueError("optimal fusion needs N0 > 0; use uniform fusion")
    local = [local_detect(H_c, y_c, config) for H_c, y_c in zip(Hs, ys)]
    estimates = [x for x, _ in local]
    weights = fusion_for(
        config, [v for _, v in local], len(Hs), estimates[0].shape[:-1]
    )
    return fuse(estimates, weights)


def mf_detect_decentralized(clusters, config: DetectorConfig | None = None):
    """Decentralized matched filter.

    Each cluster forwards ``H_c^H y_c`` and its per-user column energies; the
    center sums both in cluster order and divides.
    """
    Hs, ys = _split_clusters(clusters)
    corr = None
    energy = None
    for H_c, y_c in zip(Hs, ys):
        cols = np.swapaxes(H_c, -1, -2)
        part_corr = dotc(cols, y_c[..., None, :])
        part_energy = sqnorm(cols)
        if config is not None:
            part_corr = config.precision.message(part_corr)
            part_energy = config.precision.message(part_energy)
        corr = part_corr if corr is None else corr + part_corr
        energy = part_energy if energy is None else energy + part_energy
    if np.any(energy == 0):
        raise ValueError("matched filter undefined for a zero channel column")
    return corr / energy
