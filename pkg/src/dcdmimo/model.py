"""MIMO system model: channels, QAM constellations, noise, SNR and clustering.

Random streams
--------------
Every random draw comes from a NumPy ``PCG64`` generator seeded through
``np.random.SeedSequence(master_seed, spawn_key=key)``. Keys are tuples of
small integers naming the purpose and position of the draw, for example
``(STREAM_CHANNEL, batch, cluster)``. Streams with different keys are
statistically independent, and a stream never depends on how many other
streams were consumed before it, so Monte Carlo trials can run in any order.

Channel file formats
--------------------
Binary (``.bin``): the 4-byte magic ``b"DCDH"``, then ``rows`` and ``cols`` as
little-endian ``uint32``, then ``rows*cols`` entries in row-major order, each
entry stored as two little-endian ``float64`` values (real, imaginary).

CSV (``.csv``): one line per matrix row with ``2*cols`` comma-separated
decimal values ``re0,im0,re1,im1,...`` written with ``repr`` precision so the
round trip is exact.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from dcdmimo.numerics import DimensionError

STREAM_CHANNEL = 1
STREAM_BITS = 2
STREAM_NOISE = 3
STREAM_INSTANCE = 4

_MAGIC = b"DCDH"


def rng(seed, *key: int) -> np.random.Generator:
    """Return the generator for stream ``key`` under ``seed``.

    ``seed`` may be an int or an existing ``Generator`` (returned unchanged
    when no key is given, for convenience in tests).
    """
    if isinstance(seed, np.random.Generator):
        if key:
            raise TypeError("cannot derive keyed streams from a Generator")
        return seed
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def complex_normal(gen: np.random.Generator, shape, variance: float = 1.0):
    """Draw i.i.d. CN(0, variance) samples."""
    z = gen.standard_normal(tuple(shape) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) * np.sqrt(variance / 2.0)


@dataclass(frozen=True)
class ClusterLayout:
    """Partition of ``B`` antennas into contiguous clusters."""

    cluster_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(b) for b in self.cluster_sizes)
        if not sizes:
            raise ValueError("layout needs at least one cluster")
        if any(b < 1 for b in sizes):
            raise ValueError(f"cluster sizes must be positive, got {sizes}")
        object.__setattr__(self, "cluster_sizes", sizes)

    @classmethod
    def uniform(cls, clusters: int, cluster_size: int) -> "ClusterLayout":
        return cls((cluster_size,) * clusters)

    @classmethod
    def from_sizes(cls, sizes: Sequence[int], total: int | None = None):
        layout = cls(tuple(sizes))
        if total is not None and layout.total_antennas != total:
            raise ValueError(
                f"cluster sizes sum to {layout.total_antennas}, expected {total}"
            )
        return layout

    @property
    def total_antennas(self) -> int:
        return sum(self.cluster_sizes)

    @property
    def cluster_count(self) -> int:
        return len(self.cluster_sizes)

    @property
    def offsets(self) -> list[int]:
        out = [0]
        for b in self.cluster_sizes:
            out.append(out[-1] + b)
        return out

    def slices(self) -> list[slice]:
        off = self.offsets
        return [slice(off[c], off[c + 1]) for c in range(self.cluster_count)]


def _gray(n: int) -> int:
    return n ^ (n >> 1)


@dataclass(frozen=True)
class Constellation:
    """Square Gray-mapped QAM constellation.

    Point ``i`` carries the label whose binary value is ``i`` (MSB first). The
    first half of the bits selects the in-phase level and the second half the
    quadrature level; each half is Gray-coded so that neighbouring levels
    differ in exactly one bit.
    """

    order: int = 16
    energy: float = 1.0
    points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.order not in (4, 16, 64, 256):
            raise ValueError(f"unsupported QAM order {self.order}")
        if self.energy <= 0:
            raise ValueError("constellation energy must be positive")
        side = self.side
        k = self.bits_per_axis
        # amplitude of the PAM level carrying Gray label g
        levels = np.empty(side)
        for pos in range(side):
            levels[_gray(pos)] = 2 * pos - (side - 1)
        scale = np.sqrt(self.energy * 3.0 / (2.0 * (self.order - 1)))
        idx = np.arange(self.order)
        pts = levels[idx >> k] + 1j * levels[idx & (side - 1)]
        object.__setattr__(self, "points", pts * scale)
        object.__setattr__(self, "_levels", levels * scale)

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.order))

    @property
    def bits_per_axis(self) -> int:
        return self.bits_per_symbol // 2

    @property
    def side(self) -> int:
        return 1 << self.bits_per_axis

    @cached_property
    def _weights(self) -> np.ndarray:
        return 1 << np.arange(self.bits_per_symbol - 1, -1, -1)

    def bits_to_indices(self, bits) -> np.ndarray:
        bits = np.asarray(bits)
        q = self.bits_per_symbol
        if bits.shape[-1] % q:
            raise ValueError(
                f"bit count {bits.shape[-1]} is not a multiple of {q}"
            )
        grouped = bits.reshape(bits.shape[:-1] + (-1, q)).astype(np.int64)
        return grouped @ self._weights

    def indices_to_bits(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        bits = (idx[..., None] >> np.arange(self.bits_per_symbol - 1, -1, -1)) & 1
        return bits.reshape(idx.shape[:-1] + (-1,)).astype(np.uint8)

    def slice_indices(self, symbols) -> np.ndarray:
        """Index of the nearest point; ties go to the lowest index.

        The grid is separable, so the nearest point is found per axis. Levels
        are scanned in label order and ``argmin`` keeps the first minimum,
        which reproduces the lowest-index rule of a full 2-D search.
        """
        y = np.asarray(symbols)
        lv = self._levels
        di = np.abs(y.real[..., None] - lv)
        dq = np.abs(y.imag[..., None] - lv)
        return (np.argmin(di, axis=-1) << self.bits_per_axis) | np.argmin(dq, axis=-1)


def qam(order: int, energy: float = 1.0) -> Constellation:
    return Constellation(order=order, energy=energy)


def modulate(bits, constellation: Constellation) -> np.ndarray:
    """Map bits (last axis) to constellation symbols."""
    return constellation.points[constellation.bits_to_indices(bits)]


def demodulate_hard(symbols, constellation: Constellation) -> np.ndarray:
    """Hard nearest-point demapping back to bits."""
    return constellation.indices_to_bits(constellation.slice_indices(symbols))


@dataclass
class ChannelRealization:
    """Uplink channel ``H`` (``B x U``, optionally batched) and its clustering."""

    H: np.ndarray
    seed: int | None
    layout: ClusterLayout

    def __post_init__(self):
        if self.H.shape[-2] != self.layout.total_antennas:
            raise DimensionError(
                f"H has {self.H.shape[-2]} rows but layout covers "
                f"{self.layout.total_antennas} antennas"
            )

    @property
    def users(self) -> int:
        return self.H.shape[-1]

    def uplink_blocks(self) -> list[np.ndarray]:
        return partition_rows(self.H, self.layout)

    def downlink_blocks(self) -> list[np.ndarray]:
        """Per-cluster downlink channels ``H_c^dl = (H_c^ul)^H``."""
        return [np.conj(np.swapaxes(Hc, -1, -2)) for Hc in self.uplink_blocks()]

    def downlink(self) -> np.ndarray:
        return np.conj(np.swapaxes(self.H, -1, -2))


def gen_rayleigh(
    B: int,
    U: int,
    seed,
    layout: ClusterLayout | None = None,
    batch: tuple[int, ...] = (),
) -> ChannelRealization:
    """i.i.d. CN(0, 1) Rayleigh channel of shape ``batch + (B, U)``."""
    if U < 1 or B < U:
        raise ValueError(f"need B >= U >= 1, got B={B}, U={U}")
    layout = layout or ClusterLayout((B,))
    if layout.total_antennas != B:
        raise ValueError("layout does not match antenna count")
    H = complex_normal(rng(seed), tuple(batch) + (B, U))
    return ChannelRealization(H=H, seed=seed if isinstance(seed, int) else None,
                              layout=layout)


def partition_rows(H, layout: ClusterLayout) -> list[np.ndarray]:
    """Split ``H`` (rows = antennas) into the contiguous per-cluster blocks."""
    H = np.asarray(H)
    if H.shape[-2] != layout.total_antennas:
        raise DimensionError(
            f"H has {H.shape[-2]} rows, layout expects {layout.total_antennas}"
        )
    return [H[..., sl, :] for sl in layout.slices()]


def awgn(v, N0: float, seed) -> np.ndarray:
    """Add i.i.d. CN(0, N0) noise to ``v``."""
    if N0 < 0:
        raise ValueError("noise variance must be nonnegative")
    v = np.asarray(v)
    if N0 == 0:
        return v.copy()
    return v + complex_normal(rng(seed), v.shape, N0)


def snr_to_n0(snr_db: float, U: int, E_x: float = 1.0) -> float:
    """Noise variance for an average per-receive-antenna SNR of ``U*E_x/N0``."""
    if U < 1 or E_x <= 0:
        raise ValueError("need U >= 1 and E_x > 0")
    return U * E_x / 10.0 ** (snr_db / 10.0)


def save_channel(path, H) -> None:
    """Write a single matrix in the binary or CSV format (chosen by suffix)."""
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim != 2:
        raise DimensionError("only single matrices can be exported")
    path = Path(path)
    rows, cols = H.shape
    if path.suffix == ".csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            for r in range(rows):
                w.writerow(
                    repr(float(p)) for z in H[r] for p in (z.real, z.imag)
                )
        return
    pairs = np.empty((rows, cols, 2), dtype="<f8")
    pairs[..., 0] = H.real
    pairs[..., 1] = H.imag
    with path.open("wb") as fh:
        fh.write(_MAGIC + struct.pack("<II", rows, cols))
        fh.write(pairs.tobytes(order="C"))


def load_channel(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        with path.open(newline="") as fh:
            rows = [[float(t) for t in line] for line in csv.reader(fh) if line]
        a = np.asarray(rows, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] % 2:
            raise ValueError(f"{path}: malformed channel CSV")
        return a[:, 0::2] + 1j * a[:, 1::2]
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a channel file")
    rows, cols = struct.unpack("<II", raw[4:12])
    body = np.frombuffer(raw, dtype="<f8", offset=12)
    if body.size != rows * cols * 2:
        raise ValueError(f"{path}: truncated channel file")
    body = body.reshape(rows, cols, 2)
    return body[..., 0] + 1j * body[..., 1]
