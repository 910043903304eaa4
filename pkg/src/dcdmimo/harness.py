"""Monte Carlo experiment driver: BER sweeps, convergence studies, benchmarks.

Reproducibility
---------------
Batch ``b`` of a sweep draws its channel blocks from streams
``(STREAM_CHANNEL, b, c)``, its bits from ``(STREAM_BITS, b)`` and its noise
from ``(STREAM_NOISE, b, c)`` (uplink, one per cluster) or
``(STREAM_NOISE, b, C)`` (downlink UEs), all under the master seed. Streams do
not depend on the SNR point or the method, so every method at every SNR sees
the same channels, bits and unit-variance noise (common random numbers), and
a sweep is a pure function of its spec.

SNR convention
--------------
``snr_db`` is the average receive SNR per antenna, ``U * E_x / N0``. In the
downlink the total transmit power is ``rho^2 = U * E_x`` so both directions
share the same scale. Absolute SNR values are a convention; gaps between
methods are what the experiments compare.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from dcdmimo import cluster as cl
from dcdmimo.downlink import (
    cd_precode,
    cd_precode_sweeps,
    decentralized_cd_precode,
    downlink_receive_and_ber,
    mf_precode_decentralized,
    power_scale,
    zf_exact,
    PrecoderConfig,
)
from dcdmimo.model import (
    STREAM_BITS,
    STREAM_CHANNEL,
    STREAM_INSTANCE,
    STREAM_NOISE,
    ChannelRealization,
    ClusterLayout,
    complex_normal,
    demodulate_hard,
    modulate,
    qam,
    rng,
    snr_to_n0,
)
from dcdmimo.numerics import FP64, PrecisionMode, dotu, sqnorm
from dcdmimo.uplink import (
    DetectorConfig,
    cd_detect,
    cd_sweeps,
    decentralized_cd_detect,
    lmmse_exact,
    mf_detect_decentralized,
)

CSV_VERSION = 1
METHODS = ("dcd", "centralized-cd", "exact", "mf")
ITERATIVE = ("dcd", "centralized-cd")


@dataclass(frozen=True)
class SweepSpec:
    direction: str = "uplink"
    methods: tuple[str, ...] = METHODS
    users: int = 8
    cluster_size: int = 32
    clusters: int = 4
    order: int = 16
    snr_db: tuple[float, ...] = tuple(float(v) for v in range(0, 11))
    t_max: tuple[int, ...] = (2, 3, 4)
    precision: PrecisionMode = FP64
    fusion: str = "optimal"
    min_bits: int = 1_000_000
    max_trials: int = 10_000_000
    seed: int = 0
    batch: int = 2000
    energy: float = 1.0

    def __post_init__(self):
        if self.direction not in ("uplink", "downlink"):
            raise ValueError(f"direction must be uplink or downlink, got {self.direction!r}")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValueError(f"unknown or empty methods: {sorted(bad)}")
        if not self.snr_db:
            raise ValueError("SNR grid is empty")
        if not self.t_max or min(self.t_max) < 1:
            raise ValueError("T_max list must be non-empty and positive")
        if self.min_bits < 10_000:
            raise ValueError("min_bits must be at least 10^4")
        if self.max_trials < 1 or self.batch < 1:
            raise ValueError("max_trials and batch must be positive")
        if self.users < 1 or self.cluster_size < 1 or self.clusters < 1:
            raise ValueError("users, cluster size and cluster count must be positive")
        if self.direction == "downlink" and self.cluster_size < self.users:
            raise ValueError(
                f"downlink needs cluster size >= users "
                f"({self.cluster_size} < {self.users})"
            )
        if self.direction == "uplink" and self.clusters * self.cluster_size < self.users:
            raise ValueError("uplink needs at least as many antennas as users")
        if self.fusion not in ("optimal", "uniform"):
            raise ValueError(f"unknown fusion mode {self.fusion!r}")
        qam(self.order)

    @property
    def layout(self) -> ClusterLayout:
        return ClusterLayout.uniform(self.clusters, self.cluster_size)

    @property
    def antennas(self) -> int:
        return self.clusters * self.cluster_size

    @property
    def rho(self) -> float:
        return math.sqrt(self.users * self.energy)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["precision"] = {"format": self.precision.format, "scope": self.precision.scope}
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class BerPoint:
    snr_db: float
    bits: int
    errors: int

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else 0.0

    @property
    def ci95(self) -> float:
        """Normal-approximation 95% confidence half-width."""
        if not self.bits:
            return 0.0
        p = self.ber
        return 1.96 * math.sqrt(p * (1.0 - p) / self.bits)


@dataclass
class BerCurve:
    method: str
    t_max: int | None
    points: list[BerPoint] = field(default_factory=list)

    @property
    def label(self) -> str:
        return self.method if self.t_max is None else f"{self.method}@T{self.t_max}"

    @property
    def snr(self) -> np.ndarray:
        return np.array([p.snr_db for p in self.points])

    @property
    def ber(self) -> np.ndarray:
        return np.array([p.ber for p in self.points])


def snr_at_ber(curve: BerCurve, target: float = 1e-3) -> float | None:
    """SNR where ``curve`` first falls to ``target``, log-linearly interpolated.

    Returns ``None`` if the curve never brackets the target.
    """
    snr, ber = curve.snr, curve.ber
    for i in range(len(snr) - 1):
        hi, lo = ber[i], ber[i + 1]
        if hi >= target >= lo and hi > lo:
            if lo <= 0:
                # no errors observed at the right point; treat it as the edge
                return float(snr[i + 1]) if hi != target else float(snr[i])
            frac = (math.log10(hi) - math.log10(target)) / (math.log10(hi) - math.log10(lo))
            return float(snr[i] + frac * (snr[i + 1] - snr[i]))
    return None


def ber_at_snr(curve: BerCurve, snr_db: float) -> float:
    """BER of ``curve`` at ``snr_db`` by log-linear interpolation."""
    snr, ber = curve.snr, curve.ber
    if not snr[0] <= snr_db <= snr[-1]:
        raise ValueError(f"{snr_db} dB outside the simulated grid")
    i = int(np.searchsorted(snr, snr_db, side="right")) - 1
    i = min(i, len(snr) - 2)
    frac = (snr_db - snr[i]) / (snr[i + 1] - snr[i])
    a, b = ber[i], ber[i + 1]
    if a > 0 and b > 0:
        return float(10 ** (math.log10(a) + frac * (math.log10(b) - math.log10(a))))
    return float(a + frac * (b - a))


@dataclass
class SweepResult:
    spec: SweepSpec
    curves: dict[str, BerCurve]

    def curve(self, method: str, t_max: int | None = None) -> BerCurve:
        key = method if t_max is None or method not in ITERATIVE else f"{method}@T{t_max}"
        return self.curves[key]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(
            f"# dcdmimo ber-sweep v{CSV_VERSION} spec_sha256={self.spec.digest()}\n"
        )
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["direction", "method", "t_max", "precision", "snr_db",
                    "bits", "errors", "ber", "ci95"])
        prec = f"{self.spec.precision.format}/{self.spec.precision.scope}"
        for curve in self.curves.values():
            for p in curve.points:
                w.writerow([
                    self.spec.direction, curve.method,
                    "" if curve.t_max is None else curve.t_max, prec,
                    repr(p.snr_db), p.bits, p.errors, repr(p.ber), repr(p.ci95),
                ])
        return buf.getvalue()


@dataclass
class _Draw:
    blocks: list[np.ndarray]
    bits: np.ndarray
    x: np.ndarray
    noise: list[np.ndarray]


def _draw(spec: SweepSpec, b: int, S: int, constellation) -> _Draw:
    U, Bc, C = spec.users, spec.cluster_size, spec.clusters
    blocks = [
        complex_normal(rng(spec.seed, STREAM_CHANNEL, b, c), (S, Bc, U))
        for c in range(C)
    ]
    bits = rng(spec.seed, STREAM_BITS, b).integers(
        0, 2, size=(S, U * constellation.bits_per_symbol), dtype=np.uint8
    )
    x = modulate(bits, constellation)
    if spec.direction == "uplink":
        noise = [complex_normal(rng(spec.seed, STREAM_NOISE, b, c), (S, Bc))
                 for c in range(C)]
    else:
        noise = []  # drawn at the UEs, see run_ber_sweep
    return _Draw(blocks, bits, x, noise)


def _uplink_estimates(spec: SweepSpec, d: _Draw, N0: float):
    ys = [dotu(H_c, d.x[:, None, :]) + np.sqrt(N0) * n for H_c, n in zip(d.blocks, d.noise)]
    pairs = list(zip(d.blocks, ys))
    out = {}
    H = y = None
    if {"centralized-cd", "exact"} & set(spec.methods):
        H = np.concatenate(d.blocks, axis=-2)
        y = np.concatenate(ys, axis=-1)
    for method in spec.methods:
        if method == "exact":
            out["exact"] = lmmse_exact(H, y, N0, spec.energy)
        elif method == "mf":
            out["mf"] = mf_detect_decentralized(pairs)
        else:
            for T in spec.t_max:
                if method == "dcd":
                    cfg = DetectorConfig(N0, spec.energy, T, spec.fusion, spec.precision)
                    est = decentralized_cd_detect(pairs, cfg)
                else:
                    est = cd_detect(H, y, N0, spec.energy, T, spec.precision)
                out[f"{method}@T{T}"] = est
    return out


def _downlink_beamformers(spec: SweepSpec, d: _Draw):
    dl = [np.conj(np.swapaxes(H_c, -1, -2)) for H_c in d.blocks]
    H_dl = np.concatenate(dl, axis=-1)
    out = {}
    for method in spec.methods:
        if method == "exact":
            out["exact"] = power_scale(zf_exact(H_dl, d.x), spec.rho)
        elif method == "mf":
            out["mf"] = mf_precode_decentralized(dl, d.x, spec.rho).x
        else:
            for T in spec.t_max:
                if method == "dcd":
                    x = decentralized_cd_precode(dl, d.x, spec.rho, T, spec.precision).x
                else:
                    x = power_scale(cd_precode(H_dl, d.x, T, spec.precision), spec.rho)
                out[f"{method}@T{T}"] = x
    return H_dl, out


def _curve_keys(spec: SweepSpec) -> list[tuple[str, str, int | None]]:
    keys = []
    for method in spec.methods:
        if method in ITERATIVE:
            keys.extend((f"{method}@T{T}", method, T) for T in spec.t_max)
        else:
            keys.append((method, method, None))
    return keys


def _batches(spec: SweepSpec, bits_per_trial: int) -> list[int]:
    """Subcarrier counts per batch under the min_bits / max_trials rule."""
    sizes, trials, bits = [], 0, 0
    while bits < spec.min_bits and trials < spec.max_trials:
        S = min(spec.batch, spec.max_trials - trials)
        sizes.append(S)
        trials += S
        bits += S * bits_per_trial
    return sizes


def run_ber_sweep(spec: SweepSpec, progress: Callable[[str], None] | None = None) -> SweepResult:
    """Run every (method, SNR, T_max) point of ``spec``."""
    constellation = qam(spec.order, spec.energy)
    keys = _curve_keys(spec)
    curves = {k: BerCurve(m, T) for k, m, T in keys}
    sizes = _batches(spec, spec.users * constellation.bits_per_symbol)
    for snr in spec.snr_db:
        N0 = snr_to_n0(snr, spec.users, spec.energy)
        errors = {k: 0 for k, _, _ in keys}
        nbits = 0
        for b, S in enumerate(sizes):
            d = _draw(spec, b, S, constellation)
            nbits += d.bits.size
            if spec.direction == "uplink":
                for k, est in _uplink_estimates(spec, d, N0).items():
                    errors[k] += int(np.sum(demodulate_hard(est, constellation) != d.bits))
            else:
                H_dl, xs = _downlink_beamformers(spec, d)
                for k, x in xs.items():
                    # fresh generator per method: identical UE noise for all
                    noise = rng(spec.seed, STREAM_NOISE, b, spec.clusters)
                    _, count = downlink_receive_and_ber(
                        H_dl, x, d.x, N0, constellation, noise, bits=d.bits
                    )
                    errors[k] += count.total_errors
        for k, _, _ in keys:
            curves[k].points.append(BerPoint(float(snr), nbits, errors[k]))
        if progress:
            progress(f"{spec.direction} snr={snr:g} dB bits={nbits}")
    return SweepResult(spec=spec, curves=curves)


@dataclass
class ConvergenceRow:
    snr_db: float
    t: int
    median: float
    p95: float


def run_convergence_study(
    spec: SweepSpec,
    instances: int = 200,
    H=None,
) -> list[ConvergenceRow]:
    """Relative distance of centralized CD to the exact solution per sweep.

    ``H`` optionally fixes the (uplink-orientation, ``B x U``) channel for all
    instances; by default each instance draws its own Rayleigh channel.
    """
    if instances < 1:
        raise ValueError("need at least one instance")
    U, B = spec.users, spec.antennas
    T = max(spec.t_max)
    g = rng(spec.seed, STREAM_INSTANCE)
    if H is None:
        Hb = complex_normal(g, (instances, B, U))
    else:
        Hb = np.broadcast_to(np.asarray(H, dtype=np.complex128), (instances,) + np.shape(H))
    constellation = qam(spec.order, spec.energy)
    bits = g.integers(0, 2, size=(instances, U * constellation.bits_per_symbol))
    sym = modulate(bits, constellation)
    unit = complex_normal(g, (instances, Hb.shape[-2]))
    rows = []
    for snr in spec.snr_db:
        N0 = snr_to_n0(snr, U, spec.energy)
        if spec.direction == "uplink":
            y = dotu(Hb, sym[:, None, :]) + np.sqrt(N0) * unit
            ref = lmmse_exact(Hb, y, N0, spec.energy)
            iterates = (st.x for st in cd_sweeps(Hb, y, N0, spec.energy, T, spec.precision))
        else:
            H_dl = np.conj(np.swapaxes(Hb, -1, -2))
            ref = zf_exact(H_dl, sym)
            iterates = (x for _, _, x in cd_precode_sweeps(H_dl, sym, T, spec.precision))
        ref_norm = np.sqrt(sqnorm(ref))
        for t, x in enumerate(iterates, start=1):
            dist = np.sqrt(sqnorm(x - ref)) / ref_norm
            rows.append(ConvergenceRow(float(snr), t, float(np.median(dist)),
                                       float(np.percentile(dist, 95))))
    return rows


def convergence_csv(spec: SweepSpec, rows: Sequence[ConvergenceRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# dcdmimo convergence v{CSV_VERSION} spec_sha256={spec.digest()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["direction", "snr_db", "t", "median_rel_dist", "p95_rel_dist"])
    for r in rows:
        w.writerow([spec.direction, repr(r.snr_db), r.t, repr(r.median), repr(r.p95)])
    return buf.getvalue()


@dataclass
class BenchRow:
    direction: str
    clusters: int
    antennas: int
    precision: str
    t_max: int
    subcarriers: int
    per_cluster_rate: float
    message_bytes: int
    interconnect_gbps: float
    note: str = "emulated; not comparable to GPU measurements"


def run_throughput_bench(
    spec: SweepSpec,
    subcarriers: int = 1200,
    repeats: int = 5,
    cluster_counts: Sequence[int] | None = None,
) -> list[BenchRow]:
    """Wall-clock rate of the per-cluster CD work and the interconnect load.

    ``per_cluster_rate`` is subcarriers per second of one cluster's local
    work (best of ``repeats``, median over clusters). ``interconnect_gbps`` is
    message bits over the round's wall-clock time.
    """
    rows = []
    constellation = qam(spec.order, spec.energy)
    N0 = snr_to_n0(spec.snr_db[0], spec.users, spec.energy)
    for C in cluster_counts or (spec.clusters,):
        layout = ClusterLayout.uniform(C, spec.cluster_size)
        for T in spec.t_max:
            if subcarriers < 1:
                rows.append(BenchRow(spec.direction, C, layout.total_antennas,
                                     spec.precision.format, T, 0, 0.0, 0, 0.0))
                continue
            g = rng(spec.seed, STREAM_INSTANCE, C)
            H = complex_normal(g, (subcarriers, layout.total_antennas, spec.users))
            bits = g.integers(0, 2, size=(subcarriers, spec.users * constellation.bits_per_symbol))
            channel = ChannelRealization(H=H, seed=None, layout=layout)
            best = math.inf
            best_wall = math.inf
            nbytes = 0
            for _ in range(repeats):
                t0 = time.perf_counter()
                if spec.direction == "uplink":
                    cfg = DetectorConfig(N0, spec.energy, T, spec.fusion, spec.precision)
                    rnd = cl.run_uplink_round(layout, channel, bits, cfg, subcarriers,
                                              constellation, spec.seed)
                else:
                    cfg = PrecoderConfig(spec.rho, T, spec.precision)
                    rnd = cl.run_downlink_round(layout, channel, bits, cfg, subcarriers,
                                                N0, constellation, spec.seed)
                wall = time.perf_counter() - t0
                best = min(best, float(np.median(rnd.report.cluster_seconds)))
                best_wall = min(best_wall, wall)
                nbytes = rnd.report.message_bytes
            rows.append(BenchRow(
                spec.direction, C, layout.total_antennas, spec.precision.format, T,
                subcarriers, subcarriers / best, nbytes, nbytes * 8 / best_wall / 1e9,
            ))
    return rows


def bench_csv(spec: SweepSpec, rows: Sequence[BenchRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# dcdmimo bench v{CSV_VERSION} spec_sha256={spec.digest()}\n")
    w = csv.writer(buf, lineterminator="\n")
    cols = list(BenchRow.__dataclass_fields__)
    w.writerow(cols)
    for r in rows:
        w.writerow([getattr(r, c) for c in cols])
    return buf.getvalue()
