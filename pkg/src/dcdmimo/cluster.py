"""In-process simulation of the feedforward decentralized architecture.

Each ``ClusterNode`` owns one block of antennas: its channel rows, its receive
noise stream and its local solver. The center node only ever sees what nodes
send it: local estimates and their variances in the uplink. In the downlink
the center sends the symbol vector ``s`` out to every node. Every transfer is
logged as a ``MessageRecord`` whose byte count follows from the element count
and the emulated precision.

Nodes may run on a thread pool. Results are always reduced in ascending
cluster order, so the fused output does not depend on scheduling.
"""

from __future__ import annotations

import csv
import io
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np

from dcdmimo.downlink import (
    BerCount,
    PrecoderConfig,
    downlink_receive_and_ber,
    local_precode,
)
from dcdmimo.model import (
    STREAM_NOISE,
    ChannelRealization,
    ClusterLayout,
    Constellation,
    awgn,
    demodulate_hard,
    modulate,
    qam,
    rng,
)
from dcdmimo.numerics import DimensionError, PrecisionMode, dotu, vecnorm2
from dcdmimo.uplink import DetectorConfig, fuse, fusion_for, local_detect

UP = "cluster->center"
DOWN = "center->cluster"
Direction = Literal["cluster->center", "center->cluster"]

# payloads allowed on the interconnect; channel matrices and raw antenna
# samples never leave a node
PAYLOADS = {"xhat": True, "sigma2": False, "s": True}

CSV_COLUMNS = ("direction", "cluster_id", "subcarrier", "elements", "bytes",
               "precision", "payload")


@dataclass(frozen=True)
class MessageRecord:
    """One transfer between a cluster and the center node.

    ``elements`` counts complex scalars for complex payloads (``xhat``, ``s``)
    and real scalars for ``sigma2``.
    """

    direction: Direction
    cluster_id: int
    subcarrier: int
    elements: int
    bytes: int
    precision: str
    payload: str = "xhat"


def message_bytes(elements: int, precision: PrecisionMode, payload: str) -> int:
    if payload not in PAYLOADS:
        raise ValueError(f"payload {payload!r} may not cross a cluster boundary")
    per = precision.bytes_per_complex if PAYLOADS[payload] else precision.bytes_per_real
    return elements * per


class MessageLog:
    def __init__(self):
        self.records: list[MessageRecord] = []

    def send(self, direction: Direction, cluster_id: int, subcarriers: int,
             elements: int, precision: PrecisionMode, payload: str) -> None:
        """Log one message per subcarrier."""
        nbytes = message_bytes(elements, precision, payload)
        self.records.extend(
            MessageRecord(direction, cluster_id, k, elements, nbytes,
                          precision.format, payload)
            for k in range(subcarriers)
        )

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


@dataclass
class Batch:
    """A batch of ``S`` subcarriers sharing one configuration."""

    H: np.ndarray
    bits: np.ndarray

    def __post_init__(self):
        if self.bits.ndim != 2 or self.bits.shape[0] < 1:
            raise ValueError("bits must be a non-empty (S, n_bits) array")
        S = self.bits.shape[0]
        if self.H.ndim == 2:
            self.H = np.broadcast_to(self.H, (S,) + self.H.shape)
        if self.H.shape[0] != S:
            raise DimensionError(
                f"channel batch {self.H.shape[0]} != {S} subcarriers"
            )

    @property
    def subcarriers(self) -> int:
        return self.bits.shape[0]


@dataclass
class ClusterNode:
    """One antenna cluster with private channel state."""

    cluster_id: int
    H_ul: np.ndarray
    stream: int
    elapsed: float = 0.0

    def receive(self, x, N0: float, seed) -> np.ndarray:
        """Local antenna samples ``H_c x + n_c`` (never leaves the node)."""
        clean = dotu(self.H_ul, np.asarray(x)[..., None, :])
        return awgn(clean, N0, rng(seed, STREAM_NOISE, self.stream))

    def detect(self, y_c, config: DetectorConfig):
        t0 = time.perf_counter()
        x_c, var = local_detect(self.H_ul, y_c, config)
        residual = vecnorm2(y_c - dotu(self.H_ul, x_c[..., None, :]))
        self.elapsed = time.perf_counter() - t0
        return x_c, var, residual

    def precode(self, s, rho_c: float, config: PrecoderConfig):
        t0 = time.perf_counter()
        H_dl = np.conj(np.swapaxes(self.H_ul, -1, -2))
        x_c = local_precode(H_dl, s, rho_c, config.T_max, config.precision)
        self.elapsed = time.perf_counter() - t0
        return x_c


def make_nodes(layout: ClusterLayout, H) -> list[ClusterNode]:
    H = np.asarray(H)
    if H.shape[-2] != layout.total_antennas:
        raise DimensionError(
            f"channel has {H.shape[-2]} rows, layout has {layout.total_antennas}"
        )
    return [
        ClusterNode(c, np.ascontiguousarray(H[..., sl, :]), stream=c)
        for c, sl in enumerate(layout.slices())
    ]


def _run_nodes(nodes, fn, workers: int):
    if workers <= 1:
        return [fn(node) for node in nodes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, nodes))


@dataclass
class TransmissionReport:
    bits: int
    errors: int
    total_antennas: int
    clusters: int
    subcarriers: int
    message_bytes: int
    residual_norms: np.ndarray | None = None
    flagged: int = 0
    cluster_seconds: list[float] = field(default_factory=list)

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else 0.0


@dataclass
class UplinkRound:
    xhat: np.ndarray
    records: list[MessageRecord]
    report: TransmissionReport


@dataclass
class DownlinkRound:
    report: TransmissionReport
    records: list[MessageRecord]
    x: np.ndarray
    ber: BerCount


def _batch(channel: ChannelRealization, tx_bits, S: int) -> Batch:
    bits = np.asarray(tx_bits)
    if bits.ndim == 1:
        bits = bits[None, :]
    if bits.shape[0] != S:
        raise DimensionError(f"tx_bits has {bits.shape[0]} rows for S={S}")
    return Batch(H=np.asarray(channel.H), bits=bits)


def run_uplink_round(
    layout: ClusterLayout,
    channel: ChannelRealization,
    tx_bits,
    config: DetectorConfig,
    S: int,
    constellation: Constellation | None = None,
    seed: int = 0,
    workers: int = 1,
) -> UplinkRound:
    """Simulate one uplink batch end to end.

    UEs modulate ``tx_bits`` (``(S, U * bits_per_symbol)``), every node
    receives its own noisy samples and runs the local CD detector, and the
    center fuses the forwarded estimates.
    """
    constellation = constellation or qam(16)
    if S < 1:
        raise ValueError("need at least one subcarrier")
    batch = _batch(channel, tx_bits, S)
    x = modulate(batch.bits, constellation)
    if x.shape[-1] != batch.H.shape[-1]:
        raise DimensionError("bits do not match the number of users")
    nodes = make_nodes(layout, batch.H)
    log = MessageLog()
    prec = config.precision

    def work(node: ClusterNode):
        try:
            y_c = node.receive(x, config.N0, seed)
            return node.detect(y_c, config)
        except Exception as exc:
            raise RuntimeError(f"cluster {node.cluster_id}: {exc}") from exc

    results = _run_nodes(nodes, work, workers)
    U = x.shape[-1]
    for node, (_, var, _) in zip(nodes, results):
        log.send(UP, node.cluster_id, S, U, prec, "xhat")
        if var is not None:
            log.send(UP, node.cluster_id, S, 1, prec, "sigma2")
    estimates = [r[0] for r in results]
    weights = fusion_for(config, [r[1] for r in results], len(nodes), (S,))
    xhat = fuse(estimates, weights)
    errors = int(np.sum(demodulate_hard(xhat, constellation) != batch.bits))
    report = TransmissionReport(
        bits=batch.bits.size,
        errors=errors,
        total_antennas=layout.total_antennas,
        clusters=layout.cluster_count,
        subcarriers=S,
        message_bytes=sum(r.bytes for r in log),
        residual_norms=np.array([np.mean(r[2]) for r in results]),
        cluster_seconds=[n.elapsed for n in nodes],
    )
    return UplinkRound(xhat=xhat, records=log.records, report=report)


def run_downlink_round(
    layout: ClusterLayout,
    channel: ChannelRealization,
    tx_bits,
    config: PrecoderConfig,
    S: int,
    N0: float = 0.0,
    constellation: Constellation | None = None,
    seed: int = 0,
    workers: int = 1,
) -> DownlinkRound:
    """Simulate one downlink batch: broadcast, local precoding, UE reception."""
    constellation = constellation or qam(16)
    if S < 1:
        raise ValueError("need at least one subcarrier")
    batch = _batch(channel, tx_bits, S)
    s = modulate(batch.bits, constellation)
    U = s.shape[-1]
    if U != batch.H.shape[-1]:
        raise DimensionError("bits do not match the number of users")
    for c, b in enumerate(layout.cluster_sizes):
        if b < U:
            raise ValueError(
                f"cluster {c} has {b} antennas for {U} users; "
                "local zero-forcing is infeasible"
            )
    nodes = make_nodes(layout, batch.H)
    log = MessageLog()
    prec = config.precision
    s_sent = prec.message(s)
    for node in nodes:
        log.send(DOWN, node.cluster_id, S, U, prec, "s")
    rho_c = config.rho / np.sqrt(len(nodes))

    def work(node: ClusterNode):
        try:
            return node.precode(s_sent, rho_c, config)
        except Exception as exc:
            raise RuntimeError(f"cluster {node.cluster_id}: {exc}") from exc

    blocks = _run_nodes(nodes, work, workers)
    xfull = np.concatenate(blocks, axis=-1)
    H_dl = np.conj(np.swapaxes(batch.H, -1, -2))
    _, count = downlink_receive_and_ber(
        H_dl, xfull, s, N0, constellation,
        rng(seed, STREAM_NOISE, layout.cluster_count), bits=batch.bits,
    )
    report = TransmissionReport(
        bits=batch.bits.size,
        errors=count.total_errors,
        total_antennas=layout.total_antennas,
        clusters=layout.cluster_count,
        subcarriers=S,
        message_bytes=sum(r.bytes for r in log),
        flagged=int(np.sum(count.flagged)),
        cluster_seconds=[n.elapsed for n in nodes],
    )
    return DownlinkRound(report=report, records=log.records, x=xfull, ber=count)


@dataclass
class GroupTotal:
    messages: int = 0
    elements: int = 0
    bytes: int = 0
    precision: str | None = None


@dataclass
class InterconnectSummary:
    groups: dict[tuple[str, str], GroupTotal]
    baseline_bytes: int | None = None

    def total_bytes(self, direction: str | None = None) -> int:
        return sum(g.bytes for (d, _), g in self.groups.items()
                   if direction is None or d == direction)

    def payload_bytes(self, direction: str, payload: str) -> int:
        g = self.groups.get((direction, payload))
        return g.bytes if g else 0

    @property
    def fusion_to_raw_ratio(self) -> float | None:
        """Uplink estimate bytes relative to forwarding raw antenna samples."""
        if not self.baseline_bytes:
            return None
        return self.payload_bytes(UP, "xhat") / self.baseline_bytes


def interconnect_summary(
    records: Iterable[MessageRecord],
    total_antennas: int | None = None,
    subcarriers: int | None = None,
) -> InterconnectSummary:
    """Aggregate message counts and bytes per (direction, payload).

    With ``total_antennas`` and ``subcarriers`` the summary also carries the
    byte count of a centralized design that forwards every antenna sample.
    """
    groups: dict[tuple[str, str], GroupTotal] = defaultdict(GroupTotal)
    for r in records:
        g = groups[(r.direction, r.payload)]
        if g.precision is None:
            g.precision = r.precision
        elif g.precision != r.precision:
            raise ValueError(
                f"mixed precisions {g.precision!r} and {r.precision!r} in "
                f"group {(r.direction, r.payload)}"
            )
        g.messages += 1
        g.elements += r.elements
        g.bytes += r.bytes
    baseline = None
    if total_antennas is not None and subcarriers is not None:
        fmts = {g.precision for g in groups.values()}
        if len(fmts) > 1:
            raise ValueError("baseline needs a single precision across groups")
        fmt = fmts.pop() if fmts else "fp64"
        baseline = total_antennas * subcarriers * PrecisionMode(fmt).bytes_per_complex
    return InterconnectSummary(groups=dict(groups), baseline_bytes=baseline)


def write_message_log(records: Iterable[MessageRecord], dest=None) -> str | None:
    """Write records as CSV to ``dest`` (path or file); return text if None."""
    buf = io.StringIO() if dest is None else None
    fh = buf
    close = False
    if dest is not None:
        if hasattr(dest, "write"):
            fh = dest
        else:
            fh = open(dest, "w", newline="")
            close = True
    w = csv.writer(fh)
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([r.direction, r.cluster_id, r.subcarrier, r.elements,
                    r.bytes, r.precision, r.payload])
    if close:
        fh.close()
    return buf.getvalue() if buf is not None else None
