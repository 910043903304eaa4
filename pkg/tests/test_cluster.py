import csv
import io

import numpy as np
import pytest

from dcdmimo.cluster import (
    CSV_COLUMNS,
    DOWN,
    UP,
    MessageRecord,
    interconnect_summary,
    message_bytes,
    run_downlink_round,
    run_uplink_round,
    write_message_log,
)
from dcdmimo.downlink import PrecoderConfig
from dcdmimo.model import ClusterLayout, gen_rayleigh, rng
from dcdmimo.numerics import PrecisionMode
from dcdmimo.uplink import DetectorConfig

FP16 = PrecisionMode("fp16")
FP32 = PrecisionMode("fp32")


def _setup(C=4, Bc=32, U=8, S=1, order_bits=4, seed=1):
    layout = ClusterLayout.uniform(C, Bc)
    ch = gen_rayleigh(C * Bc, U, seed=seed, layout=layout, batch=(S,))
    bits = rng(seed, 2).integers(0, 2, size=(S, U * order_bits), dtype=np.uint8)
    return layout, ch, bits


class TestMessageBytes:
    @pytest.mark.parametrize("prec,expected", [(PrecisionMode("fp64"), 128), (FP32, 64), (FP16, 32)])
    def test_complex_estimate(self, prec, expected):
        assert message_bytes(8, prec, "xhat") == expected

    def test_real_variance(self):
        assert message_bytes(1, FP16, "sigma2") == 2
        assert message_bytes(1, FP32, "sigma2") == 4

    def test_raw_samples_refused(self):
        with pytest.raises(ValueError):
            message_bytes(32, FP32, "y")


class TestUplinkRound:
    def test_noiseless_converged_is_error_free(self):
        layout, ch, bits = _setup(S=5)
        cfg = DetectorConfig(N0=0.0, T_max=200, fusion="uniform")
        out = run_uplink_round(layout, ch, bits, cfg, S=5)
        assert out.report.errors == 0
        assert out.report.ber == 0.0

    @pytest.mark.parametrize("prec,expected", [(FP32, 307_200), (FP16, 153_600)])
    def test_estimate_bytes(self, prec, expected):
        S = 1200
        layout, ch, bits = _setup(S=S)
        out = run_uplink_round(layout, ch, bits, DetectorConfig(N0=0.1, precision=prec), S=S)
        summary = interconnect_summary(out.records)
        assert summary.payload_bytes(UP, "xhat") == expected
        assert summary.groups[(UP, "xhat")].elements == 4 * S * 8
        assert summary.payload_bytes(UP, "sigma2") == 4 * S * prec.bytes_per_real
        assert summary.total_bytes(DOWN) == 0

    def test_uniform_fusion_sends_no_variance(self):
        layout, ch, bits = _setup(S=3)
        out = run_uplink_round(layout, ch, bits, DetectorConfig(0.1, fusion="uniform"), S=3)
        assert {r.payload for r in out.records} == {"xhat"}

    @pytest.mark.parametrize("C", [1, 4, 8])
    def test_estimate_elements_scale_with_clusters(self, C):
        S = 7
        layout, ch, bits = _setup(C=C, Bc=16, S=S)
        out = run_uplink_round(layout, ch, bits, DetectorConfig(0.1), S=S)
        summary = interconnect_summary(out.records)
        assert summary.groups[(UP, "xhat")].elements == C * S * 8

    def test_more_clusters_same_antennas(self):
        S = 10
        reports = []
        for C in (4, 8):
            layout, ch, bits = _setup(C=C, Bc=128 // C, S=S)
            reports.append(run_uplink_round(layout, ch, bits, DetectorConfig(0.2), S=S).report)
        r4, r8 = reports
        assert r4.total_antennas == r8.total_antennas == 128
        assert r8.message_bytes == 2 * r4.message_bytes
        assert len(r8.cluster_seconds) == 8
        assert r4.residual_norms.shape == (4,)

    def test_threads_do_not_change_result(self):
        layout, ch, bits = _setup(S=20)
        cfg = DetectorConfig(0.3)
        a = run_uplink_round(layout, ch, bits, cfg, S=20, seed=5, workers=1)
        b = run_uplink_round(layout, ch, bits, cfg, S=20, seed=5, workers=4)
        assert a.xhat.tobytes() == b.xhat.tobytes()
        assert a.records == b.records

    def test_only_allowed_payloads(self):
        layout, ch, bits = _setup(S=2)
        out = run_uplink_round(layout, ch, bits, DetectorConfig(0.1), S=2)
        for r in out.records:
            assert r.payload in {"xhat", "sigma2"}
            assert r.direction == UP
            assert r.elements in (1, 8)

    def test_node_failure_names_cluster(self):
        layout, ch, bits = _setup(S=1)
        cfg = DetectorConfig(0.0, fusion="optimal")
        with pytest.raises(RuntimeError, match="cluster 0"):
            run_uplink_round(layout, ch, bits, cfg, S=1)

    def test_bits_row_mismatch(self):
        layout, ch, bits = _setup(S=2)
        with pytest.raises(ValueError):
            run_uplink_round(layout, ch, bits, DetectorConfig(0.1), S=3)


class TestDownlinkRound:
    def test_noiseless_converged_is_error_free(self):
        layout, ch, bits = _setup(S=5)
        out = run_downlink_round(layout, ch, bits, PrecoderConfig(rho=np.sqrt(8), T_max=200), S=5)
        assert out.report.errors == 0
        assert out.report.flagged == 0

    def test_broadcast_accounting(self):
        S = 12
        layout, ch, bits = _setup(S=S)
        out = run_downlink_round(layout, ch, bits, PrecoderConfig(precision=FP16), S=S, N0=0.1)
        summary = interconnect_summary(out.records)
        assert summary.total_bytes(UP) == 0
        assert summary.payload_bytes(DOWN, "s") == 4 * S * 8 * 4
        assert {r.cluster_id for r in out.records} == {0, 1, 2, 3}

    def test_power_per_subcarrier(self):
        layout, ch, bits = _setup(S=4)
        out = run_downlink_round(layout, ch, bits, PrecoderConfig(rho=3.0), S=4)
        np.testing.assert_allclose(np.linalg.norm(out.x, axis=-1), 3.0, rtol=1e-12)

    def test_infeasible_cluster(self):
        layout, ch, bits = _setup(C=4, Bc=4, S=1)
        with pytest.raises(ValueError, match="cluster 0"):
            run_downlink_round(layout, ch, bits, PrecoderConfig(), S=1)

    def test_threads_do_not_change_result(self):
        layout, ch, bits = _setup(S=6)
        cfg = PrecoderConfig(rho=2.0)
        a = run_downlink_round(layout, ch, bits, cfg, S=6, N0=0.2, workers=1)
        b = run_downlink_round(layout, ch, bits, cfg, S=6, N0=0.2, workers=3)
        assert a.x.tobytes() == b.x.tobytes()
        assert a.report.errors == b.report.errors


class TestSummary:
    def test_empty(self):
        s = interconnect_summary([])
        assert s.total_bytes() == 0
        assert s.fusion_to_raw_ratio is None

    def test_ratio_against_raw_forwarding(self):
        S = 10
        layout, ch, bits = _setup(S=S)
        out = run_uplink_round(layout, ch, bits, DetectorConfig(0.1, precision=FP32), S=S)
        s = interconnect_summary(out.records, total_antennas=128, subcarriers=S)
        assert s.baseline_bytes == 128 * S * 8
        assert s.fusion_to_raw_ratio == pytest.approx(0.25)

    def test_mixed_precision_rejected(self):
        recs = [
            MessageRecord(UP, 0, 0, 8, 64, "fp32"),
            MessageRecord(UP, 1, 0, 8, 32, "fp16"),
        ]
        with pytest.raises(ValueError, match="mixed"):
            interconnect_summary(recs)


class TestCsv:
    def test_columns_and_rows(self, tmp_path):
        layout, ch, bits = _setup(C=2, Bc=16, S=3)
        out = run_uplink_round(layout, ch, bits, DetectorConfig(0.1), S=3)
        path = tmp_path / "log.csv"
        write_message_log(out.records, path)
        rows = list(csv.reader(path.open()))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert len(rows) == 1 + len(out.records)
        first = dict(zip(rows[0], rows[1]))
        assert first["direction"] == UP and first["bytes"] == "128"

    def test_text_and_stream(self):
        recs = [MessageRecord(DOWN, 2, 5, 8, 32, "fp16", "s")]
        text = write_message_log(recs)
        buf = io.StringIO()
        assert write_message_log(recs, buf) is None
        assert buf.getvalue() == text
        assert text.splitlines()[1] == "center->cluster,2,5,8,32,fp16,s"
