from math import erfc, sqrt

import numpy as np
import pytest

from dcdmimo.downlink import downlink_receive_and_ber, power_scale, zf_exact
from dcdmimo.harness import (
    BerCurve,
    BerPoint,
    SweepSpec,
    bench_csv,
    ber_at_snr,
    convergence_csv,
    run_ber_sweep,
    run_convergence_study,
    run_throughput_bench,
    snr_at_ber,
)
from dcdmimo.model import awgn, demodulate_hard, modulate, qam, rng, snr_to_n0
from dcdmimo.numerics import PrecisionMode
from dcdmimo.uplink import lmmse_exact


def small(**kw):
    base = dict(users=4, cluster_size=8, clusters=2, order=4, snr_db=(0.0, 6.0, 12.0),
                t_max=(2,), min_bits=10_000, batch=500, seed=3)
    base.update(kw)
    return SweepSpec(**base)


def curve(points):
    return BerCurve("x", None, [BerPoint(s, 10**6, int(round(b * 10**6))) for s, b in points])


class TestSpec:
    def test_infeasible_downlink(self):
        with pytest.raises(ValueError, match="cluster size"):
            SweepSpec(direction="downlink", users=8, cluster_size=4)

    @pytest.mark.parametrize("kw", [
        dict(methods=("nope",)), dict(snr_db=()), dict(t_max=(0,)), dict(min_bits=100),
        dict(direction="sideways"), dict(order=8), dict(fusion="max"),
    ])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SweepSpec(**kw)

    def test_digest_tracks_content(self):
        assert small().digest() == small().digest()
        assert small().digest() != small(seed=4).digest()

    def test_default_power(self):
        assert SweepSpec(users=8).rho == pytest.approx(np.sqrt(8))


class TestBerSweep:
    def test_uplink_curves(self):
        res = run_ber_sweep(small())
        assert set(res.curves) == {"dcd@T2", "centralized-cd@T2", "exact", "mf"}
        for c in res.curves.values():
            assert len(c.points) == 3
            assert all(p.bits >= 10_000 for p in c.points)
            assert np.all(np.diff(c.ber) <= 0)
        assert res.curve("exact").ber[-1] < res.curve("exact").ber[0]

    def test_same_seed_same_csv(self):
        a = run_ber_sweep(small(direction="downlink")).to_csv()
        b = run_ber_sweep(small(direction="downlink")).to_csv()
        assert a == b
        assert a.startswith("# dcdmimo ber-sweep v1 spec_sha256=" + small(direction="downlink").digest())

    def test_different_seed_different_errors(self):
        a = run_ber_sweep(small(methods=("mf",)))
        b = run_ber_sweep(small(methods=("mf",), seed=99))
        assert a.curve("mf").ber.tolist() != b.curve("mf").ber.tolist()

    def test_exact_zf_error_free_at_high_snr(self):
        res = run_ber_sweep(small(direction="downlink", methods=("exact",), snr_db=(40.0,)))
        assert res.curve("exact").points[0].errors == 0

    def test_methods_share_noise(self):
        # converged CD equals the exact solver, so counts must agree exactly
        spec = small(methods=("centralized-cd", "exact"), t_max=(300,), snr_db=(4.0,))
        res = run_ber_sweep(spec)
        assert res.curve("centralized-cd", 300).points[0].errors == res.curve("exact").points[0].errors

    def test_max_trials_caps_bits(self):
        res = run_ber_sweep(small(methods=("mf",), max_trials=100, snr_db=(0.0,)))
        assert res.curve("mf").points[0].bits == 100 * 8

    def test_progress_callback(self):
        seen = []
        run_ber_sweep(small(methods=("mf",)), progress=seen.append)
        assert len(seen) == 3


class TestInterpolation:
    def test_snr_at_ber(self):
        c = curve([(0, 1e-1), (2, 1e-2), (4, 1e-4)])
        assert snr_at_ber(c, 1e-2) == pytest.approx(2.0)
        assert snr_at_ber(c, 1e-3) == pytest.approx(3.0)

    def test_not_bracketed(self):
        assert snr_at_ber(curve([(0, 1e-1), (2, 5e-2)]), 1e-3) is None

    def test_zero_errors_at_edge(self):
        assert snr_at_ber(curve([(0, 1e-2), (2, 0.0)]), 1e-3) == 2.0

    def test_ber_at_snr(self):
        c = curve([(0, 1e-1), (2, 1e-3)])
        assert ber_at_snr(c, 1.0) == pytest.approx(1e-2)
        with pytest.raises(ValueError):
            ber_at_snr(c, 3.0)


class TestConvergence:
    def test_median_nonincreasing_and_converges(self):
        spec = small(cluster_size=16, t_max=(200,), snr_db=(5.0,))
        rows = run_convergence_study(spec, instances=30)
        med = np.array([r.median for r in rows])
        assert len(rows) == 200
        assert np.all(np.diff(med) <= 1e-12)
        assert med[-1] < 1e-8
        assert "median_rel_dist" in convergence_csv(spec, rows)

    def test_identity_channel_converges_in_one_sweep(self):
        spec = small(users=4, cluster_size=2, clusters=2, t_max=(3,), snr_db=(10.0,))
        rows = run_convergence_study(spec, instances=5, H=np.eye(4))
        assert all(r.median < 1e-15 for r in rows)

    def test_downlink(self):
        spec = small(direction="downlink", t_max=(100,), snr_db=(0.0,))
        rows = run_convergence_study(spec, instances=10)
        assert rows[-1].p95 < 1e-6


class TestBench:
    def test_empty_workload(self):
        rows = run_throughput_bench(small(), subcarriers=0, repeats=1)
        assert rows[0].per_cluster_rate == 0.0 and rows[0].message_bytes == 0

    def test_fp16_halves_bytes(self):
        kw = dict(subcarriers=50, repeats=1)
        r32 = run_throughput_bench(small(precision=PrecisionMode("fp32")), **kw)[0]
        r16 = run_throughput_bench(small(precision=PrecisionMode("fp16")), **kw)[0]
        assert r16.message_bytes * 2 == r32.message_bytes
        assert r16.per_cluster_rate > 0

    def test_cluster_counts_and_csv(self):
        spec = small(direction="downlink")
        rows = run_throughput_bench(spec, subcarriers=20, repeats=1, cluster_counts=(1, 2))
        assert [r.clusters for r in rows] == [1, 2]
        assert rows[1].message_bytes == 2 * rows[0].message_bytes
        text = bench_csv(spec, rows)
        assert "not comparable" in text.splitlines()[2]


class TestStatisticalSanity:
    """Exact solvers on H = I reduce to QPSK over AWGN."""

    U, N = 4, 40_000

    def theory(self, N0):
        return 0.5 * erfc(sqrt(1 / (2 * N0)))

    @pytest.mark.parametrize("snr_db", [0.0, 3.0, 6.0, 9.0])
    def test_uplink_lmmse(self, snr_db):
        c = qam(4)
        N0 = snr_to_n0(snr_db, self.U, 1.0)
        bits = rng(31, 2).integers(0, 2, size=(self.N, 2 * self.U), dtype=np.uint8)
        y = awgn(modulate(bits, c), N0, seed=rng(31, 3))
        H = np.broadcast_to(np.eye(self.U, dtype=complex), (self.N, self.U, self.U))
        xhat = lmmse_exact(H, y, N0)
        p = BerPoint(snr_db, bits.size, int(np.sum(demodulate_hard(xhat, c) != bits)))
        # theory is per-axis BER with the total SNR split evenly over U users
        assert abs(p.ber - self.theory(N0)) <= 3 * p.ci95

    @pytest.mark.parametrize("snr_db", [0.0, 3.0, 6.0, 9.0])
    def test_downlink_zf(self, snr_db):
        c = qam(4)
        N0 = snr_to_n0(snr_db, self.U, 1.0)
        bits = rng(32, 2).integers(0, 2, size=(self.N, 2 * self.U), dtype=np.uint8)
        s = modulate(bits, c)
        H = np.eye(self.U, dtype=complex)
        # constant modulus keeps ||s|| = sqrt(U) = rho, so the UE gain is one
        x = power_scale(zf_exact(H, s), np.sqrt(self.U))
        _, count = downlink_receive_and_ber(H, x, s, N0, c, seed=rng(32, 3), bits=bits)
        p = BerPoint(snr_db, bits.size, count.total_errors)
        assert abs(p.ber - self.theory(N0)) <= 3 * p.ci95
