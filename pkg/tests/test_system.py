import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slim.errors import AccountingError, ShapeError
from slim.model import ModelConfig
from slim.pim import DDR4_2400, BitSerialCostModel
from slim.storage import nand_preset
from slim.system import (
    BaselineConfig,
    EnergyConstants,
    PhaseTimes,
    baseline_preset,
    energy_report,
    evaluate_slim,
    model_ffn_bytes_per_token,
    nested_masks,
    pipeline_speedup_bound,
    run_baseline,
    run_pipelined,
    run_sequential,
)
from slim.trace import TraceEvent

TOY = ModelConfig(n_dec=2, dim_e=256, dim_h=512, n_heads=4, seq_len=64, seed=5)
DG, DT = DDR4_2400
CM = BitSerialCostModel()


class TestSchedulers:
    def test_sequential_arithmetic(self):
        lat, tput = run_sequential(PhaseTimes(2e-3, 3e-3), 10)
        assert lat == pytest.approx(50e-3)
        assert tput == pytest.approx(200.0)

    def test_sequential_zero_ssd(self):
        lat, _ = run_sequential(PhaseTimes(4e-3, 0.0), 7)
        assert lat == pytest.approx(28e-3)

    def test_sequential_matches_single_stream_replay(self):
        phases = PhaseTimes(1.7e-3, 2.9e-3)
        lat_seq, _ = run_sequential(phases, 25)
        lat_replay, _ = run_pipelined(phases, 25, n_streams=1)
        assert lat_replay == pytest.approx(lat_seq)

    def test_pipelined_two_three(self):
        phases = PhaseTimes(2e-3, 3e-3)
        _, tput = run_pipelined(phases, 1000)
        _, seq = run_sequential(phases, 1000)
        assert tput / seq == pytest.approx(5 / 3, rel=0.01)

    def test_balanced_pipeline_approaches_two(self):
        phases = PhaseTimes(2e-3, 2e-3)
        _, tput = run_pipelined(phases, 1000)
        _, seq = run_sequential(phases, 1000)
        assert tput / seq == pytest.approx(2.0, rel=0.01)

    def test_single_stage_no_speedup(self):
        phases = PhaseTimes(2e-3, 0.0)
        lat, _ = run_pipelined(phases, 100)
        assert lat == pytest.approx(100 * 2e-3)
        assert pipeline_speedup_bound(phases) == 1.0

    @given(st.floats(1e-5, 1e-1), st.floats(1e-5, 1e-1))
    @settings(max_examples=50, deadline=None)
    def test_speedup_formula_within_5_percent(self, td, ts):
        phases = PhaseTimes(td, ts)
        lat_p, _ = run_pipelined(phases, 100)
        lat_s, _ = run_sequential(phases, 100)
        measured = lat_s / lat_p
        ideal = pipeline_speedup_bound(phases)
        assert measured <= ideal + 1e-9
        assert abs(measured - ideal) / ideal < 0.05


class TestEnergy:
    def test_empty_trace_zeros(self):
        ledger = energy_report([], EnergyConstants())
        assert all(v == 0.0 for v in ledger.components.values())
        assert ledger.total == 0.0

    def test_linearity(self):
        ev = [TraceEvent(0, "d", "nand_read", 1000), TraceEvent(0, "c", "ch_bus", 500),
              TraceEvent(0, "p", "pe_mac", 2000), TraceEvent(0, "m", "pim_aap", 10)]
        doubled = [TraceEvent(e.time_ns, e.unit, e.event, 2 * e.bytes) for e in ev]
        a = energy_report(ev, EnergyConstants())
        b = energy_report(doubled, EnergyConstants())
        for k in a.components:
            assert b.components[k] == pytest.approx(2 * a.components[k])

    def test_conservation_exact(self):
        ev = [TraceEvent(0, "d", "nand_read", 12345), TraceEvent(0, "g", "gpu_flop", 777),
              TraceEvent(0, "h", "host_read", 31), TraceEvent(0, "x", "pcie", 9)]
        ledger = energy_report(ev, EnergyConstants())
        assert ledger.total == sum(ledger.components.values())

    def test_unknown_event_rejected(self):
        with pytest.raises(AccountingError):
            energy_report([TraceEvent(0, "u", "teleport", 1)], EnergyConstants())


class TestBaselines:
    GB = ModelConfig(n_dec=1, dim_e=4096, dim_h=87382, n_heads=32, seq_len=16,
                     seed=0)  # ~1.0737 GB of FFN weights

    def test_ssd_gpu_transfer_time(self):
        cfg = BaselineConfig("ssd_gpu", link_gbps=8.0, source_gbps=19.2, gpu_tflops=1e9)
        n_bytes = model_ffn_bytes_per_token(self.GB)
        res = run_baseline(cfg, self.GB, 0.0)
        assert res.transfer_s == pytest.approx(n_bytes / 8e9)

    def test_dram_gpu_link_bound(self):
        cfg = baseline_preset("dram_gpu")
        res = run_baseline(cfg, self.GB, 0.0)
        assert res.transfer_s == pytest.approx(model_ffn_bytes_per_token(self.GB) / 32e9)

    def test_sparsity_halves_transfer(self):
        cfg = baseline_preset("ssd_gpu")
        dense = run_baseline(cfg, self.GB, 0.0)
        half = run_baseline(cfg, self.GB, 0.5)
        assert half.transfer_s == pytest.approx(dense.transfer_s / 2)

    def test_transfer_strictly_decreasing_in_sparsity(self):
        cfg = baseline_preset("ssd_gpu")
        times = [run_baseline(cfg, self.GB, s).transfer_s for s in (0.0, 0.2, 0.4, 0.6)]
        assert all(b < a for a, b in zip(times, times[1:]))

    def test_baseline_pays_pcie_energy(self):
        res = run_baseline(baseline_preset("ssd_gpu"), self.GB, 0.0)
        assert res.energy.components["pcie"] > 0.0
        res2 = run_baseline(baseline_preset("dram_gpu"), self.GB, 0.0)
        assert res2.energy.components["host"] > 0.0

    def test_invalid_kind(self):
        with pytest.raises(ShapeError):
            BaselineConfig("tpu", 8.0, 8.0)


class TestMasks:
    def test_target_fraction(self):
        masks = nested_masks(TOY, 0.25, seed=1)
        for m in masks.values():
            assert abs(1.0 - np.mean(m) - 0.25) < 1e-9

    def test_nested_across_sparsity(self):
        lo = nested_masks(TOY, 0.25, seed=1)
        hi = nested_masks(TOY, 0.75, seed=1)
        for key in lo:
            assert np.all(~hi[key] | lo[key])  # active(hi) subset of active(lo)

    def test_deterministic(self):
        a = nested_masks(TOY, 0.5, seed=2)
        b = nested_masks(TOY, 0.5, seed=2)
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_distinct_per_layer(self):
        masks = nested_masks(TOY, 0.5, seed=3)
        assert not np.array_equal(masks[(0, 0)], masks[(1, 0)])


class TestEvaluateSlim:
    def _eval(self, **kw):
        geo, timing = nand_preset("slc", "die")
        args = dict(model=TOY, geo=geo, timing=timing, dram_geo=DG, dram_timing=DT,
                    cost_model=CM, sparsity=0.5, seed=7)
        args.update(kw)
        return evaluate_slim(**args)

    def test_deterministic_trace(self):
        a = self._eval()
        b = self._eval()
        assert a.trace == b.trace
        assert a.throughput == b.throughput

    def test_pipelined_at_least_sequential(self):
        seq = self._eval(scheduler="sequential")
        pip = self._eval(scheduler="pipelined")
        assert pip.throughput >= seq.throughput

    def test_throughput_nondecreasing_in_sparsity(self):
        prev = 0.0
        for s in (0.0, 0.25, 0.5, 0.75):
            tput = self._eval(sparsity=s).throughput
            assert tput >= prev - 1e-12
            prev = tput

    def test_energy_nonincreasing_in_sparsity(self):
        prev = None
        for s in (0.0, 0.25, 0.5, 0.75):
            e = self._eval(sparsity=s).energy.total
            if prev is not None:
                assert e <= prev + 1e-15
            prev = e

    def test_no_pcie_weight_traffic(self):
        res = self._eval()
        assert res.energy.components["pcie"] == 0.0
        assert not any(ev.event == "pcie" for ev in res.trace)
        assert res.energy.components["nand_read"] > 0.0

    def test_ledger_conservation(self):
        res = self._eval()
        assert res.energy.total == sum(res.energy.components.values())
