import numpy as np
import pytest

from bimamba.blocks import BlockSpec
from bimamba.errors import ConfigError, DomainError
from bimamba.mamba import MambaConfig
from bimamba.profiling import (
    TIMED_MIXERS,
    CostReport,
    count_macs,
    fit_slope,
    macs_walk,
    mixer_macs,
    time_scaling,
    write_cost_csv,
)


class TestMixerMacs:
    def test_mhsa_closed_form(self):
        assert mixer_macs("mhsa", 128, 32) == 4 * 128 * 32**2 + 2 * 128**2 * 32

    def test_mamba_scan_work_is_linear_in_length(self):
        cfg = MambaConfig(d=16, e_f=2, n=8)
        one = mixer_macs("mamba", 64, 16, cfg)
        two = mixer_macs("mamba", 128, 16, cfg)
        assert two == 2 * one

    def test_ext_minus_inn_is_one_projection_ledger(self):
        cfg = MambaConfig(d=16, e_f=2, n=8)
        length = 96
        ext = mixer_macs("ext_bimamba", length, 16, cfg)
        inn = mixer_macs("inn_bimamba", length, 16, cfg)
        assert ext - inn == length * 3 * 16 * cfg.e

    def test_unknown_mixer_rejected(self):
        with pytest.raises(ConfigError):
            mixer_macs("gru", 64, 16)

    def test_quadratic_attention_ratio_grows(self):
        cfg = MambaConfig(d=32, e_f=2, n=16)
        ratios = [
            mixer_macs("mhsa", length, 32) / mixer_macs("mamba", length, 32, cfg)
            for length in (256, 512, 1024, 2048)
        ]
        assert all(b > a for a, b in zip(ratios, ratios[1:]))


class TestLedgerMatchesWalk:
    @pytest.mark.parametrize("mixer", TIMED_MIXERS)
    def test_transformer_ledger_equals_instrumented_walk(self, mixer):
        cfg = MambaConfig(d=12, e_f=2, n=6, d_conv=3)
        spec = BlockSpec(kind="transformer", mixer=mixer,
                         causal=(mixer == "mamba"), d=12, n_heads=3, d_ff=24)
        for length in (5, 33):
            assert macs_walk(spec, cfg, length) == count_macs(spec, cfg, length)

    @pytest.mark.parametrize("mixer", TIMED_MIXERS)
    def test_conformer_ledger_equals_instrumented_walk(self, mixer):
        cfg = MambaConfig(d=12, e_f=2, n=6, d_conv=3)
        spec = BlockSpec(kind="conformer", mixer=mixer,
                         causal=(mixer == "mamba"), d=12, n_heads=3, d_ff=24,
                         conv_kernel=7)
        for length in (5, 33):
            assert macs_walk(spec, cfg, length) == count_macs(spec, cfg, length)

    def test_block_ledger_includes_shell(self):
        cfg = MambaConfig(d=12, e_f=2, n=6)
        spec = BlockSpec(kind="transformer", mixer="mamba", causal=True,
                         d=12, d_ff=48)
        total = count_macs(spec, cfg, 40)
        assert total == mixer_macs("mamba", 40, 12, cfg) + 2 * 40 * 12 * 48

    def test_conformer_shell_terms(self):
        cfg = MambaConfig(d=12, e_f=2, n=6)
        spec = BlockSpec(kind="conformer", mixer="ext_bimamba", causal=False,
                         d=12, d_ff=48, conv_kernel=7)
        total = count_macs(spec, cfg, 40)
        ffn = 2 * 40 * 12 * 48
        conv = 40 * (2 * 12**2 + 12 * 7 + 12**2)
        assert total == mixer_macs("ext_bimamba", 40, 12, cfg) + 2 * ffn + conv


class TestFitSlope:
    def test_exact_power_law_recovered(self):
        points = [(float(2**k), 3.0 * float(2**k) ** 1.5) for k in range(4, 9)]
        slope, r2 = fit_slope(points)
        assert abs(slope - 1.5) < 1e-12
        assert abs(r2 - 1.0) < 1e-12

    def test_too_few_points_rejected(self):
        with pytest.raises(DomainError):
            fit_slope([(1.0, 1.0), (2.0, 2.0), (4.0, 4.0)])

    def test_nonpositive_rejected(self):
        with pytest.raises(DomainError):
            fit_slope([(1.0, 1.0), (2.0, 0.0), (4.0, 4.0), (8.0, 8.0)])


class TestTimeScaling:
    def test_rows_slopes_and_csv(self, tmp_path):
        cfg = MambaConfig(d=8, e_f=2, n=4)
        report = time_scaling(("mhsa", "mamba"), (32, 48, 64, 96), d=8,
                              n_heads=2, cfg=cfg, reps=5, warmups=1)
        assert isinstance(report, CostReport)
        main_rows = [r for r in report.rows if r.slope_group != "extra"]
        assert len(main_rows) == 8
        extra = [r for r in report.rows if r.slope_group == "extra"]
        assert {r.mixer for r in extra} == {"scan_sequential", "scan_parallel"}
        for mixer in ("mhsa", "mamba"):
            rows = [r for r in main_rows if r.mixer == mixer]
            assert [r.length for r in rows] == [32, 48, 64, 96]
            assert all(r.wall_ms > 0 for r in rows)
            assert mixer in report.slopes

        path = tmp_path / "cost.csv"
        write_cost_csv(report, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "mixer,L,macs,wall_ms,reps,slope_group"
        assert len(lines) == 1 + len(report.rows)

    def test_lengths_must_ascend(self):
        with pytest.raises(ConfigError):
            time_scaling(("mamba",), (64, 32, 128, 256), d=8)

    def test_needs_at_least_four_lengths(self):
        with pytest.raises(ConfigError):
            time_scaling(("mamba",), (32, 64, 128), d=8)
