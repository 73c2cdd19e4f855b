"""End-to-end acceptance gate.

One test per shipped guarantee, each finishing with a single PASS line
(printed to stderr so it survives pytest's capture) stating the measured
quantity against its tolerance. Run with ``pytest tests/test_acceptance.py -v``.
"""

import json
import sys
import time

import numpy as np
import pytest

from bimamba.bidirectional import (
    init_ext_bimamba,
    init_inn_bimamba,
    param_count,
)
from bimamba.cli import dispatch
from bimamba.experiments import (
    BoundaryConfig,
    DenoiseConfig,
    report_core_bytes,
    run_boundary_experiment,
    run_denoise_experiment,
)
from bimamba.mamba import MambaConfig, init_mamba
from bimamba.profiling import mixer_macs, time_scaling
from bimamba.stft import interior, istft, stft
from bimamba.verification import (
    gradient_suite,
    lti_equivalence_suite,
    reversal_suite,
    scan_equivalence_suite,
)


def report(line: str) -> None:
    print(line, file=sys.stderr)


class TestCriterion01ScanEquivalence:
    def test_parallel_matches_sequential(self):
        t0 = time.perf_counter()
        out = scan_equivalence_suite(seed=0, n_instances=100, tol=1e-10)
        wall = time.perf_counter() - t0
        ok = out["passed"] and wall < 60.0
        report(f"[criterion 1] {'PASS' if ok else 'FAIL'}: scan equivalence "
               f"max|diff| {out['max_abs_diff']:.3e} < 1e-10 over "
               f"{out['n_instances']} instances, chunks {out['chunks']} "
               f"({wall:.1f}s < 60s)")
        assert out["passed"]
        assert wall < 60.0


class TestCriterion02LtiEquivalence:
    def test_convolution_matches_recurrence(self):
        t0 = time.perf_counter()
        out = lti_equivalence_suite(seed=0, n_instances=50, tol=1e-8)
        wall = time.perf_counter() - t0
        ok = out["passed"]
        report(f"[criterion 2] {'PASS' if ok else 'FAIL'}: LTI kernel vs "
               f"recurrence max|diff| {out['max_abs_diff']:.3e} < 1e-8 over "
               f"50 instances ({wall:.1f}s)")
        assert ok


class TestCriterion03GradientSuite:
    def test_all_ops_and_layers(self):
        t0 = time.perf_counter()
        out = gradient_suite(seed=0, num_coords=200, eps=1e-4, tol=1e-5)
        wall = time.perf_counter() - t0
        ok = out["passed"] and wall < 300.0
        report(f"[criterion 3] {'PASS' if ok else 'FAIL'}: finite-difference "
               f"checks on {len(out['cases'])} cases (every op + mamba/inn/ext "
               f"layers), max rel err {out['max_rel_err']:.3e} < 1e-5 "
               f"({wall:.1f}s < 300s)")
        assert out["passed"]
        assert wall < 300.0


class TestCriterion04ReversalSymmetry:
    def test_direction_swap_equivariance(self):
        out = reversal_suite(seed=0, n_instances=50, tol=1e-10)
        ok = out["passed"]
        report(f"[criterion 4] {'PASS' if ok else 'FAIL'}: direction-swap "
               f"equivariance max|diff| {out['max_abs_diff']:.3e} < 1e-10 "
               f"over 50 instances of both bidirectional variants")
        assert ok


class TestCriterion05ParameterLedgers:
    def test_ledgers_match_enumeration_and_order(self):
        inits = {"mamba": init_mamba, "inn_bimamba": init_inn_bimamba,
                 "ext_bimamba": init_ext_bimamba}
        checked = 0
        for d, e_f, n, d_conv, r in [(8, 2, 4, 4, 16), (12, 3, 6, 3, 4),
                                     (32, 2, 16, 4, 16), (7, 2, 5, 2, 3)]:
            cfg = MambaConfig(d=d, e_f=e_f, n=n, d_conv=d_conv, r=r)
            counts = {}
            for variant, init in inits.items():
                ledger = param_count(variant, cfg)
                enumerated = sum(v.value.size
                                 for v in init(cfg, seed=checked).named().values())
                assert ledger == enumerated, (variant, cfg)
                counts[variant] = ledger
                checked += 1
            assert counts["ext_bimamba"] > counts["inn_bimamba"] > counts["mamba"]
        report(f"[criterion 5] PASS: param_count == tensor enumeration for "
               f"{checked} variant/config pairs; ext > inn > unidirectional "
               f"ordering holds on all 4 configs")


class TestCriterion06ComplexityScaling:
    def test_walltime_slopes_and_macs_ratio(self):
        lengths = (1024, 2048, 4096, 8192, 16384)
        cfg = MambaConfig(d=32, e_f=2, n=16)
        t0 = time.perf_counter()
        out = time_scaling(("mhsa", "mamba"), lengths, d=32, n_heads=1,
                           cfg=cfg, seed=0, reps=5, warmups=2)
        wall = time.perf_counter() - t0
        mhsa_slope = out.slopes["mhsa"]["slope"]
        mamba_slope = out.slopes["mamba"]["slope"]
        ratios = [mixer_macs("mhsa", length, 32)
                  / mixer_macs("mamba", length, 32, cfg) for length in lengths]
        increasing = all(b > a for a, b in zip(ratios, ratios[1:]))
        ok = (1.7 <= mhsa_slope <= 2.3 and 0.8 <= mamba_slope <= 1.3
              and increasing and wall < 600.0)
        report(f"[criterion 6] {'PASS' if ok else 'FAIL'}: wall-time slope "
               f"mhsa {mhsa_slope:.2f} in [1.7,2.3], mamba {mamba_slope:.2f} "
               f"in [0.8,1.3]; MACs ratio {ratios[0]:.1f}->{ratios[-1]:.1f} "
               f"strictly increasing: {increasing} ({wall:.0f}s < 600s)")
        assert 1.7 <= mhsa_slope <= 2.3
        assert 0.8 <= mamba_slope <= 1.3
        assert increasing
        assert wall < 600.0


class TestCriterion07DecisionBoundary:
    def test_gaussians_and_spiral_gap(self, tmp_path):
        t0 = time.perf_counter()
        gauss = {}
        for with_ffn in (False, True):
            cfg = BoundaryConfig(kind="gaussians", with_ffn=with_ffn)
            rep = run_boundary_experiment(
                cfg, seed=0, out_dir=tmp_path / f"gauss_{with_ffn}")
            gauss[with_ffn] = rep["metrics"]["test_acc"]

        gaps = []
        for seed in range(5):
            accs = {}
            for with_ffn in (False, True):
                cfg = BoundaryConfig(kind="spirals", with_ffn=with_ffn)
                rep = run_boundary_experiment(
                    cfg, seed=seed, out_dir=tmp_path / f"sp_{seed}_{with_ffn}")
                accs[with_ffn] = rep["metrics"]["test_acc"]
            gaps.append(accs[True] - accs[False])
        median_gap = float(np.median(gaps))
        wall = time.perf_counter() - t0
        ok = (gauss[False] >= 0.95 and gauss[True] >= 0.95
              and median_gap >= 0.10 and wall < 600.0)
        report(f"[criterion 7] {'PASS' if ok else 'FAIL'}: gaussians acc "
               f"{gauss[False]:.3f}/{gauss[True]:.3f} >= 0.95; spiral "
               f"FFN-head gap median {median_gap:+.3f} >= +0.10 over 5 seeds "
               f"({wall:.0f}s < 600s)")
        assert gauss[False] >= 0.95 and gauss[True] >= 0.95
        assert median_gap >= 0.10
        assert wall < 600.0


class TestCriterion08DenoiserOrdering:
    def test_noncausal_at_least_matches_causal(self, tmp_path):
        t0 = time.perf_counter()
        rep = run_denoise_experiment(DenoiseConfig(), seed=0,
                                     out_dir=tmp_path / "denoise")
        wall = time.perf_counter() - t0
        m = rep["metrics"]
        ext = m["per_mixer"]["ext_bimamba"]["improvement_db"]
        mam = m["per_mixer"]["mamba"]["improvement_db"]
        ok = (m["budget_ok"] and ext >= mam - 0.3 and ext > 5.0 and mam > 5.0
              and wall < 1200.0)
        report(f"[criterion 8] {'PASS' if ok else 'FAIL'}: matched budgets "
               f"+-5% {m['budget_ok']}; ext {ext:+.2f} dB >= mamba "
               f"{mam:+.2f} dB - 0.3; both > 5 dB at 0 dB input SNR "
               f"({wall:.0f}s < 1200s)")
        assert m["budget_ok"]
        assert ext >= mam - 0.3
        assert ext > 5.0 and mam > 5.0
        assert wall < 1200.0


class TestCriterion09StftRoundTrip:
    def test_interior_reconstruction(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(1024, 16001))
            x = rng.standard_normal(n)
            spec = stft(x)
            y = istft(spec)
            sl = interior(spec.shape[0])
            worst = max(worst, float(np.max(np.abs(y[sl] - x[sl]))))
        ok = worst < 1e-8
        report(f"[criterion 9] {'PASS' if ok else 'FAIL'}: STFT interior "
               f"round-trip max|err| {worst:.3e} < 1e-8 over 100 random "
               f"signals")
        assert ok


class TestCriterion10CliDeterminism:
    def test_every_command_reports_identically(self, tmp_path):
        boundary_cfg = tmp_path / "boundary.json"
        boundary_cfg.write_text(json.dumps(
            {"schema_version": 1, "kind": "gaussians", "n": 40, "epochs": 3,
             "d": 4, "n_state": 2, "grid_res": 8}))
        denoise_cfg = tmp_path / "denoise.json"
        denoise_cfg.write_text(json.dumps(
            {"schema_version": 1, "mixers": ["mamba"], "d": 16,
             "d_ff_mhsa": 8, "n_train": 2, "n_test": 1, "steps": 2,
             "dur_s": 0.5, "budget_tol": 1.0}))
        bench_cfg = tmp_path / "bench.json"
        bench_cfg.write_text(json.dumps(
            {"schema_version": 1, "mixers": ["mamba"],
             "lengths": [32, 48, 64, 96], "d": 8, "n_heads": 1}))
        param_cfg = tmp_path / "param.json"
        param_cfg.write_text(json.dumps(
            {"schema_version": 1, "variant": "ext_bimamba", "d": 12}))

        runs = {
            "gradcheck": ["gradcheck", "--seed", "1"],
            "equiv": ["equiv", "--seed", "1"],
            "bench": ["bench", "--config", str(bench_cfg), "--seed", "1"],
            "boundary": ["boundary", "--config", str(boundary_cfg),
                         "--seed", "1"],
            "denoise": ["denoise", "--config", str(denoise_cfg),
                        "--seed", "1"],
            "paramcount": ["paramcount", "--config", str(param_cfg),
                           "--seed", "1"],
        }
        mismatched = []
        for name, argv in runs.items():
            cores = []
            for attempt in ("a", "b"):
                out = tmp_path / name / attempt
                rc = dispatch(argv + ["--out", str(out)])
                assert rc == 0, (name, attempt, rc)
                cores.append(report_core_bytes(out / "report.json"))
            if cores[0] != cores[1]:
                mismatched.append(name)

        export_cores = []
        for attempt in ("a", "b"):
            out = tmp_path / "export" / attempt
            rc = dispatch(["export-grid", "--run-dir",
                           str(tmp_path / "boundary" / "a"), "--out", str(out)])
            assert rc == 0
            export_cores.append(report_core_bytes(out / "export_report.json"))
        if export_cores[0] != export_cores[1]:
            mismatched.append("export-grid")

        ok = mismatched == []
        report(f"[criterion 10] {'PASS' if ok else 'FAIL'}: byte-identical "
               f"reports across two runs for all 7 commands "
               f"(gradcheck, equiv, bench, boundary, denoise, paramcount, "
               f"export-grid){'' if ok else ': mismatch in ' + str(mismatched)}")
        assert ok
