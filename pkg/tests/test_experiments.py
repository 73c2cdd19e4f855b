import json

import numpy as np
import pytest

from bimamba.datasets import gen_noisy_mixture
from bimamba.errors import ConfigError
from bimamba.experiments import (
    DENOISE_MIXERS,
    BoundaryConfig,
    DenoiseConfig,
    _masked_improvement,
    _oracle_mask,
    denoise_param_count,
    export_grid,
    init_denoise_model,
    load_report,
    report_core_bytes,
    run_boundary_experiment,
    write_report,
)

TINY = BoundaryConfig(kind="gaussians", n=40, epochs=3, d=4, n_state=2,
                      grid_res=10)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("boundary")
    report = run_boundary_experiment(TINY, seed=1, out_dir=out)
    return out, report


class TestBoundaryRun:
    def test_report_contents(self, tiny_run):
        out, report = tiny_run
        assert report["schema_version"] == 1
        assert report["seed"] == 1
        assert report["config"]["kind"] == "gaussians"
        m = report["metrics"]
        assert not m["diverged"]
        assert 0.0 <= m["test_acc"] <= 1.0
        assert (out / "report.json").exists()
        assert load_report(out / "report.json") == report

    def test_grid_csv_shape(self, tiny_run):
        out, _ = tiny_run
        rows = (out / "grid.csv").read_text().splitlines()
        assert rows[0] == "x,y,pred,score"
        assert len(rows) == 1 + TINY.grid_res**2

    def test_grid_ppm_header(self, tiny_run):
        out, _ = tiny_run
        blob = (out / "grid.ppm").read_bytes()
        assert blob.startswith(b"P6\n10 10\n255\n")
        assert len(blob) == len(b"P6\n10 10\n255\n") + 3 * TINY.grid_res**2

    def test_train_log_lines(self, tiny_run):
        out, _ = tiny_run
        lines = (out / "train_log.jsonl").read_text().splitlines()
        assert len(lines) == TINY.epochs
        row = json.loads(lines[-1])
        assert set(row) == {"step", "lr", "loss", "grad_norm", "wall_ms"}

    def test_export_grid_round_trip(self, tiny_run, tmp_path):
        out, _ = tiny_run
        exported = export_grid(out, tmp_path)
        regenerated = (tmp_path / "grid.csv").read_bytes()
        original = (out / "grid.csv").read_bytes()
        assert regenerated == original
        assert exported["seed"] == 1

    def test_export_grid_rejects_foreign_checkpoint(self, tiny_run, tmp_path):
        import shutil

        out, _ = tiny_run
        damaged = tmp_path / "damaged"
        shutil.copytree(out, damaged)
        ckpt = damaged / "checkpoint"
        victim = next(ckpt.glob("mixer_*.bin"))
        manifest = json.loads((ckpt / "manifest.json").read_text())
        stem = victim.stem
        manifest["tensors"]["not_a_real_tensor"] = manifest["tensors"].pop(stem)
        (ckpt / "manifest.json").write_text(json.dumps(manifest))
        victim.rename(ckpt / "not_a_real_tensor.bin")
        with pytest.raises(ConfigError):
            export_grid(damaged, tmp_path / "exported")


class TestDenoiseSetup:
    def test_param_budgets_within_tolerance(self):
        cfg = DenoiseConfig()
        counts = {m: denoise_param_count(cfg, m) for m in DENOISE_MIXERS}
        ref = max(counts.values())
        for mixer, count in counts.items():
            assert abs(count - ref) / ref <= cfg.budget_tol, (mixer, counts)

    def test_ledger_matches_enumeration(self):
        cfg = DenoiseConfig()
        for mixer in DENOISE_MIXERS:
            model = init_denoise_model(cfg, mixer, seed=0)
            enumerated = sum(v.value.size for v in model.named().values())
            assert enumerated == denoise_param_count(cfg, mixer)

    def test_identity_mask_changes_nothing(self):
        pair = gen_noisy_mixture(123, target_snr_db=0.0, dur_s=0.5)
        gain = _masked_improvement(pair, np.ones_like(pair.noisy_mag))
        assert abs(gain) < 1e-9

    def test_oracle_mask_beats_identity(self):
        pair = gen_noisy_mixture(123, target_snr_db=0.0, dur_s=0.5)
        gain = _masked_improvement(pair, _oracle_mask(pair))
        assert gain > 5.0


class TestReportHelpers:
    def test_core_bytes_ignore_timings(self, tmp_path):
        base = {"schema_version": 1, "command": "x", "seed": 0,
                "metrics": {"v": 1.25}}
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        write_report(p1, dict(base, timings={"wall_s": 1.0}))
        write_report(p2, dict(base, timings={"wall_s": 99.0}))
        assert report_core_bytes(p1) == report_core_bytes(p2)

    def test_core_bytes_see_metric_changes(self, tmp_path):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        write_report(p1, {"schema_version": 1, "metrics": {"v": 1.0}})
        write_report(p2, {"schema_version": 1, "metrics": {"v": 2.0}})
        assert report_core_bytes(p1) != report_core_bytes(p2)


class TestConfigValidation:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            BoundaryConfig.from_json({"kind": "spirals", "bogus": 1})
        with pytest.raises(ConfigError):
            DenoiseConfig.from_json({"alpha": 0.5, "bogus": 1})

    def test_round_trip(self):
        cfg = BoundaryConfig(kind="gaussians", with_ffn=True)
        assert BoundaryConfig.from_json(cfg.to_json()) == cfg
        dcfg = DenoiseConfig(alpha=0.7)
        assert DenoiseConfig.from_json(dcfg.to_json()) == dcfg

    def test_unknown_mixer_rejected(self):
        with pytest.raises(ConfigError):
            DenoiseConfig(mixers=("mhsa", "lstm"))
