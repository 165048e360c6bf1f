import numpy as np
import pytest

from dmim3d.constellation import SystemConfig
from dmim3d.harness import (
    DatasetFormatError,
    SweepConfig,
    bench_runtime,
    cli_main,
    gen_dataset,
    generate_trials,
    read_dataset,
    run_ber_sweep,
    scenario_config,
    write_csv,
)

S1 = SystemConfig(4, 2, 2, 2)


class TestScenarios:
    def test_table_values(self):
        cfg1, dims1 = scenario_config(1)
        assert cfg1 == SystemConfig(4, 2, 2, 2)
        assert (dims1.d_model, dims1.d_mlp, dims1.heads, dims1.d_out) == (32, 128, 2, 3)
        cfg2, dims2 = scenario_config(2)
        assert cfg2 == SystemConfig(4, 2, 4, 4)
        assert (dims2.d_model, dims2.d_mlp, dims2.d_out) == (64, 256, 5)

    def test_unknown_scenario(self):
        with pytest.raises(Exception):
            scenario_config(3)


class TestTrials:
    def test_prefix_property(self):
        # Per-trial streams: a longer run extends a shorter one unchanged.
        short = generate_trials(S1, 20, seed=5)
        long = generate_trials(S1, 50, seed=5)
        assert np.array_equal(short.bits, long.bits[:20])
        assert np.array_equal(short.h, long.h[:20])
        assert np.array_equal(short.noise_unit, long.noise_unit[:20])

    def test_seed_changes_data(self):
        a = generate_trials(S1, 20, seed=1)
        b = generate_trials(S1, 20, seed=2)
        assert not np.array_equal(a.h, b.h)


class TestSweep:
    def test_record_grid(self):
        sweep = SweepConfig(S1, (0.0, 15.0, 30.0), 50, ("ml", "llr"), seed=0)
        records = run_ber_sweep(sweep)
        assert [(r.detector, r.snr_db) for r in records] == [
            ("ml", 0.0), ("ml", 15.0), ("ml", 30.0),
            ("llr", 0.0), ("llr", 15.0), ("llr", 30.0),
        ]
        for r in records:
            assert 0.0 <= r.ber <= 1.0
            assert r.bit_errors == round(r.ber * r.blocks * S1.p)
            assert r.ns_total > 0 and r.ns_per_block >= 0

    def test_ml_error_free_at_high_snr(self):
        records = run_ber_sweep(SweepConfig(S1, (60.0,), 1000, ("ml",), seed=3))
        assert records[0].ber == 0.0

    def test_rejects_unknown_detector(self):
        with pytest.raises(ValueError):
            SweepConfig(S1, (10.0,), 10, ("ml", "bogus"))

    def test_trans_requires_weights(self):
        with pytest.raises(ValueError):
            SweepConfig(S1, (10.0,), 10, ("trans",))

    def test_csv_deterministic(self, tmp_path):
        paths = []
        for name in ("a.csv", "b.csv"):
            records = run_ber_sweep(SweepConfig(S1, (0.0, 10.0), 40, ("ml", "llr"), seed=7))
            path = tmp_path / name
            write_csv(records, path)
            paths.append(path.read_bytes())
        assert paths[0] == paths[1]

    def test_csv_shape_and_timing_column(self, tmp_path):
        records = run_ber_sweep(SweepConfig(S1, tuple(range(0, 31, 5)), 10, ("ml", "llr")))
        path = tmp_path / "r.csv"
        write_csv(records, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "detector,snr_db,blocks,bit_errors,ber,stderr,ns_per_block"
        assert len(lines) == 1 + 14  # 2 detectors x 7 SNRs
        assert all(line.endswith(",0") for line in lines[1:])
        write_csv(records, path, include_timing=True)
        timed = path.read_text().strip().split("\n")
        assert any(not line.endswith(",0") for line in timed[1:])

    def test_stderr_band(self):
        records = run_ber_sweep(SweepConfig(S1, (5.0,), 200, ("llr",), seed=2))
        r = records[0]
        assert r.stderr <= np.sqrt(r.ber / (r.blocks * S1.p)) + 1e-12


class TestBench:
    def test_smoke(self):
        cfg, dims = scenario_config(1)
        records = bench_runtime(cfg, dims, blocks=32, warmup=4, batch_repeats=2)
        by_key = {(r.detector, r.mode): r for r in records}
        assert set(by_key) == {
            ("ml", "single"), ("llr", "single"), ("trans", "single"), ("trans", "batched"),
        }
        assert all(r.ns_per_block > 0 for r in records)


class TestDataset:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "d.td3dset"
        gen_dataset(10, 15.0, S1, seed=4, path=path)
        cfg, feats, labels = read_dataset(path)
        assert cfg == S1
        assert feats.shape == (10, 4, 9)
        assert labels.shape == (10, 4, 3)
        cfg2, feats2, labels2 = read_dataset(path)
        assert np.array_equal(feats, feats2) and np.array_equal(labels, labels2)

    def test_deterministic_per_seed(self, tmp_path):
        p1, p2 = tmp_path / "a", tmp_path / "b"
        gen_dataset(8, 15.0, S1, seed=9, path=p1)
        gen_dataset(8, 15.0, S1, seed=9, path=p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_labels_valid(self, tmp_path):
        path = tmp_path / "d.td3dset"
        gen_dataset(25, 10.0, S1, seed=1, path=path)
        _, _, labels = read_dataset(path)
        assert set(np.unique(labels)) <= {0, 1}
        assert np.array_equal(labels[..., :2].sum(axis=2), np.ones((25, 4)))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "d.td3dset"
        gen_dataset(3, 15.0, S1, seed=0, path=path)
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(raw)
        with pytest.raises(DatasetFormatError):
            read_dataset(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "d.td3dset"
        gen_dataset(3, 15.0, S1, seed=0, path=path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-5])
        with pytest.raises(DatasetFormatError):
            read_dataset(path)


class TestCli:
    def test_sweep_writes_csv(self, tmp_path, capsys):
        out = tmp_path / "r.csv"
        code = cli_main([
            "sweep", "--scenario", "1", "--snr-list", "0:5:30", "--blocks", "10",
            "--detectors", "ml,llr", "--seed", "7", "--out", str(out),
        ])
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 15
        assert "detector," in capsys.readouterr().out

    def test_train_then_eval_roundtrip(self, tmp_path, capsys):
        weights = tmp_path / "m.td3d"
        code = cli_main([
            "train", "--scenario", "1", "--epochs", "1", "--batches", "2",
            "--batch-size", "32", "--d-model", "8", "--d-mlp", "16",
            "--weights-out", str(weights),
        ])
        assert code == 0 and weights.exists()
        out = tmp_path / "e.csv"
        code = cli_main([
            "eval", "--scenario", "1", "--weights", str(weights),
            "--snr-list", "10,20", "--blocks", "20", "--out", str(out),
        ])
        assert code == 0
        assert len(out.read_text().strip().split("\n")) == 3

    def test_missing_weights_is_an_error(self, capsys):
        code = cli_main(["sweep", "--detectors", "trans", "--blocks", "5"])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_unknown_flag_exits_2(self, capsys):
        assert cli_main(["sweep", "--frobnicate"]) == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_detector_id(self, capsys):
        assert cli_main(["sweep", "--detectors", "zf", "--blocks", "5"]) == 1

    def test_bad_system_string(self, capsys):
        assert cli_main(["sweep", "--system", "4,2", "--blocks", "5"]) == 1

    def test_weights_config_mismatch(self, tmp_path, capsys):
        weights = tmp_path / "m.td3d"
        cli_main([
            "train", "--scenario", "1", "--epochs", "1", "--batches", "1",
            "--batch-size", "16", "--d-model", "8", "--d-mlp", "16",
            "--weights-out", str(weights),
        ])
        code = cli_main([
            "eval", "--scenario", "2", "--weights", str(weights), "--blocks", "5",
        ])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_gen_dataset_cli(self, tmp_path):
        out = tmp_path / "d.bin"
        code = cli_main([
            "gen-dataset", "--scenario", "1", "--count", "5", "--out", str(out),
        ])
        assert code == 0
        cfg, feats, _ = read_dataset(out)
        assert cfg == S1 and feats.shape == (5, 4, 9)

    def test_bench_cli_smoke(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        code = cli_main(["bench", "--blocks", "16", "--out", str(out)])
        assert code == 0
        assert out.read_text().startswith("detector,mode,blocks,ns_per_block")

    def test_help_exits_zero(self, capsys):
        assert cli_main(["--help"]) == 0
