"""CLI tests drive coca.cli.main in-process on a small synthetic problem."""

import hashlib
import json

import numpy as np
import pytest

from coca.cli import main

SMALL_CONFIG = """\
# small instance for cli tests
dim = 12
common_count = 2
source_private_count = 2
target_private_count = 2
shots_per_class = 8
samples_per_class = 20
seed = 3
"""

ADAPT_CONFIG = "max_epochs = 6\ngrid_size = 4\nkmeans_iters = 50\n"


def run(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "synth.cfg"
    cfg.write_text(SMALL_CONFIG)
    acfg = root / "adapt.cfg"
    acfg.write_text(ADAPT_CONFIG)
    data = root / "data"
    assert run(["gen-synth", "--config", str(cfg), "--out", str(data), "--seed", "3"]) == 0
    head = root / "head.bin"
    assert run([
        "train-source", "--source", str(data / "source.feat"),
        "--text", str(data / "text.feat"), "--manifest", str(data / "manifest.json"),
        "--model", "cross_modal", "--out", str(head), "--seed", "3",
    ]) == 0
    return root


class TestGenSynth:
    def test_writes_five_files(self, workspace):
        names = sorted(p.name for p in (workspace / "data").iterdir())
        assert names == [
            "manifest.json", "source.feat", "target.feat", "target_truth.csv", "text.feat",
        ]

    def test_deterministic_bytes(self, workspace, tmp_path):
        cfg = workspace / "synth.cfg"
        out2 = tmp_path / "again"
        assert run(["gen-synth", "--config", str(cfg), "--out", str(out2), "--seed", "3"]) == 0
        for name in ("source.feat", "target.feat", "text.feat"):
            a = (workspace / "data" / name).read_bytes()
            b = (out2 / name).read_bytes()
            assert hashlib.sha256(a).digest() == hashlib.sha256(b).digest()

    def test_invalid_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("common_count = 0\n")
        assert run(["gen-synth", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2

    def test_unknown_key_exits_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("not_a_field = 5\n")
        assert run(["gen-synth", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2

    def test_provenance_in_manifest(self, workspace):
        manifest = json.loads((workspace / "data" / "manifest.json").read_text())
        assert manifest["provenance"]["seed"] == 3
        assert "config_hash" in manifest["provenance"]


class TestTrainSource:
    def test_logs_batch_size(self, workspace, capsys, tmp_path):
        data = workspace / "data"
        code = run([
            "train-source", "--source", str(data / "source.feat"),
            "--text", str(data / "text.feat"), "--manifest", str(data / "manifest.json"),
            "--model", "cross_modal", "--out", str(tmp_path / "h.bin"), "--seed", "3",
        ])
        out = capsys.readouterr().out
        assert code == 0
        assert "batch size 8" in out  # |Cs| = 4 -> 2|Cs| = 8 -> 8
        assert "4 image + 4 text rows" in out

    def test_deterministic_checkpoint(self, workspace, tmp_path):
        data = workspace / "data"
        args = [
            "train-source", "--source", str(data / "source.feat"),
            "--text", str(data / "text.feat"), "--manifest", str(data / "manifest.json"),
            "--model", "linear_probe", "--seed", "5",
        ]
        assert run(args + ["--out", str(tmp_path / "a.bin")]) == 0
        assert run(args + ["--out", str(tmp_path / "b.bin")]) == 0
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_missing_validation_split_exits_3(self, workspace, tmp_path):
        data = workspace / "data"
        code = run([
            "train-source", "--source", str(data / "source.feat"),
            "--text", str(data / "text.feat"), "--manifest", str(data / "manifest.json"),
            "--model", "linear_probe", "--out", str(tmp_path / "h.bin"),
            "--val-shots", "0",
        ])
        assert code == 3

    def test_writes_validation_curve(self, workspace):
        assert (workspace / "head_valcurve.csv").exists()


class TestSelectK:
    def test_candidate_rounding_for_nine_classes(self, workspace, capsys):
        data = workspace / "data"
        code = run(["select-k", "--target", str(data / "target.feat"),
                    "--cs", "9", "--csv", "--seed", "3"])
        out = capsys.readouterr().out
        assert code == 0
        got = [int(line.split(",")[0]) for line in out.splitlines()
               if line and line[0].isdigit()]
        assert got == [3, 5, 9, 18, 27]

    def test_db_prints_direction(self, workspace, capsys):
        data = workspace / "data"
        code = run(["select-k", "--target", str(data / "target.feat"),
                    "--cs", "4", "--method", "db", "--seed", "3"])
        out = capsys.readouterr().out
        assert code == 0
        assert "lower is better" in out
        assert "argmin" in out

    def test_bad_method_exits_2(self, workspace):
        data = workspace / "data"
        assert run(["select-k", "--target", str(data / "target.feat"),
                    "--cs", "4", "--method", "bogus"]) == 2


class TestAdapt:
    def test_default_run_writes_three_artifacts(self, workspace, tmp_path):
        data = workspace / "data"
        out = tmp_path / "adapted"
        code = run([
            "adapt", "--target", str(data / "target.feat"), "--head", str(workspace / "head.bin"),
            "--text", str(data / "text.feat"), "--manifest", str(data / "manifest.json"),
            "--config", str(workspace / "adapt.cfg"),
            "--out", str(out), "--seed", "3",
        ])
        assert code == 0
        assert sorted(p.name for p in out.iterdir()) == [
            "adapted_head.bin", "predictions.csv", "runlog.csv",
        ]

    def test_no_mieci_zeroes_mask_loss(self, workspace, tmp_path):
        data = workspace / "data"
        out = tmp_path / "ablate"
        code = run([
            "adapt", "--target", str(data / "target.feat"), "--head", str(workspace / "head.bin"),
            "--text", str(data / "text.feat"), "--config", str(workspace / "adapt.cfg"),
            "--no-mieci", "--out", str(out), "--seed", "3",
        ])
        assert code == 0
        rows = [l for l in (out / "runlog.csv").read_text().splitlines()
                if l and not l.startswith("#") and not l.startswith("epoch")]
        assert all(float(r.split(",")[3]) == 0.0 for r in rows)

    def test_zero_shot_pathway(self, workspace, tmp_path):
        data = workspace / "data"
        out = tmp_path / "zs"
        code = run([
            "adapt", "--target", str(data / "target.feat"), "--head", str(workspace / "head.bin"),
            "--text", str(data / "text.feat"), "--zero-shot", "--out", str(out), "--seed", "3",
        ])
        assert code == 0
        assert (out / "predictions.csv").exists()
        assert not (out / "adapted_head.bin").exists()

    def test_class_count_mismatch_exits_4(self, workspace, tmp_path):
        data = workspace / "data"
        # a text store with the wrong number of rows
        from coca.store import FeatureStore, write_store

        rng = np.random.default_rng(0)
        write_store(tmp_path / "bad_text.feat",
                    FeatureStore.from_features(rng.standard_normal((7, 12))))
        code = run([
            "adapt", "--target", str(data / "target.feat"), "--head", str(workspace / "head.bin"),
            "--text", str(tmp_path / "bad_text.feat"), "--out", str(tmp_path / "x"),
            "--seed", "3",
        ])
        assert code == 4

    def test_sweep_expands_out_dirs(self, workspace, tmp_path):
        data = workspace / "data"
        out = tmp_path / "sweep"
        code = run([
            "adapt", "--target", str(data / "target.feat"), "--head", str(workspace / "head.bin"),
            "--text", str(data / "text.feat"), "--config", str(workspace / "adapt.cfg"),
            "--sweep", "tau=0.4,0.6", "--out", str(out), "--seed", "3",
        ])
        assert code == 0
        assert (tmp_path / "sweep-tau0.4" / "predictions.csv").exists()
        assert (tmp_path / "sweep-tau0.6" / "predictions.csv").exists()

    def test_runs_without_sidecar_present(self, workspace, tmp_path):
        # access audit: adaptation must not require the ground-truth file
        import shutil

        data2 = tmp_path / "nosidecar"
        shutil.copytree(workspace / "data", data2)
        (data2 / "target_truth.csv").unlink()
        code = run([
            "adapt", "--target", str(data2 / "target.feat"), "--head", str(workspace / "head.bin"),
            "--text", str(data2 / "text.feat"), "--config", str(workspace / "adapt.cfg"),
            "--out", str(tmp_path / "ns-out"), "--seed", "3",
        ])
        assert code == 0


class TestEval:
    @staticmethod
    @pytest.fixture(scope="class")
    def adapted(workspace, tmp_path_factory):
        data = workspace / "data"
        out = tmp_path_factory.mktemp("adapted")
        assert run([
            "adapt", "--target", str(data / "target.feat"), "--head", str(workspace / "head.bin"),
            "--text", str(data / "text.feat"), "--manifest", str(data / "manifest.json"),
            "--config", str(workspace / "adapt.cfg"), "--out", str(out), "--seed", "3",
        ]) == 0
        return out

    def test_eval_report_files(self, workspace, adapted, tmp_path, capsys):
        data = workspace / "data"
        out = tmp_path / "report"
        code = run([
            "eval", "--pred", str(adapted / "predictions.csv"),
            "--truth", str(data / "target_truth.csv"),
            "--manifest", str(data / "manifest.json"), "--out", str(out),
        ])
        assert code == 0
        assert sorted(p.name for p in out.iterdir()) == [
            "histogram.csv", "report.json", "report_row.csv",
        ]

    def test_perfect_predictions_print_hundred(self, workspace, tmp_path, capsys):
        # synthesize predictions that equal the ground truth
        data = workspace / "data"
        truth_lines = [l for l in (data / "target_truth.csv").read_text().splitlines()
                       if l and not l.startswith("#")][1:]
        pred = tmp_path / "perfect.csv"
        rows = ["sample_id,label,uncertainty"]
        for line in truth_lines:
            sid, cls = line.split(",")
            unc = "0.0" if int(cls) >= 0 else "1.0"
            rows.append(f"{sid},{cls},{unc}")
        pred.write_text("\n".join(rows) + "\n")
        code = run([
            "eval", "--pred", str(pred), "--truth", str(data / "target_truth.csv"),
            "--manifest", str(data / "manifest.json"), "--out", str(tmp_path / "rep"),
        ])
        out = capsys.readouterr().out
        assert code == 0
        assert "100.0" in out

    def test_misaligned_ids_exit_5(self, workspace, adapted, tmp_path):
        data = workspace / "data"
        truncated = tmp_path / "short.csv"
        lines = (adapted / "predictions.csv").read_text().splitlines()
        truncated.write_text("\n".join(lines[:-5]) + "\n")
        code = run([
            "eval", "--pred", str(truncated), "--truth", str(data / "target_truth.csv"),
            "--manifest", str(data / "manifest.json"), "--out", str(tmp_path / "rep2"),
        ])
        assert code == 5

    def test_histogram_conservation(self, workspace, adapted, tmp_path):
        data = workspace / "data"
        out = tmp_path / "rep3"
        assert run([
            "eval", "--pred", str(adapted / "predictions.csv"),
            "--truth", str(data / "target_truth.csv"),
            "--manifest", str(data / "manifest.json"), "--out", str(out),
        ]) == 0
        rows = [l.split(",") for l in (out / "histogram.csv").read_text().splitlines()
                if l and not l.startswith(("#", "bin_lo"))]
        common = sum(int(r[2]) for r in rows)
        private = sum(int(r[3]) for r in rows)
        assert common == 40  # 2 common classes x 20 samples
        assert private == 40


class TestSeedEnvDefault:
    def test_coca_seed_env_used_when_flag_absent(self, workspace, tmp_path, monkeypatch):
        data = workspace / "data"
        monkeypatch.setenv("COCA_SEED", "3")
        a = tmp_path / "env.bin"
        assert run([
            "train-source", "--source", str(data / "source.feat"),
            "--text", str(data / "text.feat"), "--manifest", str(data / "manifest.json"),
            "--model", "linear_probe", "--out", str(a),
        ]) == 0
        b = tmp_path / "flag.bin"
        assert run([
            "train-source", "--source", str(data / "source.feat"),
            "--text", str(data / "text.feat"), "--manifest", str(data / "manifest.json"),
            "--model", "linear_probe", "--out", str(b), "--seed", "3",
        ]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestPdaMode:
    def test_hos_printed_as_na(self, tmp_path, capsys):
        cfg = tmp_path / "pda.cfg"
        cfg.write_text(
            "dim = 12\ncommon_count = 3\nsource_private_count = 2\n"
            "target_private_count = 0\nshots_per_class = 8\nsamples_per_class = 15\nseed = 1\n"
        )
        data = tmp_path / "data"
        assert run(["gen-synth", "--config", str(cfg), "--out", str(data), "--seed", "1"]) == 0
        head = tmp_path / "head.bin"
        assert run([
            "train-source", "--source", str(data / "source.feat"),
            "--text", str(data / "text.feat"), "--manifest", str(data / "manifest.json"),
            "--model", "linear_probe", "--out", str(head), "--seed", "1",
        ]) == 0
        out = tmp_path / "adapted"
        acfg = tmp_path / "a.cfg"
        acfg.write_text("max_epochs = 4\ngrid_size = 4\nkmeans_iters = 50\n")
        assert run([
            "adapt", "--target", str(data / "target.feat"), "--head", str(head),
            "--text", str(data / "text.feat"), "--manifest", str(data / "manifest.json"),
            "--config", str(acfg), "--out", str(out), "--seed", "1",
        ]) == 0
        capsys.readouterr()
        assert run([
            "eval", "--pred", str(out / "predictions.csv"),
            "--truth", str(data / "target_truth.csv"),
            "--manifest", str(data / "manifest.json"), "--out", str(tmp_path / "rep"),
        ]) == 0
        assert "N/A" in capsys.readouterr().out
