import json

import numpy as np
import pytest

from adcue import audio_prep as ap
from adcue import cli
from adcue import embedding_store as es


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def synth_setup(tmp_path):
    spec = dict(n_train_speakers=20, n_test_speakers=8, layers=3, hidden=12,
                informative_layer=1, informative_dims=6,
                class_separation=2.0, seed=0)
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    data_dir = tmp_path / "data"
    config = {
        "manifest": "data/manifest.json",
        "out_dir": "out",
        "tag": "exp",
        "head": {"hidden_in": 12, "layers": 3, "agg_mode": "WS",
                 "proj_dims": [8, 8], "dropout_rate": 0.1},
        "train": {"lr": 3e-3, "epochs": 8, "dropout": 0.1,
                  "batch_speakers": 16, "seeds": [0, 1]},
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    return tmp_path, spec_path, data_dir, cfg_path


class TestSynthTrainEval:
    def test_full_flow(self, synth_setup, capsys):
        tmp_path, spec_path, data_dir, cfg_path = synth_setup
        code, out, _ = run_cli(capsys, "synth", "--spec", str(spec_path),
                               "--out-dir", str(data_dir))
        assert code == 0
        assert json.loads(out)["speakers"] == 28

        code, out, _ = run_cli(capsys, "train", "--config", str(cfg_path),
                               "--seed", "0")
        assert code == 0
        report = json.loads(out)
        assert report["metrics"]["accuracy"] >= 0.95
        ckpt = report["checkpoint"]

        code, out, _ = run_cli(capsys, "eval", "--checkpoint", ckpt,
                               "--manifest", str(data_dir / "manifest.json"),
                               "--split", "test")
        assert code == 0
        assert json.loads(out)["accuracy"] == report["metrics"]["accuracy"]

    def test_missing_checkpoint_exit3(self, synth_setup, capsys):
        tmp_path, spec_path, data_dir, _ = synth_setup
        run_cli(capsys, "synth", "--spec", str(spec_path),
                "--out-dir", str(data_dir))
        code, _, err = run_cli(capsys, "eval",
                               "--checkpoint", str(tmp_path / "nope.adhp"),
                               "--manifest", str(data_dir / "manifest.json"))
        assert code == 3
        assert json.loads(err)["error"] == "data"

    def test_train_deterministic_reports(self, synth_setup, capsys):
        tmp_path, spec_path, data_dir, cfg_path = synth_setup
        run_cli(capsys, "synth", "--spec", str(spec_path),
                "--out-dir", str(data_dir))
        run_cli(capsys, "train", "--config", str(cfg_path), "--seed", "1")
        report_path = tmp_path / "out" / "exp" / "seed1_report.json"
        ckpt_path = tmp_path / "out" / "exp" / "seed1.adhp"
        first_report = report_path.read_bytes()
        first_ckpt = ckpt_path.read_bytes()
        run_cli(capsys, "train", "--config", str(cfg_path), "--seed", "1")
        assert report_path.read_bytes() == first_report
        assert ckpt_path.read_bytes() == first_ckpt


class TestSweepAndCombine:
    def test_sweep_finds_layer(self, synth_setup, capsys):
        tmp_path, spec_path, data_dir, cfg_path = synth_setup
        run_cli(capsys, "synth", "--spec", str(spec_path),
                "--out-dir", str(data_dir))
        code, out, _ = run_cli(capsys, "sweep", "--config", str(cfg_path),
                               "--modality", "audio", "--seed", "0")
        assert code == 0
        result = json.loads(out)
        assert result["chosen_layer"] == 1
        csv = (tmp_path / "out" / "exp").glob("sweep_*.csv")
        lines = next(iter(csv)).read_text().strip().split("\n")
        assert lines[0] == "layer,mean_accuracy,std_accuracy"
        assert len(lines) == 4

    def test_combine_two_modalities(self, synth_setup, capsys):
        tmp_path, spec_path, data_dir, cfg_path = synth_setup
        run_cli(capsys, "synth", "--spec", str(spec_path),
                "--out-dir", str(data_dir))
        run_cli(capsys, "train", "--config", str(cfg_path), "--seed", "0")
        feat = tmp_path / "out" / "exp" / "seed0_features.json"
        doc = json.loads(feat.read_text())
        doc2 = dict(doc, modality="text")
        feat2 = tmp_path / "feat_text.json"
        feat2.write_text(json.dumps(doc2))
        fuse_cfg = tmp_path / "fuse.json"
        cfg = json.loads(cfg_path.read_text())
        cfg["train"]["epochs"] = 100
        fuse_cfg.write_text(json.dumps(cfg))
        code, out, _ = run_cli(capsys, "combine", "--features", str(feat),
                               str(feat2), "--train-config", str(fuse_cfg))
        assert code == 0
        report = json.loads(out)
        assert report["feature_tag"] == "audio+text"
        assert report["mean_accuracy"] >= 0.9


class TestConfigValidation:
    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"manifest": "m.json", "bogus": 1}))
        code, _, err = run_cli(capsys, "train", "--config", str(cfg))
        assert code == 2
        assert "bogus" in json.loads(err)["message"]

    def test_invalid_json_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text("{not json")
        code, _, err = run_cli(capsys, "train", "--config", str(cfg))
        assert code == 2

    def test_bad_manifest_exit3(self, tmp_path, capsys):
        bad = tmp_path / "manifest.json"
        bad.write_text(json.dumps({"version": 1, "speakers": []}))
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"manifest": "manifest.json"}))
        code, _, err = run_cli(capsys, "train", "--config", str(cfg))
        assert code == 3
        assert json.loads(err)["error"] == "manifest"


class TestSegmentAugment:
    def _write_tone(self, path, duration_s):
        t = np.arange(int(duration_s * 16000)) / 16000
        w = ap.Waveform((0.4 * np.sin(2 * np.pi * 220 * t)).astype(np.float32))
        ap.write_wav(path, w)

    def test_segment_command(self, tmp_path, capsys):
        in_dir = tmp_path / "wavs"
        in_dir.mkdir()
        self._write_tone(in_dir / "spk1.wav", 45.0)
        out_dir = tmp_path / "segs"
        code, out, _ = run_cli(capsys, "segment", "--input-dir", str(in_dir),
                               "--out-dir", str(out_dir))
        assert code == 0
        skeleton = json.loads((out_dir / "manifest_skeleton.json").read_text())
        segs = skeleton["speakers"][0]["audio_segments"]
        assert [s["start_s"] for s in segs] == [0.0, 7.5, 15.0]
        assert all((out_dir / s["path"]).exists() for s in segs)

    def test_augment_command_deterministic(self, tmp_path, capsys):
        # build a minimal valid manifest over wav segments
        wav_dir = tmp_path / "d"
        wav_dir.mkdir()
        self._write_tone(wav_dir / "a.wav", 2.0)
        self._write_tone(wav_dir / "b.wav", 2.0)
        manifest = {"version": 1, "speakers": [
            {"speaker_id": "a", "label": "AD", "split": "train",
             "audio_segments": [{"path": "a.wav", "start_s": 0,
                                 "duration_s": 2.0}], "text_segments": []},
            {"speaker_id": "b", "label": "HC", "split": "test",
             "audio_segments": [{"path": "b.wav", "start_s": 0,
                                 "duration_s": 2.0}], "text_segments": []},
        ]}
        mpath = wav_dir / "manifest.json"
        mpath.write_text(json.dumps(manifest))
        out1, out2 = tmp_path / "aug1", tmp_path / "aug2"
        for out in (out1, out2):
            code, _, _ = run_cli(capsys, "augment", "--manifest", str(mpath),
                                 "--out-dir", str(out), "--seed", "7")
            assert code == 0
        assert (out1 / "a.wav").read_bytes() == (out2 / "a.wav").read_bytes()
        # only the train split is augmented
        assert not (out1 / "b.wav").exists()


class TestHelp:
    def test_subcommand_help_lists_defaults(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["segment", "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for flag in ("--window", "--hop-ratio", "--min-tail"):
            assert flag in out
        assert "30" in out and "0.25" in out
