"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (visible with pytest -s or in captured output on failure)."""

import json
import math
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from adcue import audio_prep as ap
from adcue import embedding_store as es
from adcue import feature_head as fh
from adcue import nn_core as nn
from adcue import train_eval as te


def report(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    assert ok, f"{name}: {detail}"


def test_gradient_integrity():
    t0 = time.monotonic()
    cfg = fh.HeadConfig(hidden_in=6, layers=3, agg_mode="WS",
                        proj_dims=(8, 8), dropout_rate=0.25, attn_dim=8)
    params = fh.init_head_params(cfg, nn.make_rng(0), dtype=np.float64)
    rng = np.random.default_rng(1)
    segments = [rng.uniform(-1, 1, (3, 5, 6)) for _ in range(2)]

    def loss():
        logit, _ = fh.forward_speaker(segments, cfg, params,
                                      nn.derive_rng(9, "mask"), training=True)
        return nn.bce_with_logits(logit, 1)[0]

    logit, cache = fh.forward_speaker(segments, cfg, params,
                                      nn.derive_rng(9, "mask"), training=True)
    _, dlogit = nn.bce_with_logits(logit, 1)
    params.zero_grads()
    fh.backward_speaker(cache, dlogit, cfg, params)
    num = nn.finite_difference_gradient(loss, params.all_params(), h=1e-4)
    worst = max(nn.relative_error(p.grad, g)
                for (_, p), g in zip(params.named(), num))
    elapsed = time.monotonic() - t0
    report("gradient-integrity", worst < 1e-4 and elapsed < 60,
           f"max rel err {worst:.2e}, {elapsed:.1f}s")


def test_adamw_oracle():
    h = nn.HyperParams(lr=0.05, weight_decay=0.01)
    p = nn.Param(np.array([[2.0]]), np.zeros((1, 1)), "w")
    state = nn.AdamWState.for_param(p)
    for _ in range(10):
        p.grad[...] = 2 * (p.value - 3.0)
        nn.adamw_step([p], [state], h)
        p.zero_grad()
    # independent plain-float scalar reference
    w, m, v = 2.0, 0.0, 0.0
    for t in range(1, 11):
        g = 2 * (w - 3.0)
        m = h.beta1 * m + (1 - h.beta1) * g
        v = h.beta2 * v + (1 - h.beta2) * g * g
        w = w - h.lr * h.weight_decay * w
        w = w - h.lr * (m / (1 - h.beta1 ** t)) / (
            math.sqrt(v / (1 - h.beta2 ** t)) + h.eps)
    diff = abs(float(p.value[0, 0]) - w)
    report("adamw-oracle", diff <= 1e-10, f"|diff| = {diff:.2e}")


def test_pooling_identities():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(9, 5))
    w = nn.Param.zeros(5, 4, dtype=np.float64)
    v = nn.Param.zeros(4, 1, dtype=np.float64)
    pooled, _, _ = fh.attentive_pool(x, w, v)
    mean_err = float(np.max(np.abs(pooled - x.mean(axis=0))))

    cfg_ws = fh.HeadConfig(hidden_in=6, layers=3, agg_mode="WS",
                           proj_dims=(8, 8), dropout_rate=0.0)
    cfg_ms = replace(cfg_ws, agg_mode="MS", ms_layer=1)
    params = fh.init_head_params(cfg_ws, nn.make_rng(3), dtype=np.float64)
    params.layer_logits.value[...] = [[-40.0, 40.0, -40.0]]
    segs = [rng.uniform(-1, 1, (3, 4, 6)) for _ in range(2)]
    l_ws, _ = fh.forward_speaker(segs, cfg_ws, params)
    l_ms, _ = fh.forward_speaker(segs, cfg_ms, params)
    ws_ms_err = abs(l_ws - l_ms)
    report("pooling-identity", mean_err <= 1e-7 and ws_ms_err < 1e-5,
           f"mean-pool err {mean_err:.2e}, WS-vs-MS err {ws_ms_err:.2e}")


def _fft_peak_hz(w):
    n = 1 << 20
    spec = np.abs(np.fft.rfft(w.samples.astype(np.float64), n))
    return float(np.argmax(spec) * w.sample_rate / n)


def test_dsp_contracts():
    t0 = time.monotonic()
    sr = 16000
    t = np.arange(4 * sr) / sr
    tone = ap.Waveform((0.5 * np.sin(2 * np.pi * 440 * t)).astype(np.float32))

    sp = ap.speed_perturb(tone, 0.05)
    sp_peak = _fft_peak_hz(sp)
    sp_len_ok = abs(sp.samples.size - round(4 * sr / 1.05)) <= 1

    ps = ap.pitch_shift(tone, 100.0)
    ps_peak = _fft_peak_hz(ps)
    ps_target = 440 * 2 ** (1 / 12)
    ps_dur_ok = abs(ps.samples.size - tone.samples.size) <= 0.01 * tone.samples.size

    d0 = ap.dither(tone, 0.0, nn.make_rng(0))
    dither_ok = np.array_equal(d0.samples, tone.samples)

    elapsed = time.monotonic() - t0
    ok = (abs(sp_peak - 462.0) <= 1.0 and sp_len_ok
          and abs(ps_peak - ps_target) <= 2.0 and ps_dur_ok
          and dither_ok and elapsed < 30)
    report("dsp-contracts", ok,
           f"speed peak {sp_peak:.1f} Hz, pitch peak {ps_peak:.1f} Hz "
           f"(target {ps_target:.1f}), {elapsed:.1f}s")


def test_segmentation_arithmetic():
    w = ap.Waveform(np.ones(90 * 16000, dtype=np.float32))
    segs = ap.segment(w, ap.SegmentSpec(window_s=30.0, hop_ratio=0.25))
    starts = [s.start_s for s in segs]
    ok = len(segs) == 9 and starts == [7.5 * k for k in range(9)]
    report("segmentation-arithmetic", ok, f"{len(segs)} segments at {starts}")


def _acceptance_dataset(tmp_path, delta, seed=0):
    spec = es.SynthSpec(n_train_speakers=100, n_test_speakers=40,
                        layers=6, hidden=32, segments_per_speaker=(1, 3),
                        frames_per_segment=(8, 16), informative_layer=2,
                        informative_dims=8, class_separation=delta, seed=seed)
    manifest = es.generate_synthetic_dataset(spec, tmp_path / f"d{delta}")
    return spec, te.load_dataset(manifest)


ACC_HEAD = dict(hidden_in=32, layers=6, agg_mode="WS", proj_dims=(8, 8),
                dropout_rate=0.25)
ACC_TRAIN = dict(lr=1e-3, epochs=10, dropout=0.25, seeds=(0, 1, 2, 3, 4))


def test_end_to_end_synthetic_learning(tmp_path):
    t0 = time.monotonic()
    _, sep = _acceptance_dataset(tmp_path, 2.0)
    cfg = fh.HeadConfig(**ACC_HEAD)
    tc = te.TrainConfig(**ACC_TRAIN)
    sep_report = te.multi_run(sep, cfg, tc)
    _, flat = _acceptance_dataset(tmp_path, 0.0)
    flat_report = te.multi_run(flat, cfg, tc)
    elapsed = time.monotonic() - t0
    ok = (sep_report.mean_accuracy >= 0.95
          and 0.40 <= flat_report.mean_accuracy <= 0.60
          and elapsed < 120)
    report("end-to-end-synthetic-learning", ok,
           f"delta=2 mean acc {sep_report.mean_accuracy:.3f}, "
           f"delta=0 mean acc {flat_report.mean_accuracy:.3f}, {elapsed:.1f}s")


def test_layer_sweep_recovers_planted_layer(tmp_path):
    spec = es.SynthSpec(n_train_speakers=40, n_test_speakers=4, layers=6,
                        hidden=32, informative_layer=2, informative_dims=8,
                        class_separation=2.0, seed=1)
    manifest = es.generate_synthetic_dataset(spec, tmp_path / "sweep")
    data = te.load_dataset(manifest)
    cfg = fh.HeadConfig(**ACC_HEAD)
    tc = te.TrainConfig(lr=3e-3, epochs=6, dropout=0.0, seeds=(0,))
    hits = 0
    for seed in range(5):
        best, _ = te.layer_sweep(data["train"], cfg, tc, seed)
        hits += best == spec.informative_layer
    report("layer-sweep-recovery", hits >= 4, f"{hits}/5 seeds found layer 2")


def test_keyword_ablation_structure(tmp_path):
    base = dict(n_train_speakers=60, n_test_speakers=24, layers=3, hidden=16,
                informative_layer=1, informative_dims=6)
    # planted keyword-aligned text dataset
    spec_t = es.SynthSpec(class_separation=1.0, seed=4, **base)
    man_t = es.generate_synthetic_dataset(spec_t, tmp_path / "txt", "text")
    keywords = [es.read_embedding(p) for p in
                es.generate_keyword_tensors(spec_t, tmp_path / "kw", 4)]
    corr_cfg = fh.HeadConfig(hidden_in=16, layers=1, agg_mode="MS",
                             ms_layer=0, proj_dims=(8,), dropout_rate=0.0)
    tc = te.TrainConfig(lr=3e-3, epochs=30, dropout=0.0, seeds=(0, 1, 2))

    corr = te.load_dataset(man_t, "corr", corr_keywords=keywords, corr_layer=1)
    corr_report = te.multi_run(corr, corr_cfg, tc)

    # empty keyword list -> features carry no label information
    none = te.load_dataset(man_t, "corr", corr_keywords=[], corr_layer=1)
    accs = []
    for seed in range(5):
        params, _ = te.train_on(none["train"], corr_cfg,
                                replace(tc, epochs=5), seed)
        accs.append(te.evaluate_on(params, corr_cfg, none["test"]).accuracy)
    none_acc = float(np.mean(accs))

    # audio modality with its own (weaker) signal, fused with corr
    spec_a = es.SynthSpec(class_separation=0.8, seed=5, **base)
    man_a = es.generate_synthetic_dataset(spec_a, tmp_path / "aud")
    audio = te.load_dataset(man_a)
    audio_cfg = fh.HeadConfig(hidden_in=16, layers=3, agg_mode="MS",
                              ms_layer=1, proj_dims=(8, 8), dropout_rate=0.0)
    feats, singles = {}, {}
    for tag, cfg, data in (("audio", audio_cfg, audio), ("corr", corr_cfg, corr)):
        params, _ = te.train_on(data["train"], cfg, tc, 0)
        singles[tag] = te.evaluate_on(params, cfg, data["test"]).accuracy
        feats[tag] = {s: te.compute_speaker_features(params, cfg, data[s])
                      for s in ("train", "test")}
    fused = te.fused_multi_run(feats, te.speaker_labels(audio),
                               replace(tc, epochs=100))
    ok = (corr_report.mean_accuracy >= 0.9
          and 0.40 <= none_acc <= 0.60
          and fused.mean_accuracy >= max(singles.values()))
    report("keyword-ablation-structure", ok,
           f"corr {corr_report.mean_accuracy:.3f}, none {none_acc:.3f}, "
           f"fused {fused.mean_accuracy:.3f} vs singles {singles}")


def test_cross_process_determinism(tmp_path):
    spec = dict(n_train_speakers=12, n_test_speakers=4, layers=3, hidden=12,
                informative_layer=1, informative_dims=6,
                class_separation=2.0, seed=0)
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    config = {"manifest": "data/manifest.json", "out_dir": "out",
              "tag": "det",
              "head": {"hidden_in": 12, "layers": 3, "proj_dims": [8, 8]},
              "train": {"lr": 3e-3, "epochs": 3, "seeds": [0]}}
    (tmp_path / "config.json").write_text(json.dumps(config))
    tone = ap.Waveform(np.sin(np.arange(32000) * 0.1).astype(np.float32) * 0.5)
    wav_dir = tmp_path / "wavs"
    wav_dir.mkdir()
    ap.write_wav(wav_dir / "a.wav", tone)
    wav_manifest = {"version": 1, "speakers": [
        {"speaker_id": "a", "label": "AD", "split": "train",
         "audio_segments": [{"path": "a.wav", "start_s": 0,
                             "duration_s": 2.0}], "text_segments": []},
        {"speaker_id": "b", "label": "HC", "split": "test",
         "audio_segments": [], "text_segments": []}]}
    (wav_dir / "manifest.json").write_text(json.dumps(wav_manifest))

    def run_all(out_tag):
        cmds = [
            ["synth", "--spec", str(tmp_path / "spec.json"),
             "--out-dir", str(tmp_path / "data")],
            ["train", "--config", str(tmp_path / "config.json"),
             "--seed", "0"],
            ["augment", "--manifest", str(wav_dir / "manifest.json"),
             "--out-dir", str(tmp_path / out_tag), "--seed", "3"],
        ]
        for cmd in cmds:
            proc = subprocess.run([sys.executable, "-m", "adcue.cli"] + cmd,
                                  capture_output=True, cwd=tmp_path)
            assert proc.returncode == 0, proc.stderr.decode()
        ckpt = (tmp_path / "out" / "det" / "seed0.adhp").read_bytes()
        rep = (tmp_path / "out" / "det" / "seed0_report.json").read_bytes()
        aug = (tmp_path / out_tag / "a.wav").read_bytes()
        return ckpt, rep, aug

    first = run_all("aug1")
    second = run_all("aug2")
    ok = all(a == b for a, b in zip(first, second))
    report("cross-process-determinism", ok,
           "checkpoint/report/augmented audio bit-identical across runs")
