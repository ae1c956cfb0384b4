"""Runs the encoders over manifest entries and emits embedding files.

Consumes the primary package only through its public interfaces: wav reading,
embedding-file writing, and manifest parsing/validation. Output files are
written atomically (temp + rename) so a crashed run never leaves a truncated
tensor behind.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

import numpy as np

from adcue.audio_prep import AudioError, read_wav
from adcue.embedding_store import (Manifest, Segment, Speaker, TextSegment,
                                   validate_manifest, write_embedding)

from .models import (N_SAMPLES, BertEncoder, ExtractorConfig, WhisperEncoder)
from .tokenizer import WordPieceTokenizer

log = logging.getLogger("adex")


def atomic_write_embedding(data: np.ndarray, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    write_embedding(data, tmp)
    os.replace(tmp, path)


def extract_audio_file(wav_path, encoder: WhisperEncoder) -> np.ndarray:
    """16 kHz mono WAV (<= 30 s) -> (L, 1500, 768) hidden states."""
    w = read_wav(wav_path)
    if w.samples.shape[0] > N_SAMPLES:
        raise AudioError(
            f"{wav_path}: {w.samples.shape[0] / 16000:.1f} s exceeds the "
            f"30 s segment limit; segment upstream")
    samples = np.zeros(N_SAMPLES, dtype=np.float32)
    samples[:w.samples.shape[0]] = w.samples
    return encoder.hidden_states(samples)


def extract_text_string(text: str, encoder: BertEncoder,
                        tokenizer: WordPieceTokenizer) -> np.ndarray:
    """Transcript string -> (L, tokens, 768); specials are kept."""
    return encoder.hidden_states(tokenizer.encode(text))


def _extractor_meta(cfg: ExtractorConfig, modality: str, layers: int) -> dict:
    model = cfg.audio_model if modality == "audio" else cfg.text_model
    return {"model": model, "layers": layers, "hidden": cfg.hidden,
            "include_embedding_layer": cfg.include_embedding_layer}


def _save_manifest(manifest: Manifest, out_dir: Path, meta: dict) -> Path:
    doc = manifest.to_dict()
    path = out_dir / "manifest.json"
    if path.exists():
        with open(path) as f:
            prev = json.load(f)
        prev_sp = {s["speaker_id"]: s for s in prev.get("speakers", [])}
        for sp in doc["speakers"]:
            old = prev_sp.get(sp["speaker_id"], {})
            if not sp["audio_segments"]:
                sp["audio_segments"] = old.get("audio_segments", [])
            if not sp["text_segments"]:
                sp["text_segments"] = old.get("text_segments", [])
        doc["extractor"] = {**prev.get("extractor", {}), **meta}
    else:
        doc["extractor"] = meta
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def process_audio(manifest: Manifest, cfg: ExtractorConfig,
                  out_dir: Path) -> Path:
    encoder = WhisperEncoder(cfg)
    speakers = []
    for sp in manifest.speakers:
        segs = []
        for i, seg in enumerate(sp.audio_segments):
            tensor = extract_audio_file(manifest.resolve(seg.path), encoder)
            name = f"{sp.speaker_id}_a{i}.adem"
            atomic_write_embedding(tensor, out_dir / name)
            log.info("wrote %s %s", name, tensor.shape)
            segs.append(Segment(name, seg.start_s, seg.duration_s))
        speakers.append(Speaker(sp.speaker_id, sp.label, sp.split,
                                audio_segments=segs))
    meta = {"audio": _extractor_meta(cfg, "audio", encoder.n_layers)}
    return _save_manifest(Manifest(speakers, out_dir), out_dir, meta)


def process_text(manifest: Manifest, cfg: ExtractorConfig,
                 out_dir: Path) -> Path:
    tokenizer = WordPieceTokenizer()
    encoder = BertEncoder(cfg, len(tokenizer.vocab))
    speakers = []
    for sp in manifest.speakers:
        if not sp.transcript_path:
            raise ValueError(f"speaker '{sp.speaker_id}' has no "
                             "transcript_path; text extraction needs one")
        lines = [ln.strip() for ln in
                 manifest.resolve(sp.transcript_path).read_text().splitlines()
                 if ln.strip()]
        segs = []
        for i, line in enumerate(lines):
            tensor = extract_text_string(line, encoder, tokenizer)
            name = f"{sp.speaker_id}_t{i}.adem"
            atomic_write_embedding(tensor, out_dir / name)
            segs.append(TextSegment(name, token_count=tensor.shape[1]))
        speakers.append(Speaker(sp.speaker_id, sp.label, sp.split,
                                text_segments=segs))
    meta = {"text": _extractor_meta(cfg, "text", encoder.n_layers)}
    return _save_manifest(Manifest(speakers, out_dir), out_dir, meta)


def process_keywords(keywords: list[str], cfg: ExtractorConfig,
                     out_dir: Path) -> Path:
    tokenizer = WordPieceTokenizer()
    encoder = BertEncoder(cfg, len(tokenizer.vocab))
    entries = []
    for word in keywords:
        tensor = extract_text_string(word, encoder, tokenizer)
        name = f"kw_{word}.adem"
        atomic_write_embedding(tensor, out_dir / name)
        entries.append({"keyword": word, "path": name,
                        "token_count": int(tensor.shape[1])})
    doc = {"extractor": _extractor_meta(cfg, "text", encoder.n_layers),
           "keywords": entries}
    path = out_dir / "keywords.json"
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def run(manifest_path, modality: str, out_dir, cfg: ExtractorConfig,
        keywords: list[str] | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if modality == "keywords":
        if not keywords:
            raise ValueError("keywords modality needs a keyword list")
        return process_keywords(keywords, cfg, out_dir)
    manifest = validate_manifest(manifest_path)
    if modality == "audio":
        return process_audio(manifest, cfg, out_dir)
    if modality == "text":
        return process_text(manifest, cfg, out_dir)
    raise ValueError(f"unknown modality '{modality}'")
