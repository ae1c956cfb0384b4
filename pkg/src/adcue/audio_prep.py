"""Waveform preprocessing: peak normalization, 30 s / 0.25-hop segmentation,
and training-time augmentation (pitch shift, speed perturbation, TPDF dither).

All DSP is pure numpy: a Kaiser-windowed-sinc resampler and a WSOLA time
stretcher, fixed parameters so outputs are reproducible bit-for-bit given
the same seed.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn_core import ConfigError

CANONICAL_RATE = 16000

# resampler: 32 taps per side, Kaiser beta 8
_SINC_TAPS = 32
_KAISER_BETA = 8.0

# WSOLA: 40 ms frames, 50% overlap, +/- 5 ms search
_WSOLA_FRAME_S = 0.040
_WSOLA_SEARCH_S = 0.005


class AudioError(ValueError):
    """Malformed or unsupported audio input."""


@dataclass
class Waveform:
    samples: np.ndarray  # float32 mono
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise AudioError("waveform must be nonempty and mono")
        if self.sample_rate <= 0:
            raise AudioError("sample_rate must be positive")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class SegmentSpec:
    window_s: float = 30.0
    hop_ratio: float = 0.25
    min_tail_s: float = 5.0

    def __post_init__(self):
        if not (0 < self.hop_ratio <= 1):
            raise ConfigError("hop_ratio must be in (0, 1]")
        if self.window_s <= 0:
            raise ConfigError("window_s must be positive")


@dataclass
class AugmentConfig:
    pitch_cents_range: tuple[float, float] = (-100.0, 100.0)
    speed_rate_range: tuple[float, float] = (-0.05, 0.05)
    dither_amplitude: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.pitch_cents_range
        if lo != -hi or hi > 100.0:
            raise ConfigError("pitch range must be symmetric within +/-100 cents")
        lo, hi = self.speed_rate_range
        if lo != -hi or hi > 0.05:
            raise ConfigError("speed range must be symmetric within +/-0.05")
        if self.dither_amplitude < 0:
            raise ConfigError("dither_amplitude must be >= 0")


@dataclass
class AudioSegment:
    start_s: float
    waveform: Waveform
    true_length: int  # samples of real audio before zero padding


def normalize(w: Waveform, peak: float = 0.9) -> Waveform:
    """Scale so the absolute peak is `peak`; silence is returned unchanged."""
    m = float(np.max(np.abs(w.samples)))
    if m == 0.0:
        return Waveform(w.samples.copy(), w.sample_rate)
    return Waveform(w.samples * np.float32(peak / m), w.sample_rate)


def segment(w: Waveform, spec: SegmentSpec | None = None) -> list[AudioSegment]:
    """Windows start at k * hop_ratio * window_s. Each segment is window_s
    long; one trailing partial window is kept iff it covers audio beyond the
    last full window and is at least min_tail_s long (always kept when the
    whole input is shorter than one window), zero-padded with its true
    length recorded."""
    spec = spec or SegmentSpec()
    sr = w.sample_rate
    win = int(round(spec.window_s * sr))
    hop = int(round(spec.hop_ratio * spec.window_s * sr))
    n = w.samples.size
    out: list[AudioSegment] = []
    covered = 0
    k = 0
    while k * hop + win <= n:
        start = k * hop
        out.append(AudioSegment(start / sr,
                                Waveform(w.samples[start:start + win], sr),
                                win))
        covered = start + win
        k += 1
    # trailing partial window: kept iff the audio it adds beyond the last
    # full window is at least min_tail_s (always kept when nothing else is)
    uncovered = n - covered
    if uncovered > 0 and (uncovered >= spec.min_tail_s * sr or not out):
        start = min(k * hop, n - 1) if out else 0
        tail_len = n - start
        padded = np.zeros(win, dtype=np.float32)
        padded[:tail_len] = w.samples[start:]
        out.append(AudioSegment(start / sr, Waveform(padded, sr), tail_len))
    return out


def resample(w: Waveform, factor: float) -> Waveform:
    """Windowed-sinc resampling; output length = round(len / factor). A tone
    at f Hz lands at f * factor Hz when the output is played at the
    original rate. Cutoff tracks min(1, 1/factor) for anti-aliasing."""
    if not (0.5 <= factor <= 2.0):
        raise ConfigError(f"resample factor {factor} outside [0.5, 2.0]")
    x = w.samples.astype(np.float64)
    n_in = x.size
    n_out = int(round(n_in / factor))
    if factor == 1.0:
        return Waveform(w.samples.copy(), w.sample_rate)
    cutoff = min(1.0, 1.0 / factor)
    pos = np.arange(n_out) * factor          # fractional input positions
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    taps = np.arange(-_SINC_TAPS + 1, _SINC_TAPS + 1)  # 64 taps
    # index matrix (n_out, 64), clamped at the edges
    idx = base[:, None] + taps[None, :]
    np.clip(idx, 0, n_in - 1, out=idx)
    t = taps[None, :] - frac[:, None]
    kernel = cutoff * np.sinc(cutoff * t)
    window = np.i0(_KAISER_BETA * np.sqrt(np.clip(1 - (t / _SINC_TAPS) ** 2, 0, 1)))
    window /= np.i0(_KAISER_BETA)
    kernel *= window
    y = np.einsum("ij,ij->i", kernel, x[idx])
    return Waveform(np.clip(y, -1.0, 1.0).astype(np.float32), w.sample_rate)


def speed_perturb(w: Waveform, rate: float) -> Waveform:
    """Playback-speed change: duration scales by 1/(1+rate), pitch by (1+rate)."""
    if not (-0.05 - 1e-12 <= rate <= 0.05 + 1e-12):
        raise ConfigError(f"speed rate {rate} outside [-0.05, +0.05]")
    return resample(w, 1.0 + rate)


def time_stretch(w: Waveform, ratio: float) -> Waveform:
    """WSOLA overlap-add: duration scales by `ratio`, pitch preserved."""
    if not (0.9 <= ratio <= 1.12):
        raise ConfigError(f"time_stretch ratio {ratio} outside [0.9, 1.12]")
    sr = w.sample_rate
    frame = int(round(_WSOLA_FRAME_S * sr))
    syn_hop = frame // 2
    search = int(round(_WSOLA_SEARCH_S * sr))
    ana_hop = syn_hop / ratio
    x = w.samples.astype(np.float64)
    n_in = x.size
    n_out = int(round(n_in * ratio))
    if n_out <= frame:
        return Waveform(w.samples.copy(), sr)
    win = np.hanning(frame)
    out = np.zeros(n_out + frame, dtype=np.float64)
    norm = np.zeros(n_out + frame, dtype=np.float64)
    n_frames = int(np.floor((n_out - frame) / syn_hop)) + 1
    prev_tail = None  # natural continuation of the previous synthesis frame
    for m in range(n_frames):
        center = int(round(m * ana_hop))
        if prev_tail is None:
            delta = 0
        else:
            lo = max(0, center - search)
            hi = min(n_in - frame, center + search)
            if hi <= lo:
                delta = 0
            else:
                seg_len = frame
                best, best_score = lo, -np.inf
                target = prev_tail
                region = x[lo:hi + seg_len]
                # cross-correlate target with candidate starts
                corr = np.correlate(region, target, mode="valid")[: hi - lo + 1]
                best = lo + int(np.argmax(corr))
                delta = best - center
        start = center + delta
        start = min(max(start, 0), n_in - frame)
        chunk = x[start:start + frame]
        pos = m * syn_hop
        out[pos:pos + frame] += chunk * win
        norm[pos:pos + frame] += win
        nat = start + syn_hop
        nat = min(nat, n_in - frame)
        prev_tail = x[nat:nat + frame]
    nz = norm > 1e-8
    out[nz] /= norm[nz]
    y = out[:n_out]
    return Waveform(np.clip(y, -1.0, 1.0).astype(np.float32), sr)


def pitch_shift(w: Waveform, cents: float) -> Waveform:
    """Shift pitch by `cents` (hundredths of a semitone), duration preserved:
    resample by f = 2^(cents/1200), then stretch back by f."""
    if not (-100.0 - 1e-9 <= cents <= 100.0 + 1e-9):
        raise ConfigError(f"pitch shift {cents} cents outside [-100, 100]")
    f = 2.0 ** (cents / 1200.0)
    if cents == 0:
        return Waveform(w.samples.copy(), w.sample_rate)
    return time_stretch(resample(w, f), f)


def dither(w: Waveform, amplitude: float, rng: np.random.Generator) -> Waveform:
    """Add TPDF noise of peak +/- amplitude, then clip to [-1, 1]."""
    if amplitude < 0:
        raise ConfigError("dither amplitude must be >= 0")
    if amplitude == 0:
        return Waveform(w.samples.copy(), w.sample_rate)
    half = amplitude / 2.0
    noise = (rng.uniform(-half, half, w.samples.size)
             + rng.uniform(-half, half, w.samples.size))
    y = w.samples.astype(np.float64) + noise
    return Waveform(np.clip(y, -1.0, 1.0).astype(np.float32), w.sample_rate)


def augment(w: Waveform, cfg: AugmentConfig, rng: np.random.Generator) -> Waveform:
    """Training-time chain: pitch shift, then speed perturb, then dither,
    each parameter drawn uniformly from its configured range."""
    cents = float(rng.uniform(*cfg.pitch_cents_range))
    rate = float(rng.uniform(*cfg.speed_rate_range))
    out = pitch_shift(w, cents)
    out = speed_perturb(out, rate)
    return dither(out, cfg.dither_amplitude, rng)


# ---------------------------------------------------------------------------
# WAV I/O (PCM16 mono; arbitrary input rate resampled to 16 kHz on read)


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise AudioError(f"{path}: mono required, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise AudioError(f"{path}: PCM16 required, got {8 * f.getsampwidth()}-bit")
        sr = f.getframerate()
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    w = Waveform(samples, sr)
    if sr != CANONICAL_RATE:
        factor = sr / CANONICAL_RATE
        if not (0.5 <= factor <= 2.0):
            raise AudioError(f"{path}: sample rate {sr} unsupported")
        w = resample(w, factor)
        w = Waveform(w.samples, CANONICAL_RATE)
    return w


def write_wav(path, w: Waveform) -> None:
    if w.sample_rate != CANONICAL_RATE:
        raise AudioError(f"write_wav expects {CANONICAL_RATE} Hz audio")
    pcm = np.clip(np.round(w.samples.astype(np.float64) * 32768.0),
                  -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(CANONICAL_RATE)
        f.writeframes(pcm.tobytes())
