"""Energy-based voice activity detection and clip segmentation.

All functions are pure over in-memory sample buffers. Frame ``i`` covers
samples ``[i * hop, i * hop + frame)``; energies are in dB relative to a
full-scale signal.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import PipelineConfig
from .records import round_ms

EPS = 1e-12
SILENCE_DB = 10.0 * np.log10(EPS)
SNR_CAP_DB = 60.0

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class AudioFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SpeechRegion:
    start_s: float
    end_s: float
    mean_speech_energy_db: float
    noise_floor_db: float

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def _wav_format_tag(path: Path) -> tuple[int, int, int]:
    """Return (format tag, channels, bits per sample) from the fmt chunk."""
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) < 12 or header[:4] != b"RIFF" or header[8:12] != b"WAVE":
            raise AudioFormatError(f"{path}: not a RIFF/WAVE file")
        while True:
            chunk = fh.read(8)
            if len(chunk) < 8:
                raise AudioFormatError(f"{path}: missing fmt chunk")
            cid, size = struct.unpack("<4sI", chunk)
            if cid == b"fmt ":
                body = fh.read(size)
                tag, channels, _, _, _, bits = struct.unpack("<HHIIHH", body[:16])
                if tag == _WAVE_FORMAT_EXTENSIBLE and size >= 40:
                    tag = struct.unpack("<H", body[24:26])[0]
                return tag, channels, bits
            fh.seek(size + (size & 1), 1)


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a mono PCM16 or float32 WAV file as float64 samples in [-1, 1]."""
    path = Path(path)
    tag, channels, bits = _wav_format_tag(path)
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono audio, found {channels} channels")
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        with wave.open(str(path), "rb") as wf:
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
        return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, rate
    if tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        return _read_float_wav(path)
    if tag in (_WAVE_FORMAT_PCM, _WAVE_FORMAT_IEEE_FLOAT):
        raise AudioFormatError(f"{path}: unsupported sample width {bits} bits")
    raise AudioFormatError(f"{path}: compressed or unsupported codec (format tag {tag:#06x})")


def _read_float_wav(path: Path) -> tuple[np.ndarray, int]:
    # The stdlib wave module only handles integer PCM.
    data = path.read_bytes()
    pos = 12
    rate = None
    while pos + 8 <= len(data):
        cid, size = struct.unpack("<4sI", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            rate = struct.unpack("<I", body[4:8])[0]
        elif cid == b"data":
            if rate is None:
                break
            return np.frombuffer(body[: len(body) // 4 * 4], dtype="<f4").astype(np.float64), rate
        pos += 8 + size + (size & 1)
    raise AudioFormatError(f"{path}: missing data chunk")


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono PCM16; samples are clipped to [-1, 1]."""
    pcm = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0 - 1.0 / 32768.0)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(np.round(pcm * 32768.0).astype("<i2").tobytes())


def frame_energies(samples: Sequence[float] | np.ndarray, sample_rate: int,
                   frame_ms: float = 25.0, hop_ms: float = 10.0) -> np.ndarray:
    """Per-hop frame energy ``10*log10(mean(x**2) + 1e-12)``.

    Audio shorter than one frame yields a single frame over what exists.
    """
    if not 0 < hop_ms <= frame_ms:
        raise ValueError("need frame_ms >= hop_ms > 0")
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty audio")
    frame = max(1, int(round(sample_rate * frame_ms / 1000.0)))
    hop = max(1, int(round(sample_rate * hop_ms / 1000.0)))
    if x.size < frame:
        power = np.array([np.mean(x * x)])
    else:
        count = (x.size - frame) // hop + 1
        # Cumulative sums give every frame mean in O(n).
        csum = np.concatenate(([0.0], np.cumsum(x * x)))
        starts = np.arange(count) * hop
        power = (csum[starts + frame] - csum[starts]) / frame
        power = np.maximum(power, 0.0)
    return 10.0 * np.log10(power + EPS)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive (first, last) index pairs of True runs."""
    if mask.size == 0:
        return []
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def speech_mask(energies: np.ndarray, config: PipelineConfig) -> tuple[np.ndarray, float]:
    """Frame-level speech decision after hangover bridging, plus the noise floor."""
    e = np.asarray(energies, dtype=np.float64)
    floor = float(np.percentile(e, config.noise_percentile))
    mask = e > floor + config.vad_margin_db
    hangover = int(round(config.hangover_ms / config.hop_ms))
    runs = _runs(mask)
    for (_, prev_end), (next_start, _) in zip(runs, runs[1:]):
        if next_start - prev_end - 1 < hangover:
            mask[prev_end + 1:next_start] = True
    return mask, floor


def detect_speech_regions(energies: np.ndarray, config: PipelineConfig) -> list[SpeechRegion]:
    """Mark frames above ``noise_floor + margin`` as speech and group them.

    A frame registers speech as soon as any part of it overlaps a loud
    stretch, which smears each run by up to one frame. Boundaries are
    therefore placed half a hop inside the outermost frames: start at
    ``first * hop + frame - hop / 2`` and end at ``last * hop + hop / 2``.
    Runs touching either end of the recording extend to that end.
    """
    e = np.asarray(energies, dtype=np.float64)
    if e.size == 0:
        raise ValueError("energies must be non-empty")
    mask, floor = speech_mask(e, config)
    frame_s, hop_s = config.frame_s, config.hop_s
    regions = []
    for first, last in _runs(mask):
        start = 0.0 if first == 0 else first * hop_s + frame_s - hop_s / 2
        end = last * hop_s + (frame_s if last == e.size - 1 else hop_s / 2)
        if end <= start:
            continue
        regions.append(SpeechRegion(
            start_s=round_ms(start),
            end_s=round_ms(end),
            mean_speech_energy_db=float(np.mean(e[first:last + 1])),
            noise_floor_db=floor,
        ))
    return [r for r in regions if r.end_s > r.start_s]


def frame_centers(count: int, config: PipelineConfig) -> np.ndarray:
    return np.arange(count) * config.hop_s + config.frame_s / 2


def _split_point(start: float, end: float, energies: np.ndarray, config: PipelineConfig) -> float:
    """Cut time for an over-long clip: the lowest-energy frame whose centre
    leaves at least ``min_s`` on both sides, ties going to the frame nearest
    the midpoint."""
    centers = frame_centers(len(energies), config)
    lo, hi = start + config.min_s, end - config.min_s
    if lo > hi:
        return round_ms((start + end) / 2)
    window = np.flatnonzero((centers >= lo) & (centers <= hi))
    if window.size == 0:
        return round_ms((start + end) / 2)
    e = energies[window]
    candidates = window[e == e.min()]
    mid = (start + end) / 2
    best = candidates[np.argmin(np.abs(centers[candidates] - mid))]
    return round_ms(centers[best])


def segment_regions(regions: Sequence[SpeechRegion], energies: np.ndarray,
                    config: PipelineConfig) -> list[tuple[float, float]]:
    """Turn speech regions into clips of ``min_s`` to ``max_s`` seconds.

    Neighbouring regions closer than ``merge_gap_s`` are merged while one of
    them is still shorter than ``min_s``; over-long clips are split
    recursively at low-energy frames; what stays short is dropped.
    """
    spans = [(r.start_s, r.end_s) for r in regions]
    merged: list[tuple[float, float]] = []
    for start, end in spans:
        if merged:
            prev_start, prev_end = merged[-1]
            short = (prev_end - prev_start) < config.min_s or (end - start) < config.min_s
            if start - prev_end < config.merge_gap_s and short:
                merged[-1] = (prev_start, end)
                continue
        merged.append((start, end))

    e = np.asarray(energies, dtype=np.float64)
    clips: list[tuple[float, float]] = []
    pending = list(reversed(merged))
    while pending:
        start, end = pending.pop()
        if round_ms(end - start) > config.max_s:
            cut = _split_point(start, end, e, config)
            pending.append((cut, end))
            pending.append((start, cut))
            continue
        if round_ms(end - start) >= config.min_s:
            clips.append((round_ms(start), round_ms(end)))
    return clips


def estimate_snr(samples: np.ndarray, sample_rate: int, regions: Sequence[SpeechRegion | tuple[float, float]],
                 span: tuple[float, float] | None = None, config: PipelineConfig | None = None) -> float:
    """SNR of ``span`` (or of all speech) against the recording's noise floor.

    Speech frames are those whose centre falls inside a region (and inside
    ``span`` when given); the noise floor is the configured percentile of
    the remaining frames. With no non-speech frames the result is capped at
    60 dB, as is any larger estimate.
    """
    config = config or PipelineConfig()
    energies = frame_energies(samples, sample_rate, config.frame_ms, config.hop_ms)
    return snr_from_energies(energies, regions, span, config)


def snr_from_energies(energies: np.ndarray, regions: Sequence[SpeechRegion | tuple[float, float]],
                      span: tuple[float, float] | None, config: PipelineConfig) -> float:
    centers = frame_centers(len(energies), config)
    in_speech = np.zeros(len(energies), dtype=bool)
    for region in regions:
        start, end = (region.start_s, region.end_s) if isinstance(region, SpeechRegion) else region
        in_speech |= (centers >= start) & (centers < end)
    selected = in_speech
    if span is not None:
        selected = in_speech & (centers >= span[0]) & (centers < span[1])
    noise = energies[~in_speech]
    if not selected.any():
        raise ValueError("no speech frames in span")
    if noise.size == 0:
        return SNR_CAP_DB
    floor = float(np.percentile(noise, config.noise_percentile))
    snr = float(np.mean(energies[selected])) - floor
    return min(snr, SNR_CAP_DB)
