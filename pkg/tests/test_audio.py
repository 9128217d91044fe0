from __future__ import annotations

import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialect_corpus.audio import (
    AudioFormatError,
    SpeechRegion,
    detect_speech_regions,
    estimate_snr,
    frame_energies,
    read_wav,
    segment_regions,
    snr_from_energies,
    write_wav,
)
from dialect_corpus.config import PipelineConfig

RATE = 16000
CFG = PipelineConfig()


def tone(seconds: float, amp: float, freq: float = 440.0) -> np.ndarray:
    t = np.arange(int(round(seconds * RATE))) / RATE
    return amp * np.sin(2 * np.pi * freq * t)


def noisy(signal: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    return signal + sigma * np.random.default_rng(seed).standard_normal(signal.size)


# tone power A^2/2 is 1000 times the noise power sigma^2: 30 dB
SIGMA = 0.001
AMP_30DB = SIGMA * np.sqrt(2000)


def three_part_signal() -> np.ndarray:
    return noisy(np.concatenate([tone(2, AMP_30DB), np.zeros(RATE), tone(2, AMP_30DB)]), SIGMA)


def test_frame_energy_silence_floor():
    e = frame_energies(np.zeros(RATE), RATE, 25, 10)
    assert np.allclose(e, 10 * np.log10(1e-12))


def test_frame_energy_full_scale():
    assert np.allclose(frame_energies(np.ones(RATE), RATE, 25, 10), 0.0)


def test_frame_count_matches_enumeration():
    frame, hop = 400, 160
    starts = [s for s in range(0, RATE) if s % hop == 0 and s + frame <= RATE]
    assert len(frame_energies(np.zeros(RATE), RATE, 25, 10)) == len(starts) == 98


def test_frame_energy_matches_direct_mean():
    x = np.random.default_rng(3).standard_normal(5000)
    e = frame_energies(x, RATE, 25, 10)
    direct = [10 * np.log10(np.mean(x[k * 160:k * 160 + 400] ** 2) + 1e-12) for k in range(len(e))]
    assert np.allclose(e, direct, atol=1e-9)


def test_empty_audio_rejected():
    with pytest.raises(ValueError):
        frame_energies(np.zeros(0), RATE, 25, 10)


def test_all_silence_has_no_regions():
    assert detect_speech_regions(frame_energies(noisy(np.zeros(3 * RATE), SIGMA), RATE, 25, 10), CFG) == []
    assert detect_speech_regions(frame_energies(np.zeros(RATE), RATE, 25, 10), CFG) == []


def test_two_tones_two_regions():
    e = frame_energies(three_part_signal(), RATE, 25, 10)
    regions = detect_speech_regions(e, CFG)
    assert len(regions) == 2
    truth = [(0.0, 2.0), (3.0, 5.0)]
    for r, (s, t) in zip(regions, truth):
        assert abs(r.start_s - s) <= CFG.hop_s + 1e-9
        assert abs(r.end_s - t) <= CFG.hop_s + 1e-9


def test_short_gap_bridged():
    x = noisy(np.concatenate([tone(1, AMP_30DB), np.zeros(int(0.05 * RATE)), tone(1, AMP_30DB),
                              np.zeros(RATE)]), SIGMA)
    assert len(detect_speech_regions(frame_energies(x, RATE, 25, 10), CFG)) == 1


def test_regions_sorted_and_disjoint():
    rng = np.random.default_rng(1)
    parts = [tone(rng.uniform(0.1, 2), AMP_30DB) if i % 2 else np.zeros(int(rng.uniform(0.1, 2) * RATE))
             for i in range(12)]
    regions = detect_speech_regions(frame_energies(noisy(np.concatenate(parts), SIGMA), RATE, 25, 10), CFG)
    for a, b in zip(regions, regions[1:]):
        assert a.start_s < a.end_s <= b.start_s < b.end_s


def flat_energies(seconds: float, speech: list[tuple[float, float]], level=-20.0, floor=-80.0):
    n = int(round((seconds - CFG.frame_s) / CFG.hop_s)) + 1
    centers = np.arange(n) * CFG.hop_s + CFG.frame_s / 2
    e = np.full(n, floor)
    for s, t in speech:
        e[(centers >= s) & (centers < t)] = level
    return e, centers


def region(s, t):
    return SpeechRegion(s, t, -20.0, -80.0)


def test_ten_second_region_passes_through():
    e, _ = flat_energies(12, [(1, 11)])
    assert segment_regions([region(1.0, 11.0)], e, CFG) == [(1.0, 11.0)]


def test_forty_second_region_cut_at_dip():
    e, centers = flat_energies(42, [(1, 41)])
    dip = int(np.argmin(np.abs(centers - 18.0)))
    e[dip] = -35.0
    clips = segment_regions([region(1.0, 41.0)], e, CFG)
    assert len(clips) == 2
    assert all(5 <= t - s <= 25 for s, t in clips)
    assert abs(clips[0][1] - 18.0) <= 0.5
    assert clips[0][1] == clips[1][0]


def test_isolated_short_region_dropped():
    e, _ = flat_energies(20, [(2, 5), (7, 15)])
    assert segment_regions([region(2.0, 5.0), region(7.0, 15.0)], e, CFG) == [(7.0, 15.0)]


def test_close_short_regions_merge():
    e, _ = flat_energies(10, [(1, 4), (4.5, 8)])
    assert segment_regions([region(1.0, 4.0), region(4.5, 8.0)], e, CFG) == [(1.0, 8.0)]


def test_long_neighbours_stay_apart():
    e, _ = flat_energies(20, [(1, 7), (7.5, 14)])
    assert segment_regions([region(1.0, 7.0), region(7.5, 14.0)], e, CFG) == [(1.0, 7.0), (7.5, 14.0)]


def test_snr_thirty_db():
    x = three_part_signal()
    e = frame_energies(x, RATE, 25, 10)
    regions = detect_speech_regions(e, CFG)
    assert abs(estimate_snr(x, RATE, regions) - 30.0) <= 1.0


def test_snr_zero_when_speech_equals_floor():
    e = np.full(200, -40.0)
    assert snr_from_energies(e, [(0.0, 1.0)], None, CFG) == 0.0


def test_snr_capped_on_digital_silence():
    x = np.concatenate([tone(2, 0.5), np.zeros(RATE)])
    e = frame_energies(x, RATE, 25, 10)
    assert estimate_snr(x, RATE, detect_speech_regions(e, CFG)) == 60.0
    assert estimate_snr(tone(2, 0.5), RATE, [(0.0, 2.0)]) == 60.0


# --- properties --------------------------------------------------------------

energy_vectors = st.lists(st.sampled_from([-80.0, -60.0, -30.0, -25.0, -20.0]), min_size=50, max_size=400).map(
    lambda xs: np.repeat(np.array(xs), 10))


@settings(max_examples=60, deadline=None)
@given(energy_vectors)
def test_clips_within_bounds_and_disjoint(e):
    regions = detect_speech_regions(e, CFG)
    clips = segment_regions(regions, e, CFG)
    for s, t in clips:
        assert CFG.min_s <= round(t - s, 3) <= CFG.max_s
    for (_, t), (s, _) in zip(clips, clips[1:]):
        assert t <= s
    assert clips == segment_regions(regions, e.copy(), CFG)


@settings(max_examples=60, deadline=None)
@given(energy_vectors, st.floats(0.0, 30.0), st.floats(0.0, 30.0))
def test_raising_margin_never_adds_speech(e, m1, m2):
    lo, hi = sorted((m1, m2))
    total = lambda m: sum(r.end_s - r.start_s for r in detect_speech_regions(e, PipelineConfig(vad_margin_db=m)))
    assert total(hi) <= total(lo) + 1e-9


# --- WAV I/O -----------------------------------------------------------------

def test_pcm16_round_trip(tmp_path):
    x = tone(0.5, 0.5)
    write_wav(tmp_path / "a.wav", x, RATE)
    y, rate = read_wav(tmp_path / "a.wav")
    assert rate == RATE
    assert np.max(np.abs(x - y)) < 1 / 32767 + 1e-9


def _raw_wav(path, fmt_tag, channels, bits, data: bytes, rate=RATE):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def test_float32_read(tmp_path):
    x = np.array([0.0, 0.25, -0.5, 1.0], dtype="<f4")
    _raw_wav(tmp_path / "f.wav", 3, 1, 32, x.tobytes())
    y, rate = read_wav(tmp_path / "f.wav")
    assert rate == RATE and np.allclose(y, x)


@pytest.mark.parametrize("tag,channels,bits", [(0x55, 1, 16), (1, 2, 16), (1, 1, 8), (1, 1, 24), (3, 1, 64)])
def test_unsupported_formats_rejected(tmp_path, tag, channels, bits):
    _raw_wav(tmp_path / "x.wav", tag, channels, bits, b"\0" * 48)
    with pytest.raises(AudioFormatError):
        read_wav(tmp_path / "x.wav")


def test_stereo_pcm_via_wave_rejected(tmp_path):
    with wave.open(str(tmp_path / "s.wav"), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(RATE)
        w.writeframes(b"\0" * 400)
    with pytest.raises(AudioFormatError, match="channel"):
        read_wav(tmp_path / "s.wav")
