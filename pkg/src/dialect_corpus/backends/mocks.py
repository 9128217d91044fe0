"""Deterministic in-process stand-ins for every backend kind.

Every answer is a pure function of ``(seed, kind, utterance_id, payload)``:
randomness comes from a BLAKE2 hash of those values, never from global
state, so repeated or concurrent calls agree bit for bit.

The recogniser mock invents a hidden reference sentence per utterance and
returns noisy copies of it, one per requested system, with an
utterance-level difficulty so confidences spread over all tiers. The
corrector mock knows the same reference and restores it whenever the
consensus already has the right length.
"""

from __future__ import annotations

import hashlib
import random
import time
from typing import Any, Mapping

from ..fusion import detokenize
from .protocol import BackendKind, BackendRequest, BackendTimeout

VOCAB = tuple(
    "我你他她们今天明晚上去哪里吃饭巴适得板安逸耍要不晓得啥子咋个老汉儿妹娃屋头街上"
    "火锅辣很好多少钱买东西回来慢点走说话听懂事情朋友一起看电视喝茶打牌"
) + ("OK", "GPS", "APP", "5G")
PARTICLE_MARKS = {"嘛": "period", "噻": "exclamation", "哦": "comma", "呢": "question",
                  "吗": "question", "啊": "exclamation", "哈": "comma"}
PARTICLES = tuple(PARTICLE_MARKS)
EMBED_DIM = 16
N_MOCK_SPEAKERS = 4
_SYSTEM_NOISE = (1.0, 1.3, 1.6)


def seeded_rng(seed: int, *parts: Any) -> random.Random:
    key = "\x1f".join([str(seed), *map(str, parts)]).encode("utf-8")
    return random.Random(int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big"))


def reference_tokens(seed: int, utterance_id: str) -> list[str]:
    """The hidden 'true' transcription the recogniser mock degrades."""
    rng = seeded_rng(seed, "reference", utterance_id)
    tokens = [rng.choice(VOCAB) for _ in range(rng.randint(6, 20))]
    for i in range(3, len(tokens), rng.randint(4, 8)):
        if rng.random() < 0.5:
            tokens[i] = rng.choice(PARTICLES)
    return tokens


def utterance_difficulty(seed: int, utterance_id: str) -> float:
    rng = seeded_rng(seed, "difficulty", utterance_id)
    u = rng.random()
    if u < 0.4:
        return rng.uniform(0.0, 0.05)
    if u < 0.75:
        return rng.uniform(0.05, 0.2)
    return rng.uniform(0.2, 0.6)


def corrupt(tokens: list[str], rate: float, rng: random.Random) -> list[str]:
    out = []
    for tok in tokens:
        if rng.random() >= rate:
            out.append(tok)
            continue
        op = rng.random()
        if op < 0.6:
            out.append(rng.choice([v for v in VOCAB if v != tok]))
        elif op < 0.8:
            continue
        else:
            out.extend([tok, rng.choice(VOCAB)])
    return out


class MockBackend:
    """Serves every :class:`BackendKind` deterministically.

    ``latency_ms=(lo, hi)`` adds a seeded sleep per request; a sleep longer
    than the caller's timeout raises :class:`BackendTimeout` instead.
    """

    def __init__(self, seed: int = 0, latency_ms: tuple[float, float] = (0.0, 0.0)):
        self.seed = seed
        self.latency_ms = latency_ms
        self._handlers = {
            BackendKind.ASR: self._asr,
            BackendKind.LLM_CORRECT: self._llm_correct,
            BackendKind.EMBED: self._embed,
            BackendKind.GENDER: self._gender,
            BackendKind.AGE: self._age,
            BackendKind.EMOTION: self._emotion,
            BackendKind.QUALITY: self._quality,
            BackendKind.ALIGN: self._align,
            BackendKind.PUNCT: self._punct,
            BackendKind.VAD: self._vad,
        }

    def __call__(self, request: BackendRequest, timeout_s: float) -> Mapping[str, Any]:
        lo, hi = self.latency_ms
        if hi > 0:
            delay = seeded_rng(self.seed, "latency", request.kind.value, request.utterance_id).uniform(lo, hi) / 1000
            if delay > timeout_s:
                time.sleep(timeout_s)
                raise BackendTimeout(f"mock {request.kind.value} exceeded {timeout_s:.3f}s")
            time.sleep(delay)
        return self._handlers[request.kind](request.utterance_id, request.payload)

    def _rng(self, kind: str, uid: str) -> random.Random:
        return seeded_rng(self.seed, kind, uid)

    def _asr(self, uid: str, payload: Mapping[str, Any]) -> dict:
        truth = reference_tokens(self.seed, uid)
        difficulty = utterance_difficulty(self.seed, uid)
        hyps = []
        for i, system in enumerate(payload["systems"]):
            rate = min(0.9, difficulty * _SYSTEM_NOISE[i % len(_SYSTEM_NOISE)])
            tokens = corrupt(truth, rate, seeded_rng(self.seed, "asr", system, uid))
            hyps.append({"system_id": system, "text": detokenize(tokens)})
        return {"hypotheses": hyps}

    def _llm_correct(self, uid: str, payload: Mapping[str, Any]) -> dict:
        consensus = list(payload["consensus"])
        if self._rng("llm_violation", uid).random() < 0.05:
            return {"tokens": consensus + ["嘛"]}
        truth = reference_tokens(self.seed, uid)
        return {"tokens": truth if len(truth) == len(consensus) else consensus}

    def _embed(self, uid: str, payload: Mapping[str, Any]) -> dict:
        rng = self._rng("embed", uid)
        speaker = rng.randrange(N_MOCK_SPEAKERS)
        vector = [0.0] * EMBED_DIM
        vector[speaker] = 1.0
        return {"vector": vector, "multi_speaker": rng.random() < 0.1}

    def _gender(self, uid: str, payload: Mapping[str, Any]) -> dict:
        label = self._rng("gender", uid).choices(["male", "female", "unknown"], [0.46, 0.46, 0.08])[0]
        return {"label": label}

    def _age(self, uid: str, payload: Mapping[str, Any]) -> dict:
        rng = self._rng("age", uid)
        return {"age_years": None if rng.random() < 0.05 else round(rng.uniform(6.0, 80.0), 1)}

    def _emotion(self, uid: str, payload: Mapping[str, Any]) -> dict:
        rng = self._rng("emotion", uid)
        labels = ["neutral", "happy", "angry", "sad", "fearful", "surprised", "disgusted"]
        weights = [0.5, 0.2, 0.1, 0.08, 0.04, 0.05, 0.03]
        first = rng.choices(labels, weights)[0]
        second = first if rng.random() < 0.7 else rng.choices(labels, weights)[0]
        return {"predictions": [first, second]}

    def _quality(self, uid: str, payload: Mapping[str, Any]) -> dict:
        return {"score": min(5.0, max(1.0, 1.0 + float(payload["snr_db"]) / 15.0))}

    def _align(self, uid: str, payload: Mapping[str, Any]) -> dict:
        rng = self._rng("align", uid)
        duration = float(payload["end_s"]) - float(payload["start_s"])
        gaps = [0.03, 0.08, 0.15, 0.3, 0.4, 0.7]
        weights = [0.3, 0.25, 0.15, 0.12, 0.08, 0.1]
        words = []
        t = round(rng.uniform(0.05, 0.3), 3)
        tokens = payload["tokens"]
        for i, tok in enumerate(tokens):
            end = round(t + rng.uniform(0.15, 0.35), 3)
            if i + 1 < len(tokens):
                pause = rng.choices(gaps, weights)[0]
                nxt = round(end + pause, 3)
            else:
                nxt = max(end, round(duration, 3))
            words.append({"token": tok, "start_s": t, "end_s": end, "pause_after_s": round(nxt - end, 3)})
            t = nxt
        return {"words": words}

    def _punct(self, uid: str, payload: Mapping[str, Any]) -> dict:
        rng = self._rng("punct", uid)
        candidates = []
        for i, tok in enumerate(payload["tokens"]):
            if tok in PARTICLE_MARKS:
                candidates.append({"position": i, "mark": PARTICLE_MARKS[tok]})
            elif rng.random() < 0.15:
                candidates.append({"position": i, "mark": "comma"})
        return {"candidates": candidates}

    def _vad(self, uid: str, payload: Mapping[str, Any]) -> dict:
        from ..audio import detect_speech_regions, frame_energies, read_wav
        from ..config import PipelineConfig

        config = PipelineConfig()
        samples, rate = read_wav(payload["audio_path"])
        energies = frame_energies(samples, rate, config.frame_ms, config.hop_ms)
        regions = detect_speech_regions(energies, config)
        return {"regions": [{"start_s": r.start_s, "end_s": r.end_s} for r in regions]}
