"""Seeded micro-corpus so the whole pipeline runs from nothing.

"Speech" clips are multi-tone signals: each transcript character maps to a
fixed two-tone chord on a frequency grid with a raised-cosine envelope,
words are separated by silence, so transcript and waveform stay coupled.
Noise clips are smoothed white noise with a per-clip random kernel width.
Everything is derived from the corpus seed; reruns are bit-identical.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, AudioClip, write_wav
from .errors import DataError
from .manifest import Manifest, ManifestEntry, save_manifest
from .seeding import derived_rng

TOY_LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
# Characters span several mask widths (32 encoder frames vs 10-frame spans),
# so a masked frame's character is almost always partly visible and its code
# predictable; gaps stay short because once noise is mixed in, masked gap
# frames carry no predictable content at all.
CHAR_SECONDS = 0.08
GAP_SECONDS = 0.015
EDGE_SECONDS = 0.0025
# The character ladder sits on a frequency grid tied to the encoder hop
# (40 samples at 16 kHz, i.e. 400 frames/s): a tone at a multiple of 200 Hz
# advances a whole or half number of cycles between frames, so consecutive
# frames of a character see the same waveform chunk (up to sign) and
# quantize to the same code. Character identity then lives purely in
# frequency, and a masked frame is predictable from any visible frame of
# the same character. Off-grid tones drift in phase from frame to frame,
# which makes every masked frame its own prediction problem. The 200 Hz
# spacing also keeps all 26 rungs and their upper chord notes below the
# Nyquist frequency.
FREQ_BASE = 600.0
FREQ_STEP = 200.0


def character_tone(char: str, sample_rate: int = DEFAULT_SAMPLE_RATE,
                   rng: np.random.Generator = None) -> np.ndarray:
    """Two-tone chord for one character; silence for a space.

    The character's identity is its rung on the frequency grid; the chord
    pairs the rung with the note two rungs up. The only per-rendition
    freedom is the pair of phases, which keeps renditions of one letter
    from being exact copies of each other while leaving every frame within
    a rendition interchangeable.
    """
    n = int(round(CHAR_SECONDS * sample_rate))
    if char == " ":
        return np.zeros(int(round(GAP_SECONDS * sample_rate)))
    if char == "'":
        return np.zeros(n)
    step = ord(char) - ord("A")
    if not 0 <= step < 26:
        raise DataError(f"cannot synthesize character {char!r}")
    low = FREQ_BASE + FREQ_STEP * step
    high = low + 2 * FREQ_STEP
    if rng is None:
        phase1 = phase2 = 0.0
    else:
        phase1 = float(rng.uniform(0, 2 * np.pi))
        phase2 = float(rng.uniform(0, 2 * np.pi))
    t = np.arange(n) / sample_rate
    tone = (0.65 * np.sin(2 * np.pi * low * t + phase1)
            + 0.35 * np.sin(2 * np.pi * high * t + phase2))
    edge = int(round(EDGE_SECONDS * sample_rate))
    envelope = np.ones(n)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(edge) / edge)
    envelope[:edge] = ramp
    envelope[-edge:] = ramp[::-1]
    return tone * envelope


def synthesize_utterance(transcript: str, sample_rate: int = DEFAULT_SAMPLE_RATE,
                         amplitude: float = 0.4,
                         rng: np.random.Generator = None) -> np.ndarray:
    pieces = [character_tone(ch, sample_rate, rng) for ch in transcript]
    wave = np.concatenate(pieces)
    if rng is not None:
        # quiet texture floor keeps every frame distinct without drowning
        # the tonal structure (about -32 dB against the tones)
        texture = np.convolve(rng.standard_normal(len(wave)),
                              np.ones(8) / 8.0, mode="same")
        wave = wave + 0.025 * texture
    peak = np.abs(wave).max()
    if peak > 0:
        wave = wave * (amplitude / peak)
    return wave


def random_transcript(rng: np.random.Generator) -> str:
    """Three words of 4-6 letters, no letter used twice in the utterance.

    Every frame of one character quantizes to (nearly) the same codeword,
    so a repeated letter plants exact duplicates of the contrastive target
    among the distractors and puts a floor under the training loss. Keeping
    letters unique inside an utterance caps that floor at the character's
    own span.
    """
    pool = list(rng.permutation(list(TOY_LETTERS)))
    words = []
    for _ in range(3):
        length = int(rng.integers(4, 7))
        words.append("".join(pool.pop() for _ in range(length)))
    return " ".join(words)


def synthesize_noise(rng: np.random.Generator, num_samples: int) -> np.ndarray:
    white = rng.standard_normal(num_samples)
    width = int(rng.integers(3, 17))
    kernel = np.hanning(width + 2)[1:-1]
    smoothed = np.convolve(white, kernel / kernel.sum(), mode="same")
    peak = np.abs(smoothed).max()
    return smoothed * (0.5 / peak)


def build_toy_corpus(out_dir, seed: int, n_utts: int, n_noise: int,
                     sample_rate: int = DEFAULT_SAMPLE_RATE):
    """Writes WAVs plus clean.jsonl / noise.jsonl manifests under out_dir.
    Returns (clean_manifest_path, noise_manifest_path)."""
    if n_utts < 1:
        raise DataError("need at least one utterance")
    if n_noise < 1:
        raise DataError("need at least one noise clip")
    out_dir = Path(out_dir)
    clean_entries = []
    for i in range(n_utts):
        rng = derived_rng(seed, "utt", i)
        transcript = random_transcript(rng)
        amplitude = 0.25 + 0.3 * float(rng.random())
        wave = synthesize_utterance(transcript, sample_rate, amplitude, rng)
        rel = f"clean/utt{i:03d}.wav"
        write_wav(out_dir / rel, AudioClip(wave, sample_rate))
        clean_entries.append(ManifestEntry(
            utterance_id=f"utt{i:03d}", audio_path=rel,
            duration_seconds=len(wave) / sample_rate, role="clean",
            transcript=transcript, seed=seed))
    noise_entries = []
    for j in range(n_noise):
        rng = derived_rng(seed, "noise", j)
        length = int(sample_rate * (1.0 + float(rng.random())))
        wave = synthesize_noise(rng, length)
        rel = f"noise/noise{j:02d}.wav"
        write_wav(out_dir / rel, AudioClip(wave, sample_rate))
        noise_entries.append(ManifestEntry(
            utterance_id=f"noise{j:02d}", audio_path=rel,
            duration_seconds=len(wave) / sample_rate, role="noise",
            noise_id=f"noise{j:02d}", seed=seed))
    clean_path = out_dir / "clean.jsonl"
    noise_path = out_dir / "noise.jsonl"
    save_manifest(Manifest(clean_entries, root=out_dir), clean_path)
    save_manifest(Manifest(noise_entries, root=out_dir), noise_path)
    return clean_path, noise_path
