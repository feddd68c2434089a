"""Noisy/clean pair synthesis and channel-subset selection.

Mixing is SNR-exact: the noise segment is scaled so the requested
clean-to-noise power ratio holds on the emitted waveforms. Power is the mean
squared amplitude over the full utterance. All randomness derives from
(seed, utterance_id), so corpus builds are reproducible and order-independent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioClip, read_wav, write_wav
from .errors import (DegenerateChannel, EmptyManifest, LengthMismatch,
                     RateMismatch, SilentInput)
from .manifest import Manifest, ManifestEntry, relative_to_root, save_manifest
from .seeding import derive_seed, derived_rng

logger = logging.getLogger(__name__)

PEAK_TARGET = 0.99
SNR_CHOICES_DB = (5, 20)  # inclusive integer range


@dataclass
class NoisyPair:
    """One training example for continual pre-training."""

    noisy: AudioClip
    clean: AudioClip
    snr_db: float
    noise_id: str
    seed: int

    def measured_snr_db(self) -> float:
        """SNR recomputed from the emitted waveforms."""
        residual = self.noisy.samples - self.clean.samples
        return 10.0 * np.log10(self.clean.power() / float(np.mean(residual ** 2)))


def sample_snr(rng: np.random.Generator, low: int = SNR_CHOICES_DB[0],
               high: int = SNR_CHOICES_DB[1]) -> int:
    """Integer SNR drawn uniformly from {low, ..., high} dB."""
    return int(rng.integers(low, high + 1))


def _cut_or_tile(noise: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Random-offset cut when the noise is long enough, circular tile otherwise."""
    n = len(noise)
    if n >= length:
        offset = int(rng.integers(0, n - length + 1))
        return noise[offset:offset + length]
    offset = int(rng.integers(0, n))
    idx = (offset + np.arange(length)) % n
    return noise[idx]


def mix_at_snr(clean: AudioClip, noise: AudioClip, snr_db: float, seed: int) -> NoisyPair:
    """Mix ``noise`` into ``clean`` at an exact SNR.

    The noise segment (seeded cut or circular tile to the clean length) is
    scaled by sqrt(P_clean / (P_noise * 10^(snr/10))) and added. If the mix
    clips, noisy and clean are jointly rescaled so peak |noisy| = 0.99, which
    preserves the measured SNR.
    """
    if clean.sample_rate != noise.sample_rate:
        raise RateMismatch(
            f"{clean.id!r} at {clean.sample_rate} Hz vs {noise.id!r} at {noise.sample_rate} Hz")
    p_clean = clean.power()
    if p_clean == 0.0:
        raise SilentInput(f"clean clip {clean.id!r} has zero power")
    if noise.power() == 0.0:
        raise SilentInput(f"noise clip {noise.id!r} has zero power")

    rng = np.random.default_rng(seed)
    segment = _cut_or_tile(noise.samples, len(clean), rng)
    p_segment = float(np.mean(segment ** 2))
    if p_segment == 0.0:
        raise SilentInput(f"cut segment of noise clip {noise.id!r} has zero power")

    gain = np.sqrt(p_clean / (p_segment * 10.0 ** (snr_db / 10.0)))
    noisy = clean.samples + gain * segment
    clean_out = clean.samples

    peak = float(np.max(np.abs(noisy)))
    if peak > 1.0:
        rescale = PEAK_TARGET / peak
        noisy = noisy * rescale
        clean_out = clean_out * rescale

    return NoisyPair(
        noisy=AudioClip(noisy, clean.sample_rate, f"{clean.id}-noisy"),
        clean=AudioClip(clean_out, clean.sample_rate, clean.id),
        snr_db=float(snr_db),
        noise_id=noise.id,
        seed=seed,
    )


def build_noisy_corpus(clean_manifest: Manifest, noise_manifest: Manifest,
                       out_dir, seed: int,
                       snr_low: int = SNR_CHOICES_DB[0],
                       snr_high: int = SNR_CHOICES_DB[1]) -> Manifest:
    """Mix every clean utterance with a seeded noise pick and write the pairs.

    Emits noisy/ and clean/ WAVs under ``out_dir`` plus a paired manifest
    (pairs.jsonl) linking noisy path, clean path, transcript and SNR. Per-entry
    failures are logged with the utterance id and skipped; the remaining pairs
    are still produced. Bit-identical for a fixed seed.
    """
    if len(clean_manifest) == 0:
        raise EmptyManifest("clean manifest has no entries")
    if len(noise_manifest) == 0:
        raise EmptyManifest("noise manifest has no entries")

    out_dir = Path(out_dir)
    noise_entries = list(noise_manifest)
    pair_entries = []
    failures = []
    for entry in clean_manifest:
        rng = derived_rng(seed, "pair", entry.utterance_id)
        noise_entry = noise_entries[int(rng.integers(0, len(noise_entries)))]
        snr_db = sample_snr(rng, snr_low, snr_high)
        mix_seed = int(rng.integers(0, 2 ** 62))
        try:
            clean = read_wav(clean_manifest.resolve(entry.audio_path), entry.utterance_id)
            noise = read_wav(noise_manifest.resolve(noise_entry.audio_path),
                             noise_entry.utterance_id)
            pair = mix_at_snr(clean, noise, snr_db, mix_seed)
        except Exception as exc:
            logger.warning("skipping %s: %s", entry.utterance_id, exc)
            failures.append((entry.utterance_id, exc))
            continue

        noisy_path = out_dir / "noisy" / f"{entry.utterance_id}.wav"
        clean_path = out_dir / "clean" / f"{entry.utterance_id}.wav"
        write_wav(noisy_path, pair.noisy)
        write_wav(clean_path, pair.clean)
        pair_entries.append(ManifestEntry(
            utterance_id=entry.utterance_id,
            audio_path=relative_to_root(noisy_path, out_dir),
            duration_seconds=pair.noisy.duration,
            role="noisy",
            transcript=entry.transcript,
            clean_path=relative_to_root(clean_path, out_dir),
            snr_db=float(snr_db),
            noise_id=noise_entry.utterance_id,
            seed=mix_seed,
        ))

    paired = Manifest(pair_entries, root=out_dir)
    save_manifest(paired, out_dir / "pairs.jsonl")
    if failures:
        logger.warning("corpus build: %d/%d entries failed", len(failures), len(clean_manifest))
    return paired


# -- multi-channel subset selection ------------------------------------------

@dataclass
class MultiChannelRecording:
    """Equal-length channels of one recording."""

    channels: list
    id: str = ""

    def __post_init__(self):
        if len(self.channels) < 2:
            raise RateMismatch("need at least 2 channels")
        lengths = {len(c) for c in self.channels}
        rates = {c.sample_rate for c in self.channels}
        if len(lengths) != 1:
            raise LengthMismatch(f"recording {self.id!r}: channels differ in length")
        if len(rates) != 1:
            raise RateMismatch(f"recording {self.id!r}: mixed sample rates")


def _correlation_matrix(rec: MultiChannelRecording) -> np.ndarray:
    data = np.stack([c.samples for c in rec.channels])
    stds = data.std(axis=1)
    if np.any(stds == 0.0):
        bad = [i for i, s in enumerate(stds) if s == 0.0]
        raise DegenerateChannel(f"zero-variance channels {bad} in {rec.id!r}")
    centered = data - data.mean(axis=1, keepdims=True)
    cov = centered @ centered.T / data.shape[1]
    return cov / np.outer(stds, stds)


def select_reference_channel(rec: MultiChannelRecording) -> int:
    """Channel whose summed correlation with all other channels is largest.

    Ties break toward the lowest index.
    """
    corr = _correlation_matrix(rec)
    np.fill_diagonal(corr, 0.0)
    totals = corr.sum(axis=1)
    return int(np.argmax(totals))  # argmax returns the first (lowest) maximum


def select_top_correlated(rec: MultiChannelRecording, reference: int, k: int) -> list:
    """The k non-reference channels most correlated with the reference.

    Descending by correlation; ties break toward the lowest index.
    """
    n = len(rec.channels)
    if not 0 <= reference < n:
        raise DegenerateChannel(f"reference index {reference} out of range")
    if k >= n:
        raise DegenerateChannel(f"k={k} must be smaller than the channel count {n}")
    corr = _correlation_matrix(rec)
    others = [i for i in range(n) if i != reference]
    ranked = sorted(others, key=lambda i: (-corr[reference, i], i))
    return ranked[:k]
