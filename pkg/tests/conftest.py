import numpy as np
import pytest
import torch

from robustspeech.datasynth import build_noisy_corpus
from robustspeech.manifest import load_manifest
from robustspeech.model import GumbelSchedule, ModelConfig
from robustspeech.toycorpus import build_toy_corpus

torch.set_num_threads(max(1, torch.get_num_threads()))


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Seeded 6-utterance corpus with 2 noise clips, shared across tests."""
    root = tmp_path_factory.mktemp("toycorpus")
    clean, noise = build_toy_corpus(root, seed=11, n_utts=6, n_noise=2)
    return {"root": root, "clean": clean, "noise": noise}


@pytest.fixture(scope="session")
def noisy_corpus(toy_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("noisycorpus")
    clean = load_manifest(toy_corpus["clean"])
    noise = load_manifest(toy_corpus["noise"])
    build_noisy_corpus(clean, noise, out, seed=23)
    return {"root": out, "pairs": out / "pairs.jsonl"}


def tiny_model_config(**overrides) -> ModelConfig:
    """Small architecture for fast structural tests; same stride plan as the
    default (R = 40) so frame geometry oracles carry over."""
    fields = dict(
        encoder_layers=[(8, 10, 5), (8, 8, 4), (8, 4, 2)],
        model_dim=16,
        num_transformer_blocks=1,
        attention_heads=2,
        ffn_dim=32,
        pos_kernel=9,
        quantizer_groups=2,
        entries_per_group=8,
        num_negatives=4,
        recon_hidden=8,
    )
    fields.update(overrides)
    return ModelConfig(**fields)


def micro_model_config(**overrides) -> ModelConfig:
    """Minimal double-precision-friendly architecture for finite-difference
    gradient checks: positional conv off, short receptive field."""
    fields = dict(
        encoder_layers=[(4, 6, 3), (4, 4, 2)],
        model_dim=8,
        num_transformer_blocks=1,
        attention_heads=2,
        ffn_dim=16,
        pos_kernel=0,
        quantizer_groups=2,
        entries_per_group=4,
        num_negatives=3,
        mask_span=2,
        recon_hidden=4,
        vocab="- ABC",
        gumbel=GumbelSchedule(start=1.0, floor=0.5, decay=1.0),
    )
    fields.update(overrides)
    return ModelConfig(**fields)


def seeded_wave(seed: int, length: int, scale: float = 0.3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return scale * rng.standard_normal(length)
