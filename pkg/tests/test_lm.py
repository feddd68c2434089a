"""Character n-gram language model tests."""

import math

import numpy as np
import pytest

from robustspeech.errors import DataError
from robustspeech.lm import CharNGramLM, train_lm_from_manifest
from robustspeech.manifest import load_manifest


def _trained(order=3, add_k=0.5):
    texts = ["the cat sat", "the hat", "a cat ate"]
    return CharNGramLM(order=order, add_k=add_k, charset=" abcdefghijklmnopqrstuvwxyz"
                       .upper() + "'").train(texts), texts


def test_conditional_distributions_sum_to_one():
    lm, _ = _trained()
    for context in ("", "T", "TH", "THE C", "ZZZ"):
        total = sum(math.exp(lm.log_prob(ch, context)) for ch in lm.charset)
        assert total == pytest.approx(1.0, abs=1e-9), context


def test_unigram_matches_add_k_closed_form():
    lm, texts = _trained(order=1, add_k=0.5)
    joined = "".join(t.upper() for t in texts)
    n_t = joined.count("T")
    total = len(joined)
    v = len(lm.charset)
    expected = math.log((n_t + 0.5) / (total + 0.5 * v))
    assert lm.log_prob("T", "") == pytest.approx(expected, abs=1e-12)


def test_seen_continuation_beats_unseen():
    lm, _ = _trained()
    # "TH" was always followed by "E" in training
    assert lm.log_prob("E", "TH") > lm.log_prob("Q", "TH")
    assert lm.log_prob("E", "TH") > lm.log_prob("E", "QQ")


def test_backoff_uses_longest_observed_context():
    lm, _ = _trained(order=3)
    # context "XT" was never seen, so "XT" must score like "T" alone
    assert lm.log_prob("H", "XT") == pytest.approx(lm.log_prob("H", "T"), abs=1e-12)
    # but the observed bigram context "AT" carries its own statistics
    assert lm.log_prob(" ", "AT") != pytest.approx(lm.log_prob(" ", "XT"), abs=1e-6)


def test_sequence_log_prob_is_sum_of_steps():
    lm, _ = _trained()
    text = "THE CAT"
    total = lm.sequence_log_prob(text)
    manual = sum(lm.log_prob(ch, text[:i]) for i, ch in enumerate(text))
    assert total == pytest.approx(manual, abs=1e-12)
    assert lm.sequence_log_prob("THE CAT") > lm.sequence_log_prob("QQQ ZZZ")


def test_rejects_characters_outside_charset():
    lm, _ = _trained()
    with pytest.raises(DataError):
        lm.log_prob("7", "")
    with pytest.raises(DataError):
        CharNGramLM(order=2, charset="AB").train(["ABC"])


def test_constructor_validation():
    with pytest.raises(DataError):
        CharNGramLM(order=0)
    with pytest.raises(DataError):
        CharNGramLM(add_k=0.0)


def test_save_load_roundtrip(tmp_path):
    lm, _ = _trained()
    path = tmp_path / "lm.json"
    lm.save(path)
    again = CharNGramLM.load(path)
    rng = np.random.default_rng(0)
    chars = lm.charset
    for _ in range(50):
        ch = chars[rng.integers(len(chars))]
        ctx = "".join(chars[i] for i in rng.integers(len(chars), size=3))
        assert again.log_prob(ch, ctx) == lm.log_prob(ch, ctx)
    with pytest.raises(DataError):
        CharNGramLM.load(tmp_path / "missing.json")


def test_train_from_manifest(toy_corpus):
    manifest = load_manifest(toy_corpus["clean"])
    lm = train_lm_from_manifest(manifest, order=3)
    plausible = manifest.entries[0].transcript
    # junk of identical length and word shape, so only content differs
    junk = "".join(" " if ch == " " else "Q" for ch in plausible)
    assert lm.sequence_log_prob(plausible) > lm.sequence_log_prob(junk)
