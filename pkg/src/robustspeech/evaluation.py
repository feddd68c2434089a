"""CTC decoding (greedy and prefix beam search with optional character-LM
shallow fusion), WER scoring and corpus evaluation.

The beam search prunes at the candidate level: all (hypothesis, symbol)
extension pairs are ranked by the mass they move, the top beam_size pairs are
kept, and only then are they merged into prefixes with the usual
blank/non-blank bookkeeping. With beam 1 this reduces to following the
per-frame argmax, so it agrees with greedy decoding on every input; with a
beam wide enough to keep every pair it performs the exact path-sum
marginalization.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .audio import read_wav
from .checkpoint import load_checkpoint
from .errors import ConfigMismatch, DataError, EmptyGrid, EmptyReference
from .manifest import load_manifest
from .model import ModelConfig, build_model
from .text import Vocabulary, normalize_text

logger = logging.getLogger(__name__)

NEG_INF = float("-inf")


@dataclass
class DecodeConfig:
    mode: str = "greedy"
    beam_size: int = 16
    lm: Optional[object] = None
    lm_weight: float = 0.0
    insertion_penalty: float = 0.0

    def __post_init__(self):
        if self.mode not in ("greedy", "beam"):
            raise DataError("mode must be 'greedy' or 'beam'")
        if self.beam_size < 1:
            raise DataError("beam_size must be >= 1")
        if not (np.isfinite(self.lm_weight) and np.isfinite(self.insertion_penalty)):
            raise DataError("lm_weight and insertion_penalty must be finite")


def _as_array(log_probs) -> np.ndarray:
    if torch.is_tensor(log_probs):
        log_probs = log_probs.detach().cpu().numpy()
    return np.asarray(log_probs, dtype=np.float64)


def greedy_decode(log_probs, vocab: Vocabulary) -> str:
    """Per-frame argmax, collapse repeats, drop blanks."""
    lp = _as_array(log_probs)
    if lp.ndim != 2:
        raise DataError("greedy_decode expects [T, vocab] log-probabilities")
    best = lp.argmax(axis=1)
    chars = []
    previous = None
    for index in best:
        if index != previous and index != vocab.blank:
            chars.append(vocab.chars[index])
        previous = index
    return "".join(chars)


def _lm_char_logp(cfg: DecodeConfig, vocab: Vocabulary, prefix: tuple, index: int) -> float:
    if cfg.lm is None:
        return 0.0
    context = "".join(vocab.chars[i] for i in prefix)
    return cfg.lm.log_prob(vocab.chars[index], context)


def beam_decode_with_score(log_probs, cfg: DecodeConfig, vocab: Vocabulary):
    """Returns (text, fused score of the best hypothesis)."""
    lp = _as_array(log_probs)
    if lp.ndim != 2:
        raise DataError("beam_decode expects [T, vocab] log-probabilities")
    blank = vocab.blank
    weight, penalty = cfg.lm_weight, cfg.insertion_penalty

    # prefix -> (blank-ending mass, non-blank-ending mass); lm score per prefix
    beams = {(): (0.0, NEG_INF)}
    lm_scores = {(): 0.0}

    for t in range(lp.shape[0]):
        candidates = []
        for prefix, (p_blank, p_char) in beams.items():
            total = np.logaddexp(p_blank, p_char)
            fused_base = weight * lm_scores[prefix] + penalty * len(prefix)
            for v in range(lp.shape[1]):
                step = lp[t, v]
                if v == blank:
                    rank = total + step + fused_base
                elif prefix and v == prefix[-1]:
                    merge = p_char + step + fused_base
                    extend = (p_blank + step + fused_base
                              + weight * _lm_char_logp(cfg, vocab, prefix, v) + penalty)
                    rank = max(merge, extend)
                else:
                    rank = (total + step + fused_base
                            + weight * _lm_char_logp(cfg, vocab, prefix, v) + penalty)
                candidates.append((rank, prefix, v))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        kept = candidates[:cfg.beam_size]

        new_beams = {}

        def _accumulate(prefix, blank_mass, char_mass):
            old_blank, old_char = new_beams.get(prefix, (NEG_INF, NEG_INF))
            new_beams[prefix] = (np.logaddexp(old_blank, blank_mass),
                                 np.logaddexp(old_char, char_mass))

        for _, prefix, v in kept:
            p_blank, p_char = beams[prefix]
            total = np.logaddexp(p_blank, p_char)
            step = lp[t, v]
            if v == blank:
                _accumulate(prefix, total + step, NEG_INF)
            elif prefix and v == prefix[-1]:
                _accumulate(prefix, NEG_INF, p_char + step)
                extended = prefix + (v,)
                if extended not in lm_scores:
                    lm_scores[extended] = lm_scores[prefix] + _lm_char_logp(cfg, vocab, prefix, v)
                _accumulate(extended, NEG_INF, p_blank + step)
            else:
                extended = prefix + (v,)
                if extended not in lm_scores:
                    lm_scores[extended] = lm_scores[prefix] + _lm_char_logp(cfg, vocab, prefix, v)
                _accumulate(extended, NEG_INF, total + step)
        # drop prefixes whose every contribution was infeasible
        beams = {p: masses for p, masses in new_beams.items()
                 if max(masses) > NEG_INF}
        if not beams:
            beams = {(): (0.0, NEG_INF)}

    def fused(item):
        prefix, (p_blank, p_char) = item
        return (np.logaddexp(p_blank, p_char)
                + weight * lm_scores[prefix] + penalty * len(prefix))

    best_prefix, _ = max(beams.items(), key=lambda item: (fused(item), item[0]))
    best_score = fused((best_prefix, beams[best_prefix]))
    return "".join(vocab.chars[i] for i in best_prefix), float(best_score)


def beam_decode(log_probs, cfg: DecodeConfig, vocab: Vocabulary) -> str:
    text, _ = beam_decode_with_score(log_probs, cfg, vocab)
    return text


def decode(log_probs, cfg: DecodeConfig, vocab: Vocabulary) -> str:
    if cfg.mode == "greedy":
        return greedy_decode(log_probs, vocab)
    return beam_decode(log_probs, cfg, vocab)


# -- scoring ------------------------------------------------------------------

def edit_distance(a: list, b: list) -> int:
    """Levenshtein distance between token sequences."""
    previous = list(range(len(b) + 1))
    for i, token_a in enumerate(a, start=1):
        current = [i] + [0] * len(b)
        for j, token_b in enumerate(b, start=1):
            current[j] = min(previous[j] + 1,
                             current[j - 1] + 1,
                             previous[j - 1] + (token_a != token_b))
        previous = current
    return previous[-1]


def wer(hypothesis: str, reference: str) -> float:
    """Word-level edit distance over reference word count, after shared text
    normalization."""
    ref_words = normalize_text(reference).split()
    if not ref_words:
        raise EmptyReference("reference has no words after normalization")
    hyp_words = normalize_text(hypothesis).split()
    return edit_distance(hyp_words, ref_words) / len(ref_words)


def tune_lm_weights(dev_set, base_cfg: DecodeConfig, grid_weights, grid_penalties,
                    vocab: Vocabulary):
    """Exhaustive grid search minimizing pooled dev WER.

    dev_set: list of (log_probs, reference) pairs. Ties prefer the smaller
    |lm_weight|, then the smaller |insertion_penalty|.
    Returns (lm_weight, insertion_penalty).
    """
    grid_weights = list(grid_weights)
    grid_penalties = list(grid_penalties)
    if not grid_weights or not grid_penalties:
        raise EmptyGrid("grid must contain at least one point per axis")
    if not dev_set:
        raise DataError("dev set is empty")
    scored = []
    for lm_weight in grid_weights:
        for penalty in grid_penalties:
            cfg = DecodeConfig(mode="beam", beam_size=base_cfg.beam_size,
                               lm=base_cfg.lm, lm_weight=lm_weight,
                               insertion_penalty=penalty)
            edits = ref_words = 0
            for log_probs, reference in dev_set:
                hyp = beam_decode(log_probs, cfg, vocab)
                ref_tokens = normalize_text(reference).split()
                if not ref_tokens:
                    raise EmptyReference("dev reference has no words")
                edits += edit_distance(normalize_text(hyp).split(), ref_tokens)
                ref_words += len(ref_tokens)
            scored.append((edits / ref_words, abs(lm_weight), abs(penalty),
                           lm_weight, penalty))
    scored.sort()
    _, _, _, lm_weight, penalty = scored[0]
    return lm_weight, penalty


# -- corpus evaluation --------------------------------------------------------

def load_eval_model(checkpoint_path, dtype: torch.dtype = torch.float32):
    from .training import load_model_weights

    snapshot = load_checkpoint(checkpoint_path)
    if not snapshot.extra.get("has_ctc"):
        raise ConfigMismatch("checkpoint has no CTC head; fine-tune before evaluating")
    cfg = ModelConfig.from_dict(snapshot.config["model"])
    model = build_model(cfg, reconstruction=False, ctc=True, dtype=dtype, init_seed=0)
    load_model_weights(model, snapshot.tensors, drop_prefixes=("reconstruction.",))
    model.eval()
    return model, cfg


def evaluate(checkpoint_path, manifest_path, cfg: DecodeConfig, out_path=None) -> dict:
    """Decode every transcribed utterance and pool WER over the corpus
    (total edits / total reference words, not a mean of per-utterance WERs).
    Per-entry failures are recorded and skipped."""
    model, model_cfg = load_eval_model(checkpoint_path)
    vocab = Vocabulary(model_cfg.vocab)
    manifest = load_manifest(manifest_path)
    rows = []
    total_edits = 0
    total_ref_words = 0
    for entry in manifest.entries:
        if entry.role == "noise":
            continue
        try:
            if not entry.transcript:
                raise DataError(f"entry {entry.utterance_id!r} has no transcript")
            clip = read_wav(manifest.resolve(entry))
            wave = torch.from_numpy(clip.samples).to(model.dtype)
            with torch.no_grad():
                log_probs, _ = model.ctc_forward(wave)
            hyp = decode(log_probs, cfg, vocab)
            ref_tokens = normalize_text(entry.transcript).split()
            if not ref_tokens:
                raise EmptyReference(f"entry {entry.utterance_id!r} normalizes to nothing")
            errors = edit_distance(normalize_text(hyp).split(), ref_tokens)
            total_edits += errors
            total_ref_words += len(ref_tokens)
            rows.append({"utt_id": entry.utterance_id, "ref": entry.transcript,
                         "hyp": hyp, "errors": errors, "ref_words": len(ref_tokens)})
        except Exception as exc:  # noqa: BLE001 - per-entry isolation is the contract
            logger.warning("skipping %s: %s", entry.utterance_id, exc)
            rows.append({"utt_id": entry.utterance_id,
                         "error": f"{type(exc).__name__}: {exc}"})
    if total_ref_words == 0:
        raise DataError("no utterance could be scored")
    summary = {
        "corpus_wer": total_edits / total_ref_words,
        "utterances": sum(1 for r in rows if "error" not in r),
        "failed": sum(1 for r in rows if "error" in r),
        "total_errors": total_edits,
        "total_ref_words": total_ref_words,
    }
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
            fh.write(json.dumps({"summary": summary}, sort_keys=True) + "\n")
    return {"per_utterance": rows, **summary}
