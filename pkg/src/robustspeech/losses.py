"""Training objectives.

- contrastive: InfoNCE over cosine similarities at masked frames
- diversity: pushes the quantizer's selection distribution toward uniform
- reconstruction: mean absolute error against the clean waveform
- ctc: log-space forward recursion over blank-augmented label sequences

All losses are plain tensor expressions, so gradients flow through autograd;
the CTC recursion uses logsumexp rather than any fused kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import (
    DataError,
    InfeasibleAlignment,
    LengthMismatch,
    NotADistribution,
    ZeroVector,
)

COSINE_EPS = 1e-12


@dataclass
class LossBreakdown:
    contrastive: torch.Tensor
    diversity: torch.Tensor
    reconstruction: torch.Tensor
    total: torch.Tensor
    contrastive_accuracy: float
    codebook_perplexity: float


def cosine_similarity_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Row-wise cosine similarity between [N, D] and [N, K, D]."""
    a_norm = a.norm(dim=-1)
    b_norm = b.norm(dim=-1)
    if bool((a_norm < COSINE_EPS).any()) or bool((b_norm < COSINE_EPS).any()):
        raise ZeroVector("cosine similarity undefined for a zero-magnitude vector")
    dots = torch.einsum("nd,nkd->nk", a, b)
    return dots / (a_norm.unsqueeze(-1) * b_norm)


def contrastive_loss(context: torch.Tensor, positives: torch.Tensor,
                     negatives: torch.Tensor, temperature: float):
    """InfoNCE over one positive and K negatives per masked frame.

    context: [N, D] contextual vectors at masked frames.
    positives: [N, D] quantized targets for the same frames.
    negatives: [N, K, D] distractor quantized vectors.

    Returns (loss, accuracy) where accuracy is the fraction of frames whose
    positive outscores every negative.
    """
    if context.shape[0] == 0:
        raise DataError("contrastive loss needs at least one masked frame")
    candidates = torch.cat([positives.unsqueeze(1), negatives], dim=1)
    sims = cosine_similarity_matrix(context, candidates) / temperature
    log_probs = F.log_softmax(sims, dim=-1)
    loss = -log_probs[:, 0].mean()
    accuracy = float((sims.argmax(dim=-1) == 0).float().mean())
    return loss, accuracy


def diversity_loss(usage: torch.Tensor):
    """Scaled entropy shortfall of the codebook selection distribution.

    usage: [G, V], each row a distribution over that group's entries.
    Returns (loss, perplexity) with loss = (GV - sum_g exp(H_g)) / (GV) and
    perplexity = sum_g exp(H_g); loss is 0 at uniform usage and approaches
    (V-1)/V as each group collapses to one entry.
    """
    if usage.dim() != 2:
        raise NotADistribution("usage must be a [groups, entries] matrix")
    row_sums = usage.sum(dim=-1)
    if bool((usage < 0).any()) or bool((row_sums - 1.0).abs().max() > 1e-4):
        raise NotADistribution("usage rows must be nonnegative and sum to 1")
    groups, entries = usage.shape
    entropy = -(usage * torch.log(usage.clamp_min(1e-12))).sum(dim=-1)
    perplexity = entropy.exp().sum()
    loss = (groups * entries - perplexity) / (groups * entries)
    return loss, float(perplexity.detach())


def reconstruction_loss(y_hat: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error; lengths must already match exactly."""
    if y_hat.shape != target.shape:
        raise LengthMismatch(
            f"reconstruction shape {tuple(y_hat.shape)} vs target {tuple(target.shape)}")
    return (y_hat - target).abs().mean()


def total_loss(contrastive: torch.Tensor, diversity: torch.Tensor,
               reconstruction, diversity_weight: float, recon_weight: float):
    total = contrastive + diversity_weight * diversity
    if reconstruction is not None:
        total = total + recon_weight * reconstruction
    return total


# -- CTC ----------------------------------------------------------------------

def ctc_loss(log_probs: torch.Tensor, targets, blank: int = 0) -> torch.Tensor:
    """Negative log-likelihood of the target sequence under CTC.

    log_probs: [T, V] per-frame log-probabilities for one utterance.
    targets: iterable of label indices (blank excluded).

    The blank-augmented sequence interleaves blanks around the labels; the
    forward recursion allows a diagonal skip only between distinct labels.
    Infeasible cases (T < minimum alignment length) raise InfeasibleAlignment.
    """
    if log_probs.dim() != 2:
        raise DataError("ctc_loss expects [T, V] log-probabilities for one utterance")
    targets = [int(t) for t in targets]
    if any(t == blank for t in targets):
        raise DataError("targets must not contain the blank index")
    if any(not 0 <= t < log_probs.shape[1] for t in targets):
        raise DataError("target index outside the vocabulary")
    num_frames = log_probs.shape[0]
    min_frames = len(targets) + sum(
        1 for i in range(1, len(targets)) if targets[i] == targets[i - 1])
    if num_frames < min_frames:
        raise InfeasibleAlignment(
            f"{num_frames} frames cannot align {len(targets)} labels "
            f"(needs at least {min_frames})")

    # blank-augmented label sequence: - l1 - l2 - ... - lm -
    augmented = [blank]
    for t in targets:
        augmented.extend([t, blank])
    s = len(augmented)
    neg_inf = torch.tensor(float("-inf"), dtype=log_probs.dtype, device=log_probs.device)

    alpha = [neg_inf] * s
    alpha[0] = log_probs[0, blank]
    if s > 1:
        alpha[1] = log_probs[0, augmented[1]]
    for t in range(1, num_frames):
        new = [neg_inf] * s
        for j in range(s):
            terms = [alpha[j]]
            if j >= 1:
                terms.append(alpha[j - 1])
            if j >= 2 and augmented[j] != blank and augmented[j] != augmented[j - 2]:
                terms.append(alpha[j - 2])
            stacked = torch.stack(terms)
            if bool(torch.isinf(stacked).all()):
                continue
            new[j] = torch.logsumexp(stacked, dim=0) + log_probs[t, augmented[j]]
        alpha = new

    tail = [alpha[-1]] if s == 1 else [alpha[-1], alpha[-2]]
    likelihood = torch.logsumexp(torch.stack(tail), dim=0)
    return -likelihood
