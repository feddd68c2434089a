"""Neural architecture: CNN feature encoder, Gumbel vector quantizer, span
masking, transformer context network, CTC head, and the clean-waveform
reconstruction module (recurrent bottleneck + transposed-CNN decoder) that can
attach to the contextual, latent, or quantized representations.

Shapes: waveforms are [B, T] (or [T]); frame-level tensors are [B, T', D].
Padded frames are tracked with boolean validity masks and excluded from every
loss by the trainer. Reconstruction runs per utterance so its output length
matches that utterance exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import AttachmentMismatch, ConfigMismatch, DataError, TooShort
from .text import DEFAULT_CHARSET

ATTACH_SITES = ("context", "latent", "quantized")
BOTTLENECKS = ("crn", "blstm")


@dataclass
class GumbelSchedule:
    """Geometric temperature decay, applied per optimizer step."""

    start: float = 2.0
    floor: float = 0.5
    decay: float = 0.995

    def at_step(self, step: int) -> float:
        return max(self.floor, self.start * self.decay ** step)


@dataclass
class ModelConfig:
    # feature encoder: (channels, kernel, stride) per layer
    encoder_layers: list = field(default_factory=lambda: [(64, 10, 5), (64, 8, 4), (64, 4, 2)])
    model_dim: int = 192
    num_transformer_blocks: int = 4
    attention_heads: int = 4
    ffn_dim: int = 384
    pos_kernel: int = 9  # 0 disables the convolutional positional encoding
    # quantizer
    quantizer_groups: int = 2
    entries_per_group: int = 64
    gumbel: GumbelSchedule = field(default_factory=GumbelSchedule)
    # masking / contrastive task
    mask_prob: float = 0.065
    mask_span: int = 10
    num_negatives: int = 20
    contrastive_temperature: float = 0.1
    # reconstruction module
    recon_attach: str = "context"
    recon_bottleneck: str = "crn"
    recon_hidden: int = 96
    # CTC vocabulary (index 0 is blank)
    vocab: str = DEFAULT_CHARSET

    def __post_init__(self):
        self.encoder_layers = [tuple(layer) for layer in self.encoder_layers]
        if isinstance(self.gumbel, dict):
            self.gumbel = GumbelSchedule(**self.gumbel)
        if self.model_dim % self.attention_heads:
            raise DataError("model_dim must be divisible by attention_heads")
        if self.model_dim % self.quantizer_groups:
            raise DataError("model_dim must be divisible by quantizer_groups")
        if not 0.0 < self.mask_prob < 1.0:
            raise DataError("mask_prob must lie in (0, 1)")
        if self.mask_span < 1 or self.num_negatives < 1:
            raise DataError("mask_span and num_negatives must be >= 1")
        if self.contrastive_temperature <= 0.0:
            raise DataError("contrastive_temperature must be positive")
        if self.recon_attach not in ATTACH_SITES:
            raise DataError(f"recon_attach must be one of {ATTACH_SITES}")
        if self.recon_bottleneck not in BOTTLENECKS:
            raise DataError(f"recon_bottleneck must be one of {BOTTLENECKS}")
        if self.pos_kernel and self.pos_kernel % 2 == 0:
            raise DataError("pos_kernel must be odd (or 0 to disable)")
        for ch, k, s in self.encoder_layers:
            if min(ch, k, s) < 1:
                raise DataError("encoder layers need positive (channels, kernel, stride)")

    @property
    def downsample_factor(self) -> int:
        return math.prod(s for _, _, s in self.encoder_layers)

    @property
    def latent_dim(self) -> int:
        return self.encoder_layers[-1][0]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_layers"] = [list(layer) for layer in self.encoder_layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def core_fields(self) -> dict:
        """Architecture fields that must match when resuming a checkpoint
        (the reconstruction module may differ and be freshly initialized)."""
        d = self.to_dict()
        for key in ("recon_attach", "recon_bottleneck", "recon_hidden", "gumbel"):
            d.pop(key)
        return d


# -- frame geometry -----------------------------------------------------------

def conv_output_length(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


def frame_count(input_length: int, encoder_layers) -> int:
    """Number of frames the encoder produces, or raises TooShort."""
    length = int(input_length)
    for _, kernel, stride in encoder_layers:
        if length < kernel:
            raise TooShort(f"input of {input_length} samples is below the receptive field")
        length = conv_output_length(length, kernel, stride)
    return length


def min_input_length(encoder_layers) -> int:
    """Smallest waveform length that yields one frame."""
    length = 1
    for _, kernel, stride in reversed(encoder_layers):
        length = (length - 1) * stride + kernel
    return length


# -- masking ------------------------------------------------------------------

@dataclass
class MaskPlan:
    starts: np.ndarray
    span: int
    realized_mask: np.ndarray

    @property
    def masked_indices(self) -> np.ndarray:
        return np.flatnonzero(self.realized_mask)


def plan_masks(num_frames: int, prob: float, span: int, rng: np.random.Generator) -> MaskPlan:
    """Sample span starts iid with probability ``prob`` per frame; force one
    span if none were sampled so at least one frame is always masked."""
    if num_frames < 1:
        raise DataError("cannot plan masks over zero frames")
    starts = np.flatnonzero(rng.random(num_frames) < prob)
    if len(starts) == 0:
        starts = np.array([int(rng.integers(num_frames))])
    realized = np.zeros(num_frames, dtype=bool)
    for s in starts:
        realized[s:s + span] = True
    return MaskPlan(starts=starts, span=int(span), realized_mask=realized)


# -- modules ------------------------------------------------------------------

class FeatureEncoder(nn.Module):
    """Strided 1-D convolution stack producing latent frames."""

    def __init__(self, layers):
        super().__init__()
        self.layers = [tuple(l) for l in layers]
        convs, norms = [], []
        in_ch = 1
        for ch, kernel, stride in self.layers:
            convs.append(nn.Conv1d(in_ch, ch, kernel, stride=stride))
            norms.append(nn.LayerNorm(ch))
            in_ch = ch
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList(norms)

    def forward(self, waves: torch.Tensor) -> torch.Tensor:
        # [B, T] -> [B, T', C]
        x = waves.unsqueeze(1)
        for conv, norm in zip(self.convs, self.norms):
            x = conv(x)
            x = norm(x.transpose(1, 2)).transpose(1, 2)
            x = F.gelu(x)
        return x.transpose(1, 2)


class GumbelQuantizer(nn.Module):
    """Per-group Gumbel-softmax selection over learned codewords, projected
    back to the model dimension."""

    def __init__(self, latent_dim: int, model_dim: int, groups: int, entries: int):
        super().__init__()
        self.groups = groups
        self.entries = entries
        self.codeword_dim = model_dim // groups
        self.logit_proj = nn.Linear(latent_dim, groups * entries)
        # wide init keeps the logits comparable to the Gumbel noise scale, so
        # code assignments are informative from the first step instead of
        # being washed out by the noise
        nn.init.normal_(self.logit_proj.weight, mean=0.0, std=1.0)
        nn.init.zeros_(self.logit_proj.bias)
        self.codevectors = nn.Parameter(torch.empty(groups, entries, self.codeword_dim))
        bound = 1.0 / math.sqrt(self.codeword_dim)
        nn.init.uniform_(self.codevectors, -bound, bound)
        self.out_proj = nn.Linear(model_dim, model_dim)

    def forward(self, z: torch.Tensor, temperature: float, training: bool,
                hard: bool = True, noise: Optional[torch.Tensor] = None,
                valid: Optional[torch.Tensor] = None):
        """Returns (q, usage).

        q: [B, T', model_dim] quantized embeddings.
        usage: [G, V] selection distribution, the softmax of the logits
        averaged over valid frames; each row sums to 1.
        """
        squeeze = z.dim() == 2
        if squeeze:
            z = z.unsqueeze(0)
        b, t, _ = z.shape
        logits = self.logit_proj(z).view(b, t, self.groups, self.entries)

        if valid is None:
            valid = torch.ones(b, t, dtype=torch.bool, device=z.device)
        probs = torch.softmax(logits, dim=-1)
        usage = probs[valid].mean(dim=0)

        if training:
            if noise is None:
                noise = -torch.log(-torch.log(
                    torch.rand(logits.shape, dtype=logits.dtype).clamp_min(1e-20)))
            soft = torch.softmax((logits + noise) / temperature, dim=-1)
            if hard:
                index = soft.argmax(dim=-1, keepdim=True)
                hard_onehot = torch.zeros_like(soft).scatter_(-1, index, 1.0)
                selection = hard_onehot + soft - soft.detach()
            else:
                selection = soft
        else:
            index = logits.argmax(dim=-1, keepdim=True)
            selection = torch.zeros_like(logits).scatter_(-1, index, 1.0)

        # [B, T', G, V] x [G, V, E] -> [B, T', G, E] -> [B, T', G*E]
        codes = torch.einsum("btgv,gve->btge", selection, self.codevectors)
        q = self.out_proj(codes.reshape(b, t, -1))
        if squeeze:
            q = q.squeeze(0)
        return q, usage


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ff_in = nn.Linear(dim, ffn_dim)
        self.ff_out = nn.Linear(ffn_dim, dim)

    def forward(self, x, key_padding_mask=None):
        h = self.norm1(x)
        attn_out, _ = self.attn(h, h, h, key_padding_mask=key_padding_mask,
                                need_weights=False)
        x = x + attn_out
        h = self.norm2(x)
        return x + self.ff_out(F.gelu(self.ff_in(h)))


class ContextNetwork(nn.Module):
    """Projects latents to the model dimension, replaces masked frames with a
    learned embedding, adds convolutional positional information and runs the
    transformer stack."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.model_dim
        self.input_norm = nn.LayerNorm(cfg.latent_dim)
        self.input_proj = nn.Linear(cfg.latent_dim, d)
        self.mask_embedding = nn.Parameter(torch.empty(d).uniform_(-0.1, 0.1))
        if cfg.pos_kernel:
            self.pos_conv = nn.Conv1d(d, d, cfg.pos_kernel, padding=cfg.pos_kernel // 2)
        else:
            self.pos_conv = None
        self.blocks = nn.ModuleList(
            TransformerBlock(d, cfg.attention_heads, cfg.ffn_dim)
            for _ in range(cfg.num_transformer_blocks))
        self.final_norm = nn.LayerNorm(d)

    def forward(self, z: torch.Tensor, mask: Optional[torch.Tensor] = None,
                valid: Optional[torch.Tensor] = None) -> torch.Tensor:
        squeeze = z.dim() == 2
        if squeeze:
            z = z.unsqueeze(0)
            mask = None if mask is None else mask.unsqueeze(0)
            valid = None if valid is None else valid.unsqueeze(0)
        x = self.input_proj(self.input_norm(z))
        if mask is not None:
            x = torch.where(mask.unsqueeze(-1), self.mask_embedding.to(x.dtype), x)
        key_padding = None
        if valid is not None and not bool(valid.all()):
            x = x * valid.unsqueeze(-1).to(x.dtype)
            key_padding = ~valid
        if self.pos_conv is not None:
            x = x + F.gelu(self.pos_conv(x.transpose(1, 2)).transpose(1, 2))
        for block in self.blocks:
            x = block(x, key_padding_mask=key_padding)
        x = self.final_norm(x)
        return x.squeeze(0) if squeeze else x


class ReconstructionModule(nn.Module):
    """Recurrent bottleneck plus an upsampling decoder that restores the exact
    waveform length. ``crn``: two bidirectional recurrent layers, each
    followed by layer normalization, then transposed convolutions mirroring
    the feature encoder in reverse. ``blstm``: three bidirectional recurrent
    layers and a per-frame linear upsampler emitting ``downsample_factor``
    samples per frame. Both variants finish with the same center-crop /
    right-pad fit."""

    def __init__(self, cfg: ModelConfig, input_dim: int):
        super().__init__()
        self.attach = cfg.recon_attach
        self.bottleneck = cfg.recon_bottleneck
        hidden = cfg.recon_hidden
        if self.bottleneck == "crn":
            self.lstm1 = nn.LSTM(input_dim, hidden, bidirectional=True, batch_first=True)
            self.norm1 = nn.LayerNorm(2 * hidden)
            self.lstm2 = nn.LSTM(2 * hidden, hidden, bidirectional=True, batch_first=True)
            self.norm2 = nn.LayerNorm(2 * hidden)
            channels = [ch for ch, _, _ in cfg.encoder_layers]
            out_channels = channels[-2::-1] + [1]  # mirror, ending in the waveform
            deconvs = []
            in_ch = 2 * hidden
            for (_, kernel, stride), out_ch in zip(reversed(cfg.encoder_layers), out_channels):
                deconvs.append(nn.ConvTranspose1d(in_ch, out_ch, kernel, stride=stride))
                in_ch = out_ch
            self.deconvs = nn.ModuleList(deconvs)
        else:
            self.lstm = nn.LSTM(input_dim, hidden, num_layers=3, bidirectional=True,
                                batch_first=True)
            self.upsample = nn.Linear(2 * hidden, math.prod(s for _, _, s in cfg.encoder_layers))

    def forward(self, rep: torch.Tensor, target_length: int) -> torch.Tensor:
        """[T', D] representation of one utterance -> [target_length] waveform."""
        x = rep.unsqueeze(0)
        if self.bottleneck == "crn":
            x, _ = self.lstm1(x)
            x = self.norm1(x)
            x, _ = self.lstm2(x)
            x = self.norm2(x)
            x = x.transpose(1, 2)
            for i, deconv in enumerate(self.deconvs):
                x = deconv(x)
                if i < len(self.deconvs) - 1:
                    x = F.gelu(x)
            y = x.squeeze(0).squeeze(0)
        else:
            x, _ = self.lstm(x)
            y = self.upsample(x).reshape(-1)
        return fit_length(y, target_length)


def fit_length(y: torch.Tensor, target: int) -> torch.Tensor:
    """Center-crop when too long, right-pad with zeros when too short."""
    n = y.shape[-1]
    if n > target:
        start = (n - target) // 2
        return y[start:start + target]
    if n < target:
        return F.pad(y, (0, target - n))
    return y


class CtcHead(nn.Module):
    """Linear adaptation layer emitting per-frame log-probabilities."""

    def __init__(self, dim: int, vocab_size: int):
        super().__init__()
        self.proj = nn.Linear(dim, vocab_size)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        return F.log_softmax(self.proj(c), dim=-1)


# -- assembled model ----------------------------------------------------------

@dataclass
class Representations:
    """Product of a pre-training forward pass."""

    z: torch.Tensor
    q: torch.Tensor
    c: torch.Tensor
    mask: torch.Tensor
    usage: torch.Tensor
    y_hat: Optional[list] = None  # per-utterance reconstructed waveforms


class SpeechModel(nn.Module):
    def __init__(self, cfg: ModelConfig, reconstruction: bool = True, ctc: bool = False):
        super().__init__()
        self.cfg = cfg
        self.encoder = FeatureEncoder(cfg.encoder_layers)
        self.quantizer = GumbelQuantizer(cfg.latent_dim, cfg.model_dim,
                                         cfg.quantizer_groups, cfg.entries_per_group)
        self.context = ContextNetwork(cfg)
        if reconstruction:
            input_dim = cfg.latent_dim if cfg.recon_attach == "latent" else cfg.model_dim
            self.reconstruction = ReconstructionModule(cfg, input_dim)
        else:
            self.reconstruction = None
        self.ctc_head = CtcHead(cfg.model_dim, len(cfg.vocab)) if ctc else None

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    # -- pieces ---------------------------------------------------------------

    def encode(self, waves: torch.Tensor, lengths=None):
        """Waveforms -> latent frames. Returns (z, frame_lengths)."""
        squeeze = waves.dim() == 1
        if squeeze:
            waves = waves.unsqueeze(0)
        if lengths is None:
            lengths = [waves.shape[1]] * waves.shape[0]
        frame_lengths = [frame_count(n, self.cfg.encoder_layers) for n in lengths]
        z = self.encoder(waves.to(self.dtype))
        if squeeze:
            return z.squeeze(0), frame_lengths[0]
        return z, frame_lengths

    def quantize(self, z, temperature: float, training: bool, hard: bool = True,
                 noise=None, valid=None):
        return self.quantizer(z, temperature, training, hard=hard, noise=noise, valid=valid)

    def contextualize(self, z, mask=None, valid=None):
        return self.context(z, mask=mask, valid=valid)

    def reconstruct(self, rep: torch.Tensor, target_length: int, site: Optional[str] = None):
        if self.reconstruction is None:
            raise AttachmentMismatch("model was built without a reconstruction module")
        if site is not None and site != self.cfg.recon_attach:
            raise AttachmentMismatch(
                f"representation from {site!r} but module attaches at {self.cfg.recon_attach!r}")
        return self.reconstruction(rep.to(self.dtype), target_length)

    def ctc_log_probs(self, c: torch.Tensor) -> torch.Tensor:
        if self.ctc_head is None:
            raise ConfigMismatch("model was built without a CTC head")
        return self.ctc_head(c)

    # -- composed forwards ----------------------------------------------------

    def pretrain_forward(self, waves, lengths, mask, temperature: float,
                         training: bool = True, hard: bool = True,
                         gumbel_noise=None) -> Representations:
        """encode -> quantize (unmasked latents) -> mask -> contextualize.

        ``mask`` and the returned tensors are batched; ``mask`` must be False
        at padded frames. Reconstruction is applied separately per utterance.
        """
        z, frame_lengths = self.encode(waves, lengths)
        valid = frame_validity(frame_lengths, z.shape[-2], device=z.device)
        q, usage = self.quantize(z, temperature, training, hard=hard,
                                 noise=gumbel_noise, valid=valid)
        c = self.contextualize(z, mask=mask, valid=valid)
        return Representations(z=z, q=q, c=c, mask=mask, usage=usage)

    def attachment_input(self, reps: Representations) -> torch.Tensor:
        return {"context": reps.c, "latent": reps.z, "quantized": reps.q}[self.cfg.recon_attach]

    def ctc_forward(self, waves, lengths=None):
        """Fine-tuning/inference path: no masking, no quantizer.

        Returns (log_probs [B, T', vocab], frame_lengths).
        """
        z, frame_lengths = self.encode(waves, lengths)
        single = z.dim() == 2
        valid = None
        if not single:
            valid = frame_validity(frame_lengths, z.shape[1], device=z.device)
        c = self.contextualize(z, mask=None, valid=valid)
        return self.ctc_log_probs(c), frame_lengths

    def parameter_names(self) -> set:
        return {name for name, _ in self.named_parameters()}


def frame_validity(frame_lengths, max_frames: int, device=None) -> torch.Tensor:
    idx = torch.arange(max_frames, device=device)
    lens = torch.as_tensor(list(frame_lengths) if not torch.is_tensor(frame_lengths)
                           else frame_lengths, device=device)
    return idx.unsqueeze(0) < lens.unsqueeze(1)


def build_model(cfg: ModelConfig, reconstruction: bool = True, ctc: bool = False,
                dtype: torch.dtype = torch.float32, init_seed: int = 0) -> SpeechModel:
    """Deterministically initialized model."""
    torch.manual_seed(init_seed)
    model = SpeechModel(cfg, reconstruction=reconstruction, ctc=ctc)
    return model.to(dtype)
