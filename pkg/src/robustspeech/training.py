"""Training orchestration: from-scratch pre-training, continual pre-training
on noisy/clean pairs, CTC fine-tuning, negative sampling, checkpointing and
the reconstruction ablation matrix.

Every random choice is derived statelessly from (seed, stream, step), so a
run resumed from a checkpoint consumes exactly the same batches, masks,
Gumbel noise and negatives as the uninterrupted run. Metrics are appended to
``metrics.jsonl`` in the output directory, one JSON record per step.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .audio import read_wav
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    ConfigMismatch,
    DataError,
    InfeasibleAlignment,
    LengthMismatch,
    MissingTranscript,
    NonFiniteLoss,
)
from .losses import (
    LossBreakdown,
    contrastive_loss,
    ctc_loss,
    diversity_loss,
    reconstruction_loss,
    total_loss,
)
from .manifest import load_manifest
from .model import (
    ModelConfig,
    SpeechModel,
    build_model,
    frame_count,
    frame_validity,
    plan_masks,
)
from .seeding import derived_rng
from .text import Vocabulary

logger = logging.getLogger(__name__)

MODES = ("pretrain", "continual", "finetune")
DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainSpec:
    mode: str
    steps: int
    data: str
    batch_size: int = 4
    learning_rate: float = 5e-4
    warmup_steps: int = 50
    grad_clip: float = 5.0
    seed: int = 0
    init_checkpoint: Optional[str] = None
    resume_from: Optional[str] = None
    diversity_weight: float = 0.1
    recon_weight: float = 0.1
    negatives_from: str = "masked"
    freeze_encoder_steps: Optional[int] = None  # finetune; None freezes throughout
    freeze_quantizer: bool = False
    checkpoint_every: int = 0  # 0: only the final checkpoint
    dtype: str = "float32"

    def __post_init__(self):
        # keep path fields as plain strings so the spec serializes into
        # checkpoint headers as-is
        self.data = str(self.data)
        if self.init_checkpoint is not None:
            self.init_checkpoint = str(self.init_checkpoint)
        if self.resume_from is not None:
            self.resume_from = str(self.resume_from)
        if self.mode not in MODES:
            raise DataError(f"mode must be one of {MODES}")
        if self.steps <= 0 or self.batch_size <= 0:
            raise DataError("steps and batch_size must be positive")
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")
        if self.negatives_from not in ("masked", "all"):
            raise DataError("negatives_from must be 'masked' or 'all'")
        if self.dtype not in DTYPES:
            raise DataError(f"dtype must be one of {sorted(DTYPES)}")
        if self.mode == "continual" and not self.init_checkpoint and not self.resume_from:
            raise DataError("continual mode needs an initial checkpoint")
        if self.mode == "finetune" and not self.init_checkpoint and not self.resume_from:
            raise DataError("finetune mode needs an initial checkpoint")

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]


@dataclass
class TrainItem:
    utt_id: str
    wave: np.ndarray
    clean: Optional[np.ndarray] = None
    transcript: Optional[str] = None


def load_training_items(manifest_path, mode: str, need_clean: bool) -> list:
    """Materialize the audio (and paired clean audio / transcripts) a
    training mode needs. Pre-training on an unpaired corpus reconstructs the
    input itself, so each item's clean target is its own waveform."""
    manifest = load_manifest(manifest_path)
    items = []
    for entry in manifest.entries:
        if entry.role == "noise":
            continue
        clip = read_wav(manifest.resolve(entry))
        clean = None
        if mode == "continual":
            if entry.clean_path is None:
                raise DataError(f"entry {entry.utterance_id!r} has no paired clean file")
            if need_clean:
                clean_clip = read_wav((Path(manifest.root) / entry.clean_path).resolve())
                if len(clean_clip.samples) != len(clip.samples):
                    raise LengthMismatch(
                        f"entry {entry.utterance_id!r}: clean length "
                        f"{len(clean_clip.samples)} vs noisy {len(clip.samples)}")
                clean = clean_clip.samples
        elif need_clean:
            clean = clip.samples
        if mode == "finetune" and not entry.transcript:
            raise MissingTranscript(f"entry {entry.utterance_id!r} has no transcript")
        items.append(TrainItem(utt_id=entry.utterance_id, wave=clip.samples,
                               clean=clean, transcript=entry.transcript))
    if not items:
        raise DataError(f"no usable training entries in {manifest_path}")
    return items


def batch_for_step(items: list, step: int, batch_size: int, seed: int) -> list:
    """Batch composition depends only on (seed, step), never on loop state."""
    n = len(items)
    batches_per_epoch = math.ceil(n / batch_size)
    epoch, index = divmod(step, batches_per_epoch)
    order = derived_rng(seed, "data", epoch).permutation(n)
    chosen = order[index * batch_size:(index + 1) * batch_size]
    return [items[i] for i in chosen]


def sample_negatives(masked_idx, num_frames: int, k: int, rng: np.random.Generator,
                     source: str = "masked"):
    """Distractor indices for each masked frame, drawn uniformly from other
    positions of the same utterance.

    Returns (indices [M, K], keep [M]); keep is False for frames with no
    candidate at all (single-frame utterance), which the caller skips. A
    masked-only pool that is empty after excluding the frame itself falls
    back to all frames. Pools smaller than K are sampled with replacement,
    larger pools without.
    """
    masked = np.asarray(sorted(int(i) for i in masked_idx), dtype=np.int64)
    out = np.zeros((len(masked), k), dtype=np.int64)
    keep = np.ones(len(masked), dtype=bool)
    everything = np.arange(num_frames, dtype=np.int64)
    for row, t in enumerate(masked):
        pool = masked[masked != t] if source == "masked" else everything[everything != t]
        if len(pool) == 0:
            pool = everything[everything != t]
        if len(pool) == 0:
            keep[row] = False
            continue
        replace_draws = len(pool) < k
        out[row] = rng.choice(pool, size=k, replace=replace_draws)
    return out, keep


def _pad_batch(waves: list, dtype: torch.dtype):
    lengths = [len(w) for w in waves]
    batch = torch.zeros(len(waves), max(lengths), dtype=dtype)
    for i, wave in enumerate(waves):
        batch[i, :len(wave)] = torch.from_numpy(np.ascontiguousarray(wave)).to(dtype)
    return batch, lengths


def _linear_warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, (step + 1) / warmup_steps)


def pretrain_step(model: SpeechModel, optimizer, batch: list, step: int,
                  spec: TrainSpec, out_dir: Optional[Path] = None) -> LossBreakdown:
    """One optimizer update of the self-supervised objective on one batch."""
    cfg = model.cfg
    model.train()
    waves, lengths = _pad_batch([item.wave for item in batch], model.dtype)
    frame_lengths = [frame_count(n, cfg.encoder_layers) for n in lengths]
    max_frames = max(frame_lengths)

    mask_rng = derived_rng(spec.seed, "mask", step)
    plans = [plan_masks(n, cfg.mask_prob, cfg.mask_span, mask_rng) for n in frame_lengths]
    mask = torch.zeros(len(batch), max_frames, dtype=torch.bool)
    for i, plan in enumerate(plans):
        mask[i, :frame_lengths[i]] = torch.from_numpy(plan.realized_mask)

    gumbel_rng = derived_rng(spec.seed, "gumbel", step)
    uniform = gumbel_rng.random((len(batch), max_frames, cfg.quantizer_groups,
                                 cfg.entries_per_group))
    noise = torch.from_numpy(-np.log(-np.log(np.clip(uniform, 1e-20, None)))).to(model.dtype)

    temperature = cfg.gumbel.at_step(step)
    reps = model.pretrain_forward(waves, lengths, mask, temperature,
                                  training=True, hard=True, gumbel_noise=noise)

    neg_rng = derived_rng(spec.seed, "negatives", step)
    anchor_rows, positive_rows, negative_rows = [], [], []
    for b, plan in enumerate(plans):
        masked_idx = plan.masked_indices
        neg_idx, keep = sample_negatives(masked_idx, frame_lengths[b],
                                         cfg.num_negatives, neg_rng,
                                         source=spec.negatives_from)
        masked_idx = masked_idx[keep]
        neg_idx = neg_idx[keep]
        if len(masked_idx) == 0:
            logger.warning("step %d: utterance %s has no usable masked frames",
                           step, batch[b].utt_id)
            continue
        anchor_rows.append(reps.c[b, masked_idx])
        positive_rows.append(reps.q[b, masked_idx])
        negative_rows.append(reps.q[b][torch.from_numpy(neg_idx)])
    if not anchor_rows:
        raise DataError(f"step {step}: no masked frames in the whole batch")

    l_contrastive, accuracy = contrastive_loss(
        torch.cat(anchor_rows), torch.cat(positive_rows), torch.cat(negative_rows),
        cfg.contrastive_temperature)
    l_diversity, perplexity = diversity_loss(reps.usage)

    l_recon = None
    if spec.recon_weight > 0 and model.reconstruction is not None:
        site = model.attachment_input(reps)
        per_item = []
        for b, item in enumerate(batch):
            if item.clean is None:
                raise DataError(f"entry {item.utt_id!r} lacks a clean reconstruction target")
            y_hat = model.reconstruction(site[b, :frame_lengths[b]], lengths[b])
            target = torch.from_numpy(np.ascontiguousarray(item.clean)).to(model.dtype)
            per_item.append(reconstruction_loss(y_hat, target))
        l_recon = torch.stack(per_item).mean()

    total = total_loss(l_contrastive, l_diversity, l_recon,
                       spec.diversity_weight, spec.recon_weight)
    if not bool(torch.isfinite(total)):
        _dump_diagnostics(out_dir, step, batch, l_contrastive, l_diversity, l_recon)
        raise NonFiniteLoss(f"non-finite total loss at step {step}")

    optimizer.zero_grad(set_to_none=True)
    total.backward()
    grads = [p for p in model.parameters() if p.grad is not None]
    torch.nn.utils.clip_grad_norm_(grads, spec.grad_clip)
    optimizer.step()

    zero = torch.zeros((), dtype=total.dtype)
    return LossBreakdown(
        contrastive=l_contrastive.detach(),
        diversity=l_diversity.detach(),
        reconstruction=zero if l_recon is None else l_recon.detach(),
        total=total.detach(),
        contrastive_accuracy=accuracy,
        codebook_perplexity=perplexity,
    )


def _dump_diagnostics(out_dir, step, batch, l_c, l_d, l_r):
    if out_dir is None:
        return
    record = {
        "step": step,
        "utterances": [item.utt_id for item in batch],
        "contrastive": float(l_c.detach()),
        "diversity": float(l_d.detach()),
        "reconstruction": None if l_r is None else float(l_r.detach()),
    }
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / "diagnostics.json").write_text(json.dumps(record, indent=2))


# -- checkpoint plumbing ------------------------------------------------------

def _named_params(model) -> list:
    return list(model.named_parameters())


def model_tensors(model) -> dict:
    return {f"model/{name}": tensor for name, tensor in model.state_dict().items()}


def _optimizer_tensors(optimizer, named) -> dict:
    tensors = {}
    state_dict = optimizer.state_dict()
    index_to_name = {i: name for i, (name, _) in enumerate(named)}
    for index, state in state_dict["state"].items():
        name = index_to_name[int(index)]
        step_value = state["step"]
        step_value = float(step_value) if not torch.is_tensor(step_value) else float(step_value.item())
        tensors[f"adam/{name}/exp_avg"] = state["exp_avg"]
        tensors[f"adam/{name}/exp_avg_sq"] = state["exp_avg_sq"]
        tensors[f"adam/{name}/step"] = torch.tensor(step_value, dtype=torch.float64)
    return tensors


def _restore_optimizer(optimizer, named, tensors) -> None:
    state_dict = optimizer.state_dict()
    state = {}
    for index, (name, param) in enumerate(named):
        key = f"adam/{name}/exp_avg"
        if key not in tensors:
            continue
        state[index] = {
            "step": torch.tensor(float(tensors[f"adam/{name}/step"].item())),
            "exp_avg": tensors[key].to(param.dtype).reshape(param.shape),
            "exp_avg_sq": tensors[f"adam/{name}/exp_avg_sq"].to(param.dtype).reshape(param.shape),
        }
    state_dict["state"] = state
    optimizer.load_state_dict(state_dict)


def save_train_checkpoint(path, model, optimizer, spec: TrainSpec, step: int) -> None:
    tensors = model_tensors(model)
    tensors.update(_optimizer_tensors(optimizer, _named_params(model)))
    config = {"model": model.cfg.to_dict(), "train": asdict(spec)}
    extra = {"step": step, "mode": spec.mode, "seed": spec.seed,
             "has_reconstruction": model.reconstruction is not None,
             "has_ctc": model.ctc_head is not None}
    save_checkpoint(path, config, tensors, extra)


def load_model_weights(model, tensors: dict, fresh_prefixes=(), drop_prefixes=()) -> list:
    """Copy ``model/<name>`` tensors into the model. Names under a fresh
    prefix may be absent or shape-incompatible (they keep their new
    initialization); names under a drop prefix are ignored when present in
    the checkpoint but absent from the model. Anything else that does not
    line up raises ConfigMismatch listing the offenders."""
    state = model.state_dict()
    new_state, fresh, problems = {}, [], []
    for name, current in state.items():
        stored = tensors.get(f"model/{name}")
        may_init_fresh = bool(fresh_prefixes) and name.startswith(tuple(fresh_prefixes))
        if stored is not None and tuple(stored.shape) == tuple(current.shape):
            new_state[name] = stored.to(current.dtype)
        elif may_init_fresh:
            fresh.append(name)
            new_state[name] = current
        elif stored is None:
            problems.append(f"missing {name}")
        else:
            problems.append(
                f"{name}: checkpoint {tuple(stored.shape)} vs model {tuple(current.shape)}")
    for key in tensors:
        if not key.startswith("model/"):
            continue
        name = key[len("model/"):]
        if name not in state and not (drop_prefixes and name.startswith(tuple(drop_prefixes))):
            problems.append(f"unexpected {name}")
    if problems:
        raise ConfigMismatch("incompatible checkpoint: " + "; ".join(sorted(problems)))
    model.load_state_dict(new_state)
    return fresh


# -- training loops -----------------------------------------------------------

def _metrics_writer(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    return open(out_dir / "metrics.jsonl", "a", encoding="utf-8")


def _apply_freezes(model, spec: TrainSpec, step: int) -> None:
    if spec.mode == "finetune":
        freeze_until = spec.steps if spec.freeze_encoder_steps is None \
            else spec.freeze_encoder_steps
        frozen = step < freeze_until
        for param in model.encoder.parameters():
            param.requires_grad_(not frozen)
    if spec.freeze_quantizer and model.quantizer is not None:
        for param in model.quantizer.parameters():
            param.requires_grad_(False)


def run_pretraining(spec: TrainSpec, out_dir, model_cfg: Optional[ModelConfig] = None) -> Path:
    """Drive ``pretrain`` (fresh model) or ``continual`` (warm start) for
    spec.steps and return the final checkpoint path."""
    if spec.mode not in ("pretrain", "continual"):
        raise DataError(f"run_pretraining cannot drive mode {spec.mode!r}")
    out_dir = Path(out_dir)
    start_step = 0
    optimizer_tensors = None

    if spec.resume_from:
        snapshot = load_checkpoint(spec.resume_from)
        cfg = ModelConfig.from_dict(snapshot.config["model"])
        model = build_model(cfg, reconstruction=snapshot.extra["has_reconstruction"],
                            ctc=False, dtype=spec.torch_dtype, init_seed=spec.seed)
        load_model_weights(model, snapshot.tensors)
        start_step = int(snapshot.extra["step"])
        optimizer_tensors = snapshot.tensors
    elif spec.mode == "continual":
        snapshot = load_checkpoint(spec.init_checkpoint)
        loaded_cfg = ModelConfig.from_dict(snapshot.config["model"])
        cfg = model_cfg if model_cfg is not None else loaded_cfg
        if cfg.core_fields() != loaded_cfg.core_fields():
            differing = sorted(k for k in cfg.core_fields()
                               if cfg.core_fields()[k] != loaded_cfg.core_fields().get(k))
            raise ConfigMismatch(f"architecture differs from checkpoint: {differing}")
        model = build_model(cfg, reconstruction=spec.recon_weight > 0, ctc=False,
                            dtype=spec.torch_dtype, init_seed=spec.seed)
        fresh = load_model_weights(model, snapshot.tensors,
                                   fresh_prefixes=("reconstruction.",),
                                   drop_prefixes=("reconstruction.", "ctc_head."))
        if fresh:
            logger.info("freshly initialized: %d reconstruction tensors", len(fresh))
    else:
        cfg = model_cfg if model_cfg is not None else ModelConfig()
        model = build_model(cfg, reconstruction=spec.recon_weight > 0, ctc=False,
                            dtype=spec.torch_dtype, init_seed=spec.seed)

    items = load_training_items(spec.data, spec.mode, need_clean=spec.recon_weight > 0)
    named = _named_params(model)
    optimizer = torch.optim.Adam(model.parameters(), lr=spec.learning_rate)
    if optimizer_tensors is not None:
        _restore_optimizer(optimizer, named, optimizer_tensors)

    with _metrics_writer(out_dir) as metrics:
        for step in range(start_step, spec.steps):
            _apply_freezes(model, spec, step)
            lr = _linear_warmup_lr(spec.learning_rate, step, spec.warmup_steps)
            for group in optimizer.param_groups:
                group["lr"] = lr
            batch = batch_for_step(items, step, spec.batch_size, spec.seed)
            breakdown = pretrain_step(model, optimizer, batch, step, spec, out_dir)
            record = {
                "step": step,
                "L_c": float(breakdown.contrastive),
                "L_d": float(breakdown.diversity),
                "L_r": float(breakdown.reconstruction),
                "total": float(breakdown.total),
                "lr": lr,
                "codebook_perplexity": breakdown.codebook_perplexity,
                "contrastive_accuracy": breakdown.contrastive_accuracy,
            }
            metrics.write(json.dumps(record, sort_keys=True) + "\n")
            if spec.checkpoint_every and (step + 1) % spec.checkpoint_every == 0:
                save_train_checkpoint(out_dir / f"step{step + 1:06d}.ckpt",
                                      model, optimizer, spec, step + 1)
    final = out_dir / "final.ckpt"
    save_train_checkpoint(final, model, optimizer, spec, spec.steps)
    return final


def finetune(spec: TrainSpec, out_dir) -> Path:
    """CTC fine-tuning on transcribed audio. The reconstruction module is
    dropped, a fresh CTC head is added, and the feature encoder stays frozen
    for freeze_encoder_steps (the whole run by default)."""
    if spec.mode != "finetune":
        raise DataError("finetune() requires spec.mode == 'finetune'")
    out_dir = Path(out_dir)
    start_step = 0
    optimizer_tensors = None

    source = spec.resume_from or spec.init_checkpoint
    snapshot = load_checkpoint(source)
    cfg = ModelConfig.from_dict(snapshot.config["model"])
    model = build_model(cfg, reconstruction=False, ctc=True,
                        dtype=spec.torch_dtype, init_seed=spec.seed)
    if spec.resume_from:
        load_model_weights(model, snapshot.tensors)
        start_step = int(snapshot.extra["step"])
        optimizer_tensors = snapshot.tensors
    else:
        load_model_weights(model, snapshot.tensors,
                           fresh_prefixes=("ctc_head.",),
                           drop_prefixes=("reconstruction.",))

    vocab = Vocabulary(cfg.vocab)
    items = load_training_items(spec.data, "finetune", need_clean=False)
    labels = {item.utt_id: vocab.encode(item.transcript) for item in items}

    named = _named_params(model)
    optimizer = torch.optim.Adam(model.parameters(), lr=spec.learning_rate)
    if optimizer_tensors is not None:
        _restore_optimizer(optimizer, named, optimizer_tensors)

    with _metrics_writer(out_dir) as metrics:
        for step in range(start_step, spec.steps):
            _apply_freezes(model, spec, step)
            lr = _linear_warmup_lr(spec.learning_rate, step, spec.warmup_steps)
            for group in optimizer.param_groups:
                group["lr"] = lr
            batch = batch_for_step(items, step, spec.batch_size, spec.seed)
            model.train()
            waves, lengths = _pad_batch([item.wave for item in batch], model.dtype)
            log_probs, frame_lengths = model.ctc_forward(waves, lengths)
            losses = []
            for b, item in enumerate(batch):
                try:
                    losses.append(ctc_loss(log_probs[b, :frame_lengths[b]],
                                           labels[item.utt_id], blank=vocab.blank))
                except InfeasibleAlignment as exc:
                    logger.warning("step %d: skipping %s: %s", step, item.utt_id, exc)
            if not losses:
                logger.warning("step %d: every alignment infeasible, skipping step", step)
                continue
            loss = torch.stack(losses).mean()
            if not bool(torch.isfinite(loss)):
                _dump_diagnostics(out_dir, step, batch, loss, loss, None)
                raise NonFiniteLoss(f"non-finite CTC loss at step {step}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            grads = [p for p in model.parameters() if p.grad is not None]
            torch.nn.utils.clip_grad_norm_(grads, spec.grad_clip)
            optimizer.step()
            metrics.write(json.dumps(
                {"step": step, "ctc": float(loss.detach()), "lr": lr},
                sort_keys=True) + "\n")
            if spec.checkpoint_every and (step + 1) % spec.checkpoint_every == 0:
                save_train_checkpoint(out_dir / f"step{step + 1:06d}.ckpt",
                                      model, optimizer, spec, step + 1)
    final = out_dir / "final.ckpt"
    save_train_checkpoint(final, model, optimizer, spec, spec.steps)
    return final


# -- ablation -----------------------------------------------------------------

ABLATION_MATRIX = (
    ("context", "crn"),
    ("latent", "crn"),
    ("quantized", "crn"),
    ("context", "blstm"),
)


def _file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def reconstruction_grad_probe(model: SpeechModel, items: list, spec: TrainSpec) -> float:
    """Max |d reconstruction-loss / d transformer-parameter| on one batch.

    The loss only reaches the transformer when the module attaches to the
    contextual representations; for latent/quantized attachments this must be
    exactly zero.
    """
    batch = items[:min(2, len(items))]
    waves, lengths = _pad_batch([item.wave for item in batch], model.dtype)
    frame_lengths = [frame_count(n, model.cfg.encoder_layers) for n in lengths]
    mask = torch.zeros(len(batch), max(frame_lengths), dtype=torch.bool)
    mask[:, 0] = True
    reps = model.pretrain_forward(waves, lengths, mask, temperature=1.0,
                                  training=True, hard=True)
    site = model.attachment_input(reps)
    per_item = []
    for b, item in enumerate(batch):
        target = item.clean if item.clean is not None else item.wave
        y_hat = model.reconstruction(site[b, :frame_lengths[b]], lengths[b])
        per_item.append(reconstruction_loss(
            y_hat, torch.from_numpy(np.ascontiguousarray(target)).to(model.dtype)))
    loss = torch.stack(per_item).mean()
    model.zero_grad(set_to_none=True)
    loss.backward()
    peak = 0.0
    for param in model.context.parameters():
        if param.grad is not None:
            peak = max(peak, float(param.grad.abs().max()))
    model.zero_grad(set_to_none=True)
    return peak


def run_ablation(base_cfg: ModelConfig, continual_spec: TrainSpec,
                 finetune_spec: TrainSpec, eval_manifest, out_dir,
                 matrix=ABLATION_MATRIX, decode_config=None) -> list:
    """Train and score one cell per (attachment, bottleneck) combination with
    shared seed and data; per-cell failures are recorded and do not stop the
    remaining cells. Returns the report rows, also written to
    ``ablation_report.json``."""
    from .evaluation import DecodeConfig, evaluate

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    decode_config = decode_config or DecodeConfig(mode="greedy")
    data_hash = _file_sha256(continual_spec.data)
    rows = []
    for attach, bottleneck in matrix:
        cell = f"{attach}-{bottleneck}"
        cell_dir = out_dir / cell
        row = {"cell": cell, "recon_attach": attach, "recon_bottleneck": bottleneck,
               "data_sha256": data_hash}
        try:
            cfg = replace(base_cfg, recon_attach=attach, recon_bottleneck=bottleneck)
            cell_continual = replace(continual_spec)
            ckpt = run_pretraining(cell_continual, cell_dir / "continual", model_cfg=cfg)

            snapshot = load_checkpoint(ckpt)
            probe_model = build_model(ModelConfig.from_dict(snapshot.config["model"]),
                                      reconstruction=True, ctc=False,
                                      dtype=continual_spec.torch_dtype,
                                      init_seed=continual_spec.seed)
            load_model_weights(probe_model, snapshot.tensors)
            items = load_training_items(continual_spec.data, "continual", need_clean=True)
            grad_peak = reconstruction_grad_probe(probe_model, items, continual_spec)
            row["recon_grad_vs_transformer"] = grad_peak
            row["gradient_isolated"] = grad_peak == 0.0

            cell_finetune = replace(finetune_spec, init_checkpoint=str(ckpt))
            ft_ckpt = finetune(cell_finetune, cell_dir / "finetune")
            result = evaluate(ft_ckpt, eval_manifest, decode_config,
                              out_path=cell_dir / "results.jsonl")
            row["wer"] = result["corpus_wer"]
        except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
            logger.warning("ablation cell %s failed: %s", cell, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    (out_dir / "ablation_report.json").write_text(json.dumps(rows, indent=2))
    return rows
