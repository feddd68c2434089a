"""Architecture-level tests: frame geometry, masking, quantizer limits,
context network symmetries, and reconstruction length handling."""

import numpy as np
import pytest
import torch

from conftest import micro_model_config, seeded_wave, tiny_model_config
from robustspeech.errors import (AttachmentMismatch, ConfigMismatch, DataError,
                                 TooShort)
from robustspeech.model import (GumbelSchedule, ModelConfig, build_model,
                                fit_length, frame_count, frame_validity,
                                min_input_length, plan_masks)

DEFAULT_LAYERS = ModelConfig().encoder_layers


# -- frame geometry -------------------------------------------------------


def test_frame_count_matches_hand_worked_default_geometry():
    # (400-10)//5+1 = 79, (79-8)//4+1 = 18, (18-4)//2+1 = 8
    assert frame_count(400, DEFAULT_LAYERS) == 8


def test_frame_count_matches_real_convolution_stack():
    model = build_model(tiny_model_config(), reconstruction=False)
    for length in list(range(105, 188)) + [400, 1234, 6400]:
        wave = torch.zeros(length)
        z, n = model.encode(wave)
        assert n == frame_count(length, model.cfg.encoder_layers)
        assert z.shape[0] == n


def test_min_input_length_is_tight():
    layers = DEFAULT_LAYERS
    shortest = min_input_length(layers)
    assert shortest == 105
    assert frame_count(shortest, layers) == 1
    with pytest.raises(TooShort):
        frame_count(shortest - 1, layers)


def test_downsample_factor_and_latent_dim():
    cfg = ModelConfig()
    assert cfg.downsample_factor == 40
    assert cfg.latent_dim == 64


def test_frame_validity_marks_padding():
    v = frame_validity([3, 1], max_frames=4)
    expected = torch.tensor([[True, True, True, False],
                             [True, False, False, False]])
    assert torch.equal(v, expected)


# -- masking ----------------------------------------------------------------


def test_plan_masks_forces_one_span_when_nothing_sampled():
    plan = plan_masks(50, prob=0.0, span=10, rng=np.random.default_rng(3))
    assert len(plan.starts) == 1
    start = int(plan.starts[0])
    covered = np.zeros(50, dtype=bool)
    covered[start:start + 10] = True
    assert np.array_equal(plan.realized_mask, covered)
    assert plan.masked_indices.size >= 1


def test_plan_masks_saturates_at_probability_one():
    plan = plan_masks(30, prob=1.0, span=10, rng=np.random.default_rng(0))
    assert plan.realized_mask.all()


def test_plan_masks_span_truncates_at_sequence_end():
    rng = np.random.default_rng(5)
    for _ in range(50):
        plan = plan_masks(12, prob=0.3, span=10, rng=rng)
        assert plan.realized_mask.shape == (12,)
        rebuilt = np.zeros(12, dtype=bool)
        for s in plan.starts:
            rebuilt[s:s + 10] = True
        assert np.array_equal(plan.realized_mask, rebuilt)


def test_plan_masks_matches_analytic_coverage():
    # frame t is covered iff some start lands in the last min(t+1, M) slots,
    # so P(covered) = 1 - (1-p)^min(t+1, M); compare the Monte Carlo mean
    # of the realized fraction against that closed form
    n, p, span, draws = 2000, 0.065, 10, 200
    expected = np.mean([1.0 - (1.0 - p) ** min(t + 1, span) for t in range(n)])
    rng = np.random.default_rng(42)
    fractions = [plan_masks(n, p, span, rng).realized_mask.mean()
                 for _ in range(draws)]
    assert abs(np.mean(fractions) - expected) < 0.02
    assert abs(expected - 0.4895) < 0.005


def test_plan_masks_rejects_empty_sequence():
    with pytest.raises(DataError):
        plan_masks(0, 0.1, 10, np.random.default_rng(0))


# -- gumbel schedule and config ----------------------------------------------


def test_gumbel_schedule_decays_to_floor():
    sched = GumbelSchedule(start=2.0, floor=0.5, decay=0.995)
    assert sched.at_step(0) == 2.0
    assert sched.at_step(10) == pytest.approx(2.0 * 0.995 ** 10)
    assert sched.at_step(1000) == 0.5
    temps = [sched.at_step(s) for s in range(400)]
    assert all(a >= b for a, b in zip(temps, temps[1:]))
    assert temps[-1] == 0.5


@pytest.mark.parametrize("bad", [
    dict(mask_prob=0.0),
    dict(mask_prob=1.0),
    dict(pos_kernel=8),
    dict(model_dim=18),            # not divisible by 4 heads
    dict(recon_attach="nowhere"),
    dict(recon_bottleneck="mlp"),
    dict(contrastive_temperature=0.0),
    dict(mask_span=0),
])
def test_model_config_rejects_invalid_fields(bad):
    with pytest.raises(DataError):
        ModelConfig(**bad)


def test_model_config_dict_roundtrip():
    cfg = tiny_model_config(recon_attach="quantized", recon_bottleneck="blstm")
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again == cfg
    core = cfg.core_fields()
    for key in ("recon_attach", "recon_bottleneck", "recon_hidden", "gumbel"):
        assert key not in core
    assert core["model_dim"] == cfg.model_dim


# -- quantizer ----------------------------------------------------------------


def test_quantizer_eval_output_is_argmax_codeword_projection():
    model = build_model(tiny_model_config(), reconstruction=False, init_seed=7)
    quant = model.quantizer
    z = torch.from_numpy(seeded_wave(1, 5 * 8)).reshape(5, 8).float()
    q, usage = quant(z, temperature=1.0, training=False)
    logits = quant.logit_proj(z).view(5, quant.groups, quant.entries)
    picked = logits.argmax(dim=-1)
    codes = torch.stack([
        torch.cat([quant.codevectors[g, picked[t, g]] for g in range(quant.groups)])
        for t in range(5)])
    expected = quant.out_proj(codes)
    assert torch.allclose(q, expected, atol=1e-6)
    assert torch.allclose(usage.sum(dim=-1), torch.ones(quant.groups), atol=1e-5)


def test_quantizer_eval_is_deterministic():
    model = build_model(tiny_model_config(), reconstruction=False, init_seed=7)
    z = torch.from_numpy(seeded_wave(2, 6 * 8)).reshape(6, 8).float()
    q1, u1 = model.quantizer(z, 1.0, training=False)
    q2, u2 = model.quantizer(z, 1.0, training=False)
    assert torch.equal(q1, q2) and torch.equal(u1, u2)


def test_quantizer_hard_training_selects_single_codeword():
    # with fixed noise and a tiny temperature the straight-through forward
    # must agree with the eval-mode forward on the noisy logits' argmax
    model = build_model(tiny_model_config(), reconstruction=False, init_seed=9)
    quant = model.quantizer
    z = torch.from_numpy(seeded_wave(3, 4 * 8)).reshape(4, 8).float()
    noise = torch.zeros(1, 4, quant.groups, quant.entries)
    q_train, _ = quant(z, temperature=1e-4, training=True, hard=True, noise=noise)
    q_eval, _ = quant(z, 1.0, training=False)
    assert torch.allclose(q_train, q_eval, atol=1e-5)


def test_quantizer_straight_through_gradient_reaches_input():
    model = build_model(tiny_model_config(), reconstruction=False, init_seed=9)
    z = torch.from_numpy(seeded_wave(4, 4 * 8)).reshape(4, 8).float()
    z.requires_grad_(True)
    noise = torch.zeros(1, 4, 2, 8)
    q, _ = model.quantizer(z, temperature=2.0, training=True, hard=True, noise=noise)
    q.sum().backward()
    assert z.grad is not None
    assert float(z.grad.abs().max()) > 0.0


def test_quantizer_usage_ignores_invalid_frames():
    model = build_model(tiny_model_config(), reconstruction=False, init_seed=5)
    z = torch.from_numpy(seeded_wave(5, 2 * 6 * 8)).reshape(2, 6, 8).float()
    valid = torch.tensor([[True] * 6, [True, True, False, False, False, False]])
    _, usage_a = model.quantizer(z, 1.0, training=False, valid=valid)
    z_b = z.clone()
    z_b[1, 2:] = 99.0  # junk in padded frames must not leak into usage
    _, usage_b = model.quantizer(z_b, 1.0, training=False, valid=valid)
    assert torch.allclose(usage_a, usage_b, atol=1e-6)


# -- context network -----------------------------------------------------------


def test_context_network_permutation_equivariant_without_positions():
    cfg = tiny_model_config(pos_kernel=0)
    model = build_model(cfg, reconstruction=False, dtype=torch.float64)
    z = torch.from_numpy(seeded_wave(6, 9 * 8)).reshape(9, 8)
    c = model.contextualize(z)
    perm = torch.from_numpy(np.random.default_rng(1).permutation(9))
    c_perm = model.contextualize(z[perm])
    assert torch.allclose(c_perm, c[perm], atol=1e-10)


def test_context_network_positions_break_permutation_symmetry():
    cfg = tiny_model_config(pos_kernel=9)
    model = build_model(cfg, reconstruction=False, dtype=torch.float64)
    z = torch.from_numpy(seeded_wave(6, 9 * 8)).reshape(9, 8)
    c = model.contextualize(z)
    perm = torch.from_numpy(np.array([8, 7, 6, 5, 4, 3, 2, 1, 0]))
    c_perm = model.contextualize(z[perm])
    assert not torch.allclose(c_perm, c[perm], atol=1e-6)


def test_fully_masked_context_is_input_independent():
    model = build_model(tiny_model_config(), reconstruction=False)
    mask = torch.ones(7, dtype=torch.bool)
    z1 = torch.from_numpy(seeded_wave(7, 7 * 8)).reshape(7, 8).float()
    z2 = torch.from_numpy(seeded_wave(8, 7 * 8)).reshape(7, 8).float()
    c1 = model.contextualize(z1, mask=mask)
    c2 = model.contextualize(z2, mask=mask)
    assert torch.equal(c1, c2)


def test_padded_frames_do_not_influence_valid_outputs():
    model = build_model(tiny_model_config(), reconstruction=False,
                        dtype=torch.float64)
    z = torch.from_numpy(seeded_wave(9, 2 * 6 * 8)).reshape(2, 6, 8)
    valid = torch.tensor([[True] * 6, [True, True, True, False, False, False]])
    c_a = model.contextualize(z, valid=valid)
    z_b = z.clone()
    z_b[1, 3:] = 42.0
    c_b = model.contextualize(z_b, valid=valid)
    assert torch.allclose(c_a[1, :3], c_b[1, :3], atol=1e-10)


# -- reconstruction -------------------------------------------------------------


def test_fit_length_center_crop_and_right_pad():
    y = torch.arange(10.0)
    cropped = fit_length(y, 6)
    assert torch.equal(cropped, y[2:8])
    padded = fit_length(y, 14)
    assert torch.equal(padded[:10], y)
    assert torch.equal(padded[10:], torch.zeros(4))
    assert torch.equal(fit_length(y, 10), y)


@pytest.mark.parametrize("bottleneck", ["crn", "blstm"])
def test_reconstruction_length_matches_input_for_every_residue(bottleneck):
    cfg = tiny_model_config(recon_bottleneck=bottleneck)
    model = build_model(cfg, reconstruction=True)
    factor = cfg.downsample_factor
    assert factor == 40
    with torch.no_grad():
        for offset in range(factor):
            length = 400 + offset
            wave = torch.from_numpy(seeded_wave(offset, length)).float()
            z, _ = model.encode(wave)
            c = model.contextualize(z)
            y = model.reconstruct(c, target_length=length)
            assert y.shape == (length,)
            assert bool(torch.isfinite(y).all())


@pytest.mark.parametrize("attach", ["context", "latent", "quantized"])
def test_reconstruction_accepts_each_attachment_site(attach):
    cfg = tiny_model_config(recon_attach=attach)
    model = build_model(cfg, reconstruction=True)
    wave = torch.from_numpy(seeded_wave(11, 420)).float()
    plan = plan_masks(frame_count(420, cfg.encoder_layers), cfg.mask_prob,
                      cfg.mask_span, np.random.default_rng(0))
    mask = torch.from_numpy(plan.realized_mask).unsqueeze(0)
    reps = model.pretrain_forward(wave.unsqueeze(0), [420], mask,
                                  temperature=1.0)
    rep = model.attachment_input(reps)[0]
    expected_dim = cfg.latent_dim if attach == "latent" else cfg.model_dim
    assert rep.shape[-1] == expected_dim
    y = model.reconstruct(rep, 420)
    assert y.shape == (420,)


def test_reconstruct_rejects_wrong_site_and_missing_module():
    model = build_model(tiny_model_config(recon_attach="context"))
    rep = torch.zeros(4, 16)
    with pytest.raises(AttachmentMismatch):
        model.reconstruct(rep, 200, site="latent")
    bare = build_model(tiny_model_config(), reconstruction=False)
    with pytest.raises(AttachmentMismatch):
        bare.reconstruct(rep, 200)


# -- assembled model ------------------------------------------------------------


def test_pretrain_forward_shapes_and_finiteness():
    cfg = tiny_model_config()
    model = build_model(cfg, reconstruction=True)
    lengths = [430, 380]
    waves = torch.zeros(2, 430)
    for i, n in enumerate(lengths):
        waves[i, :n] = torch.from_numpy(seeded_wave(20 + i, n)).float()
    frames = [frame_count(n, cfg.encoder_layers) for n in lengths]
    rng = np.random.default_rng(2)
    mask = torch.zeros(2, max(frames), dtype=torch.bool)
    for i, n in enumerate(frames):
        plan = plan_masks(n, cfg.mask_prob, cfg.mask_span, rng)
        mask[i, :n] = torch.from_numpy(plan.realized_mask)
    reps = model.pretrain_forward(waves, lengths, mask, temperature=1.0)
    t_max = max(frames)
    assert reps.z.shape == (2, t_max, cfg.latent_dim)
    assert reps.q.shape == (2, t_max, cfg.model_dim)
    assert reps.c.shape == (2, t_max, cfg.model_dim)
    assert reps.usage.shape == (cfg.quantizer_groups, cfg.entries_per_group)
    for tensor in (reps.z, reps.q, reps.c, reps.usage):
        assert bool(torch.isfinite(tensor).all())


def test_zero_waveform_produces_finite_outputs():
    model = build_model(tiny_model_config(), reconstruction=True)
    wave = torch.zeros(410)
    z, n = model.encode(wave)
    c = model.contextualize(z)
    y = model.reconstruct(c, 410)
    assert bool(torch.isfinite(z).all())
    assert bool(torch.isfinite(c).all())
    assert bool(torch.isfinite(y).all())


def test_encode_rejects_too_short_input():
    model = build_model(tiny_model_config(), reconstruction=False)
    with pytest.raises(TooShort):
        model.encode(torch.zeros(104))


def test_ctc_head_presence_and_distribution():
    model = build_model(micro_model_config(), reconstruction=False, ctc=True)
    wave = torch.from_numpy(seeded_wave(30, 150)).float()
    log_probs, frames = model.ctc_forward(wave)
    assert log_probs.shape[-1] == len(model.cfg.vocab)
    sums = log_probs.exp().sum(dim=-1)
    assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)
    plain = build_model(micro_model_config(), reconstruction=False, ctc=False)
    with pytest.raises(ConfigMismatch):
        plain.ctc_log_probs(torch.zeros(3, 8))


def test_build_model_is_deterministic_per_seed():
    cfg = tiny_model_config()
    a = build_model(cfg, init_seed=13)
    b = build_model(cfg, init_seed=13)
    c = build_model(cfg, init_seed=14)
    for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(pa, pb), name
    assert any(not torch.equal(pa, pc) for (_, pa), (_, pc)
               in zip(a.named_parameters(), c.named_parameters()))
