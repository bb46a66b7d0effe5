#!/usr/bin/env python3
"""
Tests for the autoregressive planner: sequence layout, the MoE transformer,
generation, scheduled sampling, training, checkpoints and the gradient check.
"""

import os
import sys
import warnings

import numpy as np
import pytest
import torch

# Add project root to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", ".."))

from errors import SequenceError, UsageError, ValidationError
from planner import (
    EpisodeTokens,
    ModelConfig,
    TrainConfig,
    Trainer,
    build_sequence,
    count_parameters,
    episode_windows,
    expected_parameter_count,
    generate,
    grad_check,
    init_model,
    joint_loss,
    load_checkpoint,
    make_batch,
    make_optimizer,
    next_traj_token,
    required_seq_len,
    save_checkpoint,
    scheduled_sampling_p,
    train_step,
)
from planner.sequence import traj_positions, validate_layout
from planner.training import mix_context, restrict_to_modality, target_modality, uniform_loss
from traj_tokens.vocab import Modality, VocabLayout

LAYOUT = VocabLayout(n_command=4, n_bev=8, n_traj=20)


def _config(**overrides):
    values = dict(d_model=16, n_layers=2, n_heads=2, n_experts=4, top_k=2, vocab=LAYOUT, history=1,
                  bev_tokens_per_frame=2)
    values.update(overrides)
    return ModelConfig(**values)


def _episode(n_frames=6, seed=0):
    rng = np.random.default_rng(seed)
    expert = rng.integers(0, LAYOUT.n_traj, n_frames)
    return EpisodeTokens(
        commands=np.full(n_frames, 1),
        bev=rng.integers(0, LAYOUT.n_bev, (n_frames, 2)),
        traj_exec=(expert + 1) % LAYOUT.n_traj,
        traj_expert=expert,
    )


def test_required_sequence_length():
    assert required_seq_len(3, 64) == 261
    assert required_seq_len(0, 0) == 2
    assert _config().seq_len == 7
    with pytest.raises(ValueError):
        _config(max_seq_len=5)
    with pytest.raises(ValueError):
        _config(n_heads=3)


def test_build_sequence_layout():
    seq = build_sequence(LAYOUT, 2, [[0, 1], [2, 3]], [5, 6])
    assert seq.ids.tolist() == [2, 4, 5, 17, 6, 7, 18]
    assert seq.modality.tolist() == [0, 1, 1, 2, 1, 1, 2]
    assert seq.frame.tolist() == [-1, 0, 0, 0, 1, 1, 1]
    assert traj_positions(2, 2).tolist() == [3, 6]
    validate_layout(seq.ids, LAYOUT, 2)


def test_build_sequence_rejects_bad_tokens():
    with pytest.raises(SequenceError):
        build_sequence(LAYOUT, 4, [[0, 1]], [0])
    with pytest.raises(SequenceError):
        build_sequence(LAYOUT, 0, [[0, 8]], [0])
    with pytest.raises(SequenceError):
        build_sequence(LAYOUT, 0, [[0, 1]], [20])
    with pytest.raises(SequenceError):
        validate_layout([2, 17, 5], LAYOUT, 2)


def test_trajectory_only_layout():
    seq = build_sequence(LAYOUT, 0, np.zeros((3, 0), dtype=np.int64), [1, 2, 3])
    assert seq.ids.tolist() == [0, 13, 14, 15]


def test_episode_windows_pair_executed_inputs_with_expert_targets():
    config = _config()
    episode = _episode()
    inputs, targets = episode_windows(episode, config)
    assert inputs.shape == targets.shape == (5, 7)
    offset = LAYOUT.offset(Modality.TRAJ)
    assert inputs[0, 6] - offset == episode.traj_exec[1]
    assert targets[0, 6] - offset == episode.traj_expert[1]
    assert np.array_equal(inputs[:, :6][:, [1, 2, 4, 5]], targets[:, :6][:, [1, 2, 4, 5]])
    empty_inputs, _ = episode_windows(_episode(n_frames=1), config)
    assert empty_inputs.shape == (0, 7)


def test_parameter_count_and_seeded_init():
    config = _config()
    a, b = init_model(config, seed=3), init_model(config, seed=3)
    assert count_parameters(a) == expected_parameter_count(config)
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    c = init_model(config, seed=4)
    assert not torch.equal(a.head.weight, c.head.weight)
    dense = _config(moe_every_layer=False)
    assert count_parameters(init_model(dense, seed=0)) == expected_parameter_count(dense)


def test_forward_shape_and_causality():
    model = init_model(_config(), seed=0)
    ids = torch.as_tensor([build_sequence(LAYOUT, 1, [[0, 1], [2, 3]], [5, 6]).ids])
    with torch.no_grad():
        logits = model(ids)
        changed = ids.clone()
        changed[0, -1] = LAYOUT.offset(Modality.TRAJ) + 7
        logits_changed = model(changed)
    assert logits.shape == (1, 7, LAYOUT.total)
    assert torch.allclose(logits[:, :-1], logits_changed[:, :-1])
    with pytest.raises(SequenceError):
        model(torch.zeros((1, 8), dtype=torch.long))


def test_moe_with_all_experts_matches_dense_mixture():
    model = init_model(_config(top_k=4), seed=1).double()
    ids = torch.as_tensor([build_sequence(LAYOUT, 1, [[0, 1], [2, 3]], [5, 6]).ids])
    with torch.no_grad():
        sparse = model(ids)
        dense = model.dense_forward(ids)
    assert torch.max(torch.abs(sparse - dense)).item() <= 1e-6


def test_router_histogram_counts_top_k_slots():
    model = init_model(_config(), seed=0)
    ids = torch.as_tensor([build_sequence(LAYOUT, 1, [[0, 1], [2, 3]], [5, 6]).ids])
    with torch.no_grad():
        model(ids)
    hist = model.blocks[0].ffn.last_expert_hist
    assert int(hist.sum()) == 7 * 2


def test_generate_respects_modality_ranges_and_is_deterministic():
    model = init_model(_config(), seed=0)
    context = build_sequence(LAYOUT, 2, [[0, 1]], [3]).ids
    first = generate(model, context, horizon=3)
    second = generate(model, context, horizon=3)
    assert len(first.frames) == 3
    assert first.traj_tokens == second.traj_tokens
    for frame in first.frames:
        assert frame.bev.shape == (2,)
        assert np.all((frame.bev >= 0) & (frame.bev < LAYOUT.n_bev))
        assert 0 <= frame.traj < LAYOUT.n_traj
    a = generate(model, context, horizon=2, mode="sample", seed=11)
    b = generate(model, context, horizon=2, mode="sample", seed=11)
    assert a.traj_tokens == b.traj_tokens
    assert generate(model, context, horizon=0).frames == []


def test_generate_rejects_bad_arguments():
    model = init_model(_config(), seed=0)
    context = build_sequence(LAYOUT, 2, [[0, 1]], [3]).ids
    with pytest.raises(UsageError):
        generate(model, context, horizon=1, mode="beam")
    with pytest.raises(SequenceError):
        generate(model, context[:-1], horizon=1)


def test_next_traj_token_is_local_index():
    model = init_model(_config(), seed=0)
    prefix = build_sequence(LAYOUT, 2, [[0, 1]], [3]).ids.tolist() + [4 + 2, 4 + 5]
    token = next_traj_token(model, prefix)
    assert 0 <= token < LAYOUT.n_traj


def test_scheduled_sampling_schedule():
    config = TrainConfig(epochs=8, bc_epochs=2, ramp_end_epoch=6)
    assert [scheduled_sampling_p(e, config) for e in range(8)] == [0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0]
    with pytest.raises(ValueError):
        TrainConfig(bc_epochs=4, ramp_end_epoch=4)


def test_joint_loss_is_weighted_sum():
    model = init_model(_config(), seed=0)
    inputs, targets = episode_windows(_episode(), _config())
    batch = make_batch(inputs, targets)
    total, l_bev, l_traj = joint_loss(model, batch, lambda_traj=1.0, lambda_bev=0.1)
    assert torch.isclose(total, l_traj + 0.1 * l_bev)
    only_traj, _, _ = joint_loss(model, batch, lambda_traj=1.0, lambda_bev=0.0)
    assert torch.isclose(only_traj, l_traj)


def test_uniform_logits_give_the_maximum_entropy_loss():
    model = init_model(_config(), seed=0)
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.zero_()
    inputs, targets = episode_windows(_episode(), _config())
    _, l_bev, l_traj = joint_loss(model, make_batch(inputs, targets), lambda_traj=1.0, lambda_bev=1.0)
    assert l_bev.item() == pytest.approx(uniform_loss(LAYOUT.total), rel=1e-6)
    assert l_traj.item() == pytest.approx(uniform_loss(LAYOUT.total), rel=1e-6)


def test_training_reduces_loss_on_a_fixed_batch():
    torch.manual_seed(0)
    model = init_model(_config(), seed=0)
    config = TrainConfig(lr=1e-2, weight_decay=0.0, epochs=1, bc_epochs=0, ramp_end_epoch=1)
    optimizer = make_optimizer(model, config)
    inputs, targets = episode_windows(_episode(), _config())
    batch = make_batch(inputs, targets)
    records = [train_step(model, optimizer, batch, config, step=i) for i in range(40)]
    assert records[-1].total < records[0].total
    assert all(np.isfinite(r.grad_norm) for r in records)


def test_resumed_training_is_bit_exact(tmp_path):
    config = _config()
    train = TrainConfig(lr=1e-3, batch_size=2, epochs=2, bc_epochs=1, ramp_end_epoch=2)
    inputs, targets = episode_windows(_episode(n_frames=8), config)

    straight = init_model(config, seed=0)
    Trainer(straight, train, data_seed=1, sampling_seed=2).fit(inputs, targets)

    first = init_model(config, seed=0)
    trainer = Trainer(first, train, data_seed=1, sampling_seed=2)
    trainer.fit(inputs, targets, epochs=1)
    path = save_checkpoint(str(tmp_path / "ckpt.bin"), first, trainer.optimizer,
                           {"step": trainer.step, "epoch": trainer.epoch})
    model, optimizer, header = load_checkpoint(path, lambda m: make_optimizer(m, train))
    assert header["epoch"] == 1
    Trainer(model, train, 1, 2, optimizer, header["step"], header["epoch"]).fit(inputs, targets)

    for p, q in zip(straight.parameters(), model.parameters()):
        assert torch.equal(p, q)


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "other.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValidationError):
        load_checkpoint(str(path))


def test_gradients_match_finite_differences():
    config = _config()
    model = init_model(config, seed=0)
    inputs, targets = episode_windows(_episode(), config)
    batch = make_batch(inputs, targets)
    names = ["head.weight", "head.bias", "ln_f.weight", "blocks.1.ffn.experts.0.fc_out.weight"]
    assert grad_check(model, batch, epsilon=1e-4, param_names=names, max_checked=400) <= 1e-4


@pytest.mark.parametrize("epsilon", [1e-3, 1e-4, 1e-5])
def test_gradient_check_holds_across_step_sizes(epsilon):
    config = _config()
    model = init_model(config, seed=0)
    inputs, targets = episode_windows(_episode(), config)
    batch = make_batch(inputs, targets)
    names = ["head.weight", "ln_f.weight", "blocks.1.ffn.experts.0.fc_out.weight"]
    assert grad_check(model, batch, epsilon=epsilon, param_names=names, max_checked=200) <= 1e-4


def test_gradient_check_error_shrinks_with_the_step_size():
    config = _config()
    model = init_model(config, seed=0)
    batch = make_batch(*episode_windows(_episode(), config))
    names = ["head.weight", "ln_f.weight"]
    coarse = grad_check(model, batch, epsilon=1e-3, param_names=names, max_checked=200)
    fine = grad_check(model, batch, epsilon=1e-5, param_names=names, max_checked=200)
    assert fine <= coarse


def test_mixing_with_zero_probability_returns_the_inputs():
    config = _config()
    model = init_model(config, seed=0)
    batch = make_batch(*episode_windows(_episode(), config))
    mixed = mix_context(model, batch.inputs, 0.0, torch.Generator().manual_seed(0))
    assert torch.equal(mixed, batch.inputs)


def test_mixing_with_probability_one_uses_the_model_after_the_command():
    config = _config()
    model = init_model(config, seed=0)
    batch = make_batch(*episode_windows(_episode(), config))
    mixed = mix_context(model, batch.inputs, 1.0, torch.Generator().manual_seed(0))
    T = batch.inputs.shape[1]
    with torch.no_grad():
        logits = restrict_to_modality(model(batch.inputs)[:, :-1], target_modality(model, T), model)
    assert torch.equal(mixed[:, 0], batch.inputs[:, 0])
    assert torch.equal(mixed[:, 1:], logits.argmax(dim=-1))


def test_zero_clip_threshold_leaves_only_weight_decay():
    config = _config()
    model = init_model(config, seed=0)
    train = TrainConfig(lr=1e-2, weight_decay=0.1, grad_clip=0.0, batch_size=2, epochs=2)
    optimizer = make_optimizer(model, train)
    before = {name: p.detach().clone() for name, p in model.named_parameters()}
    batch = make_batch(*episode_windows(_episode(), config))
    record = train_step(model, optimizer, batch, train)
    assert record.grad_norm > 0
    for name, p in model.named_parameters():
        if p.grad is None:
            assert torch.equal(p, before[name])
        else:
            assert torch.allclose(p, before[name] * (1 - 1e-2 * 0.1), atol=1e-7)


def test_bev_labels_do_not_matter_when_the_bev_weight_is_zero():
    config = _config()
    model = init_model(config, seed=0)
    inputs, targets = episode_windows(_episode(), config)
    start, stop = LAYOUT.token_range(Modality.BEV)
    perm = np.random.default_rng(3).permutation(stop - start)
    is_bev = (targets >= start) & (targets < stop)
    shuffled = targets.copy()
    shuffled[is_bev] = start + perm[targets[is_bev] - start]
    assert not np.array_equal(shuffled, targets)
    with torch.no_grad():
        total, _, l_traj = joint_loss(model, make_batch(inputs, targets), 1.0, 0.0)
        other, l_bev, other_traj = joint_loss(model, make_batch(inputs, shuffled), 1.0, 0.0)
    assert torch.equal(total, other)
    assert torch.equal(l_traj, other_traj)
    assert float(l_bev) > 0


def test_training_step_does_not_warn_about_tensor_conversion():
    config = _config()
    model = init_model(config, seed=0)
    train = TrainConfig(batch_size=2, epochs=2)
    batch = make_batch(*episode_windows(_episode(), config))
    with warnings.catch_warnings():
        warnings.filterwarnings("error", message=".*requires_grad.*")
        warnings.filterwarnings("error", message=".*[Cc]onverting a tensor.*")
        record = train_step(model, make_optimizer(model, train), batch, train)
    assert isinstance(record.total, float) and isinstance(record.grad_norm, float)
