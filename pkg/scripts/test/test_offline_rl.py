#!/usr/bin/env python3
"""
Tests for the offline RL stage: rewards, SAC target, critic / actor / BC
losses, RL window extraction, one SAC-BC update and the enumerable bandit.
"""

import math
import os
import sys

import numpy as np
import pytest
import torch

# Add project root to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", ".."))

from errors import DomainError, InternalError, SizeError
from offline_rl import (
    EnumerableBandit,
    RewardComponents,
    RewardWeights,
    SacBcConfig,
    SacBcTrainer,
    actor_loss,
    bc_loss,
    build_critic,
    concat_rl_windows,
    critic_loss,
    frame_components,
    make_rl_batch,
    reward_centerline,
    reward_clearance,
    reward_comfort,
    reward_total,
    rl_windows,
    sac_target,
    train_bandit,
)
from offline_rl.sacbc import cql_penalty, make_optimizers, sacbc_step
from planner import EpisodeTokens, ModelConfig, init_model
from traj_tokens.vocab import VocabLayout

LAYOUT = VocabLayout(n_command=4, n_bev=8, n_traj=12)


def _model_config(history=2):
    return ModelConfig(d_model=16, n_layers=1, n_heads=2, n_experts=2, top_k=1, vocab=LAYOUT, history=history,
                       bev_tokens_per_frame=2)


def _episode(n_frames=6, seed=0):
    rng = np.random.default_rng(seed)
    expert = rng.integers(0, LAYOUT.n_traj, n_frames)
    return EpisodeTokens(
        commands=np.zeros(n_frames, dtype=np.int64),
        bev=rng.integers(0, LAYOUT.n_bev, (n_frames, 2)),
        traj_exec=rng.integers(0, LAYOUT.n_traj, n_frames),
        traj_expert=expert,
        rewards=np.arange(n_frames, dtype=np.float64) / 10.0,
    )


def test_centerline_and_clearance_rewards():
    assert reward_centerline(0.0) == 1.0
    assert reward_centerline(0.75, 1.5) == pytest.approx(0.5)
    assert reward_centerline(4.0, 1.5) == 0.0
    assert reward_clearance(1.5, 3.0) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        reward_centerline(-0.1)
    with pytest.raises(DomainError):
        reward_clearance(float("nan"))


def test_comfort_is_masked_at_low_speed():
    weights = RewardWeights()
    assert reward_comfort(5.0, 5.0, 0.2, weights) == 0.0
    assert reward_comfort(1.0, -2.0, 5.0, weights) == pytest.approx(-0.3)


def test_total_reward_weights_components():
    weights = RewardWeights(w_ctr=2.0, w_clr=0.5, w_comf=1.0)
    components = frame_components(0.0, 3.0, 1.0, 0.0, 4.0, weights)
    assert components == RewardComponents(1.0, 1.0, -0.1)
    assert reward_total(components, weights) == pytest.approx(2.0 + 0.5 - 0.1)


def test_sac_target_matches_hand_computation():
    r = torch.tensor([1.0])
    probs = torch.tensor([[0.5, 0.5]], dtype=torch.float64)
    q = torch.tensor([[[1.0, 3.0]], [[2.0, 2.0]]])
    y = sac_target(r, probs, q, gamma=0.9, alpha=0.1, done=torch.tensor([0.0]))
    expected = 1.0 + 0.9 * (1.5 + 0.1 * math.log(2.0))
    assert y.item() == pytest.approx(expected, rel=1e-6)
    terminal = sac_target(r, probs, q, gamma=0.9, alpha=0.1, done=torch.tensor([1.0]))
    assert terminal.item() == pytest.approx(1.0)


def test_sac_target_rejects_unnormalized_policy():
    with pytest.raises(InternalError):
        sac_target(torch.zeros(1), torch.tensor([[0.6, 0.6]]), torch.zeros(2, 1, 2), 0.9, 0.1, torch.zeros(1))


def test_critic_loss_zero_at_target_and_cql_for_flat_q():
    q = torch.zeros(2, 3, 4)
    actions = torch.tensor([0, 1, 3])
    assert critic_loss(q, actions, torch.zeros(3), alpha_cql=0.0).item() == 0.0
    assert cql_penalty(q, actions).item() == pytest.approx(2 * math.log(4))
    with pytest.raises(SizeError):
        critic_loss(torch.zeros(2, 0, 4), torch.zeros(0, dtype=torch.long), torch.zeros(0), 0.0)


def test_critic_gradient_matches_finite_differences():
    torch.manual_seed(0)
    critic = build_critic(5, 3, hidden=8, seed=0).double()
    h = torch.randn(4, 5, dtype=torch.float64)
    actions = torch.tensor([0, 2, 1, 2])
    y = torch.randn(4, dtype=torch.float64)
    weight = critic.q[0].net[0].weight

    def loss():
        return critic_loss(critic(h), actions, y, alpha_cql=0.5)

    loss().backward()
    analytic = weight.grad.clone()
    eps = 1e-5
    worst = 0.0
    with torch.no_grad():
        for i in range(weight.numel()):
            flat = weight.view(-1)
            orig = flat[i].item()
            flat[i] = orig + eps
            plus = loss().item()
            flat[i] = orig - eps
            minus = loss().item()
            flat[i] = orig
            numeric = (plus - minus) / (2 * eps)
            a = analytic.view(-1)[i].item()
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-6))
    assert worst <= 1e-4


def test_actor_loss_is_stationary_at_boltzmann_policy():
    torch.manual_seed(1)
    q = torch.randn(2, 5, 6, dtype=torch.float64)
    alpha = 0.3
    logits = (torch.min(q[0], q[1]) / alpha).clone().requires_grad_(True)
    actor_loss(logits, q, alpha).backward()
    assert logits.grad.abs().max().item() <= 1e-5


def test_bc_weights_carry_no_gradient_and_are_clipped():
    logits = torch.zeros(3, 4, requires_grad=True)
    flat_q = torch.zeros(2, 3, 4)
    expert = torch.tensor([0, 1, 2])
    loss, adv, w = bc_loss(logits, flat_q, expert, lambda_awac=1.0, clip=20.0)
    assert torch.allclose(adv, torch.zeros(3)) and torch.allclose(w, torch.ones(3))
    assert loss.item() == pytest.approx(math.log(4))
    steep = torch.zeros(2, 3, 4)
    steep[:, :, 0] = 100.0
    _, _, w = bc_loss(logits, steep, expert, lambda_awac=1.0, clip=20.0)
    assert w[0].item() == 20.0 and not w.requires_grad


def test_rl_windows_use_trailing_transitions():
    config = _model_config(history=2)
    episode = _episode(n_frames=6)
    data = rl_windows(episode, config, n_step=3)
    assert data["slots"].tolist() == [0, 1]
    assert data["inputs"].shape == (4, 1 + 3 * 3)
    assert data["actions"].shape == (4, 2)
    assert data["actions"][-1].tolist() == episode.traj_exec[[3, 4]].tolist()
    assert data["expert"][-1].tolist() == episode.traj_expert[[3, 4]].tolist()
    assert np.allclose(data["rewards"][-1], [0.4, 0.5])
    assert data["done"][-1].tolist() == [0.0, 1.0]
    assert data["done"][:-1].sum() == 0.0


def test_rl_windows_edge_cases():
    with pytest.raises(SizeError):
        rl_windows(_episode(), _model_config(history=0), n_step=1)
    no_rewards = _episode()
    no_rewards.rewards = None
    with pytest.raises(SizeError):
        rl_windows(no_rewards, _model_config(), n_step=1)
    short = rl_windows(_episode(n_frames=2), _model_config(), n_step=1)
    with pytest.raises(SizeError):
        concat_rl_windows([short])


def test_sacbc_step_updates_policy_and_targets():
    config = _model_config()
    model = init_model(config, seed=0)
    critic = build_critic(config.d_model, LAYOUT.n_traj, hidden=16, seed=0)
    data = concat_rl_windows([rl_windows(_episode(seed=s), config, n_step=2) for s in range(3)])
    assert len(data["inputs"]) == 12
    sac = SacBcConfig(lr=1e-3, critic_lr=1e-3, batch_size=4, epochs=1)
    policy_opt, critic_opt = make_optimizers(model, critic, sac)
    before = model.head.weight.detach().clone()
    record = sacbc_step(model, critic, policy_opt, critic_opt, make_rl_batch(data, np.arange(4)), sac)
    assert all(np.isfinite([record.l_critic, record.l_actor, record.l_bc, record.mean_w]))
    assert record.target_drift > 0.0
    assert not torch.equal(before, model.head.weight)


def test_sacbc_trainer_is_deterministic():
    config = _model_config()
    data = concat_rl_windows([rl_windows(_episode(seed=s), config, n_step=2) for s in range(2)])
    sac = SacBcConfig(lr=1e-3, critic_lr=1e-3, batch_size=3, epochs=2)
    results = []
    for _ in range(2):
        model = init_model(config, seed=0)
        trainer = SacBcTrainer(model, build_critic(config.d_model, LAYOUT.n_traj, hidden=16, seed=1), sac, seed=5)
        history = trainer.fit(data)
        results.append((model.head.weight.detach().clone(), [r.l_critic for r in history]))
    assert torch.equal(results[0][0], results[1][0])
    assert results[0][1] == results[1][1]
    assert len(results[0][1]) == 2 * 3


def test_bandit_recovers_optimal_actions():
    bandit = EnumerableBandit.random(seed=0)
    result = train_bandit(bandit, seed=0)
    assert result.solved
    assert result.solved_at is not None
