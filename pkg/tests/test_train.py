"""Training loop pieces: gradients, baseline swap rule, loss variants, rerun."""

from __future__ import annotations

import copy

import numpy as np
import pytest
import torch
from scipy import special

from agh import train as tr
from agh.framework import solve
from agh.instgen import GenConfig
from agh.policy import PolicyConfig, new_policy, save_params, solver
from agh.train import (
    TrainConfig,
    ablation_gradient,
    baseline_update,
    collect_rollout,
    framework_costs,
    grad_logprob,
    greedy_total_costs,
    make_instances,
    make_valset,
    reinforce_iteration,
    train,
)

from conftest import full_instance, two_level_ops


TINY_GEN = GenConfig(n_flights=4, seed=0, operations=two_level_ops())

TINY_CFG = TrainConfig(
    epochs=2,
    iters_per_epoch=2,
    batch_size=3,
    val_size=4,
    gen=TINY_GEN,
    seed=0,
    d_h=8,
    n_layers=1,
    n_heads=2,
    ff_hidden=16,
)


def tiny_net(seed: int = 0):
    net = new_policy(TINY_CFG.policy_config(), seed)
    net.eval()
    return net


def sampled_episode(net, seed: int):
    from agh.framework import build_subproblem, group_by_level
    from agh.policy import rollout

    inst = make_instances(TINY_GEN, [seed])[0]
    sub = build_subproblem(inst, group_by_level(inst.operations)[0][0], {})
    actions, _, _ = rollout(net, sub, mode="sample", seed=seed)
    return sub, actions


def directional_fd_error(net, sub, actions, rng, eps: float = 1e-5) -> float:
    """Central finite differences along a random direction vs. the analytic
    gradient; exercises every coordinate at once with good conditioning."""
    from agh.policy import log_prob_of_actions

    grads = grad_logprob(net, sub, actions)
    params = dict(net.named_parameters())
    direction = {
        name: rng.standard_normal(p.shape) for name, p in params.items()
    }
    scale = np.sqrt(sum((d**2).sum() for d in direction.values()))
    analytic = sum(
        float((grads[name] * d).sum()) for name, d in direction.items()
    ) / scale

    def nudge(sign: float) -> None:
        with torch.no_grad():
            for name, p in params.items():
                p += torch.from_numpy(direction[name] * (sign * eps / scale))

    nudge(+1.0)
    up = float(log_prob_of_actions(net, sub, actions).detach())
    nudge(-2.0)
    down = float(log_prob_of_actions(net, sub, actions).detach())
    nudge(+1.0)
    fd = (up - down) / (2 * eps)
    return abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-8)


def test_grad_logprob_matches_finite_differences():
    net = tiny_net()
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(6):
        sub, actions = sampled_episode(net, trial)
        for _ in range(2):
            worst = max(worst, directional_fd_error(net, sub, actions, rng))
    assert worst <= 1e-4, worst


def test_mixture_coefficients_hand_case():
    ops = two_level_ops()
    adv = {1: np.array([2.0]), 2: np.array([-1.0])}
    per_fleet = tr._mixture_coefficients(ops, adv, "per_fleet", 0.95)
    assert per_fleet[1] == pytest.approx([2.0])
    assert per_fleet[2] == pytest.approx([-1.0])
    lg = tr._mixture_coefficients(ops, adv, "L_G", 0.95)
    assert lg[1] == pytest.approx([1.0])
    assert lg[2] == pytest.approx([1.0])
    lmg = tr._mixture_coefficients(ops, adv, "L_MG", 0.75)
    assert lmg[1] == pytest.approx([0.75 * 2.0 + 0.25 * 1.0])
    assert lmg[2] == pytest.approx([0.75 * -1.0 + 0.25 * 1.0])
    lmf = tr._mixture_coefficients(ops, adv, "L_MF", 0.75)
    # Op 1 (level 0) mixes in the later level; op 2 has nothing later.
    assert lmf[1] == pytest.approx([0.75 * 2.0 + 0.25 * -1.0])
    assert lmf[2] == pytest.approx([0.75 * -1.0])


def test_ablation_gradients_collapse_at_alpha_one():
    net = tiny_net()
    inst = make_instances(TINY_GEN, [11])[0]
    reference = ablation_gradient(net, inst, "per_fleet", 0.5, seed=3)
    for variant in ("L_MG", "L_MF"):
        mixed = ablation_gradient(net, inst, variant, 1.0, seed=3)
        for name, g in reference.items():
            assert np.max(np.abs(mixed[name] - g)) <= 1e-10, (variant, name)


def test_ablation_variants_differ_below_alpha_one():
    net = tiny_net()
    inst = make_instances(TINY_GEN, [11])[0]
    a = ablation_gradient(net, inst, "per_fleet", 0.5, seed=3)
    b = ablation_gradient(net, inst, "L_G", 0.5, seed=3)
    assert any(np.max(np.abs(a[k] - b[k])) > 0 for k in a)


def test_collect_rollout_costs_are_consistent():
    from agh.env import tour_cost

    net = tiny_net()
    inst = make_instances(TINY_GEN, [5])[0]
    data = collect_rollout(net, inst, seed=7)
    assert set(data.subs) == {1, 2}
    for op_id, sub in data.subs.items():
        assert data.costs[op_id] == pytest.approx(tour_cost(sub, data.actions[op_id]))
    greedy_total = greedy_total_costs(net, [inst])[0]
    assert sum(data.base_costs.values()) == pytest.approx(greedy_total)


def test_framework_costs_greedy_equals_framework_solve():
    net = tiny_net()
    insts = make_instances(TINY_GEN, [1, 2, 3])
    with torch.no_grad():
        _, cost_by_op = framework_costs(net, insts, "greedy", None)
    totals = np.sum(list(cost_by_op.values()), axis=0)
    for k, inst in enumerate(insts):
        sol = solve(inst, solver(net, mode="greedy"))
        assert totals[k] == pytest.approx(sol.objective, abs=1e-9)


def test_framework_costs_requires_shared_operations():
    net = tiny_net()
    mixed = [make_instances(TINY_GEN, [1])[0], full_instance(4, seed=1)]
    with pytest.raises(ValueError):
        framework_costs(net, mixed, "greedy", None)


def paired_t_pvalue(cur: np.ndarray, base: np.ndarray) -> float:
    """One-sided (less) paired t-test written from the definition."""
    d = cur - base
    n = d.size
    sd = d.std(ddof=1)
    t = d.mean() / (sd / np.sqrt(n))
    return float(special.stdtr(n - 1, t))


@pytest.mark.parametrize(
    "offsets,expect_swap",
    [
        (np.array([-5.0, -6.0, -5.5, -4.5, -5.2, -5.8]), True),
        (np.array([5.0, 6.0, 5.5, 4.5, 5.2, 5.8]), False),
        (np.array([-0.1, 0.2, -0.05, 0.1, -0.15, 0.12]), False),
    ],
)
def test_baseline_swap_follows_paired_t_test(monkeypatch, offsets, expect_swap):
    net = tiny_net(seed=1)
    baseline = tiny_net(seed=2)
    base_costs = np.array([100.0, 110.0, 105.0, 95.0, 102.0, 108.0])
    cur_costs = base_costs + offsets

    def fake_costs(which, _insts):
        return cur_costs if which is net else base_costs

    monkeypatch.setattr(tr, "greedy_total_costs", fake_costs)
    swapped, cur, base = baseline_update(net, baseline, [None] * 6, alpha=0.05)
    assert swapped == expect_swap
    assert swapped == (paired_t_pvalue(cur_costs, base_costs) < 0.05)
    if swapped:
        for k, v in net.state_dict().items():
            assert torch.equal(baseline.state_dict()[k], v)


def test_baseline_swap_zero_variance_edge(monkeypatch):
    net = tiny_net(seed=1)
    baseline = tiny_net(seed=2)
    base_costs = np.full(5, 50.0)

    def better(which, _insts):
        return base_costs - 1.0 if which is net else base_costs

    def equal(which, _insts):
        return base_costs.copy()

    monkeypatch.setattr(tr, "greedy_total_costs", better)
    assert baseline_update(net, baseline, [None] * 5, alpha=0.05)[0]
    monkeypatch.setattr(tr, "greedy_total_costs", equal)
    assert not baseline_update(net, baseline, [None] * 5, alpha=0.05)[0]


def test_identical_nets_never_swap():
    net = tiny_net(seed=0)
    baseline = tiny_net(seed=0)
    insts = make_instances(TINY_GEN, [1, 2, 3])
    swapped, cur, base = baseline_update(net, baseline, insts, alpha=0.05)
    assert not swapped
    assert cur == pytest.approx(base)


def test_instance_streams_are_reproducible():
    a = make_instances(TINY_GEN, tr._instance_seeds(TINY_CFG, 1, 0, 0))
    b = make_instances(TINY_GEN, tr._instance_seeds(TINY_CFG, 1, 0, 0))
    assert a == b
    c = make_instances(TINY_GEN, tr._instance_seeds(TINY_CFG, 1, 0, 1))
    assert a != c
    v0, v0b, v1 = make_valset(TINY_CFG, 0), make_valset(TINY_CFG, 0), make_valset(TINY_CFG, 1)
    assert v0 == v0b and v0 != v1
    assert len(v0) == TINY_CFG.val_size


def test_reinforce_iteration_updates_parameters():
    net = new_policy(TINY_CFG.policy_config(), 0)
    baseline = new_policy(TINY_CFG.policy_config(), 0)
    baseline.load_state_dict(copy.deepcopy(net.state_dict()))
    before = {k: v.clone() for k, v in net.state_dict().items()}
    opt = torch.optim.Adam(net.parameters(), lr=1e-2)
    cost = reinforce_iteration(net, baseline, TINY_CFG, opt, epoch=0, it=0)
    assert np.isfinite(cost) and cost > 0
    moved = any(
        not torch.equal(before[k], v)
        for k, v in net.state_dict().items()
        if "running" not in k and "num_batches" not in k
    )
    assert moved


def test_train_micro_run_is_reproducible(tmp_path):
    r1 = train(TINY_CFG)
    r2 = train(TINY_CFG)
    assert len(r1.history) == TINY_CFG.epochs
    for row1, row2 in zip(r1.history, r2.history):
        for key in ("epoch", "train_cost", "val_cost", "baseline_cost", "swapped"):
            assert row1[key] == row2[key], key
    p1, p2 = tmp_path / "a.params", tmp_path / "b.params"
    save_params(r1.net, str(p1))
    save_params(r2.net, str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(loss="L_X")
    with pytest.raises(ValueError):
        TrainConfig(mix_alpha=1.5)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    cfg = TrainConfig(gen=TINY_GEN, d_h=16, n_heads=4)
    pc = cfg.policy_config()
    assert isinstance(pc, PolicyConfig)
    assert pc.n_ops == len(TINY_GEN.operations)
    assert pc.n_gates == TINY_GEN.n_gates
