"""Policy-gradient training with a frozen greedy baseline.

Each iteration draws a batch of fresh instances, runs the frozen baseline
policy greedily through the whole level decomposition (its own window
propagation), then runs the current policy with sampling the same way. The
per-fleet advantage (sampled cost minus baseline cost) weights that fleet's
log-probability; gradients average over fleets and the batch, and Adam
applies them at a constant learning rate.

After every epoch both policies are compared greedily on a held-out
validation set; a one-sided paired t-test on per-instance total costs
replaces the baseline (and refreshes the validation set) when the current
policy is significantly better.

Three alternative gradient mixtures are available for comparison runs: a
single global advantage, a blend of own and global advantage, and a blend of
own advantage with the advantages of all later-level fleets.
"""

from __future__ import annotations

import copy
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from scipy import stats

from . import framework
from .env import routes_from_actions
from .instgen import GenConfig, generate
from .model import Instance
from .policy import PolicyConfig, PolicyNet, log_prob_of_actions, new_policy, rollout_batch

LOSS_VARIANTS = ("per_fleet", "L_G", "L_MG", "L_MF")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    iters_per_epoch: int = 50
    batch_size: int = 32
    lr: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    t_test_alpha: float = 0.05
    loss: str = "per_fleet"
    mix_alpha: float = 0.95
    val_size: int = 100
    gen: GenConfig = field(default_factory=lambda: GenConfig(n_flights=10, seed=0))
    seed: int = 0
    d_h: int = 128
    n_layers: int = 3
    n_heads: int = 8
    ff_hidden: int = 512
    clip: float = 10.0

    def __post_init__(self) -> None:
        if self.loss not in LOSS_VARIANTS:
            raise ValueError(f"loss must be one of {LOSS_VARIANTS}")
        if not (0.0 <= self.mix_alpha <= 1.0):
            raise ValueError("mix_alpha must lie in [0, 1]")
        if min(self.epochs, self.iters_per_epoch, self.batch_size, self.val_size) <= 0:
            raise ValueError("epochs, iters, batch and val sizes must be positive")

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(
            n_gates=self.gen.n_gates,
            n_ops=len(self.gen.operations),
            d_h=self.d_h,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            ff_hidden=self.ff_hidden,
            clip=self.clip,
        )


def _instance_seeds(cfg: TrainConfig, *tags: int) -> np.ndarray:
    return np.random.SeedSequence([cfg.seed, *tags]).generate_state(cfg.batch_size)


def make_instances(gen: GenConfig, seeds) -> list[Instance]:
    return [generate(replace(gen, seed=int(s))) for s in seeds]


def framework_costs(
    net: PolicyNet, insts: list[Instance], mode: str, rng: np.random.Generator | None
):
    """Run the level decomposition over a batch; one lockstep rollout per fleet.

    Returns (logp per op: dict op_id -> tensor (B,), cost per op: dict
    op_id -> array (B,)). Gradients flow through the log-probabilities when
    grad mode is on.
    """
    ops0 = insts[0].operations
    if any(i.operations != ops0 for i in insts):
        raise ValueError("batched training requires a shared operation table")
    completions: list[dict] = [{} for _ in insts]
    logp_by_op: dict[int, torch.Tensor] = {}
    cost_by_op: dict[int, np.ndarray] = {}
    for group in framework.group_by_level(ops0):
        for op in group:
            subs = [
                framework.build_subproblem(inst, op, comp)
                for inst, comp in zip(insts, completions)
            ]
            actions, logps, costs = rollout_batch(net, subs, mode, rng)
            logp_by_op[op.op_id] = logps
            cost_by_op[op.op_id] = np.asarray(costs)
            for i, (sub, acts) in enumerate(zip(subs, actions)):
                starts = framework.start_times(sub, routes_from_actions(sub, acts))
                for j, fid in enumerate(sub.flight_ids):
                    completions[i][(fid, op.op_id)] = starts[fid] + sub.duration[j]
    return logp_by_op, cost_by_op


def greedy_total_costs(net: PolicyNet, insts: list[Instance]) -> np.ndarray:
    """Per-instance total cost of greedy decoding through the framework."""
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            _, cost_by_op = framework_costs(net, insts, "greedy", None)
    finally:
        net.train(was_training)
    return np.sum(list(cost_by_op.values()), axis=0)


def _mixture_coefficients(
    ops, adv_by_op: dict[int, np.ndarray], variant: str, alpha: float
) -> dict[int, np.ndarray]:
    """Advantage weighting per fleet for every gradient variant."""
    total = np.sum(list(adv_by_op.values()), axis=0)
    coefs: dict[int, np.ndarray] = {}
    for op in ops:
        own = adv_by_op[op.op_id]
        if variant == "per_fleet":
            coefs[op.op_id] = own
        elif variant == "L_G":
            coefs[op.op_id] = total
        elif variant == "L_MG":
            coefs[op.op_id] = alpha * own + (1.0 - alpha) * total
        elif variant == "L_MF":
            later = np.zeros_like(own)
            for other in ops:
                if other.level > op.level:
                    later = later + adv_by_op[other.op_id]
            coefs[op.op_id] = alpha * own + (1.0 - alpha) * later
        else:
            raise ValueError(f"unknown loss variant {variant!r}")
    return coefs


def _loss(
    ops,
    logp_by_op: dict[int, torch.Tensor],
    adv_by_op: dict[int, np.ndarray],
    variant: str,
    alpha: float,
) -> torch.Tensor:
    coefs = _mixture_coefficients(ops, adv_by_op, variant, alpha)
    n_fleets = len(ops)
    terms = []
    for op in ops:
        w = torch.from_numpy(np.ascontiguousarray(coefs[op.op_id]))
        terms.append((w * logp_by_op[op.op_id]).mean())
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    if variant != "L_G":
        total = total / n_fleets
    return total


def reinforce_iteration(
    net: PolicyNet,
    baseline: PolicyNet,
    cfg: TrainConfig,
    opt: torch.optim.Optimizer,
    epoch: int,
    it: int,
) -> float:
    """One batch: baseline greedy, current sampled, advantage-weighted step.

    Returns the batch's mean sampled total cost. Instance seeds derive from
    (seed, epoch, iteration), the sampler stream from the same tuple, so
    repeated runs retrace each other exactly.
    """
    insts = make_instances(cfg.gen, _instance_seeds(cfg, 1, epoch, it))
    with torch.no_grad():
        _, base_by_op = framework_costs(baseline.eval(), insts, "greedy", None)
    net.train()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, epoch, it]))
    logp_by_op, cost_by_op = framework_costs(net, insts, "sample", rng)
    adv_by_op = {
        k: cost_by_op[k] - base_by_op[k] for k in cost_by_op
    }
    loss = _loss(insts[0].operations, logp_by_op, adv_by_op, cfg.loss, cfg.mix_alpha)
    opt.zero_grad()
    loss.backward()
    opt.step()
    return float(np.sum(list(cost_by_op.values()), axis=0).mean())


def baseline_update(
    net: PolicyNet,
    baseline: PolicyNet,
    val_insts: list[Instance],
    alpha: float,
) -> tuple[bool, np.ndarray, np.ndarray]:
    """Swap the baseline when the current policy is significantly better.

    One-sided paired t-test on per-instance greedy total costs. Degenerate
    zero-variance differences swap only when every difference favors the
    current policy.
    """
    cur = greedy_total_costs(net, val_insts)
    base = greedy_total_costs(baseline, val_insts)
    diffs = cur - base
    if np.allclose(diffs.std(), 0.0):
        swapped = bool(np.all(diffs < 0.0))
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = stats.ttest_rel(cur, base, alternative="less")
        swapped = bool(np.isfinite(result.pvalue) and result.pvalue < alpha)
    if swapped:
        baseline.load_state_dict(copy.deepcopy(net.state_dict()))
    return swapped, cur, base


@dataclass
class TrainResult:
    net: PolicyNet
    baseline: PolicyNet
    history: list[dict]


def make_valset(cfg: TrainConfig, generation: int) -> list[Instance]:
    seeds = np.random.SeedSequence([cfg.seed, 3, generation]).generate_state(cfg.val_size)
    return make_instances(cfg.gen, seeds)


def train(cfg: TrainConfig, progress=None) -> TrainResult:
    """Full run per the training loop; history has one row per epoch."""
    net = new_policy(cfg.policy_config(), cfg.seed)
    baseline = new_policy(cfg.policy_config(), cfg.seed)
    baseline.load_state_dict(copy.deepcopy(net.state_dict()))
    opt = torch.optim.Adam(
        net.parameters(), lr=cfg.lr, betas=cfg.adam_betas, eps=cfg.adam_eps
    )
    valset = make_valset(cfg, 0)
    generation = 0
    history: list[dict] = []
    for epoch in range(cfg.epochs):
        t0 = time.monotonic()
        train_costs = []
        for it in range(cfg.iters_per_epoch):
            train_costs.append(
                reinforce_iteration(net, baseline, cfg, opt, epoch, it)
            )
        swapped, cur, base = baseline_update(net, baseline, valset, cfg.t_test_alpha)
        if swapped:
            generation += 1
            valset = make_valset(cfg, generation)
        row = {
            "epoch": epoch,
            "train_cost": float(np.mean(train_costs)),
            "val_cost": float(cur.mean()),
            "baseline_cost": float(base.mean()),
            "swapped": int(swapped),
            "seconds": time.monotonic() - t0,
        }
        history.append(row)
        if progress is not None:
            progress(row)
    return TrainResult(net=net, baseline=baseline, history=history)


# ---------------------------------------------------------------------------
# Per-instance gradient surface (used by the correctness gates and for the
# gradient-variant comparisons on single instances).


@dataclass
class InstanceRollout:
    inst: Instance
    subs: dict[int, object]
    actions: dict[int, tuple[int, ...]]
    costs: dict[int, float]
    base_costs: dict[int, float]


def collect_rollout(
    net: PolicyNet, inst: Instance, seed: int = 0
) -> InstanceRollout:
    """Sample one full decomposition; baseline = the same net decoded greedily."""
    with torch.no_grad():
        _, base_by_op = framework_costs(net, [inst], "greedy", None)
    subs: dict[int, object] = {}
    actions: dict[int, tuple[int, ...]] = {}
    costs: dict[int, float] = {}
    completions: dict = {}
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for group in framework.group_by_level(inst.operations):
            for op in group:
                sub = framework.build_subproblem(inst, op, completions)
                acts, _, c = rollout_batch(net, [sub], "sample", rng)
                subs[op.op_id] = sub
                actions[op.op_id] = acts[0]
                costs[op.op_id] = float(c[0])
                starts = framework.start_times(sub, routes_from_actions(sub, acts[0]))
                for j, fid in enumerate(sub.flight_ids):
                    completions[(fid, op.op_id)] = starts[fid] + sub.duration[j]
    return InstanceRollout(
        inst=inst,
        subs=subs,
        actions=actions,
        costs=costs,
        base_costs={k: float(v[0]) for k, v in base_by_op.items()},
    )


def loss_from_rollout(
    net: PolicyNet, data: InstanceRollout, variant: str, mix_alpha: float
) -> torch.Tensor:
    """Recompute log-probs of the stored actions and weight per the variant."""
    ops = data.inst.operations
    adv = {
        k: np.asarray([data.costs[k] - data.base_costs[k]]) for k in data.costs
    }
    coefs = _mixture_coefficients(ops, adv, variant, mix_alpha)
    total = torch.zeros((), dtype=torch.float64)
    for op in ops:
        lp = log_prob_of_actions(net, data.subs[op.op_id], data.actions[op.op_id])
        total = total + float(coefs[op.op_id][0]) * lp
    if variant != "L_G":
        total = total / len(ops)
    return total


def grad_logprob(
    net: PolicyNet, sub, actions: tuple[int, ...]
) -> dict[str, np.ndarray]:
    """Gradient of the episode's summed log-probability w.r.t. every array."""
    net.zero_grad(set_to_none=True)
    ll = log_prob_of_actions(net, sub, actions)
    ll.backward()
    out = {}
    for name, p in net.named_parameters():
        grad = p.grad
        out[name] = (
            np.zeros(p.shape) if grad is None else grad.detach().numpy().copy()
        )
    net.zero_grad(set_to_none=True)
    return out


def ablation_gradient(
    net: PolicyNet, inst: Instance, variant: str, mix_alpha: float, seed: int = 0
) -> dict[str, np.ndarray]:
    """Gradient of one variant's loss on a single sampled decomposition."""
    data = collect_rollout(net, inst, seed)
    net.zero_grad(set_to_none=True)
    loss = loss_from_rollout(net, data, variant, mix_alpha)
    loss.backward()
    out = {}
    for name, p in net.named_parameters():
        grad = p.grad
        out[name] = (
            np.zeros(p.shape) if grad is None else grad.detach().numpy().copy()
        )
    net.zero_grad(set_to_none=True)
    return out
