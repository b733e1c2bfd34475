"""Attention encoder-decoder policy over sub-problem episodes.

Node j's initial embedding is its gate's entry in a learnable location table
plus a linear projection of [demand, window start, window end]; the depot has
its own table entry. Three self-attention layers (8 heads, skip + batch norm,
ReLU feed-forward) produce node embeddings whose mean is the graph embedding.

Each decode step builds a context [graph, fleet, last node, remaining
capacity, clock], refines it with one attention pass over the currently
selectable nodes (no skip/FF/norm), then scores every node with a single
attention head squashed to [-clip, clip] by tanh; masked nodes score -inf and
the softmax over scores is the action distribution.

Times are divided by the instance horizon before entering the network;
demand is already normalized by vehicle capacity. All math runs in float64.
"""

from __future__ import annotations

import math
import pickle
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .env import DEPOT, RolloutState, SubProblem, feasible_mask, reset, step, tour_cost
from .errors import FormatError

PARAMS_FORMAT = 1


@dataclass(frozen=True)
class PolicyConfig:
    n_gates: int
    n_ops: int
    d_h: int = 128
    n_layers: int = 3
    n_heads: int = 8
    ff_hidden: int = 512
    clip: float = 10.0

    def __post_init__(self) -> None:
        if self.d_h % self.n_heads:
            raise ValueError("d_h must be divisible by n_heads")


class MultiHeadAttention(nn.Module):
    """Per-head projections kept as explicit arrays; no biases anywhere."""

    def __init__(self, n_heads: int, q_dim: int, d_h: int):
        super().__init__()
        dk = d_h // n_heads
        self.dk = dk
        self.wq = nn.Parameter(torch.empty(n_heads, dk, q_dim))
        self.wk = nn.Parameter(torch.empty(n_heads, dk, d_h))
        self.wv = nn.Parameter(torch.empty(n_heads, dk, d_h))
        self.wo = nn.Parameter(torch.empty(n_heads, d_h, dk))

    def forward(
        self, q_in: torch.Tensor, kv: torch.Tensor, visible: torch.Tensor | None
    ) -> torch.Tensor:
        q = torch.einsum("mkq,btq->bmtk", self.wq, q_in)
        k = torch.einsum("mkd,bnd->bmnk", self.wk, kv)
        v = torch.einsum("mkd,bnd->bmnk", self.wv, kv)
        u = torch.einsum("bmtk,bmnk->bmtn", q, k) / math.sqrt(self.dk)
        if visible is not None:
            u = u.masked_fill(~visible[:, None, None, :], float("-inf"))
        attn = torch.softmax(u, dim=-1)
        out = torch.einsum("bmtn,bmnk->bmtk", attn, v)
        return torch.einsum("mdk,bmtk->btd", self.wo, out)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.mha = MultiHeadAttention(cfg.n_heads, cfg.d_h, cfg.d_h)
        self.bn1 = nn.BatchNorm1d(cfg.d_h)
        self.ff1 = nn.Linear(cfg.d_h, cfg.ff_hidden)
        self.ff2 = nn.Linear(cfg.ff_hidden, cfg.d_h)
        self.bn2 = nn.BatchNorm1d(cfg.d_h)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        B, N, d = h.shape
        h = self.bn1((h + self.mha(h, h, None)).reshape(B * N, d)).reshape(B, N, d)
        f = self.ff2(F.relu(self.ff1(h)))
        return self.bn2((h + f).reshape(B * N, d)).reshape(B, N, d)


class PolicyNet(nn.Module):
    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.cfg = cfg
        self.gate_table = nn.Embedding(cfg.n_gates + 1, cfg.d_h)
        self.fleet_table = nn.Embedding(cfg.n_ops, cfg.d_h)
        self.input_proj = nn.Linear(3, cfg.d_h)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_layers))
        self.glimpse = MultiHeadAttention(cfg.n_heads, 3 * cfg.d_h + 2, cfg.d_h)
        self.final_q = nn.Linear(cfg.d_h, cfg.d_h, bias=False)
        self.final_k = nn.Linear(cfg.d_h, cfg.d_h, bias=False)
        self.double()

    def encode(self, feats: torch.Tensor, gate_ids: torch.Tensor):
        """feats (B, n+1, 3) and gate ids (B, n+1) -> embeddings, graph mean."""
        emb = self.gate_table(gate_ids)
        proj = self.input_proj(feats)
        h = torch.cat([emb[:, :1], emb[:, 1:] + proj[:, 1:]], dim=1)
        for layer in self.layers:
            h = layer(h)
        return h, h.mean(dim=1)

    def decode_logprobs(
        self,
        h: torch.Tensor,
        hbar: torch.Tensor,
        op_idx: torch.Tensor,
        q_t: torch.Tensor,
        ft_norm: torch.Tensor,
        last_idx: torch.Tensor,
        visible: torch.Tensor,
    ) -> torch.Tensor:
        """Log action distribution per batch row; masked nodes get -inf."""
        B = h.shape[0]
        ef = self.fleet_table(op_idx)
        hlast = h[torch.arange(B), last_idx]
        ctx = torch.cat([hbar, ef, hlast, q_t[:, None], ft_norm[:, None]], dim=1)
        g = self.glimpse(ctx[:, None, :], h, visible)[:, 0]
        scores = torch.einsum("bd,bnd->bn", self.final_q(g), self.final_k(h))
        scores = self.cfg.clip * torch.tanh(scores / math.sqrt(self.cfg.d_h))
        scores = scores.masked_fill(~visible, float("-inf"))
        return F.log_softmax(scores, dim=1)


def init_params(net: PolicyNet, seed: int) -> PolicyNet:
    """Seeded uniform(-1/sqrt(d_h), 1/sqrt(d_h)) over every parameter array."""
    gen = torch.Generator().manual_seed(seed)
    bound = 1.0 / math.sqrt(net.cfg.d_h)
    for p in net.parameters():
        with torch.no_grad():
            p.uniform_(-bound, bound, generator=gen)
    return net


def new_policy(cfg: PolicyConfig, seed: int = 0) -> PolicyNet:
    return init_params(PolicyNet(cfg), seed)


def save_params(net: PolicyNet, path: str) -> None:
    """Write parameters as pickled numpy arrays (byte-identical on rerun)."""
    state = {k: v.detach().cpu().numpy().copy() for k, v in net.state_dict().items()}
    blob = {"format": PARAMS_FORMAT, "config": asdict(net.cfg), "state": state}
    with open(path, "wb") as fh:
        pickle.dump(blob, fh, protocol=4)


def load_params(path: str) -> PolicyNet:
    try:
        with open(path, "rb") as fh:
            blob = pickle.load(fh)
    except (pickle.UnpicklingError, EOFError) as exc:
        raise FormatError(f"{path}: not a recognized policy parameters file") from exc
    if not isinstance(blob, dict) or blob.get("format") != PARAMS_FORMAT:
        raise FormatError(f"{path}: not a recognized policy parameters file")
    net = PolicyNet(PolicyConfig(**blob["config"]))
    net.load_state_dict(
        {k: torch.as_tensor(v) for k, v in blob["state"].items()}
    )
    return net


def sub_features(sub: SubProblem) -> tuple[np.ndarray, np.ndarray]:
    """Per-node [demand, window start, window end] (times / horizon) + gate ids."""
    n = sub.n
    feats = np.zeros((n + 1, 3))
    feats[1:, 0] = sub.demand_arr()
    feats[1:, 1] = sub.a_arr() / sub.horizon
    feats[1:, 2] = sub.b_arr() / sub.horizon
    gates = np.zeros(n + 1, dtype=np.int64)
    if sub.gate_ids:
        gates[1:] = np.asarray(sub.gate_ids, dtype=np.int64)
    return feats, gates


def encode(net: PolicyNet, sub: SubProblem):
    """Node embeddings and graph embedding for one sub-problem."""
    feats, gates = sub_features(sub)
    h, hbar = net.encode(
        torch.from_numpy(feats[None]), torch.from_numpy(gates[None])
    )
    return h[0], hbar[0]


def _visible_rows(subs, states, dones) -> np.ndarray:
    n = subs[0].n
    vis = np.zeros((len(states), n + 1), dtype=bool)
    for b, s in enumerate(states):
        if dones[b]:
            vis[b, DEPOT] = True
        else:
            vis[b] = feasible_mask(s)
    return vis


def decode_step(net: PolicyNet, embeddings, state: RolloutState) -> np.ndarray:
    """Probability per node for one state (masked nodes exactly 0)."""
    h, hbar = embeddings
    sub = state.sub
    visible = torch.from_numpy(_visible_rows([sub], [state], [False]))
    logp = net.decode_logprobs(
        h[None],
        hbar[None],
        torch.tensor([sub.op_id - 1]),
        torch.tensor([state.remaining_capacity], dtype=torch.float64),
        torch.tensor([state.clock / sub.horizon], dtype=torch.float64),
        torch.tensor([max(state.last_node, 0)]),
        visible,
    )
    probs = torch.exp(logp[0]).detach().numpy().copy()
    probs[~visible[0].numpy()] = 0.0
    return probs


def _pick(logp_row: np.ndarray, mode: str, rng: np.random.Generator | None) -> int:
    if mode == "greedy":
        return int(np.argmax(logp_row))
    probs = np.exp(logp_row)
    cum = np.cumsum(probs)
    u = rng.random() * cum[-1]
    return int(min(np.searchsorted(cum, u, side="right"), len(probs) - 1))


def rollout_batch(
    net: PolicyNet,
    subs: list[SubProblem],
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
):
    """Decode all sub-problems in lockstep (they must share the flight count).

    Returns (action tuples, summed log-probability tensor (B,), costs). The
    log-probability tensor stays attached to the graph, so callers can
    backpropagate through it; wrap in torch.no_grad() for evaluation.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sampling requires an rng")
    n = subs[0].n
    if any(s.n != n for s in subs):
        raise ValueError("lockstep rollout requires equal flight counts")
    B = len(subs)
    feats = np.stack([sub_features(s)[0] for s in subs])
    gates = np.stack([sub_features(s)[1] for s in subs])
    h, hbar = net.encode(torch.from_numpy(feats), torch.from_numpy(gates))
    op_idx = torch.tensor([s.op_id - 1 for s in subs])
    states = [reset(s) for s in subs]
    dones = [s.done for s in states]
    logps = torch.zeros(B, dtype=torch.float64)
    while not all(dones):
        visible = _visible_rows(subs, states, dones)
        q_t = torch.tensor([s.remaining_capacity for s in states], dtype=torch.float64)
        ft = torch.tensor(
            [s.clock / s.sub.horizon for s in states], dtype=torch.float64
        )
        last = torch.tensor([max(s.last_node, 0) for s in states])
        logp = net.decode_logprobs(
            h, hbar, op_idx, q_t, ft, last, torch.from_numpy(visible)
        )
        logp_np = logp.detach().numpy()
        acts = []
        for b in range(B):
            acts.append(DEPOT if dones[b] else _pick(logp_np[b], mode, rng))
        acts_t = torch.tensor(acts)
        active = torch.tensor([0.0 if d else 1.0 for d in dones], dtype=torch.float64)
        logps = logps + logp.gather(1, acts_t[:, None])[:, 0] * active
        for b in range(B):
            if not dones[b]:
                states[b] = step(states[b], acts[b])
                dones[b] = states[b].done
    actions = [s.partial for s in states]
    costs = [tour_cost(s, a) for s, a in zip(subs, actions)]
    return actions, logps, costs


def rollout(
    net: PolicyNet, sub: SubProblem, mode: str = "greedy", seed: int | None = None
) -> tuple[tuple[int, ...], float, float]:
    """One episode; returns (actions, log probability of them, tour cost)."""
    rng = np.random.default_rng(seed) if mode == "sample" else None
    with torch.no_grad():
        actions, logps, costs = rollout_batch(net, [sub], mode, rng)
    return actions[0], float(logps[0]), costs[0]


def log_prob_of_actions(
    net: PolicyNet, sub: SubProblem, actions: tuple[int, ...]
) -> torch.Tensor:
    """Differentiable sum of step log-probabilities of a fixed episode."""
    h, hbar = encode(net, sub)
    s = reset(sub)
    total = torch.zeros((), dtype=torch.float64)
    for a in actions:
        if s.done and a == DEPOT:
            s = step(s, a)
            continue
        visible = torch.from_numpy(_visible_rows([sub], [s], [False]))
        logp = net.decode_logprobs(
            h[None],
            hbar[None],
            torch.tensor([sub.op_id - 1]),
            torch.tensor([s.remaining_capacity], dtype=torch.float64),
            torch.tensor([s.clock / sub.horizon], dtype=torch.float64),
            torch.tensor([max(s.last_node, 0)]),
            visible,
        )
        total = total + logp[0, a]
        s = step(s, a)
    return total


def solver(net: PolicyNet, mode: str = "greedy", seed: int | None = None):
    """Adapt the policy to the framework's sub-solver calling convention."""

    def run(sub: SubProblem):
        actions, _, _ = rollout(net, sub, mode, seed)
        return actions

    return run


def sample_best(
    net: PolicyNet, sub: SubProblem, k: int, seed: int | None = None
) -> tuple[tuple[int, ...], float]:
    """Best of k sampled episodes (one shared seed stream); returns (actions, cost)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    best_actions, best_cost = None, float("inf")
    with torch.no_grad():
        for _ in range(k):
            actions, _, costs = rollout_batch(net, [sub], "sample", rng)
            if costs[0] < best_cost:
                best_actions, best_cost = actions[0], costs[0]
    return best_actions, best_cost
