"""Memory attention readout, recurrent action policy, and auxiliary heads.

The mixed memories are read four times with scaled dot-product
attention: current observation and goal feature each query the image
memory and the object memory.  The four context vectors drive a single
gated recurrent cell together with an embedding of the previous action;
linear heads on the hidden state produce the 4 action logits, a value
baseline, and the two auxiliary predictions (progress and goal-within-
reach), both squashed to [0, 1] with a sigmoid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

N_ACTIONS = 4
PREV_ACTION_NONE = N_ACTIONS  # embedding slot for "no previous action"


@dataclass
class PolicyConfig:
    dim_image: int = 32
    dim_object: int = 16
    attn_dim: int = 16
    context_dim: int = 16
    hidden: int = 64
    action_embed_dim: int = 8

    def validate(self) -> None:
        if min(self.attn_dim, self.context_dim, self.hidden,
               self.action_embed_dim) < 1:
            raise ValueError("policy dimensions must be positive")


class MemoryAttention(nn.Module):
    """Single-head scaled dot-product attention over memory rows."""

    def __init__(self, query_dim: int, memory_dim: int, attn_dim: int,
                 context_dim: int):
        super().__init__()
        self.w_q = nn.Linear(query_dim, attn_dim, bias=False)
        self.w_k = nn.Linear(memory_dim, attn_dim, bias=False)
        self.w_v = nn.Linear(memory_dim, context_dim, bias=False)
        self.scale = 1.0 / math.sqrt(attn_dim)
        if query_dim == memory_dim:
            # Similarity-preserving start: with identical orthogonal key and
            # query maps, the pre-softmax logit for a memory row is (up to
            # scale) its cosine to the query, so a row matching the query
            # dominates the readout from the first gradient step instead of
            # having to emerge from a near-uniform softmax.
            gain = math.sqrt(4.0 * math.sqrt(attn_dim) * memory_dim / attn_dim)
            nn.init.orthogonal_(self.w_k.weight, gain=gain)
            with torch.no_grad():
                self.w_q.weight.copy_(self.w_k.weight)

    def forward(self, query: torch.Tensor, memory: torch.Tensor):
        """query: (q_dim,), memory: (n, mem_dim) -> ((ctx_dim,), (n,))."""
        if memory.shape[0] == 0:
            raise ValueError("attention over empty memory")
        logits = self.w_k(memory) @ self.w_q(query) * self.scale
        weights = torch.softmax(logits, dim=0)
        context = weights @ self.w_v(memory)
        return context, weights


class PolicyNetwork(nn.Module):
    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.attn_image = MemoryAttention(cfg.dim_image, cfg.dim_image,
                                          cfg.attn_dim, cfg.context_dim)
        self.attn_object = MemoryAttention(cfg.dim_image, cfg.dim_object,
                                           cfg.attn_dim, cfg.context_dim)
        self.prev_action_embed = nn.Embedding(N_ACTIONS + 1, cfg.action_embed_dim)
        self.cell = nn.GRUCell(4 * cfg.context_dim + cfg.action_embed_dim,
                               cfg.hidden)
        self.action_head = nn.Linear(cfg.hidden, N_ACTIONS)
        self.value_head = nn.Linear(cfg.hidden, 1)
        self.progress_head = nn.Linear(cfg.hidden, 1)
        self.goal_head = nn.Linear(cfg.hidden, 1)

    def initial_state(self) -> torch.Tensor:
        p = next(self.parameters())
        return p.new_zeros(self.cfg.hidden)

    def read_memory(self, memory_image: torch.Tensor, memory_object: torch.Tensor,
                    current_feature: torch.Tensor, goal_feature: torch.Tensor):
        """Four attention readouts; empty object memory yields zero contexts."""
        ci_t, wi_t = self.attn_image(current_feature, memory_image)
        ci_g, wi_g = self.attn_image(goal_feature, memory_image)
        if memory_object.shape[0] == 0:
            zero = ci_t.new_zeros(self.cfg.context_dim)
            empty = ci_t.new_zeros(0)
            co_t, wo_t = zero, empty
            co_g, wo_g = zero.clone(), empty
        else:
            co_t, wo_t = self.attn_object(current_feature, memory_object)
            co_g, wo_g = self.attn_object(goal_feature, memory_object)
        contexts = {"ci_t": ci_t, "co_t": co_t, "ci_g": ci_g, "co_g": co_g}
        weights = {"image_current": wi_t, "object_current": wo_t,
                   "image_goal": wi_g, "object_goal": wo_g}
        return contexts, weights

    def step(self, contexts: dict, hidden: torch.Tensor, prev_action: int):
        """One recurrent step; returns logits, value, new hidden, aux pair."""
        h_c = torch.cat([contexts["ci_t"], contexts["co_t"]])
        h_g = torch.cat([contexts["ci_g"], contexts["co_g"]])
        act = self.prev_action_embed(
            torch.tensor(prev_action, device=hidden.device))
        x = torch.cat([h_c, h_g, act])
        new_hidden = self.cell(x.unsqueeze(0), hidden.unsqueeze(0)).squeeze(0)
        logits = self.action_head(new_hidden)
        value = self.value_head(new_hidden).squeeze(-1)
        progress = torch.sigmoid(self.progress_head(new_hidden)).squeeze(-1)
        goal_flag = torch.sigmoid(self.goal_head(new_hidden)).squeeze(-1)
        return logits, value, new_hidden, (progress, goal_flag)


STOP_ACTION = 3

SAMPLING_MODES = ("greedy", "stochastic", "guarded")


def sample_action(logits, mode: str = "stochastic",
                  rng: np.random.Generator | None = None) -> int:
    """Pick an action from 4 logits.

    greedy: argmax with lowest-index ties.  stochastic: categorical over
    the softmax.  guarded: stop only when stop is the argmax; otherwise
    sample among the three movement actions, so exploration keeps its
    randomness but termination needs the policy's confidence.
    """
    logits = np.asarray(
        logits.detach().numpy() if isinstance(logits, torch.Tensor) else logits,
        dtype=np.float64)
    if logits.shape != (N_ACTIONS,) or not np.all(np.isfinite(logits)):
        raise ValueError("need 4 finite action logits")
    if mode == "greedy":
        return int(np.argmax(logits))
    if mode not in ("stochastic", "guarded"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    if rng is None:
        raise ValueError(f"{mode} sampling needs an rng")
    if mode == "guarded":
        if int(np.argmax(logits)) == STOP_ACTION:
            return STOP_ACTION
        logits = logits[:STOP_ACTION]
    z = logits - logits.max()
    probs = np.exp(z)
    probs /= probs.sum()
    return int(rng.choice(len(probs), p=probs))
