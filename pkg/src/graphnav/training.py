"""Losses, reward shaping, rollout collection, and the two-phase trainer.

Training follows behavior cloning first (negative log-likelihood to the
shortest-path oracle action plus L2 auxiliary terms), then PPO
finetuning with a clipped surrogate over GAE advantages computed from
the shaped reward (geodesic progress, +10 on reaching the goal).

Graph construction is not differentiable, so trajectories are collected
once as per-step snapshots of the graph (features and affinities) and
replayed through the mixer + attention + policy stack, which is where
all gradients flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .agent import graph_tensors, mixed_memory
from .builder import GraphBuilder
from .encoders import EncoderConfig, OracleEncoder
from .gridsim import (CELL_M, STOP, SUCCESS_RADIUS_M, DetectorConfig, Episode,
                      World, distance_field, observe, oracle_action, step_env)
from .mixer import CrossGraphMixer
from .policy import PREV_ACTION_NONE, PolicyNetwork


@dataclass
class TrainConfig:
    lambda_aux: float = 1.0
    clip: float = 0.2
    discount: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 2e-3
    ppo_learning_rate: float = 1e-4   # gentler rate for the finetune phase
    bc_epochs: int = 40
    bc_batch_episodes: int = 16
    ppo_updates: int = 10
    ppo_epochs: int = 3
    rollout_episodes: int = 8
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_steps: int = 500
    seed: int = 0
    bc_episodes: int = 80      # demonstration episodes for the BC phase
    tier: str = "easy"         # difficulty tier used for training episodes
    val_episodes: int = 50     # validation suite size per phase

    def validate(self) -> None:
        if self.lambda_aux < 0:
            raise ValueError("lambda_aux must be >= 0")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")
        if self.clip <= 0 or self.learning_rate <= 0:
            raise ValueError("clip and learning_rate must be positive")
        if self.ppo_learning_rate <= 0:
            raise ValueError("ppo_learning_rate must be positive")


def compute_reward(prev_geodesic: float, cur_geodesic: float,
                   reached_goal: bool) -> float:
    """Geodesic progress plus a +10 terminal bonus."""
    if prev_geodesic < 0 or cur_geodesic < 0:
        raise ValueError("geodesic distances must be nonnegative")
    return (prev_geodesic - cur_geodesic) + (10.0 if reached_goal else 0.0)


def progress_target(d0: float, dt: float) -> float:
    """Normalized progress toward the goal, clamped to [0, 1]."""
    if d0 == 0:
        return 1.0
    return float(np.clip(1.0 - dt / d0, 0.0, 1.0))


@dataclass
class StepSnapshot:
    """Graph state as of one step, plus targets for the losses."""
    graph: dict                  # numpy feature/affinity matrices
    current_feature: np.ndarray
    oracle_action: int
    progress: float              # p* in [0, 1]
    goal_flag: float             # s* in {0, 1}
    # RL-only fields
    action: int = -1
    logp_old: float = 0.0
    value_old: float = 0.0
    reward: float = 0.0
    advantage: float = 0.0
    value_target: float = 0.0


@dataclass
class EpisodeTrace:
    goal_feature: np.ndarray
    steps: list[StepSnapshot] = field(default_factory=list)
    success: bool = False
    batched: dict | None = None  # lazy block-diagonal torch batch over steps


def _capture_graph(graph) -> dict:
    return {
        "feats_image": graph.image_features().copy(),
        "feats_object": graph.object_features().copy(),
        "a_im": graph.image_affinity().astype(np.float64),
        "a_ob": graph.object_affinity().astype(np.float64),
        "a_c": graph.cross_affinity().astype(np.float64),
    }


def _to_tensors(snap_graph: dict) -> dict:
    return {k: torch.from_numpy(np.ascontiguousarray(v))
            for k, v in snap_graph.items()}


def _block_sparse(blocks: list[tuple[np.ndarray, int, int]],
                  shape: tuple[int, int]) -> torch.Tensor:
    """Sparse block-diagonal matrix from (dense block, row off, col off)."""
    rows, cols, vals = [], [], []
    for block, r_off, c_off in blocks:
        r, c = np.nonzero(block)
        rows.append(r + r_off)
        cols.append(c + c_off)
        vals.append(block[r, c])
    if rows:
        idx = np.stack([np.concatenate(rows), np.concatenate(cols)])
        val = np.concatenate(vals)
    else:
        idx = np.zeros((2, 0), dtype=np.int64)
        val = np.zeros(0)
    return torch.sparse_coo_tensor(torch.from_numpy(idx),
                                   torch.from_numpy(val.astype(np.float64)),
                                   size=shape,
                                   check_invariants=False).coalesce()


def _batched_tensors(trace: EpisodeTrace) -> dict:
    """Stack all step snapshots into one block-diagonal graph.

    Cross-block affinities are zero, so one mixer pass over the stacked
    graph equals running the mixer on every step's graph independently;
    per-step memories are recovered by row slices.
    """
    if trace.batched is not None:
        return trace.batched
    img_slices, obj_slices = [], []
    im_blocks, ob_blocks, c_blocks = [], [], []
    ni = no = 0
    for snap in trace.steps:
        g = snap.graph
        n, m = g["feats_image"].shape[0], g["feats_object"].shape[0]
        img_slices.append((ni, ni + n))
        obj_slices.append((no, no + m))
        im_blocks.append((g["a_im"], ni, ni))
        ob_blocks.append((g["a_ob"], no, no))
        c_blocks.append((g["a_c"], ni, no))
        ni += n
        no += m
    dim_i = trace.steps[0].graph["feats_image"].shape[1]
    dim_o = trace.steps[0].graph["feats_object"].shape[1]
    trace.batched = {
        "tensors": {
            "feats_image": torch.from_numpy(np.concatenate(
                [s.graph["feats_image"] for s in trace.steps]
            ) if ni else np.zeros((0, dim_i))),
            "feats_object": torch.from_numpy(np.concatenate(
                [s.graph["feats_object"] for s in trace.steps]
            ) if no else np.zeros((0, dim_o))),
            "a_im": _block_sparse(im_blocks, (ni, ni)),
            "a_ob": _block_sparse(ob_blocks, (no, no)),
            "a_c": _block_sparse(c_blocks, (ni, no)),
        },
        "img_slices": img_slices,
        "obj_slices": obj_slices,
        "current": torch.from_numpy(np.stack(
            [s.current_feature for s in trace.steps])),
    }
    return trace.batched


def collect_demonstration(world: World, episode: Episode,
                          encoder: OracleEncoder,
                          encoder_cfg: EncoderConfig,
                          detector: DetectorConfig | None = None,
                          rng: np.random.Generator | None = None,
                          max_steps: int = 500,
                          stop_radius_m: float = 0.0) -> EpisodeTrace:
    """Teacher-forced shortest-path trajectory with graph snapshots.

    By default the teacher walks onto the goal cell before stopping
    (stop_radius_m=0), so the stop decision coincides with observing
    the goal view itself; evaluation still only requires stopping
    within the success radius.  As in the navigation agent, the goal
    observation is localized into the graph before the first step.
    """
    rng = rng or np.random.default_rng(0)
    dist = distance_field(world, episode.goal)
    builder = GraphBuilder(encoder_cfg)
    builder.step(episode.goal_observation)
    pose = episode.start
    d0 = float(dist[pose.row, pose.col]) * CELL_M
    trace = EpisodeTrace(goal_feature=np.asarray(
        episode.goal_observation.image_feature, dtype=np.float64))
    for _ in range(max_steps):
        obs = observe(world, pose, encoder, detector, rng)
        builder.step(obs)
        a_star = oracle_action(world, pose, episode.goal, dist,
                               stop_radius_m=stop_radius_m)
        dt = float(dist[pose.row, pose.col]) * CELL_M
        trace.steps.append(StepSnapshot(
            graph=_capture_graph(builder.graph),
            current_feature=np.asarray(obs.image_feature, dtype=np.float64),
            oracle_action=a_star,
            progress=progress_target(d0, dt),
            goal_flag=1.0 if dt <= SUCCESS_RADIUS_M else 0.0,
            action=a_star,
        ))
        if a_star == STOP:
            trace.success = True
            break
        pose = step_env(world, pose, a_star)
    return trace


def replay(trace: EpisodeTrace, mixer: CrossGraphMixer, policy: PolicyNetwork,
           ablation: str = "none"):
    """Recompute logits/values/aux over a trace with current parameters.

    The previous-action input follows the trace's recorded actions
    (oracle actions for demonstrations, sampled ones for rollouts).
    """
    goal = torch.from_numpy(trace.goal_feature)
    batch = _batched_tensors(trace)
    mem_i_all, mem_o_all = mixed_memory(mixer, batch["tensors"], goal, ablation)
    hidden = policy.initial_state()
    prev = PREV_ACTION_NONE
    logits_seq, values, progresses, goal_flags = [], [], [], []
    for t, snap in enumerate(trace.steps):
        i0, i1 = batch["img_slices"][t]
        o0, o1 = batch["obj_slices"][t]
        contexts, _ = policy.read_memory(mem_i_all[i0:i1], mem_o_all[o0:o1],
                                         batch["current"][t], goal)
        logits, value, hidden, (p_hat, s_hat) = policy.step(contexts, hidden, prev)
        logits_seq.append(logits)
        values.append(value)
        progresses.append(p_hat)
        goal_flags.append(s_hat)
        prev = snap.action
    return (torch.stack(logits_seq), torch.stack(values),
            torch.stack(progresses), torch.stack(goal_flags))


def aux_loss_terms(traces, progresses, goal_flags):
    terms = []
    for trace, p_hat, s_hat in zip(traces, progresses, goal_flags):
        p_star = torch.tensor([s.progress for s in trace.steps], dtype=torch.float64)
        s_star = torch.tensor([s.goal_flag for s in trace.steps], dtype=torch.float64)
        terms.append((s_star - s_hat) ** 2 + (p_star - p_hat) ** 2)
    return torch.cat(terms)


def bc_loss(traces: list[EpisodeTrace], mixer: CrossGraphMixer,
            policy: PolicyNetwork, lambda_aux: float = 1.0,
            ablation: str = "none") -> torch.Tensor:
    """Mean over steps of -log pi(a*) + lambda * L2 auxiliary terms."""
    nlls, progresses, goal_flags = [], [], []
    for trace in traces:
        logits, _, p_hat, s_hat = replay(trace, mixer, policy, ablation)
        actions = torch.tensor([s.oracle_action for s in trace.steps])
        logp = torch.log_softmax(logits, dim=-1)
        nlls.append(-logp[torch.arange(len(trace.steps)), actions])
        progresses.append(p_hat)
        goal_flags.append(s_hat)
    act_term = torch.cat(nlls).mean()
    aux_term = aux_loss_terms(traces, progresses, goal_flags).mean()
    return act_term + lambda_aux * aux_term


def collect_rollout(world: World, episode: Episode, encoder: OracleEncoder,
                    encoder_cfg: EncoderConfig, mixer: CrossGraphMixer,
                    policy: PolicyNetwork,
                    detector: DetectorConfig | None = None,
                    rng: np.random.Generator | None = None,
                    max_steps: int = 500,
                    ablation: str = "none") -> EpisodeTrace:
    """Sample one on-policy episode, recording everything PPO needs."""
    rng = rng or np.random.default_rng(0)
    dist = distance_field(world, episode.goal)
    builder = GraphBuilder(encoder_cfg)
    builder.step(episode.goal_observation)
    pose = episode.start
    d0 = float(dist[pose.row, pose.col]) * CELL_M
    goal_np = np.asarray(episode.goal_observation.image_feature, dtype=np.float64)
    goal = torch.from_numpy(goal_np)
    trace = EpisodeTrace(goal_feature=goal_np)
    hidden = policy.initial_state()
    prev = PREV_ACTION_NONE
    with torch.no_grad():
        for _ in range(max_steps):
            obs = observe(world, pose, encoder, detector, rng)
            builder.step(obs)
            snap_graph = _capture_graph(builder.graph)
            tensors = _to_tensors(snap_graph)
            mem_i, mem_o = mixed_memory(mixer, tensors, goal, ablation)
            x_t = torch.from_numpy(np.asarray(obs.image_feature, dtype=np.float64))
            contexts, _ = policy.read_memory(mem_i, mem_o, x_t, goal)
            logits, value, hidden, _ = policy.step(contexts, hidden, prev)
            logp = torch.log_softmax(logits, dim=-1)
            probs = torch.exp(logp).numpy()
            action = int(rng.choice(len(probs), p=probs / probs.sum()))

            d_before = float(dist[pose.row, pose.col]) * CELL_M
            if action == STOP:
                reached = d_before <= SUCCESS_RADIUS_M
                new_pose, d_after = pose, d_before
            else:
                reached = False
                new_pose = step_env(world, pose, action)
                d_after = float(dist[new_pose.row, new_pose.col]) * CELL_M

            trace.steps.append(StepSnapshot(
                graph=snap_graph,
                current_feature=np.asarray(obs.image_feature, dtype=np.float64),
                oracle_action=oracle_action(world, pose, episode.goal, dist),
                progress=progress_target(d0, d_before),
                goal_flag=1.0 if d_before <= SUCCESS_RADIUS_M else 0.0,
                action=action,
                logp_old=float(logp[action]),
                value_old=float(value),
                reward=compute_reward(d_before, d_after, reached),
            ))
            if action == STOP:
                trace.success = reached
                break
            pose = new_pose
            prev = action
    return trace


def compute_gae(trace: EpisodeTrace, discount: float, gae_lambda: float) -> None:
    """Fill advantage and value targets in place (terminal bootstrap 0)."""
    adv = 0.0
    next_value = 0.0
    for snap in reversed(trace.steps):
        delta = snap.reward + discount * next_value - snap.value_old
        adv = delta + discount * gae_lambda * adv
        snap.advantage = adv
        snap.value_target = adv + snap.value_old
        next_value = snap.value_old


def ppo_loss(traces: list[EpisodeTrace], mixer: CrossGraphMixer,
             policy: PolicyNetwork, config: TrainConfig,
             ablation: str = "none") -> torch.Tensor:
    """Clipped surrogate + value loss + lambda * auxiliary terms."""
    surrogates, value_losses, entropies = [], [], []
    progresses, goal_flags = [], []
    for trace in traces:
        logits, values, p_hat, s_hat = replay(trace, mixer, policy, ablation)
        actions = torch.tensor([s.action for s in trace.steps])
        logp = torch.log_softmax(logits, dim=-1)
        logp_taken = logp[torch.arange(len(trace.steps)), actions]
        logp_old = torch.tensor([s.logp_old for s in trace.steps], dtype=torch.float64)
        adv = torch.tensor([s.advantage for s in trace.steps], dtype=torch.float64)
        ratio = torch.exp(logp_taken - logp_old)
        clipped = torch.clamp(ratio, 1.0 - config.clip, 1.0 + config.clip)
        surrogates.append(-torch.min(ratio * adv, clipped * adv))
        target = torch.tensor([s.value_target for s in trace.steps], dtype=torch.float64)
        value_losses.append((values - target) ** 2)
        entropies.append(-(torch.exp(logp) * logp).sum(dim=-1))
        progresses.append(p_hat)
        goal_flags.append(s_hat)
    loss = (torch.cat(surrogates).mean()
            + config.value_coef * torch.cat(value_losses).mean()
            + config.lambda_aux * aux_loss_terms(traces, progresses, goal_flags).mean())
    if config.entropy_coef > 0:
        loss = loss - config.entropy_coef * torch.cat(entropies).mean()
    return loss


def finite_diff_grad(loss_fn, params, epsilon: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of loss_fn per scalar parameter.

    params: iterable of tensors that loss_fn reads; perturbed in place
    and restored.  Independent of autograd by construction.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    grads = []
    with torch.no_grad():
        for p in params:
            grad = np.zeros(p.numel())
            flat = p.reshape(-1)
            for i in range(p.numel()):
                orig = flat[i].item()
                flat[i] = orig + epsilon
                hi = float(loss_fn())
                flat[i] = orig - epsilon
                lo = float(loss_fn())
                flat[i] = orig
                grad[i] = (hi - lo) / (2.0 * epsilon)
            grads.append(grad.reshape(tuple(p.shape)))
    return grads


def train_bc(mixer: CrossGraphMixer, policy: PolicyNetwork,
             traces: list[EpisodeTrace], config: TrainConfig,
             ablation: str = "none", log_fn=None) -> list[dict]:
    """Behavior cloning over demonstration traces; returns loss history."""
    config.validate()
    params = list(mixer.parameters()) + list(policy.parameters())
    opt = torch.optim.Adam(params, lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.bc_epochs):
        order = rng.permutation(len(traces))
        epoch_losses = []
        for lo in range(0, len(traces), config.bc_batch_episodes):
            batch = [traces[i] for i in order[lo:lo + config.bc_batch_episodes]]
            opt.zero_grad()
            loss = bc_loss(batch, mixer, policy, config.lambda_aux, ablation)
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
        row = {"phase": "bc", "epoch": epoch, "loss": float(np.mean(epoch_losses))}
        history.append(row)
        if log_fn:
            log_fn(row)
    return history


def train_ppo(mixer: CrossGraphMixer, policy: PolicyNetwork, world: World,
              episodes: list[Episode], encoder: OracleEncoder,
              encoder_cfg: EncoderConfig, config: TrainConfig,
              detector: DetectorConfig | None = None,
              ablation: str = "none", log_fn=None) -> list[dict]:
    """PPO finetuning from the current (BC-pretrained) parameters."""
    config.validate()
    params = list(mixer.parameters()) + list(policy.parameters())
    opt = torch.optim.Adam(params, lr=config.ppo_learning_rate)
    rng = np.random.default_rng([config.seed, 1])
    history = []
    for update in range(config.ppo_updates):
        batch = []
        for _ in range(config.rollout_episodes):
            episode = episodes[int(rng.integers(len(episodes)))]
            trace = collect_rollout(world, episode, encoder, encoder_cfg,
                                    mixer, policy, detector, rng,
                                    config.max_steps, ablation)
            compute_gae(trace, config.discount, config.gae_lambda)
            batch.append(trace)
        losses = []
        for _ in range(config.ppo_epochs):
            opt.zero_grad()
            loss = ppo_loss(batch, mixer, policy, config, ablation)
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        row = {"phase": "ppo", "epoch": update,
               "loss": float(np.mean(losses)),
               "rollout_success": float(np.mean([t.success for t in batch])),
               "mean_return": float(np.mean([sum(s.reward for s in t.steps)
                                             for t in batch]))}
        history.append(row)
        if log_fn:
            log_fn(row)
    return history
