"""Agents runnable by the simulator's evaluation loop.

Every agent implements reset(world, episode) and act(observation).
Only the main navigation agent is pose-blind; the oracle planner and
the uniform-random baseline exist as reference points for metrics.
"""

from __future__ import annotations

import numpy as np
import torch

from . import gridsim
from .builder import GraphBuilder, Observation
from .encoders import EncoderConfig
from .gridsim import distance_field, oracle_action
from .mixer import CrossGraphMixer, MixerConfig
from .policy import (PREV_ACTION_NONE, STOP_ACTION, PolicyConfig,
                     PolicyNetwork, sample_action)

ABLATIONS = ("none", "no-update", "visual-only", "object-only")


def build_models(mixer_cfg: MixerConfig, policy_cfg: PolicyConfig, seed: int):
    """Freshly initialized mixer and policy, deterministic per seed.

    Initialization runs under a float64 default dtype so the drawn
    weights do not depend on the caller's ambient torch dtype.
    """
    torch.manual_seed(seed)
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    try:
        mixer = CrossGraphMixer(mixer_cfg)
        policy = PolicyNetwork(policy_cfg)
    finally:
        torch.set_default_dtype(prev)
    return mixer, policy


def graph_tensors(graph):
    """Torch views of the graph's features and affinities (float64)."""
    return {
        "feats_image": torch.from_numpy(np.ascontiguousarray(graph.image_features())),
        "feats_object": torch.from_numpy(np.ascontiguousarray(graph.object_features())),
        "a_im": torch.from_numpy(graph.image_affinity().astype(np.float64)),
        "a_ob": torch.from_numpy(graph.object_affinity().astype(np.float64)),
        "a_c": torch.from_numpy(graph.cross_affinity().astype(np.float64)),
    }


def mixed_memory(mixer: CrossGraphMixer, tensors: dict, goal: torch.Tensor,
                 ablation: str = "none"):
    """Contextual memories under the requested update-rule ablation."""
    if ablation not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablation!r}")
    if ablation == "no-update":
        return tensors["feats_image"], tensors["feats_object"]
    return mixer(tensors["feats_image"], tensors["feats_object"],
                 tensors["a_im"], tensors["a_ob"], tensors["a_c"], goal,
                 update_image=ablation in ("none", "visual-only"),
                 update_object=ablation in ("none", "object-only"))


class NavigationAgent:
    """Graph memory + mixer + attention policy, acting from observations.

    In ``guarded`` mode stopping requires, besides stop being the argmax
    of the action logits, that the current detections share at least one
    object with the goal observation (same category, feature similarity
    at the object-matching threshold) and that the goal-sensor head
    clears ``stop_gate``.  Both vetoes use only the agent's own
    observations; they suppress confident stops in places that cannot be
    the goal.
    """

    def __init__(self, encoder_cfg: EncoderConfig, mixer: CrossGraphMixer,
                 policy: PolicyNetwork, mode: str = "stochastic",
                 ablation: str = "none", seed: int = 0,
                 log_attention: bool = False, stop_gate: float = 0.5):
        if ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {ablation!r}")
        self.encoder_cfg = encoder_cfg
        self.mixer = mixer
        self.policy = policy
        self.mode = mode
        self.ablation = ablation
        self.seed = seed
        self.log_attention = log_attention
        self.stop_gate = stop_gate
        self._episode_index = -1
        self._info: dict = {}

    def reset(self, world, episode) -> None:
        self._episode_index += 1
        self.rng = np.random.default_rng([self.seed, self._episode_index])
        self.builder = GraphBuilder(self.encoder_cfg)
        # Localize the goal in memory: the goal observation (the one piece
        # of the target the task hands the agent) becomes the first graph
        # node, so arriving at the goal re-localizes onto a known node and
        # the goal-queried attention has a matching row from step one.
        self.builder.step(episode.goal_observation)
        self._goal_detections = [
            (d.category, np.asarray(d.feature, dtype=np.float64), d.score)
            for d in episode.goal_observation.detections]
        self.goal_feature = torch.from_numpy(
            np.asarray(episode.goal_observation.image_feature, dtype=np.float64))
        self.hidden = self.policy.initial_state()
        self.prev_action = PREV_ACTION_NONE
        self._info = {}

    @torch.no_grad()
    def act(self, observation: Observation) -> int:
        delta = self.builder.step(observation)
        tensors = graph_tensors(self.builder.graph)
        mem_i, mem_o = mixed_memory(self.mixer, tensors, self.goal_feature,
                                    self.ablation)
        x_t = torch.from_numpy(np.asarray(observation.image_feature,
                                          dtype=np.float64))
        contexts, weights = self.policy.read_memory(mem_i, mem_o, x_t,
                                                    self.goal_feature)
        logits, value, self.hidden, (progress, goal_flag) = self.policy.step(
            contexts, self.hidden, self.prev_action)
        gated = logits
        if self.mode == "guarded" and (
                float(goal_flag) < self.stop_gate
                or not self._sees_goal_object(observation)):
            # Veto: demote stop below the movement logits so the guarded
            # sampler cannot pick it.
            gated = logits.clone()
            gated[STOP_ACTION] = logits[:STOP_ACTION].min() - 1.0
        action = sample_action(gated, self.mode, self.rng)
        self.prev_action = action
        self._info = {
            "delta": delta.to_dict(),
            "value": float(value),
            "progress": float(progress),
            "goal_flag": float(goal_flag),
        }
        if self.log_attention:
            self._info["attention"] = {k: w.numpy().tolist()
                                       for k, w in weights.items()}
        return action

    # Detection scores fall off as 1/(1+distance); the stop veto inverts
    # that to bound how far the goal can be: if some object is seen from
    # both here and the goal viewpoint, the distance to the goal is at
    # most (distance to the object) + (object's distance from the goal).
    STOP_EVIDENCE_CELLS = 4.0

    def _sees_goal_object(self, observation: Observation) -> bool:
        """Is some shared object close enough to place us near the goal?"""
        if not self._goal_detections:
            return True     # no object evidence available: don't veto
        tau = self.encoder_cfg.tau_object
        for det in observation.detections:
            f = np.asarray(det.feature, dtype=np.float64)
            d_here = 1.0 / max(det.score, 1e-6) - 1.0
            for cat, goal_f, goal_score in self._goal_detections:
                if det.category != cat or float(f @ goal_f) < tau:
                    continue
                d_goal = 1.0 / max(goal_score, 1e-6) - 1.0
                if d_here + d_goal <= self.STOP_EVIDENCE_CELLS:
                    return True
        return False

    def last_step_info(self) -> dict:
        return dict(self._info)


class OracleAgent:
    """Shortest-path planner with map access; the evaluation ceiling."""

    def reset(self, world, episode) -> None:
        self.world = world
        self.dist = distance_field(world, episode.goal)
        self.goal = episode.goal

    def act(self, observation: Observation) -> int:
        pose = observation.pose
        return oracle_action(self.world, pose, self.goal, self.dist)

    def last_step_info(self) -> dict:
        return {}


class RandomAgent:
    """Uniform over the 4 actions; the evaluation floor."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._episode_index = -1

    def reset(self, world, episode) -> None:
        self._episode_index += 1
        self.rng = np.random.default_rng([self.seed, self._episode_index])

    def act(self, observation: Observation) -> int:
        return int(self.rng.integers(gridsim.STOP + 1))

    def last_step_info(self) -> dict:
        return {}
