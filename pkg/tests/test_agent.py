"""End-to-end agents: memory ablations, determinism, step info."""

import numpy as np
import pytest
import torch

from graphnav.agent import (ABLATIONS, NavigationAgent, OracleAgent,
                            RandomAgent, build_models, graph_tensors,
                            mixed_memory)
from graphnav.builder import GraphBuilder, Observation
from graphnav.config import RunConfig
from graphnav.encoders import OracleEncoder
from graphnav.gridsim import generate_episodes, generate_world, run_episode


@pytest.fixture(scope="module")
def env():
    cfg = RunConfig()
    cfg.finalize()
    world = generate_world(3, 20, 20, 5, 20)
    enc = OracleEncoder(cfg.encoder, world_seed=3)
    episodes = generate_episodes(world, enc, 2, "easy",
                                 np.random.default_rng(0), cfg.detector)
    mixer, policy = build_models(cfg.mixer, cfg.policy, 0)
    return cfg, world, enc, episodes, mixer, policy


def built_tensors(cfg, enc, n=4):
    b = GraphBuilder(cfg.encoder)
    for i in range(n):
        b.step(Observation(enc.encode_image(i)))
    return graph_tensors(b.graph)


class TestBuildModels:
    def test_deterministic_per_seed(self):
        cfg = RunConfig()
        cfg.finalize()
        m1, p1 = build_models(cfg.mixer, cfg.policy, 7)
        m2, p2 = build_models(cfg.mixer, cfg.policy, 7)
        for a, b in zip(m1.parameters(), m2.parameters()):
            assert torch.equal(a, b)
        m3, _ = build_models(cfg.mixer, cfg.policy, 8)
        assert any(not torch.equal(a, b)
                   for a, b in zip(m1.parameters(), m3.parameters()))

    def test_double_precision(self):
        cfg = RunConfig()
        cfg.finalize()
        mixer, policy = build_models(cfg.mixer, cfg.policy, 0)
        assert all(p.dtype == torch.float64 for p in mixer.parameters())
        assert all(p.dtype == torch.float64 for p in policy.parameters())


class TestMixedMemory:
    def test_no_update_returns_raw_features(self, env):
        cfg, _, enc, _, mixer, _ = env
        tensors = built_tensors(cfg, enc)
        goal = tensors["feats_image"][0]
        mem_i, mem_o = mixed_memory(mixer, tensors, goal, "no-update")
        assert torch.equal(mem_i, tensors["feats_image"])
        assert torch.equal(mem_o, tensors["feats_object"])

    def test_visual_only_keeps_object_features(self, env):
        cfg, world, enc, _, mixer, _ = env
        # build a graph that actually contains objects
        b = GraphBuilder(cfg.encoder)
        from graphnav.gridsim import Pose, observe
        for (r, c) in sorted(world.main_component())[:6]:
            b.step(observe(world, Pose(r, c, 0), enc, cfg.detector))
        tensors = graph_tensors(b.graph)
        assert tensors["feats_object"].shape[0] > 0
        goal = tensors["feats_image"][0]
        mem_i, mem_o = mixed_memory(mixer, tensors, goal, "visual-only")
        assert torch.equal(mem_o, tensors["feats_object"])
        assert not torch.equal(mem_i, tensors["feats_image"])
        mem_i2, mem_o2 = mixed_memory(mixer, tensors, goal, "object-only")
        assert torch.equal(mem_i2, tensors["feats_image"])
        assert not torch.equal(mem_o2, tensors["feats_object"])

    def test_unknown_ablation_rejected(self, env):
        cfg, _, enc, _, mixer, _ = env
        tensors = built_tensors(cfg, enc)
        with pytest.raises(ValueError):
            mixed_memory(mixer, tensors, tensors["feats_image"][0], "half")


class TestNavigationAgent:
    def test_episode_reproducible(self, env):
        cfg, world, enc, episodes, mixer, policy = env
        results = []
        for _ in range(2):
            agent = NavigationAgent(cfg.encoder, mixer, policy, seed=4)
            r = run_episode(agent, world, episodes[0], enc, cfg.detector,
                            max_steps=30, rng=np.random.default_rng(1))
            results.append((r.steps, r.traveled_m, r.success))
        assert results[0] == results[1]

    def test_never_reads_pose(self, env):
        cfg, world, enc, episodes, mixer, policy = env
        agent = NavigationAgent(cfg.encoder, mixer, policy, seed=0)
        agent.reset(world, episodes[0])
        obs = Observation(image_feature=enc.encode_image(0), pose=None)
        agent.act(obs)     # must not touch obs.pose

    def test_step_info_fields(self, env):
        cfg, world, enc, episodes, mixer, policy = env
        agent = NavigationAgent(cfg.encoder, mixer, policy, seed=0,
                                log_attention=True)
        agent.reset(world, episodes[0])
        agent.act(Observation(image_feature=enc.encode_image(0)))
        info = agent.last_step_info()
        assert set(info) == {"delta", "value", "progress", "goal_flag",
                             "attention"}
        # node 0 is the goal observation seeded at reset; the first acted
        # observation becomes node 1
        assert info["delta"]["added_image"] == 1
        assert 0.0 <= info["progress"] <= 1.0
        w = np.asarray(info["attention"]["image_current"])
        assert abs(w.sum() - 1.0) < 1e-9

    def test_ablation_validated(self, env):
        cfg, _, _, _, mixer, policy = env
        with pytest.raises(ValueError):
            NavigationAgent(cfg.encoder, mixer, policy, ablation="extreme")

    def test_goal_seeded_into_memory(self, env):
        cfg, world, enc, episodes, mixer, policy = env
        agent = NavigationAgent(cfg.encoder, mixer, policy, seed=0)
        agent.reset(world, episodes[0])
        g = agent.builder.graph
        assert g.image_features().shape[0] == 1
        goal_feat = np.asarray(episodes[0].goal_observation.image_feature)
        assert np.allclose(g.image_features()[0], goal_feat)

    def test_stop_evidence_gate(self, env):
        cfg, world, enc, episodes, mixer, policy = env
        agent = NavigationAgent(cfg.encoder, mixer, policy, seed=0,
                                mode="guarded")
        ep = episodes[0]
        agent.reset(world, ep)
        goal_dets = ep.goal_observation.detections
        if goal_dets:
            # seeing one of the goal's own objects up close passes the gate
            near = Observation(
                image_feature=enc.encode_image(0),
                detections=[type(goal_dets[0])(
                    feature=goal_dets[0].feature,
                    category=goal_dets[0].category, score=1.0)])
            if goal_dets[0].score >= 0.3:
                assert agent._sees_goal_object(near)
        # an observation with no detections can never pass (goal has some)
        if goal_dets:
            assert not agent._sees_goal_object(
                Observation(image_feature=enc.encode_image(0)))
        # a goal with no object evidence does not veto
        agent._goal_detections = []
        assert agent._sees_goal_object(
            Observation(image_feature=enc.encode_image(0)))

    def test_rng_differs_per_episode(self, env):
        cfg, world, enc, episodes, mixer, policy = env
        agent = NavigationAgent(cfg.encoder, mixer, policy, seed=0)
        agent.reset(world, episodes[0])
        s0 = agent.rng.bit_generator.state
        agent.reset(world, episodes[1])
        s1 = agent.rng.bit_generator.state
        assert s0 != s1


class TestBaselines:
    def test_oracle_uses_pose(self, env):
        cfg, world, enc, episodes, _, _ = env
        r = run_episode(OracleAgent(), world, episodes[0], enc, cfg.detector,
                        max_steps=200)
        assert r.success

    def test_random_agent_bounds(self, env):
        _, world, _, episodes, _, _ = env
        agent = RandomAgent(0)
        agent.reset(world, episodes[0])
        draws = {agent.act(None) for _ in range(100)}
        assert draws <= {0, 1, 2, 3}
        assert len(draws) == 4
