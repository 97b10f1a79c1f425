"""Message-passing mixer: naive-oracle equality, equivariance, masking."""

import numpy as np
import pytest
import torch

from graphnav.mixer import CrossGraphMixer, EdgeGate, MixerConfig, TwoLayerMap

from reference_impl import naive_mix

DIM_I, DIM_O, HID = 6, 4, 3

torch.set_default_dtype(torch.float64)


def make_mixer(layers=2, seed=0):
    torch.manual_seed(seed)
    return CrossGraphMixer(MixerConfig(dim_image=DIM_I, dim_object=DIM_O,
                                       hidden=HID, layers=layers)).double()


def random_instance(rng, n, m):
    h_i = rng.standard_normal((n, DIM_I))
    h_o = rng.standard_normal((m, DIM_O))
    a_im = np.triu(rng.integers(0, 2, (n, n)), 1)
    a_im = (a_im + a_im.T).astype(np.float64)
    a_c = rng.integers(0, 2, (n, m)).astype(np.float64)
    a_ob = (a_c.T @ (a_im + np.eye(n)) @ a_c).astype(np.float64)
    goal = rng.standard_normal(DIM_I)
    return h_i, h_o, a_im, a_ob, a_c, goal


def run_mixer(mixer, inst, **kw):
    h_i, h_o, a_im, a_ob, a_c, goal = inst
    out_i, out_o = mixer(torch.from_numpy(h_i), torch.from_numpy(h_o),
                         torch.from_numpy(a_im), torch.from_numpy(a_ob),
                         torch.from_numpy(a_c), torch.from_numpy(goal), **kw)
    return out_i.detach().numpy(), out_o.detach().numpy()


class TestComponents:
    def test_two_layer_map_zero_in_zero_out(self):
        torch.manual_seed(0)
        f = TwoLayerMap(5, 3, 4).double()
        assert torch.all(f(torch.zeros(5)) == 0)

    def test_edge_gate_decomposition_matches_full(self):
        torch.manual_seed(1)
        gate = EdgeGate(DIM_I, HID).double()
        h_a = torch.randn(4, DIM_I)
        h_b = torch.randn(3, DIM_I)
        full = gate(h_a, h_b)
        ga, gb = gate.parts(h_a, h_b)
        recon = ga[:, None] + gb[None, :]
        assert torch.allclose(full, recon, atol=0, rtol=0)
        assert full.shape == (4, 3, HID, HID)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MixerConfig(layers=0).validate()
        with pytest.raises(ValueError):
            MixerConfig(hidden=0).validate()


class TestNaiveOracle:
    def test_matches_loop_reference(self):
        rng = np.random.default_rng(0)
        mixer = make_mixer(layers=2)
        for trial in range(20):
            n, m = int(rng.integers(1, 6)), int(rng.integers(0, 6))
            inst = random_instance(rng, n, m)
            got_i, got_o = run_mixer(mixer, inst)
            exp_i, exp_o = naive_mix(mixer, *inst)
            assert np.max(np.abs(got_i - exp_i)) < 1e-9
            assert got_o.shape == exp_o.shape
            if m:
                assert np.max(np.abs(got_o - exp_o)) < 1e-9

    def test_matches_loop_reference_with_ablations(self):
        rng = np.random.default_rng(1)
        mixer = make_mixer(layers=1)
        inst = random_instance(rng, 4, 3)
        for ui, uo in ((True, False), (False, True), (False, False)):
            got_i, got_o = run_mixer(mixer, inst, update_image=ui, update_object=uo)
            exp_i, exp_o = naive_mix(mixer, *inst, update_image=ui, update_object=uo)
            assert np.max(np.abs(got_i - exp_i)) < 1e-9
            assert np.max(np.abs(got_o - exp_o)) < 1e-9


class TestPermutationEquivariance:
    def test_joint_permutation(self):
        rng = np.random.default_rng(2)
        mixer = make_mixer()
        n, m = 5, 4
        inst = random_instance(rng, n, m)
        h_i, h_o, a_im, a_ob, a_c, goal = inst
        p = rng.permutation(n)
        q = rng.permutation(m)
        perm_inst = (h_i[p], h_o[q], a_im[np.ix_(p, p)], a_ob[np.ix_(q, q)],
                     a_c[np.ix_(p, q)], goal)
        base_i, base_o = run_mixer(mixer, inst)
        perm_i, perm_o = run_mixer(mixer, perm_inst)
        assert np.max(np.abs(perm_i - base_i[p])) < 1e-9
        assert np.max(np.abs(perm_o - base_o[q])) < 1e-9


class TestMasking:
    def test_zero_affinity_is_identity(self):
        """With every affinity zero only the residual paths remain, and the
        bias-free maps make them exact identities."""
        rng = np.random.default_rng(3)
        mixer = make_mixer()
        n, m = 4, 3
        h_i = rng.standard_normal((n, DIM_I))
        h_o = rng.standard_normal((m, DIM_O))
        zero = (h_i, h_o, np.zeros((n, n)), np.zeros((m, m)), np.zeros((n, m)),
                rng.standard_normal(DIM_I))
        out_i, out_o = run_mixer(mixer, zero)
        assert np.array_equal(out_i, h_i)
        assert np.array_equal(out_o, h_o)

    def test_disconnected_component_untouched_by_edits(self):
        """Changing features in one component never leaks into another."""
        rng = np.random.default_rng(4)
        mixer = make_mixer()
        inst = random_instance(rng, 3, 2)
        h_i, h_o, a_im, a_ob, a_c, goal = inst
        # append an isolated image node (no edges anywhere)
        iso = rng.standard_normal((1, DIM_I))
        big_h = np.vstack([h_i, iso])
        big_a = np.zeros((4, 4))
        big_a[:3, :3] = a_im
        big_c = np.vstack([a_c, np.zeros((1, 2))])
        out, _ = run_mixer(mixer, (big_h, h_o, big_a, a_ob, big_c, goal))
        base, _ = run_mixer(mixer, inst)
        assert np.max(np.abs(out[:3] - base)) < 1e-12
        assert np.array_equal(out[3], iso[0])


class TestSparseAffinities:
    def test_sparse_equals_dense(self):
        rng = np.random.default_rng(5)
        mixer = make_mixer()
        inst = random_instance(rng, 5, 4)
        h_i, h_o, a_im, a_ob, a_c, goal = inst
        dense_i, dense_o = run_mixer(mixer, inst)
        sp = lambda a: torch.from_numpy(a).to_sparse_coo()
        out_i, out_o = mixer(torch.from_numpy(h_i), torch.from_numpy(h_o),
                             sp(a_im), sp(a_ob), sp(a_c),
                             torch.from_numpy(goal))
        assert np.max(np.abs(out_i.detach().numpy() - dense_i)) < 1e-12
        assert np.max(np.abs(out_o.detach().numpy() - dense_o)) < 1e-12


class TestEdgeCases:
    def test_empty_graphs(self):
        mixer = make_mixer()
        for n, m in ((0, 0), (3, 0), (0, 2)):
            rng = np.random.default_rng(6)
            inst = random_instance(rng, n, m)
            out_i, out_o = run_mixer(mixer, inst)
            assert out_i.shape == (n, DIM_I)
            assert out_o.shape == (m, DIM_O)

    def test_no_objects_leaves_images_unchanged_without_a_c(self):
        """With zero objects the vertex update input is empty, so images
        keep their self-update-free residual value only when A_im is zero."""
        rng = np.random.default_rng(7)
        mixer = make_mixer()
        h_i = rng.standard_normal((3, DIM_I))
        inst = (h_i, np.zeros((0, DIM_O)), np.zeros((3, 3)), np.zeros((0, 0)),
                np.zeros((3, 0)), rng.standard_normal(DIM_I))
        out_i, out_o = run_mixer(mixer, inst)
        assert np.array_equal(out_i, h_i)
        assert out_o.shape == (0, DIM_O)

    def test_shape_mismatch_rejected(self):
        mixer = make_mixer()
        rng = np.random.default_rng(8)
        h_i, h_o, a_im, a_ob, a_c, goal = random_instance(rng, 3, 2)
        with pytest.raises(ValueError, match="affinity"):
            run_mixer(mixer, (h_i, h_o, a_im[:2, :2], a_ob, a_c, goal))

    def test_goal_conditioning_changes_messages(self):
        rng = np.random.default_rng(9)
        mixer = make_mixer()
        inst = random_instance(rng, 4, 3)
        out1, _ = run_mixer(mixer, inst)
        other = list(inst)
        other[5] = inst[5] + 1.0
        out2, _ = run_mixer(mixer, tuple(other))
        assert not np.allclose(out1, out2)
