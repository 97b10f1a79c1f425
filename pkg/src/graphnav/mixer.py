"""Cross-graph message passing over the image and object graphs.

Each of the L rounds runs three stages on both graphs:

  self-update   m^_v = sum_w A[v,w] * B(h_v, h_w) @ f(h_w || goal)
  cross-update  mi_v = m^i_v + f1(sum_k A_c[v,k] * B(m^i_v, m^o_k) @ f2(m^o_k || goal))
                (and symmetrically for objects through A_c transposed)
  vertex update h_i += g_i(A_c  @ mo)     h_o += g_o(A_c^T @ mi)

B is a learned edge gate mapping the two endpoint features to a d x d
matrix.  All two-layer maps are bias-free with a tanh between layers,
so a zero input yields a zero message and every residual identity is
exact.  Node features keep their input width throughout; the returned
memories have the same widths as the input features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class MixerConfig:
    dim_image: int = 32
    dim_object: int = 16
    hidden: int = 16
    layers: int = 2      # cross-update runs twice by default

    def validate(self) -> None:
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if min(self.dim_image, self.dim_object, self.hidden) < 1:
            raise ValueError("dimensions must be positive")


class TwoLayerMap(nn.Module):
    """Linear -> tanh -> Linear, no biases anywhere."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.lin1 = nn.Linear(in_dim, hidden, bias=False)
        self.lin2 = nn.Linear(hidden, out_dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(torch.tanh(self.lin1(x)))


class EdgeGate(nn.Module):
    """Bilinear edge gate: reshape(v^T [W h_a ; W h_b]) as a d x d matrix.

    Both endpoints share the projection W; v maps the concatenated 2d
    vector to the d*d entries of the gate.
    """

    def __init__(self, in_dim: int, d: int):
        super().__init__()
        self.d = d
        self.proj = nn.Linear(in_dim, d, bias=False)
        bound = 1.0 / math.sqrt(2 * d)
        self.v = nn.Parameter(torch.empty(2 * d, d * d).uniform_(-bound, bound))

    def parts(self, h_a: torch.Tensor, h_b: torch.Tensor):
        """Additive halves of the gate: (n, d, d) and (m, d, d).

        The full gate for edge (v, w) is parts_a[v] + parts_b[w]; keeping
        them separate lets aggregation avoid the (n, m, d, d) tensor.
        """
        d = self.d
        pa = self.proj(h_a) @ self.v[:d]      # (n, d*d)
        pb = self.proj(h_b) @ self.v[d:]      # (m, d*d)
        return (pa.reshape(h_a.shape[0], d, d),
                pb.reshape(h_b.shape[0], d, d))

    def forward(self, h_a: torch.Tensor, h_b: torch.Tensor) -> torch.Tensor:
        """h_a: (n, in), h_b: (m, in) -> gates (n, m, d, d)."""
        ga, gb = self.parts(h_a, h_b)
        return ga[:, None] + gb[None, :]


def _expand_goal(goal: torch.Tensor, n: int) -> torch.Tensor:
    return goal.unsqueeze(0).expand(n, -1)


def _mm(a: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """a @ x for dense or sparse-COO a (affinities are constants)."""
    if a.is_sparse:
        return torch.sparse.mm(a, x)
    return a @ x


def _gated_aggregate(a: torch.Tensor, ga: torch.Tensor, gb: torch.Tensor,
                     phi: torch.Tensor) -> torch.Tensor:
    """sum_w a[v,w] * (ga[v] + gb[w]) @ phi[w] without the full gate tensor."""
    term1 = torch.einsum("vde,ve->vd", ga, _mm(a, phi))
    term2 = _mm(a, torch.einsum("wde,we->wd", gb, phi))
    return term1 + term2


class MixerLayer(nn.Module):
    def __init__(self, cfg: MixerConfig):
        super().__init__()
        d, di, do = cfg.hidden, cfg.dim_image, cfg.dim_object
        goal = cfg.dim_image
        # self-update
        self.f_i = TwoLayerMap(di + goal, d, d)
        self.f_o = TwoLayerMap(do + goal, d, d)
        self.gate_i = EdgeGate(di, d)
        self.gate_o = EdgeGate(do, d)
        # cross-update
        self.f2_i = TwoLayerMap(d + goal, d, d)
        self.f2_o = TwoLayerMap(d + goal, d, d)
        self.f1_i = TwoLayerMap(d, d, d)
        self.f1_o = TwoLayerMap(d, d, d)
        self.gate_ci = EdgeGate(d, d)
        self.gate_co = EdgeGate(d, d)
        # vertex update
        self.g_i = TwoLayerMap(d, d, di)
        self.g_o = TwoLayerMap(d, d, do)

    def self_update(self, h: torch.Tensor, a: torch.Tensor, goal: torch.Tensor,
                    f: TwoLayerMap, gate: EdgeGate) -> torch.Tensor:
        n = h.shape[0]
        if n == 0:
            return h.new_zeros((0, gate.d))
        phi = f(torch.cat([h, _expand_goal(goal, n)], dim=-1))     # (n, d)
        ga, gb = gate.parts(h, h)
        return _gated_aggregate(a, ga, gb, phi)

    def cross_update(self, mi_hat: torch.Tensor, mo_hat: torch.Tensor,
                     a_c: torch.Tensor, goal: torch.Tensor):
        n, m = mi_hat.shape[0], mo_hat.shape[0]
        a_c_t = a_c.t()
        if m == 0:
            inner_i = mi_hat.new_zeros((n, mi_hat.shape[1]))
        else:
            psi_o = self.f2_i(torch.cat([mo_hat, _expand_goal(goal, m)], dim=-1))
            ga, gb = self.gate_ci.parts(mi_hat, mo_hat)
            inner_i = _gated_aggregate(a_c, ga, gb, psi_o)
        mi = mi_hat + self.f1_i(inner_i)

        if n == 0 or m == 0:
            mo = mo_hat + self.f1_o(mo_hat.new_zeros(mo_hat.shape))
        else:
            psi_i = self.f2_o(torch.cat([mi_hat, _expand_goal(goal, n)], dim=-1))
            ga, gb = self.gate_co.parts(mo_hat, mi_hat)
            inner_o = _gated_aggregate(a_c_t, ga, gb, psi_i)
            mo = mo_hat + self.f1_o(inner_o)
        return mi, mo

    def vertex_update(self, h_i, h_o, mi, mo, a_c, update_image=True,
                      update_object=True):
        if update_image:
            h_i = h_i + self.g_i(_mm(a_c, mo))
        if update_object:
            h_o = h_o + self.g_o(_mm(a_c.t(), mi))
        return h_i, h_o

    def forward(self, h_i, h_o, a_im, a_ob, a_c, goal,
                update_image=True, update_object=True):
        mi_hat = self.self_update(h_i, a_im, goal, self.f_i, self.gate_i)
        mo_hat = self.self_update(h_o, a_ob, goal, self.f_o, self.gate_o)
        mi, mo = self.cross_update(mi_hat, mo_hat, a_c, goal)
        return self.vertex_update(h_i, h_o, mi, mo, a_c,
                                  update_image, update_object)


class CrossGraphMixer(nn.Module):
    """L rounds of self-update, cross-update, and vertex update."""

    def __init__(self, cfg: MixerConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.rounds = nn.ModuleList(MixerLayer(cfg) for _ in range(cfg.layers))

    def forward(self, feats_image: torch.Tensor, feats_object: torch.Tensor,
                a_im: torch.Tensor, a_ob: torch.Tensor, a_c: torch.Tensor,
                goal: torch.Tensor, update_image: bool = True,
                update_object: bool = True):
        n, m = feats_image.shape[0], feats_object.shape[0]
        if a_im.shape != (n, n) or a_ob.shape != (m, m) or a_c.shape != (n, m):
            raise ValueError("affinity shapes do not match the feature matrices")
        h_i, h_o = feats_image, feats_object
        for layer in self.rounds:
            h_i, h_o = layer(h_i, h_o, a_im, a_ob, a_c, goal,
                             update_image, update_object)
        return h_i, h_o
