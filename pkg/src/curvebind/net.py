"""Equivariant protein-ligand layer and layer stack.

One layer applies, in order: independent message passing inside each
molecule (coordinate updates weighted by neighbour degree), cross-attention
between all ligand atoms and residues with a pair-embedding bias followed by
a pair refresh, and attention-weighted messaging over the ligand/residue
contact edges.  Coordinates enter only through squared distances and
difference vectors, so the layer is E(3)-equivariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch
from torch import nn

from .encoder import OuterProduct
from .molgraph import CROSS_CUTOFF

EDGE_BLOCK = 1024  # edges per block in the no-grad aggregation path


@dataclass(frozen=True)
class StackConfig:
    d_node: int = 512
    d_pair: int = 128
    d_opm: int = 32
    heads: int = 4
    M1: int = 1
    M2: int = 4
    freeze_protein: bool = True
    uniform_weights: bool = False
    cross_cutoff: float = CROSS_CUTOFF
    # scale applied to the default init of coordinate-gate output layers
    gate_init: float = 1e-3

    def __post_init__(self):
        if self.M1 < 1 or self.M2 < 1 or self.heads < 1:
            raise ValueError("M1, M2 and heads must be >= 1")
        if self.d_node % self.heads:
            raise ValueError("d_node must be divisible by heads")


@dataclass
class GraphState:
    h_l: torch.Tensor
    h_p: torch.Tensor
    x_l: torch.Tensor
    x_p: torch.Tensor
    z: torch.Tensor


@dataclass(frozen=True)
class Topology:
    """Fixed intra-molecular graphs of one view (whole protein or pocket).

    Edge tensors hold directed ``(receiver, sender)`` rows.
    """

    lig_edges: torch.Tensor
    lig_degree: torch.Tensor
    prot_edges: torch.Tensor
    prot_degree: torch.Tensor

    @classmethod
    def from_graphs(cls, ligand, protein) -> "Topology":
        def directed(g):
            return torch.as_tensor(g.directed_edges(), dtype=torch.long).reshape(-1, 2)

        return cls(directed(ligand), torch.as_tensor(ligand.degree, dtype=torch.float64),
                   directed(protein), torch.as_tensor(protein.degree, dtype=torch.float64))


class MLP(nn.Module):
    """Two affine maps with SiLU between; hidden width defaults to the input width."""

    def __init__(self, d_in: int, d_out: int, d_hidden: int | None = None, gate_scale: float | None = None):
        super().__init__()
        d_hidden = d_hidden or d_in
        self.fc1 = nn.Linear(d_in, d_hidden)
        self.fc2 = nn.Linear(d_hidden, d_out)
        if gate_scale is not None:
            _scaled_init(self.fc2, gate_scale)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(nn.functional.silu(self.fc1(x)))


class EdgeMLP(nn.Module):
    """MLP over ``concat(h_recv, h_send, dist2)`` with the first affine map split per node.

    ``h_recv`` may be omitted (``d_recv=0``).  Splitting avoids materialising
    the concatenation per edge; the function is unchanged.
    """

    def __init__(self, d_recv: int, d_send: int, d_out: int):
        super().__init__()
        d_hidden = d_recv + d_send + 1
        self.recv = nn.Linear(d_recv, d_hidden, bias=False) if d_recv else None
        self.send = nn.Linear(d_send, d_hidden)
        self.dist = nn.Parameter(torch.empty(d_hidden))
        nn.init.uniform_(self.dist, -1.0 / math.sqrt(d_hidden), 1.0 / math.sqrt(d_hidden))
        self.fc2 = nn.Linear(d_hidden, d_out)

    def hidden(self, recv_idx, h_recv, send_idx, h_send, dist2):
        if not torch.is_grad_enabled():
            # inference: same arithmetic, fewer temporaries
            pre = self.send(h_send).index_select(0, send_idx).addcmul_(dist2, self.dist)
            if self.recv is not None:
                pre.add_(self.recv(h_recv).index_select(0, recv_idx))
            return nn.functional.silu(pre, inplace=True)
        pre = torch.addcmul(self.send(h_send).index_select(0, send_idx), dist2, self.dist)
        if self.recv is not None:
            pre = pre + self.recv(h_recv).index_select(0, recv_idx)
        return nn.functional.silu(pre)

    def forward(self, recv_idx, h_recv, send_idx, h_send, dist2):
        return self.fc2(self.hidden(recv_idx, h_recv, send_idx, h_send, dist2))

    def aggregate(self, n, recv_idx, h_recv, send_idx, h_send, dist2, weight=None):
        """``sum_e weight_e * forward(e)`` per receiver, with the output map applied after the sum."""
        if weight is None:
            weight = torch.ones(len(recv_idx), dtype=dist2.dtype)
        if torch.is_grad_enabled():
            hid = self.hidden(recv_idx, h_recv, send_idx, h_send, dist2) * weight[:, None]
            pooled = torch.zeros(n, hid.shape[1], dtype=hid.dtype).index_add(0, recv_idx, hid)
        else:
            # cache-sized edge blocks; per-receiver summation order is unchanged
            send = self.send(h_send)
            recv = self.recv(h_recv) if self.recv is not None else None
            pooled = torch.zeros(n, send.shape[1], dtype=send.dtype)
            for a in range(0, len(send_idx), EDGE_BLOCK):
                ri, blk = recv_idx[a:a + EDGE_BLOCK], slice(a, a + EDGE_BLOCK)
                pre = send.index_select(0, send_idx[blk]).addcmul_(dist2[blk], self.dist)
                if recv is not None:
                    pre.add_(recv.index_select(0, ri))
                hid = nn.functional.silu(pre, inplace=True).mul_(weight[blk, None])
                pooled.index_add_(0, ri, hid)
        mass = torch.zeros(n, dtype=pooled.dtype).index_add(0, recv_idx, weight)
        return nn.functional.linear(pooled, self.fc2.weight) + mass[:, None] * self.fc2.bias


def _scaled_init(linear: nn.Linear, scale: float) -> None:
    with torch.no_grad():
        linear.weight.mul_(scale)
        linear.bias.zero_()


def degree_weights(edges: torch.Tensor, degree: torch.Tensor, n: int, uniform: bool = False) -> torch.Tensor:
    """Per-edge ``w_ik = d_k / sum_{k' in N(i)} d_k'`` (or ``1/|N(i)|`` when uniform)."""
    recv, send = edges[:, 0], edges[:, 1]
    d = torch.ones(len(edges), dtype=torch.float64) if uniform else degree[send]
    total = torch.zeros(n, dtype=torch.float64).index_add(0, recv, d)
    return d / total[recv]


def segment_softmax(logits: torch.Tensor, segment: torch.Tensor, n: int) -> torch.Tensor:
    peak = torch.full((n,), -torch.inf, dtype=logits.dtype)
    peak = peak.scatter_reduce(0, segment, logits.detach(), reduce="amax", include_self=True)
    e = torch.exp(logits - peak[segment])
    total = torch.zeros(n, dtype=logits.dtype).index_add(0, segment, e)
    return e / total[segment]


class IndependentMessaging(nn.Module):
    def __init__(self, d: int, gate_scale: float = 1e-3):
        super().__init__()
        self.norm = nn.LayerNorm(d)
        self.phi_e = EdgeMLP(d, d, d)
        self.phi_h = MLP(2 * d, d)
        self.phi_x = MLP(d, 1, gate_scale=gate_scale)

    def forward(self, h, x, edges, degree, update_coords=True, uniform=False):
        if len(edges) == 0:
            return h, x
        hn = self.norm(h)
        recv, send = edges[:, 0], edges[:, 1]
        diff = x[recv] - x[send]
        d2 = (diff * diff).sum(-1, keepdim=True)
        if not update_coords:
            # messages are only summed, so the output map can follow the sum
            agg = self.phi_e.aggregate(len(h), recv, hn, send, hn, d2)
            return h + self.phi_h(torch.cat([hn, agg], dim=-1)), x
        m = self.phi_e(recv, hn, send, hn, d2)
        agg = torch.zeros_like(h).index_add(0, recv, m)
        h_new = h + self.phi_h(torch.cat([hn, agg], dim=-1))
        w = degree_weights(edges, degree, len(h), uniform)
        shift = torch.zeros_like(x).index_add(0, recv, w[:, None] * diff * self.phi_x(m))
        return h_new, x + shift


class CrossAttention(nn.Module):
    def __init__(self, d: int, d_pair: int, heads: int, d_opm: int):
        super().__init__()
        self.heads = heads
        self.c = d // heads
        self.norm_l = nn.LayerNorm(d)
        self.norm_p = nn.LayerNorm(d)
        self.q_l, self.k_l, self.v_l = nn.Linear(d, d), nn.Linear(d, d), nn.Linear(d, d)
        self.q_p, self.k_p, self.v_p = nn.Linear(d, d), nn.Linear(d, d), nn.Linear(d, d)
        self.bias_lp = nn.Linear(d_pair, heads)
        self.bias_pl = nn.Linear(d_pair, heads)
        self.out_l = nn.Linear(d, d)
        self.out_p = nn.Linear(d, d)
        self.opm = OuterProduct(d, d_opm, d_pair)

    def _split(self, t):
        return t.view(t.shape[0], self.heads, self.c)

    def forward(self, h_l, h_p, z):
        hl, hp = self.norm_l(h_l), self.norm_p(h_p)
        scale = 1.0 / math.sqrt(self.c)
        # ligand atoms attend over residues
        logits = torch.einsum("ihc,jhc->ijh", self._split(self.q_l(hl)), self._split(self.k_p(hp))) * scale
        a = torch.softmax(logits + self.bias_lp(z), dim=1)
        upd_l = torch.einsum("ijh,jhc->ihc", a, self._split(self.v_p(hp))).reshape(len(h_l), -1)
        # residues attend over ligand atoms
        logits = torch.einsum("jhc,ihc->jih", self._split(self.q_p(hp)), self._split(self.k_l(hl))) * scale
        a = torch.softmax(logits + self.bias_pl(z).transpose(0, 1), dim=1)
        upd_p = torch.einsum("jih,ihc->jhc", a, self._split(self.v_l(hl))).reshape(len(h_p), -1)
        h_l = h_l + self.out_l(upd_l)
        h_p = h_p + self.out_p(upd_p)
        return h_l, h_p, self.opm(h_l, h_p)


class InterfaceMessaging(nn.Module):
    """Attention over contact edges for the receiving side of one molecule."""

    def __init__(self, d: int, d_pair: int, gate_scale: float = 1e-3):
        super().__init__()
        self.norm_recv = nn.LayerNorm(d)
        self.norm_send = nn.LayerNorm(d)
        self.phi_q = MLP(d, d)
        self.phi_k = EdgeMLP(0, d, d)
        self.phi_v = EdgeMLP(0, d, d)
        self.phi_b = MLP(d_pair, 1)
        self.phi_xv = MLP(d, 1, gate_scale=gate_scale)

    def forward(self, h_recv, x_recv, h_send, x_send, pairs, z_pairs, update_coords=True):
        """``pairs`` rows are ``(receiver, sender)``; ``z_pairs`` the pair embedding per row."""
        if len(pairs) == 0:
            return h_recv, x_recv
        recv, send = pairs[:, 0], pairs[:, 1]
        hr, hs = self.norm_recv(h_recv), self.norm_send(h_send)
        diff = x_send[send] - x_recv[recv]
        d2 = (diff * diff).sum(-1, keepdim=True)
        # q.k with k = W u + b, evaluated as (W^T q).u + q.b to skip the per-edge output map
        q = self.phi_q(hr)
        k_hid = self.phi_k.hidden(None, None, send, hs, d2)
        q_w = (q @ self.phi_k.fc2.weight).index_select(0, recv)
        q_b = (q @ self.phi_k.fc2.bias).index_select(0, recv)
        logit = (q_w * k_hid).sum(-1) + q_b + self.phi_b(z_pairs).squeeze(-1)
        alpha = segment_softmax(logit, recv, len(h_recv))
        if not update_coords:
            return h_recv + self.phi_v.aggregate(len(h_recv), recv, None, send, hs, d2, alpha), x_recv
        v = self.phi_v(None, None, send, hs, d2)
        h_new = h_recv + torch.zeros_like(h_recv).index_add(0, recv, alpha[:, None] * v)
        shift = torch.zeros_like(x_recv).index_add(0, recv, alpha[:, None] * diff * self.phi_xv(v))
        return h_new, x_recv + shift


def contact_pairs(x_l: torch.Tensor, x_p: torch.Tensor, cutoff: float = CROSS_CUTOFF) -> torch.Tensor:
    """Ligand/residue index pairs closer than ``cutoff`` (strict) at the given coordinates."""
    with torch.no_grad():
        d = torch.cdist(x_l, x_p) if len(x_l) and len(x_p) else torch.zeros(len(x_l), len(x_p))
        return torch.nonzero(d < cutoff)


class CWFLayer(nn.Module):
    def __init__(self, cfg: StackConfig):
        super().__init__()
        d = cfg.d_node
        self.lig_msg = IndependentMessaging(d, cfg.gate_init)
        self.prot_msg = IndependentMessaging(d, cfg.gate_init)
        self.cross = CrossAttention(d, cfg.d_pair, cfg.heads, cfg.d_opm)
        self.lig_iface = InterfaceMessaging(d, cfg.d_pair, cfg.gate_init)
        self.prot_iface = InterfaceMessaging(d, cfg.d_pair, cfg.gate_init)

    def forward(self, state: GraphState, topo: Topology, cfg: StackConfig,
                pairs: torch.Tensor | None = None, protein_cache: dict | None = None) -> GraphState:
        """``protein_cache`` memoises the protein messaging step for callers that
        know its inputs repeat (frozen protein, same initial states)."""
        if pairs is None:
            pairs = contact_pairs(state.x_l, state.x_p, cfg.cross_cutoff)
        live_p = not cfg.freeze_protein
        h_l, x_l = self.lig_msg(state.h_l, state.x_l, topo.lig_edges, topo.lig_degree,
                                True, cfg.uniform_weights)
        if protein_cache is not None and "msg" in protein_cache:
            h_p, x_p = protein_cache["msg"]
        else:
            h_p, x_p = self.prot_msg(state.h_p, state.x_p, topo.prot_edges, topo.prot_degree,
                                     live_p, cfg.uniform_weights)
            if protein_cache is not None:
                protein_cache["msg"] = (h_p, x_p)
        h_l, h_p, z = self.cross(h_l, h_p, state.z)
        z_pairs = z[pairs[:, 0], pairs[:, 1]]
        new_h_l, new_x_l = self.lig_iface(h_l, x_l, h_p, x_p, pairs, z_pairs)
        new_h_p, new_x_p = self.prot_iface(h_p, x_p, h_l, x_l, pairs.flip(1), z_pairs, live_p)
        return GraphState(new_h_l, new_h_p, new_x_l, new_x_p, z)


def independent_update(state: GraphState, topo: Topology, layer: CWFLayer, side: str,
                       update_coords: bool = True, uniform: bool = False):
    if side == "ligand":
        return layer.lig_msg(state.h_l, state.x_l, topo.lig_edges, topo.lig_degree, update_coords, uniform)
    return layer.prot_msg(state.h_p, state.x_p, topo.prot_edges, topo.prot_degree, update_coords, uniform)


def cross_attention_update(state: GraphState, layer: CWFLayer) -> GraphState:
    h_l, h_p, z = layer.cross(state.h_l, state.h_p, state.z)
    return replace(state, h_l=h_l, h_p=h_p, z=z)


def interface_update(state: GraphState, pairs: torch.Tensor, layer: CWFLayer, side: str,
                     update_coords: bool = True):
    z_pairs = state.z[pairs[:, 0], pairs[:, 1]] if len(pairs) else state.z.reshape(-1, state.z.shape[-1])[:0]
    if side == "ligand":
        return layer.lig_iface(state.h_l, state.x_l, state.h_p, state.x_p, pairs, z_pairs, update_coords)
    return layer.prot_iface(state.h_p, state.x_p, state.h_l, state.x_l, pairs.flip(1), z_pairs, update_coords)


def layer_forward(state: GraphState, topo: Topology, layer: CWFLayer, cfg: StackConfig) -> GraphState:
    return layer(state, topo, cfg)


def stack_forward(state: GraphState, topo: Topology, layers, cfg: StackConfig,
                  protein_cache: dict | None = None) -> GraphState:
    """Apply layers in sequence; contact edges are rebuilt from current coordinates per layer.

    ``protein_cache`` is handed to the first layer only (see :meth:`CWFLayer.forward`).
    """
    for k, layer in enumerate(layers):
        state = layer(state, topo, cfg, protein_cache=protein_cache if k == 0 else None)
    return state


def count_parameters(module: nn.Module) -> int:
    return int(sum(np.prod(p.shape) for p in module.parameters()))
