"""Candidate-conditioned interest extraction, prediction MLP and losses."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

EPS = 1e-7


def target_attention(H: torch.Tensor, sel: torch.Tensor, e_v: torch.Tensor, W_d: torch.Tensor,
                     allow_empty: bool = False) -> torch.Tensor:
    """Softmax-weighted sum of the selected rows of ``H`` w.r.t. candidates.

    Shapes: ``H`` (..., T, d), ``sel`` (..., T), ``e_v`` (..., N, d_i),
    ``W_d`` (d, d_i). Returns (..., N, d). Rows whose selection is empty
    raise, or give a zero vector when ``allow_empty`` is set.
    """
    empty = ~sel.any(-1)
    if bool(empty.any()) and not allow_empty:
        raise ValueError("target attention over an empty index set")
    logits = (H @ W_d) @ e_v.transpose(-1, -2)  # (..., T, N)
    logits = logits.transpose(-1, -2).masked_fill(~sel.unsqueeze(-2), float("-inf"))
    # an all -inf row would give NaN; give it a harmless finite row instead
    logits = torch.where(empty[..., None, None], torch.zeros_like(logits), logits)
    w = torch.softmax(logits, dim=-1)
    u = w @ H
    return torch.where(empty[..., None, None], torch.zeros_like(u), u)


def extract_interests(H, mask, P, N, e_v, W_d, use_mie: bool = True) -> torch.Tensor:
    """``u_all || u_sim || u_diff`` (width 3d), or ``u_all`` alone without MIE."""
    u_all = target_attention(H, mask, e_v, W_d)
    if not use_mie:
        return u_all
    u_sim = target_attention(H, P, e_v, W_d)
    u_diff = target_attention(H, N, e_v, W_d, allow_empty=True)
    return torch.cat([u_all, u_sim, u_diff], dim=-1)


class PredictionMLP(nn.Module):
    """Two affine layers with a rectifier in between and a sigmoid output."""

    def __init__(self, in_dim: int, hidden: int = 64):
        super().__init__()
        self.in_dim = in_dim
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"MLP expects width {self.in_dim}, got {x.shape[-1]}")
        return torch.sigmoid(self.fc2(torch.relu(self.fc1(x)))).squeeze(-1)


def predict(mlp: PredictionMLP, u_r, u_s, e_v, e_u) -> torch.Tensor:
    """Click probability from the concatenated interest, item and user vectors."""
    e_u = e_u.unsqueeze(-2).expand(*e_v.shape[:-1], e_u.shape[-1]) if e_u.dim() < e_v.dim() else e_u
    return mlp(torch.cat([u_r, u_s, e_v, e_u], dim=-1))


def rec_loss(scores: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood over the candidate set (last dimension)."""
    y_hat = scores.clamp(EPS, 1.0 - EPS)
    labels = labels.to(y_hat.dtype)
    return -(labels * torch.log(y_hat) + (1 - labels) * torch.log(1 - y_hat)).mean(-1)


@dataclass
class LossWeights:
    alpha: float = 0.1
    beta: float = 0.001
    lam: float = 1e-6

    def __post_init__(self):
        if min(self.alpha, self.beta, self.lam) < 0:
            raise ValueError("loss weights must be non-negative")


def total_loss(l_rec, l_ali, l_con, penalty, weights: LossWeights):
    """``L_rec + alpha * L_ali + beta * L_con + lam * penalty``.

    ``penalty`` is the summed squared norm of the regularized parameters.
    """
    return l_rec + weights.alpha * l_ali + weights.beta * l_con + weights.lam * penalty
