"""Co-attention similarity scoring, hard selection and the interest-contrast loss.

All functions accept a leading batch dimension; masks are boolean with
``True`` at real (non-padded) positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .alignment import init_bilinear
from .config import threshold_value


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if not bool(mask.any(-1).all()):
        raise ValueError("softmax over a sequence without real positions")
    return torch.softmax(logits.masked_fill(~mask, float("-inf")), dim=-1)


def affinity(H_s: torch.Tensor, H_r: torch.Tensor, W_l: torch.Tensor) -> torch.Tensor:
    """``tanh(H_s W_l H_r^T)``, shape ``(..., T_s, T_r)``.

    Padded rows of ``H`` are zero, so padded rows/columns of the result are 0
    and contribute nothing to the score logits.
    """
    if H_s.shape[-1] != W_l.shape[0] or H_r.shape[-1] != W_l.shape[1]:
        raise ValueError(f"H widths {H_s.shape[-1]}, {H_r.shape[-1]} do not match W_l {tuple(W_l.shape)}")
    return torch.tanh(H_s @ W_l @ H_r.transpose(-1, -2))


def similarity_scores(A, H_s, H_r, W_r, W_s, mask_s, mask_r):
    """Normalized per-position scores ``(a_s, a_r)``; padded entries are exactly 0.

    ``a_s = softmax(W_r H_r^T A^T)`` over search positions and
    ``a_r = softmax(W_s H_s^T A)`` over rec positions.
    """
    c_r = H_r @ W_r.reshape(-1)  # (..., T_r)
    c_s = H_s @ W_s.reshape(-1)  # (..., T_s)
    logit_s = (A @ c_r.unsqueeze(-1)).squeeze(-1)
    logit_r = (A.transpose(-1, -2) @ c_s.unsqueeze(-1)).squeeze(-1)
    return masked_softmax(logit_s, mask_s), masked_softmax(logit_r, mask_r)


def _thresholds(a: torch.Tensor, mask: torch.Tensor, strategy) -> torch.Tensor:
    n_real = mask.sum(-1)
    s = str(strategy).strip().lower()
    if s == "mean":
        return 1.0 / n_real.to(a.dtype)
    if s == "median":
        # lower median over real positions
        filled = a.masked_fill(~mask, float("inf"))
        srt = filled.sort(dim=-1).values
        idx = ((n_real - 1) // 2).unsqueeze(-1)
        return srt.gather(-1, idx).squeeze(-1)
    return torch.full_like(n_real, threshold_value(strategy, 1), dtype=a.dtype)


def hard_select(a: torch.Tensor, mask: torch.Tensor, strategy="mean"):
    """Split real positions into similar (``a > gamma``) and dissimilar sets.

    Empty sets are repaired: an empty similar set receives the argmax and an
    empty dissimilar set the argmin (lowest index on ties). A length-1
    sequence keeps its single position in the similar set only.
    """
    a = a.detach()
    gamma = _thresholds(a, mask, strategy).unsqueeze(-1)
    P = (a > gamma) & mask
    N = (a <= gamma) & mask
    n_real = mask.sum(-1, keepdim=True)

    empty_p = ~P.any(-1, keepdim=True)
    top = a.masked_fill(~mask, float("-inf")).argmax(-1, keepdim=True)
    onehot = torch.zeros_like(mask).scatter(-1, top, True)
    P = torch.where(empty_p, P | onehot, P)
    N = torch.where(empty_p, N & ~onehot, N)

    empty_n = ~N.any(-1, keepdim=True) & (n_real > 1)
    low = a.masked_fill(~P, float("inf")).argmin(-1, keepdim=True)
    onehot = torch.zeros_like(mask).scatter(-1, low, True)
    N = torch.where(empty_n, N | onehot, N)
    P = torch.where(empty_n, P & ~onehot, P)
    return P, N


def _masked_mean(H: torch.Tensor, sel: torch.Tensor) -> torch.Tensor:
    w = sel.to(H.dtype).unsqueeze(-1)
    return (H * w).sum(-2) / w.sum(-2).clamp(min=1.0)


def build_contrast_vectors(H, a, P, N):
    """Anchor (score-weighted sum), positive (mean of P) and negative (mean of N).

    Also returns a flag that is False where ``N`` is empty and the negative
    is therefore undefined.
    """
    anchor = (a.unsqueeze(-1) * H).sum(-2)
    return anchor, _masked_mean(H, P), _masked_mean(H, N), N.any(-1)


def _dist(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return torch.linalg.vector_norm(x - y, dim=-1)


def triplet_loss(anchor, positive, negative, margin) -> torch.Tensor:
    return torch.clamp(_dist(anchor, positive) - _dist(anchor, negative) + margin, min=0.0)


@dataclass
class DisentangleResult:
    A: torch.Tensor
    a_s: torch.Tensor
    a_r: torch.Tensor
    P_s: torch.Tensor
    N_s: torch.Tensor
    P_r: torch.Tensor
    N_r: torch.Tensor
    i_s: tuple  # (anchor, positive, negative, has_negative)
    i_r: tuple

    def to_records(self, user_ids) -> list[dict]:
        """Per-user diagnostic rows (index lists and scores over real positions)."""
        rows = []
        for b, uid in enumerate(torch.as_tensor(user_ids).tolist()):
            ms = self.P_s[b] | self.N_s[b]
            mr = self.P_r[b] | self.N_r[b]
            rows.append({
                "user": int(uid),
                "P_s": torch.nonzero(self.P_s[b]).flatten().tolist(),
                "N_s": torch.nonzero(self.N_s[b]).flatten().tolist(),
                "P_r": torch.nonzero(self.P_r[b]).flatten().tolist(),
                "N_r": torch.nonzero(self.N_r[b]).flatten().tolist(),
                "a_s": [float(x) for x in self.a_s[b][ms].tolist()],
                "a_r": [float(x) for x in self.a_r[b][mr].tolist()],
            })
        return rows


def contrast_loss(res_s: tuple, res_r: tuple, margin) -> torch.Tensor:
    """Sum of the rec-side and search-side triplet terms; undefined sides add 0."""
    total = 0.0
    for anchor, pos, neg, has_neg in (res_r, res_s):
        tri = triplet_loss(anchor, pos, neg, margin)
        total = total + torch.where(has_neg, tri, torch.zeros_like(tri))
    return total


class InterestDisentangler(nn.Module):
    def __init__(self, d: int, threshold="mean", init_std: float = 0.02, bilinear_init: str = "identity"):
        super().__init__()
        self.W_l = nn.Parameter(torch.empty(d, d))
        self.W_r = nn.Parameter(torch.empty(1, d))
        self.W_s = nn.Parameter(torch.empty(1, d))
        self.threshold = threshold
        # rows of H are layer-normalized (squared norm ~d), so 1/d keeps tanh out of saturation
        init_bilinear(self.W_l, bilinear_init, init_std, scale=1.0 / d)
        for p in (self.W_r, self.W_s):
            nn.init.normal_(p, 0.0, init_std)

    def forward(self, H_s, H_r, mask_s, mask_r) -> DisentangleResult:
        A = affinity(H_s, H_r, self.W_l)
        a_s, a_r = similarity_scores(A, H_s, H_r, self.W_r, self.W_s, mask_s, mask_r)
        P_s, N_s = hard_select(a_s, mask_s, self.threshold)
        P_r, N_r = hard_select(a_r, mask_r, self.threshold)
        return DisentangleResult(
            A, a_s, a_r, P_s, N_s, P_r, N_r,
            build_contrast_vectors(H_s, a_s, P_s, N_s),
            build_contrast_vectors(H_r, a_r, P_r, N_r),
        )
