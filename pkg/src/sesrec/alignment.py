"""Query-item alignment with a bidirectional InfoNCE objective.

Similarity is ``tanh(q^T W_A i)``. Denominators contain the positive pair
plus the sampled negatives, so every loss value is non-negative.
"""

from __future__ import annotations

import warnings

import torch
from torch import nn


def pair_similarity(p: torch.Tensor, q: torch.Tensor, W_A: torch.Tensor) -> torch.Tensor:
    if p.shape[-1] != W_A.shape[0] or q.shape[-1] != W_A.shape[1]:
        raise ValueError(f"widths {p.shape[-1]}, {q.shape[-1]} do not match W_A {tuple(W_A.shape)}")
    return torch.tanh(((p @ W_A) * q).sum(-1))


def _infonce(pos: torch.Tensor, neg: torch.Tensor, tau, neg_valid: torch.Tensor | None = None) -> torch.Tensor:
    """Per-pair ``-log softmax`` of the positive among positive + negatives."""
    logits = torch.cat([pos.unsqueeze(-1), neg], dim=-1) / tau
    if neg_valid is not None:
        keep = torch.cat([torch.ones_like(neg_valid[..., :1]), neg_valid], dim=-1)
        logits = logits.masked_fill(~keep, float("-inf"))
    return -torch.log_softmax(logits, dim=-1)[..., 0]


def infonce_q2i(query_vecs, clicked_item_vecs, pairing, neg_items, W_A, tau) -> torch.Tensor:
    """Query-to-item loss averaged over (query, clicked item) pairs.

    ``pairing[k]`` is the row of ``query_vecs`` that clicked item ``k`` belongs to.
    """
    if neg_items.shape[0] == 0:
        raise ValueError("no negative items")
    pairing = torch.as_tensor(pairing, dtype=torch.long)
    if pairing.numel() == 0:
        warnings.warn("infonce_q2i: no query-item pairs", stacklevel=2)
        return clicked_item_vecs.new_zeros(())
    q = query_vecs[pairing]
    pos = pair_similarity(q, clicked_item_vecs, W_A)
    neg = torch.tanh((q @ W_A) @ neg_items.T)
    return _infonce(pos, neg, tau).mean()


def infonce_i2q(query_vecs, clicked_item_vecs, pairing, neg_queries, W_A, tau) -> torch.Tensor:
    """Item-to-query counterpart of :func:`infonce_q2i`."""
    if neg_queries.shape[0] == 0:
        raise ValueError("no negative queries")
    pairing = torch.as_tensor(pairing, dtype=torch.long)
    if pairing.numel() == 0:
        warnings.warn("infonce_i2q: no query-item pairs", stacklevel=2)
        return clicked_item_vecs.new_zeros(())
    q = query_vecs[pairing]
    pos = pair_similarity(q, clicked_item_vecs, W_A)
    neg = torch.tanh((neg_queries @ W_A) @ clicked_item_vecs.T).T
    return _infonce(pos, neg, tau).mean()


def init_bilinear(W: torch.Tensor, how: str, std: float, scale: float = 1.0) -> None:
    """Scaled identity start (a plain dot product) plus small noise, or pure noise."""
    with torch.no_grad():
        nn.init.normal_(W, 0.0, std)
        if how == "identity":
            W.add_(scale * torch.eye(*W.shape, dtype=W.dtype))
        elif how != "normal":
            raise ValueError(f"unknown bilinear init {how!r}")


def align_loss(q2i: torch.Tensor, i2q: torch.Tensor) -> torch.Tensor:
    return 0.5 * (q2i + i2q)


class QueryItemAlignment(nn.Module):
    """Holds ``W_A`` and the learnable temperature."""

    def __init__(self, d: int, tau_init: float = 0.07, tau_min: float = 1e-3, init_std: float = 0.02,
                 bilinear_init: str = "identity"):
        super().__init__()
        self.W_A = nn.Parameter(torch.empty(d, d))
        self.tau = nn.Parameter(torch.tensor(float(tau_init)))
        self.tau_min = tau_min
        init_bilinear(self.W_A, bilinear_init, init_std)

    @torch.no_grad()
    def clamp_(self):
        self.tau.clamp_(min=self.tau_min)

    def batch_loss(self, E_q_hat, E_c_hat, click_mask, query_ids, click_ids,
                   neg_item_vecs, neg_item_ids, neg_query_vecs, neg_query_ids) -> torch.Tensor:
        """Per-example alignment loss for a padded batch, shape ``(B,)``.

        ``E_q_hat``: (B, T_s, d); ``E_c_hat``: (B, T_s, C, d); ``click_mask``
        marks real clicks. Sampled negatives equal to a pair's own item/query
        are dropped from that pair's denominator. Examples without pairs get 0.
        """
        b, j, c = click_mask.nonzero(as_tuple=True)
        q = E_q_hat[b, j]  # (P, d)
        i = E_c_hat[b, j, c]
        qW = q @ self.W_A
        pos = torch.tanh((qW * i).sum(-1))

        neg_q2i = torch.tanh(qW @ neg_item_vecs.T)  # (P, K)
        valid_q2i = click_ids[b, j, c].unsqueeze(-1) != neg_item_ids.unsqueeze(0)
        neg_i2q = torch.tanh(i @ (neg_query_vecs @ self.W_A).T)
        valid_i2q = query_ids[b, j].unsqueeze(-1) != neg_query_ids.unsqueeze(0)
        per_pair = align_loss(_infonce(pos, neg_q2i, self.tau, valid_q2i),
                              _infonce(pos, neg_i2q, self.tau, valid_i2q))

        B = click_mask.shape[0]
        sums = per_pair.new_zeros(B).index_add(0, b, per_pair)
        counts = torch.bincount(b, minlength=B).to(per_pair.dtype)
        return sums / counts.clamp(min=1.0)
