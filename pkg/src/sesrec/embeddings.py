"""Embedding tables, projections into the shared width, and bias encoding."""

from __future__ import annotations

import torch
from torch import nn

from .config import ConfigError, ModelConfig


def project(E_i: torch.Tensor, E_q: torch.Tensor, E_c: torch.Tensor,
            W_i: torch.Tensor, W_q: torch.Tensor):
    """Map item, query and clicked-item embeddings into width ``d``.

    Clicked items share the item projection.
    """
    if E_i.shape[-1] != W_i.shape[0] or E_c.shape[-1] != W_i.shape[0]:
        raise ValueError(f"item width {E_i.shape[-1]}/{E_c.shape[-1]} != projection rows {W_i.shape[0]}")
    if E_q.shape[-1] != W_q.shape[0]:
        raise ValueError(f"query width {E_q.shape[-1]} != projection rows {W_q.shape[0]}")
    return E_i @ W_i, E_q @ W_q, E_c @ W_i


def group_pool_clicked(E_c: torch.Tensor, click_counts) -> torch.Tensor:
    """Mean of each query's clicked-item rows; zero row for click-less queries.

    ``E_c`` stacks the clicked items of all queries in order, so
    ``sum(click_counts)`` must equal its number of rows.
    """
    counts = torch.as_tensor(click_counts, dtype=torch.long)
    if int(counts.sum()) != E_c.shape[0]:
        raise ValueError(f"click counts sum to {int(counts.sum())} but E_c has {E_c.shape[0]} rows")
    owner = torch.repeat_interleave(torch.arange(len(counts)), counts)
    out = E_c.new_zeros(len(counts), E_c.shape[1])
    out.index_add_(0, owner, E_c)
    return out / counts.clamp(min=1).unsqueeze(1).to(E_c.dtype)


def pool_clicked_padded(E_c: torch.Tensor, click_mask: torch.Tensor) -> torch.Tensor:
    """Batched form of :func:`group_pool_clicked` for ``(..., T_s, C, d)`` input."""
    m = click_mask.unsqueeze(-1).to(E_c.dtype)
    return (E_c * m).sum(-2) / m.sum(-2).clamp(min=1.0)


def rec_bias_encode(E_i_hat: torch.Tensor, P_r: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    T = E_i_hat.shape[-2]
    if T > P_r.shape[0]:
        raise ValueError(f"sequence length {T} exceeds position table ({P_r.shape[0]})")
    E_r = E_i_hat + P_r[:T]
    if mask is not None:
        E_r = E_r * mask.unsqueeze(-1).to(E_r.dtype)
    return E_r


def search_bias_encode(E_q_hat: torch.Tensor, E_c_tilde: torch.Tensor, source_types: torch.Tensor,
                       P_s: torch.Tensor, M_s: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    T = E_q_hat.shape[-2]
    if T > P_s.shape[0]:
        raise ValueError(f"sequence length {T} exceeds position table ({P_s.shape[0]})")
    source_types = torch.as_tensor(source_types, dtype=torch.long)
    if source_types.numel() and (int(source_types.max()) >= M_s.shape[0] or int(source_types.min()) < 0):
        raise ValueError(f"source type out of range [0, {M_s.shape[0]})")
    E_s = E_q_hat + E_c_tilde + P_s[:T] + M_s[source_types]
    if mask is not None:
        E_s = E_s * mask.unsqueeze(-1).to(E_s.dtype)
    return E_s


class EmbeddingTables(nn.Module):
    """All lookup tables; row 0 of every vocabulary is padding."""

    def __init__(self, cfg: ModelConfig, n_users: int, n_items: int, n_queries: int,
                 n_terms: int, n_categories: int, n_sources: int = 3):
        super().__init__()
        if cfg.d_i <= cfg.item_attr_dim or cfg.d_q <= cfg.query_term_dim:
            raise ConfigError("attribute/term widths must be smaller than d_i/d_q")
        self.cfg = cfg
        self.user = nn.Embedding(n_users, cfg.d_u, padding_idx=0)
        self.item = nn.Embedding(n_items, cfg.d_i - cfg.item_attr_dim, padding_idx=0)
        self.category = nn.Embedding(n_categories, cfg.item_attr_dim, padding_idx=0)
        self.query = nn.Embedding(n_queries, cfg.d_q - cfg.query_term_dim, padding_idx=0)
        self.term = nn.Embedding(n_terms, cfg.query_term_dim, padding_idx=0)
        self.P_r = nn.Parameter(torch.empty(cfg.max_rec_len, cfg.d))
        self.P_s = nn.Parameter(torch.empty(cfg.max_search_len, cfg.d))
        self.M_s = nn.Parameter(torch.empty(n_sources, cfg.d))
        self.W_i = nn.Parameter(torch.empty(cfg.d_i, cfg.d))
        self.W_q = nn.Parameter(torch.empty(cfg.d_q, cfg.d))
        # catalogs: item -> category, query -> padded term ids
        self.register_buffer("item_category", torch.zeros(n_items, dtype=torch.long))
        self.register_buffer("query_terms", torch.zeros(n_queries, 1, dtype=torch.long))
        self.reset_parameters()

    def reset_parameters(self):
        std = self.cfg.init_std
        for emb in (self.user, self.item, self.category, self.query, self.term):
            nn.init.normal_(emb.weight, 0.0, std)
            with torch.no_grad():
                emb.weight[0].zero_()
        for p in (self.P_r, self.P_s, self.M_s, self.W_i, self.W_q):
            nn.init.normal_(p, 0.0, std)

    def set_catalog(self, item_category: dict[int, int], query_terms: dict[int, tuple[int, ...]]):
        n_items, n_queries = self.item.num_embeddings, self.query.num_embeddings
        cat = torch.zeros(n_items, dtype=torch.long)
        for i, c in item_category.items():
            if i < n_items and c < self.category.num_embeddings:
                cat[i] = c
        width = max((len(t) for t in query_terms.values()), default=1)
        terms = torch.zeros(n_queries, width, dtype=torch.long)
        for q, t in query_terms.items():
            if q < n_queries:
                terms[q, : len(t)] = torch.as_tensor(t)
        self.item_category = cat
        self.query_terms = terms

    def _check_ids(self, ids: torch.Tensor, table: nn.Embedding, name: str):
        if ids.numel() and (int(ids.max()) >= table.num_embeddings or int(ids.min()) < 0):
            raise IndexError(f"unknown {name} id (vocabulary size {table.num_embeddings})")

    def embed_item(self, item_ids: torch.Tensor) -> torch.Tensor:
        """ID embedding concatenated with the category embedding (width d_i)."""
        item_ids = torch.as_tensor(item_ids, dtype=torch.long)
        self._check_ids(item_ids, self.item, "item")
        return torch.cat([self.item(item_ids), self.category(self.item_category[item_ids])], dim=-1)

    def embed_query(self, query_ids: torch.Tensor, term_ids: torch.Tensor | None = None) -> torch.Tensor:
        """Query ID embedding concatenated with the mean of its term embeddings."""
        query_ids = torch.as_tensor(query_ids, dtype=torch.long)
        self._check_ids(query_ids, self.query, "query")
        if term_ids is None:
            term_ids = self.query_terms[query_ids]
        term_ids = torch.as_tensor(term_ids, dtype=torch.long)
        self._check_ids(term_ids, self.term, "term")
        tmask = (term_ids > 0).unsqueeze(-1).to(self.term.weight.dtype)
        n_terms = tmask.sum(-2)
        real = query_ids > 0
        if bool(((n_terms.squeeze(-1) == 0) & real).any()):
            raise ValueError("query without terms")
        mean_terms = (self.term(term_ids) * tmask).sum(-2) / n_terms.clamp(min=1.0)
        return torch.cat([self.query(query_ids), mean_terms], dim=-1)

    def embed_user(self, user_ids: torch.Tensor) -> torch.Tensor:
        user_ids = torch.as_tensor(user_ids, dtype=torch.long)
        self._check_ids(user_ids, self.user, "user")
        return self.user(user_ids)

    def project_items(self, E: torch.Tensor) -> torch.Tensor:
        return E @ self.W_i

    def project_queries(self, E: torch.Tensor) -> torch.Tensor:
        return E @ self.W_q

    def encode_inputs(self, rec_items, rec_mask, queries, sources, clicks, click_mask, search_mask):
        """Build ``E_r`` and ``E_s`` for a padded batch.

        Returns ``(E_r, E_s, E_q_hat, E_c_hat)``; the projected query and
        clicked-item embeddings feed the alignment loss.
        """
        E_i_hat = self.project_items(self.embed_item(rec_items))
        E_r = rec_bias_encode(E_i_hat, self.P_r, rec_mask)
        E_q_hat = self.project_queries(self.embed_query(queries))
        E_c_hat = self.project_items(self.embed_item(clicks))
        E_c_tilde = pool_clicked_padded(E_c_hat, click_mask)
        E_s = search_bias_encode(E_q_hat, E_c_tilde, sources, self.P_s, self.M_s, search_mask)
        return E_r, E_s, E_q_hat, E_c_hat
