"""The search-enhanced sequential recommender assembled from its parts."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .alignment import QueryItemAlignment
from .batching import Batch
from .config import ModelConfig, TrainConfig
from .data import Corpus
from .disentangle import DisentangleResult, InterestDisentangler, contrast_loss
from .embeddings import EmbeddingTables
from .encoder import SequenceEncoder
from .interest import PredictionMLP, extract_interests, predict, rec_loss


@dataclass
class ForwardOutput:
    scores: torch.Tensor  # (B, N)
    H_r: torch.Tensor
    H_s: torch.Tensor
    E_q_hat: torch.Tensor
    E_c_hat: torch.Tensor
    dis: DisentangleResult


@dataclass
class LossParts:
    total: torch.Tensor
    rec: torch.Tensor
    ali: torch.Tensor
    con: torch.Tensor
    penalty: torch.Tensor


class SESRec(nn.Module):
    def __init__(self, cfg: ModelConfig, n_users: int, n_items: int, n_queries: int, n_terms: int,
                 n_categories: int, n_sources: int = 3, tau_init: float = 0.07, tau_min: float = 1e-3):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.vocab = dict(n_users=n_users, n_items=n_items, n_queries=n_queries, n_terms=n_terms,
                          n_categories=n_categories, n_sources=n_sources)
        d = cfg.d
        self.emb = EmbeddingTables(cfg, n_users, n_items, n_queries, n_terms, n_categories, n_sources)
        self.enc_r = SequenceEncoder(d, cfg.n_layers, cfg.n_heads, cfg.ffn_dim, cfg.dropout)
        self.enc_s = SequenceEncoder(d, cfg.n_layers, cfg.n_heads, cfg.ffn_dim, cfg.dropout)
        self.align = QueryItemAlignment(d, tau_init, tau_min, cfg.init_std, cfg.bilinear_init)
        self.disentangle = InterestDisentangler(d, cfg.threshold, cfg.init_std, cfg.bilinear_init)
        self.W_d_r = nn.Parameter(torch.empty(d, cfg.d_i))
        self.W_d_s = nn.Parameter(torch.empty(d, cfg.d_i))
        for W in (self.W_d_r, self.W_d_s):
            nn.init.normal_(W, 0.0, cfg.init_std)
        interest_width = 3 * d if cfg.use_mie else d
        self.mlp = PredictionMLP(2 * interest_width + cfg.d_i + cfg.d_u, cfg.mlp_hidden)

    @classmethod
    def for_corpus(cls, corpus: Corpus, config: TrainConfig) -> "SESRec":
        model = cls(config.model, corpus.n_users, corpus.n_items, corpus.n_queries, corpus.n_terms,
                    corpus.n_categories, corpus.n_sources, config.tau_init, config.tau_min)
        model.emb.set_catalog(corpus.item_category, corpus.query_terms)
        return model

    def forward(self, batch: Batch) -> ForwardOutput:
        E_r, E_s, E_q_hat, E_c_hat = self.emb.encode_inputs(
            batch.rec_items, batch.rec_mask, batch.queries, batch.sources,
            batch.clicks, batch.click_mask, batch.search_mask)
        H_r = self.enc_r(E_r, batch.rec_mask)
        H_s = self.enc_s(E_s, batch.search_mask)
        dis = self.disentangle(H_s, H_r, batch.search_mask, batch.rec_mask)
        e_v = self.emb.embed_item(batch.candidates)  # (B, N, d_i)
        u_r = extract_interests(H_r, batch.rec_mask, dis.P_r, dis.N_r, e_v, self.W_d_r, self.cfg.use_mie)
        u_s = extract_interests(H_s, batch.search_mask, dis.P_s, dis.N_s, e_v, self.W_d_s, self.cfg.use_mie)
        scores = predict(self.mlp, u_r, u_s, e_v, self.emb.embed_user(batch.users))
        return ForwardOutput(scores, H_r, H_s, E_q_hat, E_c_hat, dis)

    @torch.no_grad()
    def score(self, batch: Batch) -> torch.Tensor:
        return self.forward(batch).scores

    def alignment_loss(self, out: ForwardOutput, batch: Batch, neg_items: torch.Tensor,
                       neg_queries: torch.Tensor) -> torch.Tensor:
        neg_item_vecs = self.emb.project_items(self.emb.embed_item(neg_items))
        neg_query_vecs = self.emb.project_queries(self.emb.embed_query(neg_queries))
        return self.align.batch_loss(out.E_q_hat, out.E_c_hat, batch.click_mask, batch.queries,
                                     batch.clicks, neg_item_vecs, neg_items, neg_query_vecs, neg_queries)

    def penalty(self, batch: Batch, neg_items: torch.Tensor | None = None,
                neg_queries: torch.Tensor | None = None) -> torch.Tensor:
        """Sum of squares of dense parameters plus the embedding rows this batch touches."""
        e = self.emb
        tables = {id(t.weight) for t in (e.user, e.item, e.category, e.query, e.term)}
        total = sum(p.pow(2).sum() for n, p in self.named_parameters()
                    if id(p) not in tables and not n.endswith("tau"))
        items = [batch.rec_items.flatten(), batch.clicks.flatten(), batch.candidates.flatten()]
        queries = [batch.queries.flatten()]
        if neg_items is not None:
            items.append(neg_items.flatten())
        if neg_queries is not None:
            queries.append(neg_queries.flatten())
        items = torch.unique(torch.cat(items))
        queries = torch.unique(torch.cat(queries))
        cats = torch.unique(e.item_category[items])
        terms = torch.unique(e.query_terms[queries])
        users = torch.unique(batch.users)
        for table, ids in ((e.item, items), (e.query, queries), (e.category, cats),
                           (e.term, terms), (e.user, users)):
            ids = ids[ids > 0]
            total = total + table.weight[ids].pow(2).sum()
        return total

    def losses(self, batch: Batch, config: TrainConfig, neg_items: torch.Tensor | None = None,
               neg_queries: torch.Tensor | None = None) -> tuple[LossParts, ForwardOutput]:
        """Batch-mean loss components and the weighted total."""
        out = self.forward(batch)
        l_rec = rec_loss(out.scores, batch.labels).mean()
        zero = l_rec.new_zeros(())
        if config.alpha > 0 and neg_items is not None and neg_queries is not None:
            l_ali = self.alignment_loss(out, batch, neg_items, neg_queries).mean()
        else:
            l_ali = zero
        l_con = contrast_loss(out.dis.i_s, out.dis.i_r, config.margin).mean() if config.beta > 0 else zero
        pen = self.penalty(batch, neg_items, neg_queries) if config.lam > 0 else zero
        total = l_rec + config.alpha * l_ali + config.beta * l_con + config.lam * pen
        return LossParts(total, l_rec, l_ali, l_con, pen), out

    def clamp_(self):
        self.align.clamp_()
