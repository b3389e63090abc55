"""Turn examples into padded tensors."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import torch

from .data import Example, UserHistory


@dataclass
class Batch:
    users: torch.Tensor  # (B,)
    rec_items: torch.Tensor  # (B, T_r)
    rec_mask: torch.Tensor
    queries: torch.Tensor  # (B, T_s)
    sources: torch.Tensor
    search_mask: torch.Tensor
    clicks: torch.Tensor  # (B, T_s, C)
    click_mask: torch.Tensor
    candidates: torch.Tensor  # (B, N)
    labels: torch.Tensor  # (B, N)

    def __len__(self):
        return self.users.shape[0]

    def slice(self, idx) -> "Batch":
        return Batch(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})


class _Arrays:
    __slots__ = ("rec_items", "rec_ts", "queries", "sources", "search_ts", "clicks")

    def __init__(self, h: UserHistory, max_clicks: int):
        self.rec_items = np.array([e.item_id for e in h.rec_events], dtype=np.int64)
        self.rec_ts = np.array([e.timestamp for e in h.rec_events], dtype=np.int64)
        self.queries = np.array([s.query.query_id for s in h.search_events], dtype=np.int64)
        self.sources = np.array([s.query.source_type for s in h.search_events], dtype=np.int64)
        self.search_ts = np.array([s.timestamp for s in h.search_events], dtype=np.int64)
        self.clicks = np.zeros((len(h.search_events), max_clicks), dtype=np.int64)
        for j, s in enumerate(h.search_events):
            c = s.clicked_item_ids[:max_clicks]
            self.clicks[j, : len(c)] = c


class Collator:
    """Builds :class:`Batch` objects, truncating prefixes to the newest events."""

    def __init__(self, max_rec_len: int, max_search_len: int, max_clicks: int):
        self.max_rec_len = max_rec_len
        self.max_search_len = max_search_len
        self.max_clicks = max_clicks
        self._cache: dict[int, tuple[UserHistory, _Arrays]] = {}

    def _arrays(self, h: UserHistory) -> _Arrays:
        hit = self._cache.get(id(h))
        if hit is None or hit[0] is not h:
            hit = self._cache[id(h)] = (h, _Arrays(h, self.max_clicks))
        return hit[1]

    def prefix_slices(self, ex: Example):
        arr = self._arrays(ex.history)
        r_end = ex.target_index
        s_end = int(np.searchsorted(arr.search_ts, arr.rec_ts[r_end], side="left"))
        return arr, slice(max(0, r_end - self.max_rec_len), r_end), slice(max(0, s_end - self.max_search_len), s_end)

    def __call__(self, examples: list[Example], candidates: np.ndarray) -> Batch:
        """``candidates[b, 0]`` is the positive; the rest are negatives."""
        B = len(examples)
        parts = [self.prefix_slices(ex) for ex in examples]
        T_r = max(1, max(r.stop - r.start for _, r, _ in parts))
        T_s = max(1, max(s.stop - s.start for _, _, s in parts))
        C = max(1, max(int((arr.clicks[s] > 0).sum(1).max(initial=0)) for arr, _, s in parts))
        rec = np.zeros((B, T_r), dtype=np.int64)
        qry = np.zeros((B, T_s), dtype=np.int64)
        src = np.zeros((B, T_s), dtype=np.int64)
        clk = np.zeros((B, T_s, C), dtype=np.int64)
        for b, (arr, r, s) in enumerate(parts):
            nr, ns = r.stop - r.start, s.stop - s.start
            rec[b, :nr] = arr.rec_items[r]
            qry[b, :ns] = arr.queries[s]
            src[b, :ns] = arr.sources[s]
            clk[b, :ns] = arr.clicks[s, :C]
        candidates = np.asarray(candidates, dtype=np.int64)
        labels = np.zeros(candidates.shape, dtype=np.float32)
        labels[:, 0] = 1.0
        t = torch.from_numpy
        return Batch(
            users=torch.tensor([ex.user_id for ex in examples], dtype=torch.long),
            rec_items=t(rec), rec_mask=t(rec > 0),
            queries=t(qry), sources=t(src), search_mask=t(qry > 0),
            clicks=t(clk), click_mask=t(clk > 0),
            candidates=t(candidates), labels=t(labels),
        )
