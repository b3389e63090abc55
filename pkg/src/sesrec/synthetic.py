"""Synthetic search-and-recommendation logs with a controllable interest overlap.

Every user has 2-4 recommendation-interest categories and a disjoint set of
search-only categories. Recommendation events follow a sticky Markov chain
over the interest categories. A search event, with probability ``overlap``,
queries the currently active interest category; otherwise it queries one of
the user's search-only categories. Queries of a category share a term pool,
so query/item alignment is learnable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .config import ConfigError, load_flat_ini


@dataclass
class SynthConfig:
    n_users: int = 1000
    n_items: int = 200
    n_categories: int = 10
    n_queries: int = 100
    n_terms: int = 120
    overlap: float = 0.5
    rec_len_min: int = 10
    rec_len_max: int = 20
    search_len_min: int = 5
    search_len_max: int = 12
    max_clicks: int = 3
    zero_click_prob: float = 0.1
    n_sources: int = 3
    min_rec_interests: int = 2
    max_rec_interests: int = 4
    max_search_interests: int = 3
    stay_prob: float = 0.7
    terms_per_query_max: int = 3
    shared_term_prob: float = 0.2
    popularity_exponent: float = 0.8

    def validate(self) -> None:
        if not 0.0 <= self.overlap <= 1.0:
            raise ConfigError(f"overlap must lie in [0, 1], got {self.overlap}")
        if self.n_categories < self.max_rec_interests + 1:
            raise ConfigError("n_categories must exceed max_rec_interests")
        if self.n_items < self.n_categories or self.n_queries < self.n_categories:
            raise ConfigError("need at least one item and one query per category")
        if self.n_terms < 2 * self.n_categories:
            raise ConfigError("n_terms must be at least 2 * n_categories")
        if not 1 <= self.min_rec_interests <= self.max_rec_interests:
            raise ConfigError("bad rec-interest range")
        if self.rec_len_min < 3 or self.rec_len_max < self.rec_len_min:
            raise ConfigError("rec lengths must satisfy 3 <= min <= max")
        if self.search_len_min < 1 or self.search_len_max < self.search_len_min:
            raise ConfigError("search lengths must satisfy 1 <= min <= max")

    @classmethod
    def from_file(cls, path) -> "SynthConfig":
        known = {f.name: f.type for f in fields(cls)}
        raw = load_flat_ini(path)
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                continue
            kwargs[key] = float(value) if key in {"overlap", "zero_click_prob", "stay_prob",
                                                   "shared_term_prob", "popularity_exponent"} else int(value)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass
class SyntheticData:
    events: list[dict]
    item_category: np.ndarray  # index = item id
    query_category: np.ndarray  # index = query id
    query_terms: dict[int, tuple[int, ...]]
    rec_interests: dict[int, list[int]] = field(default_factory=dict)
    search_interests: dict[int, list[int]] = field(default_factory=dict)

    def overlap_fraction(self) -> float:
        """Share of clicked-search events whose category is a rec interest."""
        hits = total = 0
        for r in self.events:
            if r["type"] != "search" or not r["clicks"]:
                continue
            total += 1
            hits += int(self.item_category[r["clicks"][0]] in self.rec_interests[r["user"]])
        return hits / total if total else float("nan")


def _split_evenly(ids: np.ndarray, n_groups: int) -> list[np.ndarray]:
    return [ids[g::n_groups] for g in range(n_groups)]


def generate_synthetic(config: SynthConfig, seed: int = 0) -> SyntheticData:
    config.validate()
    rng = np.random.default_rng(seed)
    n_cat = config.n_categories
    cats = np.arange(1, n_cat + 1)

    items = np.arange(1, config.n_items + 1)
    item_category = np.zeros(config.n_items + 1, dtype=np.int64)
    cat_items = {}
    cat_item_p = {}
    for c, group in zip(cats, _split_evenly(items, n_cat)):
        item_category[group] = c
        cat_items[c] = group
        w = 1.0 / np.arange(1, len(group) + 1) ** config.popularity_exponent
        cat_item_p[c] = w / w.sum()

    # category term pools; the last few terms are generic and shared
    n_generic = max(1, config.n_terms // (n_cat + 1))
    terms = np.arange(1, config.n_terms + 1)
    generic = terms[-n_generic:]
    cat_terms = dict(zip(cats, _split_evenly(terms[:-n_generic], n_cat)))

    queries = np.arange(1, config.n_queries + 1)
    query_category = np.zeros(config.n_queries + 1, dtype=np.int64)
    cat_queries = {}
    query_terms: dict[int, tuple[int, ...]] = {}
    for c, group in zip(cats, _split_evenly(queries, n_cat)):
        query_category[group] = c
        cat_queries[c] = group
        for q in group.tolist():
            k = int(rng.integers(1, config.terms_per_query_max + 1))
            chosen = [int(rng.choice(generic)) if rng.random() < config.shared_term_prob
                      else int(rng.choice(cat_terms[c])) for _ in range(k)]
            query_terms[q] = tuple(chosen)

    events: list[dict] = []
    rec_interests: dict[int, list[int]] = {}
    search_interests: dict[int, list[int]] = {}
    for user in range(1, config.n_users + 1):
        n_rec_cat = int(rng.integers(config.min_rec_interests, config.max_rec_interests + 1))
        perm = rng.permutation(cats)
        r_cats = sorted(perm[:n_rec_cat].tolist())
        rest = perm[n_rec_cat:]
        n_s_cat = int(rng.integers(1, min(config.max_search_interests, len(rest)) + 1))
        s_cats = sorted(rest[:n_s_cat].tolist())
        rec_interests[user] = r_cats
        search_interests[user] = s_cats

        n_rec = int(rng.integers(config.rec_len_min, config.rec_len_max + 1))
        n_search = int(rng.integers(config.search_len_min, config.search_len_max + 1))
        # first event is a rec event; the rest are interleaved at random
        kinds = np.array(["rec"] * (n_rec - 1) + ["search"] * n_search)
        kinds = ["rec"] + rng.permutation(kinds).tolist()
        active = int(rng.choice(r_cats))
        for ts, kind in enumerate(kinds):
            if kind == "rec":
                if rng.random() > config.stay_prob:
                    active = int(rng.choice(r_cats))
                item = int(rng.choice(cat_items[active], p=cat_item_p[active]))
                events.append({"user": user, "type": "rec", "item": item, "category": active, "ts": ts})
                continue
            c = active if rng.random() < config.overlap else int(rng.choice(s_cats))
            q = int(rng.choice(cat_queries[c]))
            if rng.random() < config.zero_click_prob:
                clicks = []
            else:
                k = int(rng.integers(1, config.max_clicks + 1))
                clicks = rng.choice(cat_items[c], size=min(k, len(cat_items[c])), replace=False,
                                    p=cat_item_p[c]).tolist()
            events.append({
                "user": user, "type": "search", "query": q, "terms": list(query_terms[q]),
                "clicks": [int(i) for i in clicks], "click_categories": [c] * len(clicks),
                "source": int(rng.integers(0, config.n_sources)), "ts": ts,
            })
    return SyntheticData(events, item_category, query_category, query_terms, rec_interests, search_interests)
