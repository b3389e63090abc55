"""Behavior-log data model: histories, filtering, leave-one-out splits, sampling.

Ids for users, items, queries, terms and categories are positive integers;
index 0 is reserved for padding everywhere downstream.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised for malformed or insufficient interaction data."""


@dataclass(frozen=True)
class Query:
    query_id: int
    term_ids: tuple[int, ...]
    source_type: int = 0

    def __post_init__(self):
        if len(self.term_ids) == 0:
            raise DataError(f"query {self.query_id} has no terms")
        if self.source_type < 0:
            raise DataError(f"query {self.query_id}: negative source type")


@dataclass(frozen=True)
class SearchEvent:
    query: Query
    clicked_item_ids: tuple[int, ...]
    timestamp: int
    # parallel to clicked_item_ids; 0 = unknown
    clicked_categories: tuple[int, ...] = ()


@dataclass(frozen=True)
class RecEvent:
    item_id: int
    timestamp: int
    category_id: int = 0


@dataclass
class UserHistory:
    user_id: int
    rec_events: list[RecEvent] = field(default_factory=list)
    search_events: list[SearchEvent] = field(default_factory=list)

    @property
    def n_rec(self) -> int:
        return len(self.rec_events)

    @property
    def n_search(self) -> int:
        return len(self.search_events)

    def interacted_items(self) -> set[int]:
        """Items seen in recommendation events or clicked in search."""
        items = {e.item_id for e in self.rec_events}
        for s in self.search_events:
            items.update(s.clicked_item_ids)
        return items

    def before(self, timestamp: int) -> "UserHistory":
        """Prefix of events strictly earlier than ``timestamp``."""
        return UserHistory(
            self.user_id,
            [e for e in self.rec_events if e.timestamp < timestamp],
            [e for e in self.search_events if e.timestamp < timestamp],
        )


@dataclass(frozen=True)
class Example:
    """One prediction target together with the history that precedes it."""

    history: UserHistory
    target_index: int  # index into history.rec_events

    @property
    def user_id(self) -> int:
        return self.history.user_id

    @property
    def target(self) -> int:
        return self.history.rec_events[self.target_index].item_id

    @property
    def timestamp(self) -> int:
        return self.history.rec_events[self.target_index].timestamp

    @property
    def n_rec(self) -> int:
        return self.target_index

    @property
    def n_search(self) -> int:
        ts = self.timestamp
        return sum(1 for s in self.history.search_events if s.timestamp < ts)

    @property
    def prefix(self) -> UserHistory:
        return self.history.before(self.timestamp)


@dataclass
class DatasetSplit:
    train: list[Example]
    validation: list[Example]
    test: list[Example]
    report: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# ingestion


def _check_id(value, name: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise DataError(f"{name} must be a positive integer, got {value!r}")
    return value


def build_histories(records: Iterable[dict]) -> dict[int, UserHistory]:
    """Group raw records by user and sort each stream by timestamp.

    Records with an unknown ``type`` or missing fields are rejected with a
    logged diagnostic. Duplicate ``(user, ts, type)`` triples keep the first.
    Ties in timestamp keep input order.
    """
    seen: set[tuple[int, int, str]] = set()
    rec: dict[int, list[tuple[int, int, RecEvent]]] = {}
    search: dict[int, list[tuple[int, int, SearchEvent]]] = {}
    n_rejected = 0
    for order, r in enumerate(records):
        try:
            kind = r.get("type")
            user = _check_id(r.get("user"), "user")
            ts = r.get("ts")
            if not isinstance(ts, int):
                raise DataError(f"timestamp must be an integer, got {ts!r}")
            if kind == "rec":
                ev = RecEvent(_check_id(r.get("item"), "item"), ts, int(r.get("category") or 0))
            elif kind == "search":
                terms = tuple(_check_id(t, "term") for t in r.get("terms") or ())
                q = Query(_check_id(r.get("query"), "query"), terms, int(r.get("source") or 0))
                clicks = tuple(_check_id(i, "click") for i in r.get("clicks") or ())
                cats = tuple(int(c) for c in r.get("click_categories") or ())
                if cats and len(cats) != len(clicks):
                    raise DataError("click_categories length differs from clicks")
                ev = SearchEvent(q, clicks, ts, cats)
            else:
                raise DataError(f"unknown record type {kind!r}")
        except (DataError, TypeError, ValueError, AttributeError) as exc:
            n_rejected += 1
            logger.warning("rejected record %d: %s", order, exc)
            continue
        key = (user, ts, kind)
        if key in seen:
            logger.warning("duplicate record (user=%d, ts=%d, type=%s); keeping first", *key)
            continue
        seen.add(key)
        bucket = rec if kind == "rec" else search
        bucket.setdefault(user, []).append((ts, order, ev))

    histories = {}
    for user in sorted(set(rec) | set(search)):
        histories[user] = UserHistory(
            user,
            [e for _, _, e in sorted(rec.get(user, []), key=lambda t: t[:2])],
            [e for _, _, e in sorted(search.get(user, []), key=lambda t: t[:2])],
        )
    if n_rejected:
        logger.info("build_histories: %d record(s) rejected", n_rejected)
    return histories


def read_events(path: str | Path) -> Iterator[dict]:
    """Yield records from a JSON-lines event file."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc


def write_events(records: Iterable[dict], path: str | Path) -> int:
    n = 0
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, separators=(",", ":")) + "\n")
            n += 1
    return n


def history_records(histories: dict[int, UserHistory]) -> Iterator[dict]:
    """Inverse of :func:`build_histories` (event-file record dicts)."""
    for h in histories.values():
        for e in h.rec_events:
            r = {"user": h.user_id, "type": "rec", "item": e.item_id, "ts": e.timestamp}
            if e.category_id:
                r["category"] = e.category_id
            yield r
        for s in h.search_events:
            r = {
                "user": h.user_id,
                "type": "search",
                "query": s.query.query_id,
                "terms": list(s.query.term_ids),
                "clicks": list(s.clicked_item_ids),
                "source": s.query.source_type,
                "ts": s.timestamp,
            }
            if s.clicked_categories:
                r["click_categories"] = list(s.clicked_categories)
            yield r


# ---------------------------------------------------------------------------
# filtering and splitting


def filter_items(histories: dict[int, UserHistory], min_item_count: int = 5) -> dict[int, UserHistory]:
    """Drop items that occur fewer than ``min_item_count`` times overall.

    Counts cover recommendation events and search clicks. Search events stay
    even if all their clicks are removed.
    """
    counts: Counter[int] = Counter()
    for h in histories.values():
        counts.update(e.item_id for e in h.rec_events)
        for s in h.search_events:
            counts.update(s.clicked_item_ids)
    keep = {i for i, c in counts.items() if c >= min_item_count}
    out = {}
    for uid, h in histories.items():
        searches = []
        for s in h.search_events:
            idx = [k for k, i in enumerate(s.clicked_item_ids) if i in keep]
            cats = tuple(s.clicked_categories[k] for k in idx) if s.clicked_categories else ()
            searches.append(replace(s, clicked_item_ids=tuple(s.clicked_item_ids[k] for k in idx),
                                    clicked_categories=cats))
        out[uid] = UserHistory(uid, [e for e in h.rec_events if e.item_id in keep], searches)
    return out


def filter_users(histories: dict[int, UserHistory], min_interactions: int = 5) -> dict[int, UserHistory]:
    """Keep users with enough recommendation events and at least one search."""
    return {
        uid: h
        for uid, h in histories.items()
        if h.n_rec >= max(min_interactions, 1) and h.n_search >= 1
    }


def truncate(history: UserHistory, max_rec_len: int, max_search_len: int) -> UserHistory:
    """Keep only the most recent events of each stream."""
    if max_rec_len < 1 or max_search_len < 1:
        raise ValueError("truncation limits must be >= 1")
    return UserHistory(history.user_id, history.rec_events[-max_rec_len:], history.search_events[-max_search_len:])


def leave_one_out_split(histories: dict[int, UserHistory]) -> DatasetSplit:
    """Last rec event -> test, second-to-last -> validation, the rest -> train.

    Each target is paired with every event strictly before it. Targets whose
    prefix lacks either recommendation or search history are dropped (both
    behaviors must be present), and counted in ``split.report``.
    """
    train, val, test = [], [], []
    too_short = []
    dropped = Counter()
    for uid, h in histories.items():
        if h.n_rec < 3:
            too_short.append(uid)
            continue
        search_ts = [s.timestamp for s in h.search_events]
        for idx in range(1, h.n_rec):
            ex = Example(h, idx)
            ts = ex.timestamp
            has_search = bool(search_ts) and search_ts[0] < ts
            bucket = "test" if idx == h.n_rec - 1 else "validation" if idx == h.n_rec - 2 else "train"
            if not has_search:
                dropped[bucket] += 1
                continue
            {"train": train, "validation": val, "test": test}[bucket].append(ex)
    report = {"too_short_users": too_short, "dropped_without_search": dict(dropped)}
    if too_short:
        logger.info("leave_one_out_split: %d user(s) with <3 rec events excluded", len(too_short))
    return DatasetSplit(train, val, test, report)


# ---------------------------------------------------------------------------
# negative sampling


def _sample_excluding(rng: np.random.Generator, n_items: int, n: int, exclude: set[int]) -> list[int]:
    """Draw ``n`` distinct ids from 1..n_items-1 avoiding ``exclude``."""
    available = n_items - 1 - len({i for i in exclude if 0 < i < n_items})
    if available < n:
        raise DataError(f"insufficient negatives: need {n}, only {available} candidate items")
    if available < 4 * n:
        pool = np.setdiff1d(np.arange(1, n_items), np.fromiter(exclude, np.int64, len(exclude)))
        return rng.choice(pool, size=n, replace=False).tolist()
    out: list[int] = []
    chosen: set[int] = set()
    while len(out) < n:
        for i in rng.integers(1, n_items, size=2 * n + 8).tolist():
            if i not in exclude and i not in chosen:
                chosen.add(i)
                out.append(i)
                if len(out) == n:
                    break
    return out


def sample_eval_negatives(history: UserHistory, n_items: int, n: int = 99,
                          rng: np.random.Generator | int | None = None) -> list[int]:
    """Sample ``n`` distinct items the user never interacted with.

    ``n_items`` is the vocabulary size including the padding id 0.
    """
    rng = np.random.default_rng(rng)
    return _sample_excluding(rng, n_items, n, history.interacted_items())


def sample_train_negatives(target: int, n_items: int, n_minus_1: int,
                           rng: np.random.Generator | int | None = None,
                           exclude: set[int] | None = None) -> list[int]:
    """Negatives for one training example; never equal to ``target``."""
    if n_minus_1 == 0:
        return []
    rng = np.random.default_rng(rng)
    excl = {target} | (exclude or set())
    return _sample_excluding(rng, n_items, n_minus_1, excl)


# ---------------------------------------------------------------------------
# corpus


@dataclass
class Corpus:
    """Histories plus the catalogs needed to embed them."""

    histories: dict[int, UserHistory]
    query_terms: dict[int, tuple[int, ...]]
    item_category: dict[int, int]
    n_users: int
    n_items: int
    n_queries: int
    n_terms: int
    n_categories: int
    n_sources: int

    @classmethod
    def from_histories(cls, histories: dict[int, UserHistory], n_sources: int = 3) -> "Corpus":
        query_terms: dict[int, tuple[int, ...]] = {}
        item_category: dict[int, int] = {}
        max_item = max_term = max_cat = 0
        for h in histories.values():
            for e in h.rec_events:
                max_item = max(max_item, e.item_id)
                if e.category_id:
                    item_category.setdefault(e.item_id, e.category_id)
            for s in h.search_events:
                q = s.query
                if q.source_type >= n_sources:
                    raise DataError(f"source type {q.source_type} >= number of sources {n_sources}")
                prev = query_terms.setdefault(q.query_id, q.term_ids)
                if prev != q.term_ids:
                    logger.warning("query %d seen with differing terms; keeping first", q.query_id)
                max_term = max(max_term, *q.term_ids)
                for k, i in enumerate(s.clicked_item_ids):
                    max_item = max(max_item, i)
                    if s.clicked_categories and s.clicked_categories[k]:
                        item_category.setdefault(i, s.clicked_categories[k])
        max_cat = max(item_category.values(), default=0)
        return cls(
            histories=histories,
            query_terms=query_terms,
            item_category=item_category,
            n_users=max(histories, default=0) + 1,
            n_items=max_item + 1,
            n_queries=max(query_terms, default=0) + 1,
            n_terms=max_term + 1,
            n_categories=max_cat + 1,
            n_sources=n_sources,
        )

    @classmethod
    def load(cls, path: str | Path, n_sources: int = 3, min_item_count: int = 5,
             min_interactions: int = 5) -> "Corpus":
        """Read an event file (or a directory holding ``events.jsonl``)."""
        path = Path(path)
        if path.is_dir():
            path = path / "events.jsonl"
        if not path.exists():
            raise DataError(f"event file not found: {path}")
        histories = build_histories(read_events(path))
        if min_item_count > 1:
            histories = filter_items(histories, min_item_count)
        histories = filter_users(histories, min_interactions)
        if not histories:
            raise DataError(f"no users left after filtering {path}")
        return cls.from_histories(histories, n_sources)

    def category_lookup(self) -> np.ndarray:
        """Dense item -> category array (0 = unknown)."""
        lut = np.zeros(self.n_items, dtype=np.int64)
        for i, c in self.item_category.items():
            lut[i] = c
        return lut
