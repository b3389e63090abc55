# ---
# jupyter:
#   jupytext:
#     formats: ipynb,py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Synthetic logs and sampled-ranking metrics
#
# The generator gives every user a few recommendation-interest categories.
# A fraction `overlap` of their searches lands in those categories and the
# rest in search-only categories, so the ground truth for "shared" versus
# "distinct" interests is known.

# %%
from collections import Counter

import numpy as np

from sesrec.data import Corpus, build_histories, filter_users, leave_one_out_split
from sesrec.evaluator import aggregate, metrics_for_rank, rank_of_target
from sesrec.synthetic import SynthConfig, generate_synthetic

data = generate_synthetic(SynthConfig(n_users=200, overlap=0.5), seed=0)
print(len(data.events), "events; search clicks inside rec interests:", round(data.overlap_fraction(), 3))
print(Counter(r["type"] for r in data.events))

# %% [markdown]
# Leave-one-out: the last rec item is the test target, the one before it the
# validation target, and everything earlier trains.

# %%
corpus = Corpus.from_histories(filter_users(build_histories(data.events)))
split = leave_one_out_split(corpus.histories)
print({k: len(getattr(split, k)) for k in ("train", "validation", "test")})

# %% [markdown]
# Ties are broken pessimistically: a target that ties with every negative
# ranks last.

# %%
print(rank_of_target(np.zeros(100)), metrics_for_rank(3))
rng = np.random.default_rng(0)
print(aggregate((u, rank_of_target(rng.normal(size=100))) for u in range(500)).metrics)
