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
# # Model components on a single batch
#
# A forward pass exposes the co-attention scores and the similar/dissimilar
# split of both sequences. The loss is broken into its parts.

# %%
import numpy as np
import torch

from sesrec.config import TrainConfig
from sesrec.data import Corpus, build_histories, filter_users, leave_one_out_split
from sesrec.model import SESRec
from sesrec.synthetic import SynthConfig, generate_synthetic
from sesrec.trainer import make_collator

torch.manual_seed(0)
corpus = Corpus.from_histories(filter_users(build_histories(generate_synthetic(SynthConfig(n_users=50)).events)))
split = leave_one_out_split(corpus.histories)
config = TrainConfig()
model = SESRec.for_corpus(corpus, config)
examples = split.test[:4]
batch = make_collator(config)(examples, np.array([[ex.target, 1, 2] for ex in examples]))

# %%
out = model(batch)
print("scores", out.scores.detach().numpy().round(3))
for row in out.dis.to_records(batch.users)[:2]:
    print(row["user"], "similar rec positions", row["P_r"], "dissimilar", row["N_r"])

# %%
items = torch.tensor(sorted(corpus.item_category))[:32]
queries = torch.tensor(sorted(corpus.query_terms))[:32]
parts, _ = model.losses(batch, config, items, queries)
print({k: round(float(getattr(parts, k).detach()), 4) for k in ("rec", "ali", "con", "penalty", "total")})
