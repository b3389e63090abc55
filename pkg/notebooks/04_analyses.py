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
# # Analyses: interest divergence, alignment cosine, ablation
#
# The JS report compares the category mix of the search and rec positions
# that the model selected as similar, and then those it selected as
# dissimilar. The cosine report compares query and clicked-item vectors for
# models trained with and without the alignment loss.

# %%
from sesrec.analysis import ablation, cosine_report, disentanglement_report, sweep
from sesrec.config import TrainConfig
from sesrec.data import Corpus, build_histories, filter_users, leave_one_out_split
from sesrec.synthetic import SynthConfig, generate_synthetic
from sesrec.trainer import train

corpus = Corpus.from_histories(filter_users(build_histories(generate_synthetic(SynthConfig(n_users=300)).events)))
split = leave_one_out_split(corpus.histories)
config = TrainConfig(max_epochs=3, seed=0)
with_ali = train(corpus, config, split)
without_ali = train(corpus, config.with_updates(alpha=0.0), split)

# %%
report = disentanglement_report(with_ali.model, corpus, split.test, config)
print("mean JS similar / dissimilar:", [round(v, 3) for v in report.means()],
      "strict fraction:", round(report.strict_fraction(), 3))

# %%
cos = cosine_report(with_ali.model, without_ali.model, corpus, split.test)
print({k: round(v["mean"], 3) for k, v in cos.items()})

# %%
small = config.with_updates(max_epochs=1)
for row in sweep("threshold_strategy", ["1/16", "1/8", "median", "mean"], small, corpus, split=split):
    print(row["threshold_strategy"], round(row["NDCG@10"], 4))
for row in ablation(small, corpus, split=split):
    print(row["model"], round(row["NDCG@10"], 4))
