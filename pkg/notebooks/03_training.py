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
# # Training, early stopping and checkpoints
#
# A short run on a small corpus. Validation NDCG@10 drives early stopping
# and the best epoch's weights are kept.

# %%
import tempfile
from pathlib import Path

from sesrec.config import TrainConfig
from sesrec.data import Corpus, build_histories, filter_users
from sesrec.synthetic import SynthConfig, generate_synthetic
from sesrec.trainer import TrainResult, holdout_metrics, load_checkpoint, train

corpus = Corpus.from_histories(filter_users(build_histories(generate_synthetic(SynthConfig(n_users=300)).events)))
config = TrainConfig(max_epochs=4, seed=0)
tmp = Path(tempfile.mkdtemp())
result = train(corpus, config, log_path=tmp / "epochs.csv", checkpoint_path=tmp / "model.pt")
for row in result.history:
    print({k: round(v, 4) if isinstance(v, float) else v for k, v in row.items()})
print("best epoch", result.best_epoch)

# %%
metrics = holdout_metrics(result, corpus).metrics
model, cfg, _, _ = load_checkpoint(tmp / "model.pt")
reloaded = holdout_metrics(TrainResult(model, cfg, [], 0, 0.0, result.split), corpus).metrics
print(metrics)
print("identical after reload:", metrics == reloaded)
