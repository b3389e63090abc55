import csv
import json
import math

import numpy as np
import pytest
import torch

from conftest import tiny_config, tiny_corpus
from sesrec.trainer import (
    AdamMoments,
    CheckpointError,
    EarlyStopping,
    TrainingError,
    adam_step,
    holdout_metrics,
    load_checkpoint,
    save_checkpoint,
    train,
)
from sesrec.model import SESRec


def adam_oracle(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


class TestAdam:
    def test_zero_grad(self):
        p = torch.tensor([1.0, 2.0], dtype=torch.float64)
        zero = torch.zeros(2, dtype=torch.float64)
        mom = AdamMoments.zeros_like([p])
        adam_step([p], [zero], mom, lr=0.1)
        assert torch.equal(p, torch.tensor([1.0, 2.0], dtype=torch.float64))
        mom.m[0] += 0.5
        mom.v[0] += 0.2
        adam_step([p], [zero], mom, lr=0.1)
        assert torch.allclose(mom.m[0], torch.full((2,), 0.45, dtype=torch.float64))
        assert torch.allclose(mom.v[0], torch.full((2,), 0.2 * 0.999, dtype=torch.float64))

    def test_single_step(self):
        p = torch.tensor([0.0], dtype=torch.float64)
        adam_step([p], [torch.tensor([1.0], dtype=torch.float64)], AdamMoments.zeros_like([p]), lr=0.01)
        assert float(p) == pytest.approx(-0.01, rel=1e-6)

    def test_ten_step_oracle(self):
        rng = np.random.default_rng(0)
        grads = rng.normal(size=(10, 3))
        p = torch.tensor([0.3, -1.0, 2.0], dtype=torch.float64)
        mom = AdamMoments.zeros_like([p])
        for g in grads:
            adam_step([p], [torch.from_numpy(g)], mom, lr=0.05)
        want = [adam_oracle(x, grads[:, i], 0.05) for i, x in enumerate([0.3, -1.0, 2.0])]
        np.testing.assert_allclose(p.numpy(), want, atol=1e-10)


class TestEarlyStopping:
    def test_decreasing_stops_after_second_epoch(self):
        es = EarlyStopping(patience=1)
        assert es.update(0.5) and not es.stop
        assert not es.update(0.4) and es.stop

    def test_patience_counts_consecutive(self):
        es = EarlyStopping(patience=2)
        for m in (0.1, 0.05, 0.2, 0.1):
            es.update(m)
        assert not es.stop and es.best == 0.2
        es.update(0.1)
        assert es.stop


class TestTraining:
    def test_smoke_loss_decreases(self, corpus, split):
        res = train(corpus, tiny_config(learning_rate=0.01, seed=1), split)
        losses = [row["L"] for row in res.history]
        assert len(losses) == 3 and losses[2] < losses[0]

    def test_lr_zero_leaves_parameters(self, corpus, split):
        cfg = tiny_config(learning_rate=0.0, max_epochs=1)
        torch.manual_seed(cfg.seed)
        before = SESRec.for_corpus(corpus, cfg).state_dict()
        after = train(corpus, cfg, split).model.state_dict()
        assert all(torch.equal(before[k], after[k]) for k in before)

    def test_deterministic(self, corpus, split):
        cfg = tiny_config(max_epochs=2)
        a, b = train(corpus, cfg, split), train(corpus, cfg, split)
        assert a.history == b.history

    def test_logged_components_sum(self, corpus, split):
        cfg = tiny_config(max_epochs=1)
        res = train(corpus, cfg, split, log_batches=True)
        for row in res.batch_log:
            want = row["L_rec"] + cfg.alpha * row["L_ali"] + cfg.beta * row["L_con"] + row["L_reg"]
            assert abs(row["L"] - want) < 1e-6

    def test_best_epoch_is_returned(self, corpus, split):
        res = train(corpus, tiny_config(max_epochs=4, learning_rate=0.01), split)
        vals = [row["val_NDCG@10"] for row in res.history]
        assert res.best_epoch == 1 + int(np.argmax(vals))
        assert res.best_metric == max(vals)

    def test_log_file(self, corpus, split, tmp_path):
        train(corpus, tiny_config(max_epochs=2), split, log_path=tmp_path / "log.csv")
        rows = list(csv.DictReader(open(tmp_path / "log.csv")))
        assert [r["epoch"] for r in rows] == ["1", "2"]
        assert {"L_rec", "L_ali", "L_con", "L", "val_NDCG@10"} <= set(rows[0])

    def test_non_finite_loss_aborts(self, corpus, split, monkeypatch):
        original = SESRec.losses

        def poisoned(self, *args, **kwargs):
            parts, out = original(self, *args, **kwargs)
            parts.total = parts.total * float("nan")
            return parts, out

        monkeypatch.setattr(SESRec, "losses", poisoned)
        with pytest.raises(TrainingError, match="epoch 1, batch 0"):
            train(corpus, tiny_config(max_epochs=1), split)

    def test_empty_split(self, corpus):
        from sesrec.data import DatasetSplit

        with pytest.raises(TrainingError):
            train(corpus, tiny_config(), DatasetSplit([], [], [], {}))


@pytest.fixture(scope="module")
def trained(corpus, split, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "model.pt"
    res = train(corpus, tiny_config(max_epochs=2), split, checkpoint_path=path)
    return res, path


class TestCheckpoint:
    def test_round_trip_metrics(self, corpus, trained):
        res, path = trained
        model, cfg, moments, meta = load_checkpoint(path)
        assert meta["epoch"] == res.best_epoch and moments.step > 0
        res2 = type(res)(model, cfg, res.history, res.best_epoch, res.best_metric, res.split)
        assert holdout_metrics(res, corpus).metrics == holdout_metrics(res2, corpus).metrics

    def test_round_trip_forward_bitwise(self, trained):
        res, path = trained
        model, *_ = load_checkpoint(path)
        a, b = res.model.state_dict(), model.state_dict()
        assert all(torch.equal(a[k], b[k]) for k in a)

    def test_sidecar(self, trained):
        res, path = trained
        meta = json.loads(open(str(path) + ".json").read())
        assert {"version", "config_hash", "epoch", "metric"} <= set(meta)
        assert meta["config_hash"] == res.config.hash()

    def test_corrupted(self, trained, tmp_path):
        _, path = trained
        bad = tmp_path / "bad.pt"
        bad.write_bytes(path.read_bytes()[:100])
        (tmp_path / "bad.pt.json").write_text(open(str(path) + ".json").read())
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)

    def test_version_mismatch(self, trained, tmp_path):
        _, path = trained
        meta = json.loads(open(str(path) + ".json").read())
        meta["version"] = 99
        other = tmp_path / "v.pt"
        other.write_bytes(path.read_bytes())
        (tmp_path / "v.pt.json").write_text(json.dumps(meta))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(other)

    def test_hash_mismatch_warns(self, trained):
        _, path = trained
        with pytest.warns(UserWarning, match="config hash"):
            load_checkpoint(path, expected_config=tiny_config(d=16, d_i=16, d_q=16))


def test_save_without_moments(tmp_path, corpus):
    cfg = tiny_config()
    model = SESRec.for_corpus(corpus, cfg)
    save_checkpoint(tmp_path / "m.pt", model, cfg)
    loaded, *_ = load_checkpoint(tmp_path / "m.pt")
    assert torch.equal(loaded.emb.item.weight, model.emb.item.weight)


def test_different_seeds_differ():
    corpus = tiny_corpus(n_users=30, seed=3)
    a = train(corpus, tiny_config(max_epochs=1, seed=0))
    b = train(corpus, tiny_config(max_epochs=1, seed=1))
    assert a.history != b.history
