import pytest
import torch

from conftest import fd_problem, tiny_config
from sesrec.model import SESRec
from sesrec.trainer import finite_difference_check, make_collator


def test_fd_problem_shape():
    _, batch, _, _, _ = fd_problem()
    assert batch.rec_items.shape == (2, 3) and batch.queries.shape == (2, 3)
    assert batch.candidates.shape == (2, 2)


@pytest.mark.parametrize("seed", [0, 1])
def test_full_loss_gradient(seed):
    model, batch, config, neg_i, neg_q = fd_problem(seed)
    report = finite_difference_check(model, batch, config, neg_i, neg_q)
    assert not report["selection_changed"]
    assert report["hinge_min_abs"] > 1e-6
    assert report["max_error"] < 1e-4, report["errors"]


def test_every_group_receives_gradient():
    model, batch, config, neg_i, neg_q = fd_problem()
    parts, _ = model.double().losses(
        type(batch)(**{k: (v.double() if v.is_floating_point() else v) for k, v in vars(batch).items()}),
        config, neg_i, neg_q)
    parts.total.backward()
    silent = [n for n, p in model.named_parameters() if p.grad is None or not torch.any(p.grad != 0)]
    assert silent == []


def test_forward_shapes_and_range(corpus, split):
    cfg = tiny_config()
    model = SESRec.for_corpus(corpus, cfg)
    batch = make_collator(cfg)(split.test[:5], [[ex.target, 1, 2] for ex in split.test[:5]])
    out = model(batch)
    assert out.scores.shape == (5, 3)
    assert torch.all((out.scores > 0) & (out.scores < 1))


def test_base_configuration_width(corpus):
    cfg = tiny_config(use_mie=False)
    model = SESRec.for_corpus(corpus, cfg)
    m = cfg.model
    assert model.mlp.in_dim == 2 * m.d + m.d_i + m.d_u


def test_penalty_ignores_tau(corpus, split):
    cfg = tiny_config()
    model = SESRec.for_corpus(corpus, cfg)
    batch = make_collator(cfg)(split.test[:2], [[ex.target] for ex in split.test[:2]])
    before = model.penalty(batch)
    with torch.no_grad():
        model.align.tau.fill_(100.0)
    assert torch.equal(model.penalty(batch), before)
