import pytest
import torch

# one-line verdicts from the acceptance module, echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)


@pytest.fixture
def float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


from sesrec.config import ModelConfig, TrainConfig  # noqa: E402
from sesrec.data import Corpus, build_histories, filter_users, leave_one_out_split  # noqa: E402
from sesrec.synthetic import SynthConfig, generate_synthetic  # noqa: E402


def tiny_config(**updates) -> TrainConfig:
    """A small model that trains in well under a second per epoch."""
    model = ModelConfig(d_i=8, d_q=8, d=8, item_attr_dim=3, query_term_dim=4, max_rec_len=6,
                        max_search_len=6, max_clicks=3, mlp_hidden=16)
    return TrainConfig(batch_size=32, max_epochs=3, patience=3, n_align_negatives=16,
                       model=model).with_updates(**updates)


def tiny_corpus(n_users=40, seed=0, **synth) -> Corpus:
    syn = generate_synthetic(SynthConfig(n_users=n_users, **synth), seed=seed)
    return Corpus.from_histories(filter_users(build_histories(syn.events)))


@pytest.fixture(scope="session")
def corpus():
    return tiny_corpus()


@pytest.fixture(scope="session")
def split(corpus):
    return leave_one_out_split(corpus.histories)


def fd_problem(seed=0):
    """Model, batch and negatives at d=4, T_r=T_s=3, N=2 for gradient checks."""
    import numpy as np

    from sesrec.model import SESRec
    from sesrec.trainer import make_collator

    model_cfg = ModelConfig(d_i=4, d_q=4, d=4, item_attr_dim=2, query_term_dim=2, max_rec_len=3,
                            max_search_len=3, max_clicks=2, mlp_hidden=4)
    config = TrainConfig(alpha=0.1, beta=0.001, n_negatives=1, model=model_cfg, seed=seed)
    corpus = tiny_corpus(n_users=12, seed=seed, n_items=30, n_queries=20, n_terms=25, n_categories=6)
    split = leave_one_out_split(corpus.histories)
    examples = [ex for ex in split.test if ex.n_rec >= 3 and len(ex.prefix.search_events) >= 3][:2]
    rng = np.random.default_rng(seed)
    cands = np.array([[ex.target, next(i for i in rng.permutation(np.arange(1, corpus.n_items))
                                       if i not in ex.history.interacted_items())] for ex in examples])
    torch.manual_seed(seed)
    model = SESRec.for_corpus(corpus, config)
    # larger weights than the training init so every gradient is comfortably non-zero
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.3 * torch.randn_like(p))
        model.align.tau.fill_(0.5)
    batch = make_collator(config)(examples, cands)
    items = np.array(sorted(corpus.item_category))
    queries = np.array(sorted(corpus.query_terms))
    neg_items = torch.from_numpy(rng.choice(items, 3, replace=False))
    neg_queries = torch.from_numpy(rng.choice(queries, 3, replace=False))
    return model, batch, config, neg_items, neg_queries
