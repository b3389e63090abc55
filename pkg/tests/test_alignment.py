import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sesrec.alignment import (
    QueryItemAlignment,
    align_loss,
    infonce_i2q,
    infonce_q2i,
    pair_similarity,
)

pytestmark = pytest.mark.usefixtures("float64")


def oracle_q2i(Q, I, pairing, negs, W, tau):
    total = 0.0
    for k, j in enumerate(pairing):
        pos = math.exp(math.tanh(Q[j] @ W @ I[k]) / tau)
        den = pos + sum(math.exp(math.tanh(Q[j] @ W @ n) / tau) for n in negs)
        total += -math.log(pos / den)
    return total / len(pairing)


def oracle_i2q(Q, I, pairing, negs, W, tau):
    total = 0.0
    for k, j in enumerate(pairing):
        pos = math.exp(math.tanh(Q[j] @ W @ I[k]) / tau)
        den = pos + sum(math.exp(math.tanh(n @ W @ I[k]) / tau) for n in negs)
        total += -math.log(pos / den)
    return total / len(pairing)


class TestPairSimilarity:
    def test_zero_matrix(self):
        assert float(pair_similarity(torch.randn(4), torch.randn(4), torch.zeros(4, 4))) == 0.0

    def test_orthogonal(self):
        p = torch.tensor([1.0, 0, 0, 0])
        q = torch.tensor([0, 1.0, 0, 0])
        assert float(pair_similarity(p, q, torch.eye(4))) == 0.0

    def test_oracle(self):
        rng = np.random.default_rng(0)
        p, q, W = rng.normal(size=8), rng.normal(size=8), rng.normal(size=(8, 8)) / 8
        got = float(pair_similarity(*map(torch.from_numpy, (p, q, W))))
        assert abs(got - math.tanh(p @ W @ q)) < 1e-9

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            pair_similarity(torch.randn(3), torch.randn(4), torch.eye(4))


class TestInfoNCE:
    def test_equal_scores_ln2(self):
        q = torch.tensor([[1.0, 0.0]])
        i = torch.tensor([[0.5, 0.5]])
        W = torch.eye(2)
        assert math.isclose(float(infonce_q2i(q, i, [0], i.clone(), W, 0.07)), math.log(2), abs_tol=1e-12)
        assert math.isclose(float(infonce_i2q(q, i, [0], q.clone(), W, 0.07)), math.log(2), abs_tol=1e-12)

    def test_dominant_positive_limit(self):
        q = torch.tensor([[1.0, 0.0]])
        i = torch.tensor([[1.0, 0.0]])
        neg = torch.tensor([[-1.0, 0.0]])
        assert float(infonce_q2i(q, i, [0], neg, torch.eye(2), 1e-3)) < 1e-12
        assert float(infonce_i2q(q, i, [0], neg, torch.eye(2), 1e-3)) < 1e-12

    @pytest.mark.parametrize("fn,oracle", [(infonce_q2i, oracle_q2i), (infonce_i2q, oracle_i2q)])
    def test_brute_force_oracle(self, fn, oracle):
        rng = np.random.default_rng(1)
        Q, I = rng.normal(size=(2, 8)), rng.normal(size=(2, 8))
        negs, W = rng.normal(size=(4, 8)), rng.normal(size=(8, 8)) / 4
        got = float(fn(torch.from_numpy(Q), torch.from_numpy(I), [0, 1], torch.from_numpy(negs),
                       torch.from_numpy(W), 0.3))
        assert abs(got - oracle(Q, I, [0, 1], negs, W, 0.3)) < 1e-6

    def test_no_pairs_warns(self):
        with pytest.warns(UserWarning):
            assert float(infonce_q2i(torch.randn(1, 2), torch.zeros(0, 2), [], torch.randn(3, 2),
                                     torch.eye(2), 0.1)) == 0.0

    def test_no_negatives(self):
        with pytest.raises(ValueError):
            infonce_q2i(torch.randn(1, 2), torch.randn(1, 2), [0], torch.zeros(0, 2), torch.eye(2), 0.1)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 2.0))
    def test_non_negative(self, seed, tau):
        g = torch.Generator().manual_seed(seed)
        Q, I, N = (torch.randn(3, 4, generator=g) for _ in range(3))
        assert float(infonce_q2i(Q, I, [0, 1, 2], N, torch.eye(4), tau)) >= 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 1.0))
    def test_monotone_in_positive_score(self, seed, bump):
        g = torch.Generator().manual_seed(seed)
        q = torch.randn(1, 4, generator=g)
        i = torch.randn(1, 4, generator=g)
        N = torch.randn(5, 4, generator=g)
        W = torch.eye(4)
        base = float(infonce_q2i(q, i, [0], N, W, 0.5))
        # moving the positive toward q raises s(q, i+) and leaves the negatives alone
        closer = float(infonce_q2i(q, i + bump * q, [0], N, W, 0.5))
        assert closer <= base + 1e-12

    def test_gradient_check(self):
        g = torch.Generator().manual_seed(2)
        Q = torch.randn(2, 3, generator=g, requires_grad=True)
        I = torch.randn(2, 3, generator=g, requires_grad=True)
        N = torch.randn(4, 3, generator=g, requires_grad=True)
        W = (0.5 * torch.randn(3, 3, generator=g)).requires_grad_()
        tau = torch.tensor(0.4, requires_grad=True)

        def f(Q, I, N, W, tau):
            return align_loss(infonce_q2i(Q, I, [0, 1], N, W, tau), infonce_i2q(Q, I, [0, 1], N, W, tau))

        assert torch.autograd.gradcheck(f, (Q, I, N, W, tau), eps=1e-6, atol=1e-8, rtol=1e-4)


class TestAlignLoss:
    def test_definition(self):
        assert float(align_loss(torch.tensor(0.0), torch.tensor(0.0))) == 0.0
        assert float(align_loss(torch.tensor(1.0), torch.tensor(3.0))) == 2.0


class TestBatchLoss:
    def test_matches_per_pair_oracle(self):
        torch.manual_seed(0)
        mod = QueryItemAlignment(4, tau_init=0.5).double()
        Eq = torch.randn(2, 2, 4)
        Ec = torch.randn(2, 2, 3, 4)
        cmask = torch.tensor([[[True, True, False], [True, False, False]],
                              [[False, False, False], [False, False, False]]])
        qids = torch.tensor([[1, 2], [3, 0]])
        cids = torch.tensor([[[5, 6, 0], [7, 0, 0]], [[0, 0, 0], [0, 0, 0]]])
        negI, negQ = torch.randn(4, 4), torch.randn(3, 4)
        nid_i, nid_q = torch.tensor([9, 10, 11, 12]), torch.tensor([4, 5, 6])
        got = mod.batch_loss(Eq, Ec, cmask, qids, cids, negI, nid_i, negQ, nid_q)
        W, tau = mod.W_A.detach().numpy(), float(mod.tau.detach())
        Q = Eq[0].numpy()
        I = np.stack([Ec[0, 0, 0].numpy(), Ec[0, 0, 1].numpy(), Ec[0, 1, 0].numpy()])
        pairing = [0, 0, 1]
        want = 0.5 * (oracle_q2i(Q, I, pairing, negI.numpy(), W, tau)
                      + oracle_i2q(Q, I, pairing, negQ.numpy(), W, tau))
        assert abs(float(got[0].detach()) - want) < 1e-9
        assert float(got[1].detach()) == 0.0

    def test_own_item_masked_from_negatives(self):
        mod = QueryItemAlignment(2, tau_init=1.0).double()
        with torch.no_grad():
            mod.W_A.copy_(torch.eye(2))
        q = torch.tensor([[[1.0, 0.0]]])
        c = torch.tensor([[[[0.5, 0.5]]]])
        mask = torch.ones(1, 1, 1, dtype=torch.bool)
        # the only sampled negatives are the pair's own item and query: both dropped
        out = mod.batch_loss(q, c, mask, torch.tensor([[3]]), torch.tensor([[[7]]]),
                             c[0, 0], torch.tensor([7]), q[0], torch.tensor([3]))
        assert float(out[0].detach()) == 0.0

    def test_tau_clamp(self):
        mod = QueryItemAlignment(2, tau_min=1e-3)
        with torch.no_grad():
            mod.tau.fill_(-1.0)
        mod.clamp_()
        assert float(mod.tau.detach()) == pytest.approx(1e-3)
