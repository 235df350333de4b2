"""Triplet mining, proxy assignment, hinge loss, recall."""

import numpy as np
import pytest

from lorentzkit import lhier, lmath
from lorentzkit.engine import finite_diff_check
from lorentzkit.engine import node as N
from lorentzkit.errors import UsageError
from lorentzkit.lhier import (
    ProxySet,
    TripletBatch,
    assign_proxies,
    lhier_loss,
    mine_triplets,
    pairwise_dist,
    recall_at_k,
)
from lorentzkit.manifold import ManifoldHandle


def _emb(space, K=1.0):
    return np.asarray(lmath.expmap0_space(np.asarray(space, dtype=float), K))


class TestMining:
    def test_two_tight_clusters(self):
        rng = np.random.default_rng(0)
        c1 = _emb(np.array([2.0, 0, 0]) + rng.normal(0, 0.01, (4, 3)))
        c2 = _emb(np.array([-2.0, 0, 0]) + rng.normal(0, 0.01, (4, 3)))
        emb = np.concatenate([c1, c2])
        batch = mine_triplets(emb, 1.0, 3, seed=0)
        assert len(batch) == 24  # all ordered intra-cluster pairs
        for i, j, k in zip(batch.i, batch.j, batch.k):
            assert (i < 4) == (j < 4)
            assert (k < 4) != (i < 4)

    def test_pair_plus_far_point(self):
        emb = _emb([[0, 0, 0], [0, 0, 0], [3, 0, 0]])
        batch = mine_triplets(emb, 1.0, 1, seed=1)
        triples = sorted(zip(batch.i.tolist(), batch.j.tolist(), batch.k.tolist()))
        assert triples == [(0, 1, 2), (1, 0, 2)]

    def test_all_identical_gives_empty_batch(self):
        emb = _emb(np.zeros((6, 3)))
        batch = mine_triplets(emb, 1.0, 3, seed=2)
        assert len(batch) == 0
        assert float(np.asarray(lhier_loss(batch, emb, emb, 1.0))) == 0.0

    def test_determinism(self):
        rng = np.random.default_rng(3)
        emb = _emb(rng.normal(size=(12, 3)))
        b1 = mine_triplets(emb, 1.0, 3, seed=7)
        b2 = mine_triplets(emb, 1.0, 3, seed=7)
        assert np.array_equal(b1.k, b2.k)

    def test_batch_too_small(self):
        with pytest.raises(UsageError):
            mine_triplets(_emb(np.zeros((3, 3))), 1.0, 2, seed=0)


class TestAssignProxies:
    def test_single_proxy(self):
        prox = _emb([[0.5, 0, 0]])
        x = _emb([[1, 0, 0], [0.9, 0, 0], [-1, 0, 0]])
        assert assign_proxies(x[0], x[1], x[2], prox, 1.0) == (0, 0)

    def test_nearest_selected(self):
        prox = _emb([[5.0, 0, 0], [1.0, 0, 0]])
        x = _emb([[1, 0, 0], [1.1, 0, 0], [0.9, 0, 0]])
        rho_ij, rho_ijk = assign_proxies(x[0], x[1], x[2], prox, 1.0)
        assert rho_ij == 1 and rho_ijk == 1

    def test_argmin_invariant_under_uniform_scaling(self):
        rng = np.random.default_rng(4)
        emb = _emb(rng.normal(size=(6, 3)))
        prox = _emb(rng.normal(size=(4, 3)))
        d = np.asarray(pairwise_dist(emb, prox, 1.0))
        batch = TripletBatch(np.array([0, 1]), np.array([2, 3]), np.array([4, 5]), 0.1)
        a = lhier._assign_batch(d, batch)
        b = lhier._assign_batch(3.7 * d, batch)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestLoss:
    def test_satisfied_hinges_zero(self):
        # pair next to rho_ij, negative next to rho_ijk, both margins cleared
        prox = _emb([[2.0, 0, 0], [-2.0, 0, 0]])
        emb = _emb([[2.0, 0.01, 0], [2.0, -0.01, 0], [-2.0, 0, 0.01]])
        batch = TripletBatch(np.array([0]), np.array([1]), np.array([2]), margin=0.1)
        loss = lhier_loss(batch, emb, prox, 1.0, assignments=([0], [1]))
        assert float(np.asarray(loss)) == 0.0

    def test_three_hinge_expansion(self):
        prox = _emb([[0.7, 0, 0], [-0.7, 0, 0]])
        D = float(lmath.dist(prox[0], prox[1], 1.0))
        emb = np.stack([prox[0], prox[0], prox[1]])
        batch = TripletBatch(np.array([0]), np.array([1]), np.array([2]), margin=0.1)
        for delta in (0.1, D + 0.5):
            batch = TripletBatch(np.array([0]), np.array([1]), np.array([2]),
                                 margin=delta)
            loss = float(np.asarray(lhier_loss(batch, emb, prox, 1.0,
                                               assignments=([0], [1]))))
            # coincident points sit at the arccosh clamp floor (~1.4e-6 each)
            assert loss == pytest.approx(3 * max(0.0, delta - D), abs=1e-5)

    def test_nonnegative(self):
        rng = np.random.default_rng(5)
        emb = _emb(rng.normal(size=(10, 3)))
        prox = _emb(rng.normal(size=(4, 3)))
        batch = mine_triplets(emb, 1.0, 3, seed=0)
        assert float(np.asarray(lhier_loss(batch, emb, prox, 1.0))) >= 0.0

    def test_gradcheck_away_from_kinks(self):
        rng = np.random.default_rng(6)
        emb = _emb(rng.normal(size=(8, 3)) * 0.8)
        prox = _emb(rng.normal(size=(4, 3)) * 0.5)
        batch = mine_triplets(emb, 1.0, 2, seed=1)
        d = np.asarray(pairwise_dist(emb, prox, 1.0))
        rij, rijk = lhier._assign_batch(d, batch)

        def f(ls):
            return lhier_loss(batch, N.as_node(emb), ls[0], 1.0,
                              assignments=(rij, rijk))

        rep = finite_diff_check(f, [prox], h=1e-6, tol=1e-4)
        assert rep.ok, rep.max_rel_err


class TestProxySet:
    def test_init_on_manifold_near_origin(self):
        h = ManifoldHandle("px", 5)
        ps = ProxySet(h, count=64, rng=np.random.default_rng(0))
        assert ps.count == 64
        assert float(lmath.residual(ps.slot.value, h.K).max()) < 1e-10
        assert float(np.max(lmath.dist0(ps.slot.value, h.K))) < 0.2


class TestRecall:
    def test_separated_clusters(self):
        rng = np.random.default_rng(7)
        emb = np.concatenate([
            _emb(np.array([3.0, 0, 0]) + rng.normal(0, 0.05, (4, 3))),
            _emb(np.array([-3.0, 0, 0]) + rng.normal(0, 0.05, (4, 3)))])
        labels = np.array([0] * 4 + [1] * 4)
        assert recall_at_k(emb, labels, 1, 1.0) == 1.0

    def test_permuted_labels_near_half(self):
        vals = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            emb = _emb(rng.normal(size=(200, 4)))
            labels = np.array([0, 1] * 100)
            rng.shuffle(labels)
            vals.append(recall_at_k(emb, labels, 1, 1.0))
        assert abs(float(np.mean(vals)) - 0.5) < 0.05

    def test_k_at_least_n_minus_one(self):
        rng = np.random.default_rng(8)
        emb = _emb(rng.normal(size=(10, 3)))
        labels = np.array([0, 0, 1, 1, 2, 2, 3, 3, 4, 4])
        assert recall_at_k(emb, labels, 9, 1.0) == 1.0
        assert recall_at_k(emb, labels, 50, 1.0) == 1.0

    def test_needs_two_points(self):
        with pytest.raises(UsageError):
            recall_at_k(_emb(np.zeros((1, 3))), np.array([0]), 1, 1.0)


class TestTrainingDirection:
    def test_smoothed_loss_decreases_over_50_epochs(self, tmp_path):
        """Smoothed regularized loss trends down in at least 9/10 seeds."""
        from lorentzkit.harness.config import ExperimentConfig
        from lorentzkit.harness import train

        good = 0
        for seed in range(10):
            cfg = ExperimentConfig(task="train-metric", seed=seed, precision="f32",
                                   epochs=50, weight_decay=0.01)
            out = tmp_path / f"s{seed}"
            train.train_metric(cfg, out)
            rows = (out / "metrics.csv").read_text().splitlines()[1:]
            losses = [float(r.split(",")[3]) for r in rows if ",loss," in r]
            good += float(np.mean(losses[-5:])) < float(np.mean(losses[:5]))
        assert good >= 9, f"loss decreased in only {good}/10 seeds"
