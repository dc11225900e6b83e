import math

import numpy as np
import pytest

from lwlm.iblab import DiscreteWorld, constant_world, exact_mi, one_hot_world, random_world, verify_bound
from oracles import mi_oracle


def test_exact_mi_examples():
    assert exact_mi(np.full((2, 2), 0.25)) == pytest.approx(0.0, abs=1e-15)
    assert exact_mi(np.diag([0.5, 0.5])) == pytest.approx(math.log(2), abs=1e-15)
    assert exact_mi([[1.0]]) == 0.0


def test_exact_mi_matches_oracle(rng):
    for _ in range(50):
        j = rng.dirichlet(np.ones(16) * rng.choice([0.1, 1.0])).reshape(4, 4)
        j[rng.random((4, 4)) < 0.2] = 0
        j /= j.sum()
        assert exact_mi(j) == pytest.approx(mi_oracle(j), abs=1e-12)
        assert exact_mi(j) >= 0


def test_exact_mi_zero_iff_factorized(rng):
    for _ in range(20):
        px, py = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(5))
        assert exact_mi(np.outer(px, py)) < 1e-12
        j = np.outer(px, py)
        j[0, 0] += 0.05
        j[0, 1] -= min(0.05, j[0, 1])
        j /= j.sum()
        assert exact_mi(j) > 1e-12


def test_exact_mi_errors():
    with pytest.raises(ValueError):
        exact_mi([[0.6, 0.6], [-0.1, -0.1]])
    with pytest.raises(ValueError):
        exact_mi([[0.3, 0.3], [0.3, 0.3]])


def test_world_validation():
    with pytest.raises(ValueError):
        DiscreteWorld([0.5, 0.6], np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        DiscreteWorld([0.5, 0.5], [[0.5, 0.6], [0.5, 0.5]], np.eye(2))
    with pytest.raises(ValueError):
        DiscreteWorld([0.5, 0.5], np.eye(2), np.eye(3))
    with pytest.raises(ValueError):
        DiscreteWorld([0.5, 0.5], np.eye(2), [[1.0, 0.0], [0.0, 0.0]])


def positive_joint_oracle(world):
    """p(o, o+) by enumerating labels and both observation draws."""
    emb = [tuple(e) for e in world.embeddings]
    codes = sorted(set(emb))
    idx = {c: i for i, c in enumerate(codes)}
    j = np.zeros((len(codes), len(codes)))
    for y in range(world.n_labels):
        for h1 in range(world.n_obs):
            for h2 in range(world.n_obs):
                j[idx[emb[h1]], idx[emb[h2]]] += world.label_pmf[y] * world.emission[y, h1] * world.emission[y, h2]
    return j


def test_joint_pmfs_match_enumeration(rng):
    for _ in range(10):
        w = random_world(rng)
        np.testing.assert_allclose(w.joint_code_positive(), positive_joint_oracle(w), atol=1e-14)
        assert w.joint_code_label().sum() == pytest.approx(1.0)


def test_data_processing_inequality(rng):
    for _ in range(200):
        w = random_world(rng)
        assert w.mi_positive() <= w.mi_label() + 1e-12


def test_sampled_pairs_follow_world():
    w = DiscreteWorld([0.3, 0.7], [[0.9, 0.1], [0.2, 0.8]], [[1.0, 0.0], [0.0, 1.0]])
    z1, z2 = w.sample_pairs(20000, 4, np.random.default_rng(0))
    codes, _ = w.code_map()
    # one-hot embeddings: argmax recovers the observation
    c1, c2 = codes[z1.argmax(-1).ravel()], codes[z2.argmax(-1).ravel()]
    emp = np.zeros((2, 2))
    np.add.at(emp, (c1, c2), 1)
    np.testing.assert_allclose(emp / emp.sum(), w.joint_code_positive(), atol=0.005)


def test_one_hot_world():
    w = one_hot_world(16)
    assert w.mi_label() == pytest.approx(math.log(16), abs=1e-12)
    assert w.mi_positive() == pytest.approx(math.log(16), abs=1e-12)
    r = verify_bound(w, 8, 0.1, 1000, np.random.default_rng(0))
    assert r["holds"] and r["avg_bound"] <= math.log(16)


def test_constant_world():
    w = constant_world(5, 7, np.random.default_rng(0))
    for n_bat in (2, 8):
        r = verify_bound(w, n_bat, 0.5, 1000, np.random.default_rng(1))
        assert r["mean_loss"] == pytest.approx(math.log(2 * n_bat - 1), abs=1e-9)
        assert r["avg_bound"] < 0 and r["mi_oo"] < 1e-12 and r["holds"]


def test_verify_bound_errors():
    w = one_hot_world(4)
    with pytest.raises(ValueError):
        verify_bound(w, 1, 0.1, 1000)
    with pytest.raises(ValueError):
        verify_bound(w, 4, 0.1, 999)


def test_bound_holds_on_random_worlds():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        w = random_world(rng)
        n_bat = int(rng.choice([2, 4, 8, 16]))
        tau = float(rng.choice([0.05, 0.1, 0.5, 1.0]))
        r = verify_bound(w, n_bat, tau, 1000, rng)
        assert r["holds"], r
