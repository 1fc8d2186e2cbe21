import itertools
import math

import numpy as np
import pytest

import bnt


def pairwise_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_gram_schmidt_rows_are_orthonormal():
    e = bnt.gram_schmidt(bnt.xavier_uniform(10, 100, seed=3))
    assert e.shape == (10, 100)
    np.testing.assert_allclose(e @ e.T, np.eye(10), atol=1e-12)


def test_gram_schmidt_rejects_dependent_rows():
    with pytest.raises(bnt.DegenerateBasis):
        bnt.gram_schmidt(np.ones((2, 4)))


def test_eigh_matches_numpy():
    rng = np.random.default_rng(0)
    a = rng.uniform(-1, 1, (6, 6))
    a = a + a.T
    values, vectors = bnt.symmetric_eigh(a)
    np.testing.assert_allclose(values, np.sort(np.linalg.eigvalsh(a))[::-1], atol=1e-10)
    np.testing.assert_allclose(a @ vectors, vectors * values, atol=1e-9)


def test_ocread_matches_numpy_softmax():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(8, 8))
    centers = bnt.gram_schmidt(bnt.xavier_uniform(3, 8, seed=1))
    p, pooled = bnt.ocread(z, centers)
    logits = z @ centers.T
    expected = np.exp(logits - logits.max(axis=1, keepdims=True))
    expected /= expected.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(p, expected, atol=1e-12)
    np.testing.assert_allclose(pooled, expected.T @ z, atol=1e-12)


def test_forward_is_deterministic_and_finite():
    config = bnt.ModelConfig()
    config.nodes = 16
    params = bnt.init_params(config, seed=5)
    mats, labels, sites, ids = bnt.generate_dataset(nodes=16, subjects_per_class=4, sites=2, seed=9)
    a = bnt.forward(mats[0], params, config)
    b = bnt.forward(mats[0], params, config)
    assert a["logits"] == b["logits"]
    assert 0.0 < a["probability"] < 1.0
    np.testing.assert_allclose(a["assignment"].sum(axis=1), 1.0, atol=1e-12)
    assert config.readout == "ocread"
    assert params.tensors()["centers"].shape == (4, 16)


def test_generated_matrices_are_correlations():
    mats, labels, sites, ids = bnt.generate_dataset(nodes=12, modules=3, subjects_per_class=5, sites=2, seed=4)
    assert mats.shape == (10, 12, 12)
    assert sorted(labels.tolist()) == [0] * 5 + [1] * 5
    for m in mats:
        np.testing.assert_array_equal(m, m.T)
        np.testing.assert_array_equal(np.diag(m), 1.0)
        assert np.linalg.eigvalsh(m).min() > -1e-6


def test_auroc_matches_pair_counting():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(4, 60))
        scores = rng.integers(0, 5, n).astype(float).tolist()
        labels = [0, 1] + rng.integers(0, 2, n - 2).tolist()
        assert bnt.auroc(scores, labels) == pytest.approx(pairwise_auroc(scores, labels), abs=1e-12)


def test_auroc_requires_both_classes():
    with pytest.raises(ValueError):
        bnt.auroc([0.1, 0.2], [1, 1])


def test_stratified_split_bound():
    labels = [0] * 23 + [1] * 17 + [0] * 9
    sites = [0] * 40 + [1] * 9
    fractions = (0.7, 0.1, 0.2)
    plan = bnt.stratified_split(labels, sites, fractions, seed=1)
    parts = [plan["train"], plan["val"], plan["test"]]
    assert sorted(i for p in parts for i in p) == list(range(49))
    for cell in {(s, y) for s, y in zip(sites, labels)}:
        members = {i for i, key in enumerate(zip(sites, labels)) if key == cell}
        for part, f in zip(parts, fractions):
            assert abs(len(members & set(part)) - f * len(members)) <= 1.0


def test_two_dimensional_functional_grows_with_angle():
    values = [bnt.variance_functional_2d(k * math.pi / 8)[0] for k in range(5)]
    assert values[0] == 0.0
    assert all(b > a for a, b in zip(values, values[1:]))


def test_monte_carlo_close_to_quadrature():
    phi = math.pi / 3
    centers = np.array([[1.0, 0.0], [math.cos(phi), math.sin(phi)]])
    value, se = bnt.variance_functional_mc(centers, 3.0, 100000, seed=7)
    exact, _ = bnt.variance_functional_2d(phi, 3.0)
    assert abs(value - exact) < 4 * se


def test_vif_of_correlated_columns():
    rng = np.random.default_rng(3)
    u = rng.normal(size=500)
    w = rng.normal(size=500)
    design = np.column_stack([u, 0.6 * u + 0.8 * w, rng.normal(size=500)])
    vifs, r2, mean = bnt.vif(design)
    for p in range(3):
        others = np.column_stack([np.ones(500), np.delete(design, p, axis=1)])
        beta, *_ = np.linalg.lstsq(others, design[:, p], rcond=None)
        resid = design[:, p] - others @ beta
        centred = design[:, p] - design[:, p].mean()
        expected_r2 = 1 - resid @ resid / (centred @ centred)
        assert r2[p] == pytest.approx(expected_r2, abs=1e-10)
        assert vifs[p] == pytest.approx(1 / (1 - expected_r2), rel=1e-9)
    assert mean == pytest.approx(sum(vifs) / 3)


def test_short_training_run():
    mats, labels, sites, _ = bnt.generate_dataset(nodes=8, modules=2, subjects_per_class=20, sites=2, seed=1)
    model = bnt.ModelConfig()
    model.nodes = 8
    model.layers = 1
    model.mlp_hidden = [16]
    tc = bnt.TrainConfig()
    tc.epochs = 3
    tc.batch_size = 8
    result = bnt.train(mats, labels.tolist(), sites.tolist(), model=model, train=tc)
    assert len(result["train_loss"]) == 3
    assert 1 <= result["selected_epoch"] <= 3
    assert 0.0 <= result["test"]["auroc"] <= 1.0


def test_bad_config_raises():
    config = bnt.ModelConfig()
    config.heads = 0
    with pytest.raises(ValueError):
        config.validate()
    with pytest.raises(ValueError):
        config.readout = "median"
