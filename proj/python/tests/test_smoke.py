import json
import math

import numpy as np
import pytest

import stochrob as sr


def test_dataset_is_deterministic_and_balanced():
    X1, y1 = sr.gen_dataset("two_moons", n=1000, seed=3)
    X2, y2 = sr.gen_dataset("two_moons", n=1000, seed=3)
    assert X1.shape == (1000, 2)
    assert np.array_equal(X1, X2) and y1 == y2
    assert sum(y1) == 500
    assert X1.min() >= 0.0 and X1.max() <= 1.0


def test_fgm_has_length_eta():
    W = np.array([[0.0, 0.0], [3.0, 4.0]])
    model = sr.make_linear_gaussian(W, 0.0)
    spec = sr.AttackSpec(method="fgm_l2", eta=1.0, loss="neg_margin")
    r = sr.run_attack(model, np.array([0.1, 0.1]), 0, spec, seed=1)
    assert np.allclose(r.delta, [0.6, 0.8], atol=1e-15)
    assert not r.zero_gradient
    assert r.effective_length() == pytest.approx(1.0, abs=1e-12)


def test_linear_certificate_matches_deterministic_distance():
    W = np.array([[0.5, 0.0], [-0.5, 0.0]])
    model = sr.make_linear_gaussian(W, 0.0)
    x = np.array([2.0, 0.0])
    est = sr.Estimator(model, seed=1, S=1)
    cert = sr.linear_certificate(est, x, 0, np.array([-1.5, 0.0]))
    assert cert.certified
    assert cert.r_min == 2.0 == sr.deterministic_distance(model, x, 0)
    assert cert.per_class[0].cosine == -1.0
    smooth = sr.smooth_certificate(est, x, 0, np.array([-1.0, 0.0]), 0.5)
    assert smooth.per_class[0].V == -1.5
    assert smooth.r_min == pytest.approx(2.0 / 1.5)


def test_certificate_hypothesis_error():
    W = np.array([[1.0, 0.0], [-1.0, 0.0]])
    est = sr.Estimator(sr.make_linear_gaussian(W, 0.0), seed=1, S=1)
    with pytest.raises(sr.CertificateError):
        sr.linear_certificate(est, np.array([-1.0, 0.0]), 0, np.array([0.1, 0.0]))


def test_stochastic_mlp_and_training():
    X, y = sr.gen_dataset("blobs", n=300, noise=0.05, seed=2)
    model = sr.make_mlp([2, 8, 2], activation="tanh", seed=4, noise="additive_gaussian", sigma=0.05)
    trained, losses = sr.train(model, X, y, epochs=20, lr=0.02, seed=5)
    assert len(losses) == 20 and losses[-1] < losses[0]
    est = sr.Estimator(trained, seed=9, S=10, role="inference")
    acc = np.mean([est.classify(X[i]) == y[i] for i in range(len(y))])
    assert acc > 0.95
    assert est.per_sample_scores(X[0]).shape == (10, 2)
    again = sr.Model.from_json(trained.to_json())
    assert np.array_equal(again.params, trained.params)


def test_expected_norm_bounds():
    s = sr.gaussian_norm_stats(np.array([3.0, 0.0]), np.array([1.0, 1.0]), 200_000, seed=3)
    assert 3.0 < s["mean_norm"] < math.sqrt(11.0)


def test_clt_slope():
    rng = np.random.default_rng(0)
    model = sr.make_linear_gaussian(rng.normal(size=(3, 4)), 0.5)
    slope, r2 = sr.clt_scaling_check(model, rng.normal(size=4), 0, [1, 2, 4, 8, 16, 32], n_repeats=100)
    assert -1.1 <= slope <= -0.9 and r2 > 0.95


def test_smoothed_lipschitz_bound():
    model = sr.make_mlp([2, 8, 2], activation="tanh", seed=6)
    est = sr.Estimator.smoothed(model, sigma=0.5, m_noise=16, seed=1, S=1, noise_seed=2)
    assert 0.0 < sr.empirical_lipschitz(est, 0.0, 1.0, n_pairs=200, max_distance=0.05) <= 2 / 0.5**2


def test_sweep_rows_and_determinism():
    cfg = {
        "version": 1,
        "dataset": {"kind": "two_moons", "n": 200, "seed": 3},
        "model": {"hidden": [8], "activation": "tanh", "noise": {"kind": "additive_gaussian", "sigma": 0.1}},
        "train": {"epochs": 5},
        "grid": {"eta": [0.05, 0.1], "s_attack": [1, 4], "s_infer": [3]},
        "repeats": 1,
        "n_points": 30,
    }
    text = json.dumps(cfg)
    rows = sr.run_sweep(text)
    assert len(rows) == 4
    assert all(0.0 <= r["adv_acc"] <= 1.0 for r in rows)
    assert math.isnan(rows[0]["cert_smooth"])
    assert sr.sweep_csv(text) == sr.sweep_csv(text)
    assert json.loads(sr.normalize_config(text))["repeats"] == 1
    with pytest.raises(ValueError):
        sr.normalize_config('{"version": 1, "bogus": 1}')
