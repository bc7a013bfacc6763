import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from latentview.alignment import TrainConfig
from latentview.baselines import (REPORT_FIELDS, FineGrainedHistory, compare_methods, evaluate_late_pool,
                                  fine_grained_scores, late_pool_predict, orientation_experiment,
                                  train_fine_grained, train_late_pool, write_orientation_csv,
                                  write_report_csv)
from latentview.data import DataConfig, generate_dataset
from latentview.geometry import build_setup, enumerate_candidates
from latentview.inference import predict, view_terms
from latentview.model import NetConfig, forward

from conftest import random_stack

SMALL_NET = NetConfig(image_shape=(8, 8), hidden=(32,))


def test_late_pool_examples():
    assert late_pool_predict([[0.2, 0.5, 0.3]]) == 1
    assert late_pool_predict([[0.1, 0.5, 0.4], [0.0, 0.05, 0.95]]) == 2
    assert late_pool_predict([[0.5, 0.5], [0.5, 0.5]]) == 0
    with pytest.raises(ValueError):
        late_pool_predict([])


@given(st.integers(0, 2**31), st.integers(1, 8))
def test_late_pool_ignores_view_order(seed, views):
    s = np.random.default_rng(seed).dirichlet(np.ones(4), size=views)
    assert late_pool_predict(s) == late_pool_predict(s[::-1]) == int(np.argmax(s.sum(axis=0)))


@given(st.integers(0, 2**31), st.sampled_from([2, 5]))
def test_late_pool_on_log_scores_is_identity_only_decision(seed, N):
    rng = np.random.default_rng(seed)
    P = random_stack(rng, 12, N)
    P[:, :, N] = 0.2  # uniform incorrect-view column
    ident = enumerate_candidates(build_setup("I", 30))[:1]
    per_view = [view_terms(P[i])[i] for i in range(12)]
    assert late_pool_predict(per_view) == predict(list(P), ident, range(12)).y_hat


def test_fine_grained_single_class_is_view_classification():
    probs = np.random.default_rng(0).dirichlet(np.ones(12), size=5)
    assert fine_grained_scores(probs, 1, 12).shape == (5, 1)
    np.testing.assert_allclose(fine_grained_scores(probs, 1, 12, "sum"), 1.0)
    assert (probs.reshape(5, 1, 12)[:, 0].argmax(axis=1) == probs.argmax(axis=1)).all()
    with pytest.raises(ValueError):
        fine_grained_scores(probs, 1, 12, "mean")


def test_fine_grained_marginals():
    probs = np.array([[0.3, 0.3, 0.4, 0.0]])  # N=2, M=2
    assert fine_grained_scores(probs, 2, 2).tolist() == [[0.3, 0.4]]
    assert fine_grained_scores(probs, 2, 2, "sum").tolist() == [[0.6, 0.4]]


@pytest.fixture(scope="module")
def small():
    return generate_dataset(DataConfig(n_classes=2, n_train=6, n_test=3, image_size=8, theta=60), 0)


def test_fine_grained_learns_joint_labels(default_dataset):
    net, hist = train_fine_grained(default_dataset, NetConfig(), TrainConfig(epochs=10, variance_every=0))
    N, M = 4, 12
    assert hist.epochs == list(range(1, 11))
    # joint label accuracy on the training split, chance is 1/48
    hits = 0
    for s in default_dataset.train:
        pred = forward(net, s.images)[:, 0, :].argmax(axis=1)
        hits += int((pred == s.y * M + s.gt_view_of_image).sum())
    assert hits / (len(default_dataset.train) * M) > 5 / (N * M)


def test_tradeoff_summary():
    h = FineGrainedHistory([0, 1, 2], [0, 10, 20], [0.5, 0.9, 0.8], [0.1, 0.5, 0.7])
    t = h.tradeoff()
    assert t["view_up"] and t["class_down_from_peak"]
    assert (t["class_peak"], t["class_peak_epoch"]) == (0.9, 1)


def test_late_pool_beats_chance(small):
    net = train_late_pool(small, SMALL_NET, TrainConfig(epochs=15, variance_every=0))
    m = evaluate_late_pool(small.test, net, 6, trials=5)
    assert m.class_acc > 0.5 and np.isnan(m.view_acc)


def test_spheres_are_orientation_invariant():
    cfg = DataConfig(n_classes=2, n_train=3, n_test=2, image_size=8, variant="spheres")
    result = orientation_experiment(lambda t: generate_dataset(replace(cfg, orientation_trial=t), 0),
                                    SMALL_NET, TrainConfig(epochs=3, variance_every=0), trials=4)
    accs = [r["class_acc"] for r in result["rows"]]
    assert [r["orientation"] for r in result["rows"]] == [1, 2, 3, 4]
    assert max(accs) - min(accs) < 1e-12
    assert result["std"] < 1e-12


def test_orientation_csv_schema(tmp_path):
    write_orientation_csv({"rows": [{"orientation": 1, "class_acc": 0.5}], "mean": 0.5, "std": 0.0},
                          tmp_path / "o.csv")
    rows = list(csv.reader(open(tmp_path / "o.csv")))
    assert rows[0] == ["orientation", "class_acc"]
    assert rows[-2][0] == "mean" and rows[-1][0] == "std"


def test_compare_report_schema(tmp_path, small):
    rows = compare_methods(small, SMALL_NET, TrainConfig(epochs=2, variance_every=0), views=[1, 6], trials=2)
    assert [(r["method"], r["views_used"]) for r in rows] == [
        (m, v) for m in ("latent_viewpoint", "late_pool_average", "fine_grained") for v in (1, 6)]
    write_report_csv(rows, tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as f:
        assert next(csv.reader(f)) == REPORT_FIELDS
