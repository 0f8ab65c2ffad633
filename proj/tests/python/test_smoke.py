import math

import numpy as np
import pytest

import paincast


def test_dtw_hand_cases():
    d, path = paincast.dtw_distance(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 2.0, 3.0]))
    assert d == 0.0
    assert path[0] == (0, 0) and path[-1] == (2, 3)
    d, _ = paincast.dtw_distance(np.array([0.0, 0.0]), np.array([1.0]))
    assert abs(d - math.sqrt(2.0)) < 1e-12


def test_dtw_missing_cells():
    q = np.array([[1.0, np.nan], [2.0, 5.0]])
    c = np.array([[1.0, 4.0], [2.0, 5.0]])
    d, _ = paincast.dtw_distance(q, c)
    assert d == 0.0
    with pytest.raises(paincast.PaincastError):
        paincast.dtw_distance(np.array([[np.nan, 1.0]]), np.array([[1.0, np.nan]]))


def test_dba_and_kmeans():
    rng = np.random.default_rng(0)
    low = [rng.normal(0.0, 0.1, 12) for _ in range(5)]
    high = [rng.normal(5.0, 0.1, 12) for _ in range(5)]
    centroid, trace = paincast.dba(low)
    assert centroid.shape == (12, 1)
    assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))
    labels, centroids, inertia = paincast.kmeans_dtw(low + high, k=2, seed=3)
    assert len(set(labels[:5])) == 1 and len(set(labels[5:])) == 1
    assert labels[0] != labels[5]
    assert len(centroids) == 2 and inertia >= 0.0
    assert paincast.nmi(labels, [0] * 5 + [1] * 5) == pytest.approx(1.0)


def test_stats():
    rng = np.random.default_rng(1)
    walk = np.cumsum(rng.normal(size=500))
    assert not paincast.adf_test(walk)["reject_5"]
    noise = rng.normal(size=500)
    assert paincast.adf_test(noise)["reject_5"]
    a = paincast.acf(noise, 10)
    assert a["values"][0] == 1.0 and len(a["values"]) == 11
    model = paincast.arima_grid_search(walk)
    assert model["d"] == 1
    assert len(paincast.arima_forecast(walk, 0, 1, 0, 3)) == 3


def test_metrics():
    assert paincast.auroc_binary(np.array([0.1, 0.4, 0.35, 0.8]), [0, 0, 1, 1]) == 0.75
    assert paincast.mae(np.array([1.0, 2.0]), np.array([2.0, 4.0])) == 1.5
    assert paincast.r2(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0])) == 1.0
    scores = np.eye(3)[[0, 1, 2, 2, 1, 0]]
    assert paincast.auroc_macro(scores, [0, 1, 2, 2, 1, 0]) == 1.0


def test_synth_and_experiments(tmp_path):
    paincast.set_threads(1)
    n = paincast.synth(tmp_path, n_patients=6, n_years=2, seed=2)
    assert n > 0
    assert (tmp_path / "truth.csv").exists()
    st = paincast.run_short_term(
        tmp_path,
        horizons=[1],
        models=["rf", "arima"],
        scenarios=["mixed"],
        runs=1,
        stride=4,
    )
    assert {c["model"] for c in st["cells"]} == {"rf", "arima"}
    lt = paincast.run_long_term(tmp_path, k=2, models=["rf"])
    assert [c["test_year"] for c in lt["cells"]] == [2]
    with pytest.raises(paincast.PaincastError):
        paincast.run_short_term(tmp_path, models=["prophet"])
