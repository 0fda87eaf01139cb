"""Shape features, the hinge-loss SVM against a convex solver, instances."""

import numpy as np
import pytest

from plantsne import (LEAF, STEM, InputError, InstanceParams, PointCloud,
                      TrainingError, TsneConfig, fit_svm, instance_segment,
                      load_model, point_features, save_model,
                      superpoint_features)
from plantsne.segment import (SvmModel, classify, classify_cloud,
                              majority_labels, shape_ratios, train_svm)


# ---------------------------------------------------------------------------
# Oracle

def cvxpy_objective(features, labels, C):
    """Primal hinge-loss optimum on the same standardized features."""
    import cvxpy as cp
    f = np.asarray(features, dtype=np.float64)
    mu = f.mean(axis=0)
    sd = f.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    x = (f - mu) / sd
    y = np.where(np.asarray(labels) == LEAF, 1.0, -1.0)
    w = cp.Variable(x.shape[1])
    b = cp.Variable()
    objective = 0.5 * cp.sum_squares(w) + C * cp.sum(
        cp.pos(1 - cp.multiply(y, x @ w + b)))
    problem = cp.Problem(cp.Minimize(objective))
    problem.solve()
    return float(problem.value)


def hinge_objective(model: SvmModel, features, labels):
    x = (np.asarray(features) - model.feature_means) / model.feature_stds
    y = np.where(np.asarray(labels) == LEAF, 1.0, -1.0)
    margins = 1.0 - y * (x @ model.weights + model.bias)
    return (0.5 * float(model.weights @ model.weights)
            + model.C * float(np.maximum(margins, 0.0).sum()))


# ---------------------------------------------------------------------------
# Shape features

def test_shape_ratios_closed_forms():
    assert shape_ratios((2.0, 1.0, 1.0)) == pytest.approx((0.5, 0.0, 0.5))
    assert shape_ratios((1.0, 1.0, 1.0)) == pytest.approx((0.0, 0.0, 1.0))
    assert shape_ratios((1.0, 0.0, 0.0)) == pytest.approx((1.0, 0.0, 0.0))


def test_point_features_line_and_plane():
    t = np.arange(40, dtype=np.float64)
    line = np.column_stack([t, np.zeros(40), np.zeros(40)])
    f = point_features(line, radii=(5.0,))
    # Interior line points: pure anisotropy.
    np.testing.assert_allclose(f[20], [1.0, 0.0, 0.0], atol=1e-12)

    g = np.arange(-10, 11, dtype=np.float64)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    plane = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])
    f = point_features(plane, radii=(4.0,))
    center = np.nonzero((plane[:, 0] == 0) & (plane[:, 1] == 0))[0][0]
    np.testing.assert_allclose(f[center], [1.0, 1.0, 0.0], atol=1e-12)


def test_point_features_isolated_points_are_zero():
    pts = np.array([[0.0, 0, 0], [100.0, 0, 0], [200.0, 0, 0]])
    f = point_features(pts, radii=(4.0, 5.0, 6.0))
    np.testing.assert_array_equal(f, np.zeros((3, 9)))


def test_point_features_radius_is_strict():
    # Neighbors at exactly r do not count, so the pair stays featureless.
    pts = np.array([[0.0, 0, 0], [4.0, 0, 0], [8.0, 0, 0]])
    f = point_features(pts, radii=(4.0,))
    np.testing.assert_array_equal(f, np.zeros((3, 3)))


def test_superpoint_features_are_member_means():
    rng = np.random.default_rng(41)
    f = rng.normal(size=(30, 9))
    a = rng.integers(0, 4, size=30)
    while len(np.unique(a)) < 4:
        a = rng.integers(0, 4, size=30)
    got = superpoint_features(f, a)
    for k in range(4):
        np.testing.assert_allclose(got[k], f[a == k].mean(axis=0), atol=1e-12)


def test_majority_labels_and_tie_rule():
    sem = np.array([LEAF, LEAF, STEM, STEM, LEAF, STEM])
    a = np.array([0, 0, 0, 1, 1, 2])
    got = majority_labels(sem, a)
    np.testing.assert_array_equal(got, [LEAF, LEAF, STEM])
    # Exact tie goes to Leaf.
    got = majority_labels(np.array([LEAF, STEM]), np.array([0, 0]))
    assert got[0] == LEAF


# ---------------------------------------------------------------------------
# SVM

def test_fit_svm_matches_convex_solver():
    rng = np.random.default_rng(42)
    worst = 0.0
    for trial in range(12):
        n = int(rng.integers(10, 40))
        d = int(rng.integers(2, 9))
        x = rng.normal(size=(n, d)) + rng.normal(size=d)
        y = np.where(rng.uniform(size=n) < 0.5, LEAF, STEM)
        if len(np.unique(y)) < 2:
            y[0] = LEAF
            y[1] = STEM
        c = float(rng.choice([0.1, 1.0, 10.0]))
        model = fit_svm(x, y, C=c)
        ours = hinge_objective(model, x, y)
        ref = cvxpy_objective(x, y, c)
        rel = (ours - ref) / max(ref, 1e-12)
        worst = max(worst, rel)
        assert rel < 1e-6, f"trial {trial}: {ours} vs {ref}"
    assert worst < 1e-6


def test_fit_svm_separable_case():
    rng = np.random.default_rng(43)
    x = np.vstack([rng.normal(0.0, 0.3, size=(20, 3)),
                   rng.normal(4.0, 0.3, size=(20, 3))])
    y = np.array([LEAF] * 20 + [STEM] * 20)
    model = fit_svm(x, y, C=10.0)
    np.testing.assert_array_equal(classify(model, x), y)


def test_fit_svm_single_class_rejected():
    x = np.random.default_rng(44).normal(size=(10, 3))
    with pytest.raises(TrainingError):
        fit_svm(x, np.full(10, LEAF))


def test_fit_svm_is_deterministic():
    rng = np.random.default_rng(45)
    x = rng.normal(size=(30, 5))
    y = np.where(rng.uniform(size=30) < 0.5, LEAF, STEM)
    y[:2] = [LEAF, STEM]
    a = fit_svm(x, y)
    b = fit_svm(x, y)
    assert a.weights.tobytes() == b.weights.tobytes()
    assert a.bias == b.bias


def test_decision_boundary_convention():
    # A decision value of exactly zero classifies as Leaf.
    model = SvmModel(np.array([1.0]), 0.0, np.array([0.0]), np.array([1.0]), 1.0)
    got = classify(model, np.array([[0.0], [1.0], [-1.0]]))
    np.testing.assert_array_equal(got, [LEAF, LEAF, STEM])


def test_classify_cloud_broadcasts():
    cloud = PointCloud(np.zeros((4, 3)))
    model = SvmModel(np.array([1.0]), 0.0, np.array([0.0]), np.array([1.0]), 1.0)
    feats = np.array([[1.0], [-1.0]])
    out = classify_cloud(model, feats, np.array([0, 0, 1, 1]), cloud)
    np.testing.assert_array_equal(out.semantic_labels, [LEAF, LEAF, STEM, STEM])


def test_train_svm_majority_labels_superpoints():
    rng = np.random.default_rng(46)
    feats = np.vstack([rng.normal(0.0, 0.2, size=(3, 4)),
                       rng.normal(3.0, 0.2, size=(3, 4))])
    sem = np.array([LEAF] * 30 + [STEM] * 30)
    assignments = np.concatenate([np.repeat(np.arange(3), 10),
                                  np.repeat(np.arange(3, 6), 10)])
    model = train_svm(feats, sem, assignments)
    np.testing.assert_array_equal(classify(model, feats),
                                  [LEAF, LEAF, LEAF, STEM, STEM, STEM])


def test_model_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(47)
    x = rng.normal(size=(20, 9))
    y = np.where(rng.uniform(size=20) < 0.5, LEAF, STEM)
    y[:2] = [LEAF, STEM]
    model = fit_svm(x, y, C=2.5)
    path = tmp_path / "model.txt"
    save_model(path, model, radii=(4.0, 5.0, 6.0))
    back, radii = load_model(path)
    assert radii == (4.0, 5.0, 6.0)
    assert back.weights.tobytes() == model.weights.tobytes()
    assert back.bias == model.bias
    assert back.C == model.C
    np.testing.assert_array_equal(back.feature_means, model.feature_means)
    np.testing.assert_array_equal(back.feature_stds, model.feature_stds)


def test_load_model_rejects_unknown_keys(tmp_path):
    path = tmp_path / "model.txt"
    path.write_text("weights=1.0\nbogus=3\n")
    with pytest.raises(InputError):
        load_model(path)


# ---------------------------------------------------------------------------
# Instance segmentation

def test_instance_segment_tiny_cloud_single_instance():
    cloud = PointCloud(np.random.default_rng(48).normal(size=(3, 3)),
                       semantic_labels=np.full(3, LEAF))
    out = instance_segment(cloud)
    np.testing.assert_array_equal(out.instance_labels, [0, 0, 0])


def test_instance_segment_empty_rejected():
    with pytest.raises(InputError):
        instance_segment(PointCloud(np.zeros((0, 3))))


def test_instance_segment_two_leaves(tiny_plant):
    leaf = tiny_plant.subset(tiny_plant.semantic_labels == LEAF)
    out = instance_segment(
        leaf,
        InstanceParams(perplexity=40.0, d_E=2.0),
        TsneConfig(n_iter=250, seed=0))
    assert len(out) == len(leaf)
    # Found instances match the generator's leaves as a partition.
    k = out.instance_labels.max() + 1
    assert k == len(np.unique(leaf.instance_labels))
    from conftest import assert_same_partition
    assert_same_partition(out.instance_labels, leaf.instance_labels)


def test_instance_segment_is_deterministic(tiny_plant):
    leaf = tiny_plant.subset(tiny_plant.semantic_labels == LEAF)
    cfg = TsneConfig(n_iter=120, early_exaggeration_iters=40, seed=5)
    a = instance_segment(leaf, InstanceParams(perplexity=30.0), cfg)
    b = instance_segment(leaf, InstanceParams(perplexity=30.0), cfg)
    assert a.instance_labels.tobytes() == b.instance_labels.tobytes()
