"""Synthetic plant generator: labels, determinism, geometry guarantees."""

import numpy as np
import pytest

from scipy.spatial import cKDTree

from plantsne import (LEAF, STEM, GenerationError, InputError, PlantSpec,
                      generate)


def connected_components_3d(points, d):
    parent = list(range(len(points)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in cKDTree(points).query_pairs(d):
        parent[find(i)] = find(j)
    return len({find(i) for i in range(len(points))})


def test_default_plant_has_exact_labels():
    plant = generate(PlantSpec(seed=0))
    assert plant.semantic_labels is not None
    assert plant.instance_labels is not None
    # Stems and petioles share instance 0; leaves are 1..n.
    assert set(np.unique(plant.instance_labels[plant.semantic_labels == STEM])) == {0}
    leaf_ids = np.unique(plant.instance_labels[plant.semantic_labels == LEAF])
    np.testing.assert_array_equal(leaf_ids, np.arange(1, 6))


def test_same_seed_same_plant():
    a = generate(PlantSpec(n_leaves=6, seed=9))
    b = generate(PlantSpec(n_leaves=6, seed=9))
    assert a.points.tobytes() == b.points.tobytes()
    assert a.semantic_labels.tobytes() == b.semantic_labels.tobytes()
    c = generate(PlantSpec(n_leaves=6, seed=10))
    assert a.points.tobytes() != c.points.tobytes()


def test_leafless_plant_is_all_stem():
    plant = generate(PlantSpec(n_leaves=0, seed=0))
    assert set(np.unique(plant.semantic_labels)) == {STEM}


def test_leaves_are_euclidean_separable_in_3d():
    # The overlap constraint keeps blades apart, so clustering the leaf
    # points at twice the sampling pitch recovers exactly the leaf count.
    for seed in range(4):
        spec = PlantSpec(n_leaves=4 + seed, seed=seed)
        plant = generate(spec)
        leaf_pts = plant.points[plant.semantic_labels == LEAF]
        found = connected_components_3d(leaf_pts, 2.0 * spec.point_spacing)
        assert found == spec.n_leaves, f"seed {seed}"


def test_bow_lifts_blades_out_of_plane():
    flat = generate(PlantSpec(noise_std=0.0, bow=0.0, seed=2))
    bowed = generate(PlantSpec(noise_std=0.0, bow=0.6, seed=2))
    assert len(flat) == len(bowed)
    shift = np.linalg.norm(flat.points - bowed.points, axis=1)
    assert shift[flat.semantic_labels == STEM].max() == 0.0
    assert shift[flat.semantic_labels == LEAF].max() > 1.0


def test_impossible_layout_raises():
    # Ten huge leaves cannot keep their required gaps on a short stem.
    with pytest.raises(GenerationError):
        generate(PlantSpec(n_leaves=10, leaf_size_range=(40.0, 40.0),
                           stem_height=20.0, seed=0))


def test_plant_spec_validation():
    with pytest.raises(InputError):
        PlantSpec(n_leaves=-1)
    with pytest.raises(InputError):
        PlantSpec(stem_height=0.0)
    with pytest.raises(InputError):
        PlantSpec(leaf_size_range=(5.0, 3.0))
    with pytest.raises(InputError):
        PlantSpec(noise_std=-0.1)
