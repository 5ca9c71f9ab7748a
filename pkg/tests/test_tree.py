import itertools

import numpy as np
import pytest

from components.geometry import Bodies, Box, generate, global_bounds
from components.kernels import ExpansionOrder, evaluate_local, p2m
from components.tree import build, downward_pass, upward_pass
from utils.errors import ConfigurationError, DomainError


def build_tree(bodies, ncrit):
    return build(bodies, global_bounds(bodies), ncrit)


def octant_centers():
    points = [[0.25 + 0.5 * i, 0.25 + 0.5 * j, 0.25 + 0.5 * k] for i, j, k in itertools.product((0, 1), repeat=3)]
    return Bodies.from_arrays(points, np.ones(8))


def test_single_body_is_a_single_cell():
    tree = build_tree(Bodies.from_arrays([[0.1, 0.2, 0.3]], [1.0]), ncrit=16)
    assert len(tree.cells) == 1
    assert tree.cell(0).is_leaf
    assert tree.depth == 0


def test_octant_centers_give_eight_leaves():
    tree = build_tree(octant_centers(), ncrit=1)
    assert len(tree.cells) == 9
    leaves = tree.leaves()
    assert len(leaves) == 8
    np.testing.assert_array_equal(tree.cells.body_count[leaves], 1)
    assert tree.cells.child_index[0] == 1
    assert tree.cells.child_count[0] == 8


def test_leaf_sizes_respect_ncrit():
    tree = build_tree(generate("cube", 10_000, seed=1), ncrit=64)
    cells = tree.cells
    leaf = cells.child_count == 0
    assert np.all(cells.body_count[leaf] <= 64)
    assert np.all(cells.body_count[~leaf] > 64)


def test_build_permutes_bodies():
    bodies = generate("plummer", 2000, seed=2)
    tree = build_tree(bodies, ncrit=32)
    np.testing.assert_array_equal(np.sort(tree.bodies.id), np.arange(2000))
    np.testing.assert_array_equal(tree.bodies.position[np.argsort(tree.bodies.id)], bodies.position)


def test_children_are_contiguous_and_cover_parent_bodies():
    tree = build_tree(generate("plummer", 3000, seed=3), ncrit=16)
    cells = tree.cells
    for c in range(len(cells)):
        first, count = cells.child_index[c], cells.child_count[c]
        if count == 0:
            continue
        children = np.arange(first, first + count)
        np.testing.assert_array_equal(cells.parent[children], c)
        assert cells.body_count[children].sum() == cells.body_count[c]
        assert cells.body_index[children[0]] == cells.body_index[c]
        assert np.all(cells.level[children] == cells.level[c] + 1)


def test_tight_boxes_nest():
    tree = build_tree(generate("sphere", 2000, seed=4), ncrit=16)
    cells = tree.cells
    for c in range(1, len(cells)):
        parent = cells.parent[c]
        assert np.all(cells.box_min[parent] <= cells.box_min[c])
        assert np.all(cells.box_max[parent] >= cells.box_max[c])
    for c in tree.leaves():
        positions = tree.cell_bodies(c).position
        assert np.all(positions >= cells.box_min[c]) and np.all(positions <= cells.box_max[c])


def test_build_is_deterministic():
    bodies = generate("cube", 1000, seed=5)
    first, second = build_tree(bodies, 8), build_tree(bodies, 8)
    for name in ("key", "parent", "child_index", "body_index", "box_min", "box_max"):
        np.testing.assert_array_equal(getattr(first.cells, name), getattr(second.cells, name))


def test_build_rejects_bad_input():
    bodies = generate("cube", 10, seed=0)
    with pytest.raises(ConfigurationError):
        build_tree(bodies, ncrit=0)
    with pytest.raises(DomainError):
        build(bodies, Box((2, 2, 2), (3, 3, 3)), 4)


def test_cell_snapshot():
    tree = upward_pass(build_tree(octant_centers(), ncrit=1), 3)
    cell = tree.cell(3)
    assert cell.level == 1
    assert cell.body_count == 1
    assert cell.radius == 0.0
    assert cell.octant_box.contains(cell.exp_center)
    assert len(cell.M) == 10


def test_upward_single_charge_at_center():
    tree = upward_pass(build_tree(Bodies.from_arrays([[0.4, 0.5, 0.6]], [1.0]), ncrit=4), 5)
    expected = np.zeros(35)
    expected[0] = 1.0
    np.testing.assert_allclose(tree.M[0], expected, atol=1e-15)


def test_upward_root_matches_direct_p2m():
    order = ExpansionOrder(7)
    bodies = generate("cube", 500, seed=6)
    bodies.charge[:] = np.random.default_rng(6).uniform(-1, 1, 500)
    tree = upward_pass(build_tree(bodies, ncrit=8), order)
    assert tree.depth >= 2
    root_center = tree.cells.exp_center[0]
    direct = p2m(tree.bodies.position, tree.bodies.charge, root_center, order)
    np.testing.assert_allclose(tree.M[0], direct, rtol=1e-11, atol=1e-13)


def test_upward_on_empty_tree():
    tree = upward_pass(build(Bodies.empty(), Box((0, 0, 0), (1, 1, 1)), 4), 4)
    assert len(tree.cells) == 1
    np.testing.assert_array_equal(tree.M, 0.0)


def test_downward_with_zero_locals_is_a_no_op():
    tree = upward_pass(build_tree(generate("cube", 300, seed=7), ncrit=8), 4)
    downward_pass(tree)
    np.testing.assert_array_equal(tree.bodies.potential, 0.0)
    np.testing.assert_array_equal(tree.bodies.force, 0.0)


def test_downward_cascade_equals_root_evaluation():
    order = ExpansionOrder(6)
    tree = upward_pass(build_tree(generate("cube", 400, seed=8), ncrit=8), order)
    tree.L[0] = np.random.default_rng(8).standard_normal(order.coeff_count)
    downward_pass(tree)
    potential, gradient = evaluate_local(tree.L[0], tree.cells.exp_center[0], tree.bodies.position, order)
    np.testing.assert_allclose(tree.bodies.potential, potential, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(tree.bodies.force, gradient, rtol=1e-12, atol=1e-12)


def test_as_source_needs_upward_pass():
    tree = build_tree(generate("cube", 10, seed=0), ncrit=4)
    with pytest.raises(ValueError):
        tree.as_source()
    upward_pass(tree, 3)
    view = tree.as_source(rank=2)
    assert view.rank == 2
    assert view.M is tree.M
