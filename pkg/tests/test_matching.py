from itertools import permutations, product

import numpy as np
import pytest

from src.exceptions import DimensionError, InstanceTooLargeError
from src.matching import (BIG, CostMatrix, brute_force, count_injections,
                          hungarian)


@pytest.mark.parametrize("values, match", [
    ([[1, 2], [2, 1]], (0, 1)),
    ([[2, 1], [1, 2]], (1, 0)),
])
def test_two_by_two_optimum(values, match):
    """
    GIVEN a 2 x 2 cost matrix with a unique optimum of cost 2
    WHEN it is solved with either matcher
    THEN both report the optimal match vector and cost
    """
    for solver in (hungarian, brute_force):
        assignment = solver(CostMatrix(values))
        assert assignment.match == match
        assert assignment.total_cost == 2.0
        assert assignment.infeasible_rows == ()


def test_single_row_takes_its_minimum():
    assert brute_force(CostMatrix([[4.5]])).match == (0,)
    assert brute_force(CostMatrix([[4.5]])).total_cost == 4.5
    assignment = brute_force(CostMatrix([[3, 1, 2]]))
    assert assignment.match == (1,)
    assert assignment.total_cost == 1.0


def test_hungarian_matches_brute_force_on_random_instances():
    """
    GIVEN 1000 random 5 x 8 cost matrices
    WHEN each is solved by both matchers
    THEN the optimal costs agree within 1e-9 and every match is injective
    """
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        c = CostMatrix(rng.random((5, 8)))
        fast, exact = hungarian(c), brute_force(c)
        assert fast.total_cost == pytest.approx(exact.total_cost, abs=1e-9)
        assert len(set(fast.match)) == 5
        assert all(0 <= j < 8 for j in fast.match)


def random_shapes(rng, count, max_rows=6, max_cols=10):
    for _ in range(count):
        rows = int(rng.integers(1, max_rows + 1))
        yield rows, int(rng.integers(rows, max_cols + 1))


def test_matchers_agree_across_the_shape_envelope():
    """
    GIVEN 1000 random matrices with G in [1, 6] and K in [G, 10], half of
    them with small integer entries so that ties are common
    WHEN each is solved by both matchers
    THEN the match vectors are identical and the costs agree within 1e-9
    """
    rng = np.random.default_rng(17)
    for n, (rows, cols) in enumerate(random_shapes(rng, 1000)):
        if n % 2:
            values = rng.integers(0, 4, size=(rows, cols))
        else:
            values = rng.random((rows, cols))
        c = CostMatrix(values)
        fast, exact = hungarian(c), brute_force(c)
        assert fast.match == exact.match
        assert fast.total_cost == pytest.approx(exact.total_cost, abs=1e-9)


def smallest_optimal_matches(rows, cols):
    """Every integer matrix of the shape with its lexicographic first optimum."""
    grid = np.array(list(product(range(4), repeat=rows * cols)))
    grid = grid.reshape(-1, rows, cols)
    maps = np.array(list(permutations(range(cols), rows)))
    costs = grid[:, np.arange(rows), maps].sum(axis=-1)
    return grid, maps[np.argmin(costs, axis=1)]


@pytest.mark.parametrize("rows, cols", [(2, 2), (2, 3), (3, 3)])
def test_hungarian_on_every_small_integer_matrix(rows, cols):
    """
    GIVEN every matrix of the shape with entries in {0, 1, 2, 3}
    WHEN it is solved with the Hungarian matcher
    THEN the match is the lexicographically smallest optimal one
    """
    grid, expected = smallest_optimal_matches(rows, cols)
    for values, match in zip(grid, expected):
        assert hungarian(CostMatrix(values)).match == tuple(match)


@pytest.mark.parametrize("rows, cols", [(2, 2), (2, 3)])
def test_brute_force_on_every_small_integer_matrix(rows, cols):
    grid, expected = smallest_optimal_matches(rows, cols)
    for values, match in zip(grid, expected):
        assert brute_force(CostMatrix(values)).match == tuple(match)


def test_tied_permutations_resolve_to_the_smallest_match():
    """
    GIVEN [[1, 0], [2, 1]], where both maps cost 2
    WHEN it is solved by both matchers
    THEN both return (0, 1)
    """
    c = CostMatrix([[1, 0], [2, 1]])
    assert hungarian(c).match == brute_force(c).match == (0, 1)


@pytest.mark.parametrize("factor", [0.5, 7.3, 1000.0])
def test_scaling_costs_keeps_the_match(factor):
    rng = np.random.default_rng(5)
    for n, (rows, cols) in enumerate(random_shapes(rng, 300)):
        if n % 2:
            values = rng.integers(0, 4, size=(rows, cols)).astype(float)
        else:
            values = rng.random((rows, cols))
        assert hungarian(CostMatrix(values * factor)).match == \
            hungarian(CostMatrix(values)).match


def test_permuting_rows_permutes_the_match():
    """
    GIVEN random real-valued matrices, whose optimum is unique
    WHEN their rows are shuffled before solving
    THEN the match vector is shuffled the same way
    """
    rng = np.random.default_rng(6)
    for rows, cols in random_shapes(rng, 300):
        values = rng.random((rows, cols))
        order = rng.permutation(rows)
        match = np.array(hungarian(CostMatrix(values)).match)
        assert hungarian(CostMatrix(values[order])).match == \
            tuple(match[order])


def test_identical_rows_report_ascending_columns():
    """
    GIVEN a matrix whose rows are equal, so any permutation of the chosen
    columns is optimal
    WHEN it is solved by both matchers
    THEN both report the chosen columns in ascending order
    """
    c = CostMatrix([[0.5, 0.1, 0.9, 0.2]] * 3)
    for solver in (hungarian, brute_force):
        assert solver(c).match == (0, 1, 3)


def test_all_equal_entries_give_the_smallest_match_vector():
    c = CostMatrix(np.ones((3, 5)))
    assert hungarian(c).match == brute_force(c).match == (0, 1, 2)


def test_total_cost_is_the_sum_of_matched_entries():
    rng = np.random.default_rng(8)
    values = rng.random((4, 6))
    assignment = hungarian(CostMatrix(values))
    assert assignment.total_cost == pytest.approx(
        sum(values[i, j] for i, j in enumerate(assignment.match)))


def test_infeasible_rows_are_reported():
    """
    GIVEN a row whose every entry is the BIG sentinel
    WHEN the matrix is solved
    THEN that row is listed as infeasible and the others are not
    """
    c = CostMatrix([[0.2, 0.3, 0.9], [BIG, BIG, BIG]])
    assignment = hungarian(c)
    assert assignment.infeasible_rows == (1,)
    assert assignment.match[0] == 0


@pytest.mark.parametrize("values", [[[1.0], [2.0]], [], [[np.nan, 1.0]],
                                    [[np.inf, 1.0]]])
def test_bad_cost_matrices_are_rejected(values):
    with pytest.raises(DimensionError):
        CostMatrix(values)


def test_brute_force_guards_against_huge_instances():
    """
    GIVEN a 10 x 300 matrix with far too many injective maps
    WHEN brute force is asked to solve it
    THEN InstanceTooLargeError is raised before enumerating anything
    """
    assert count_injections(5, 8) == 6720
    with pytest.raises(InstanceTooLargeError):
        brute_force(CostMatrix(np.zeros((10, 300))))
