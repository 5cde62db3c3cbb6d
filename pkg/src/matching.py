"""Rectangular assignment between ground-truth rows and prediction columns.

``hungarian`` solves the G x K problem exactly; ``brute_force`` enumerates
every injective row-to-column map and is kept as an oracle for small
instances. Among optimal maps both return the lexicographically smallest
match vector, where costs within ``tolerance`` of the optimum count as
optimal.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from itertools import islice, permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from src.exceptions import DimensionError, InstanceTooLargeError

logger = logging.getLogger(__name__)

# Finite stand-in for an infeasible pairing.
BIG = 1e8
TIE_TOLERANCE = 1e-9
MAX_INJECTIONS = 10 ** 7
_CHUNK = 200_000


@dataclass(frozen=True)
class CostMatrix:
    """G x K matching costs; rows are ground truths, columns predictions."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1:
            raise DimensionError(
                f"Cost matrix needs at least one row, got shape "
                f"{values.shape}")
        if values.shape[1] < values.shape[0]:
            raise DimensionError(
                f"Cost matrix has more rows ({values.shape[0]}) than "
                f"columns ({values.shape[1]})")
        if not np.isfinite(values).all():
            raise DimensionError("Cost matrix entries must be finite")
        object.__setattr__(self, "values", values)

    @property
    def num_rows(self):
        return self.values.shape[0]

    @property
    def num_cols(self):
        return self.values.shape[1]

    def tolerance(self, optimum):
        """Slack under which two totals near ``optimum`` count as equal.

        Grows with the rounding error of a G-term sum, so totals that carry
        BIG entries still compare equal when they only differ in the order
        of summation.
        """
        scale = max(1.0, abs(optimum))
        return TIE_TOLERANCE + 8 * self.num_rows * float(np.spacing(scale))


@dataclass(frozen=True)
class Assignment:
    """Column matched to every row, with its total cost."""

    match: tuple
    total_cost: float
    infeasible_rows: tuple = ()


def _assignment(c: CostMatrix, match):
    match = tuple(int(j) for j in match)
    rows = np.arange(len(match))
    matched = c.values[rows, list(match)]
    infeasible = tuple(int(i) for i in np.flatnonzero(matched >= BIG / 2))
    return Assignment(match=match, total_cost=float(matched.sum()),
                      infeasible_rows=infeasible)


def _solve(values):
    """Optimal columns and cost of a rectangular block; rows may be empty."""
    if values.shape[0] == 0:
        return np.empty(0, dtype=int), 0.0
    rows, cols = linear_sum_assignment(values)
    match = np.empty(values.shape[0], dtype=int)
    match[rows] = cols
    return match, float(values[rows, cols].sum())


def _smallest_optimal(c: CostMatrix, match, optimum):
    """Rewrite an optimal match into the lexicographically smallest one.

    Row by row, the smallest free column that still admits an optimal
    completion of the remaining rows is fixed. A column is first tried by
    swapping it with its current owner; only when that is too expensive are
    the remaining rows re-solved without it.
    """
    values = c.values
    limit = optimum + c.tolerance(optimum)
    match = np.array(match, dtype=int)
    total = float(values[np.arange(c.num_rows), match].sum())
    free = np.ones(c.num_cols, dtype=bool)
    prefix = 0.0
    for i in range(c.num_rows):
        columns = np.flatnonzero(free)
        current = match[i]
        candidates = columns[columns < current]
        if candidates.size:
            owner = np.full(c.num_cols, -1)
            owner[match[i + 1:]] = np.arange(i + 1, c.num_rows)
            owners = owner[candidates]
            delta = values[i, candidates] - values[i, current] + np.where(
                owners >= 0,
                values[owners, current] - values[owners, candidates], 0.0)
            swap_ok = total + delta <= limit
            if swap_ok[0]:
                worth_solving = swap_ok
            else:
                _, bound = _solve(values[i + 1:][:, columns])
                worth_solving = swap_ok | (
                    prefix + values[i, candidates] + bound <= limit)
            for n in np.flatnonzero(worth_solving):
                j = candidates[n]
                if swap_ok[n]:
                    if owners[n] >= 0:
                        match[owners[n]] = current
                    match[i] = j
                    total += delta[n]
                    break
                rest = columns[columns != j]
                sub, cost = _solve(values[i + 1:][:, rest])
                if prefix + values[i, j] + cost <= limit:
                    match[i] = j
                    match[i + 1:] = rest[sub]
                    total = prefix + values[i, j] + cost
                    break
        prefix += values[i, match[i]]
        free[match[i]] = False
    return match


def hungarian(c: CostMatrix) -> Assignment:
    """Minimum-cost injective assignment of the G rows to the K columns."""
    logger.debug(f"Solving a {c.num_rows} x {c.num_cols} assignment")
    match, optimum = _solve(c.values)
    return _assignment(c, _smallest_optimal(c, match, optimum))


def count_injections(rows, cols):
    return math.perm(cols, rows)


def brute_force(c: CostMatrix) -> Assignment:
    """Exact minimum by enumerating every injective row-to-column map.

    Maps are visited in lexicographic order; a later map replaces the best
    one only when it is cheaper by more than the tie tolerance.
    """
    total = count_injections(c.num_rows, c.num_cols)
    if total > MAX_INJECTIONS:
        raise InstanceTooLargeError(
            f"{c.num_rows} x {c.num_cols} has {total} injections, more than "
            f"{MAX_INJECTIONS}")
    rows = np.arange(c.num_rows)
    maps = permutations(range(c.num_cols), c.num_rows)

    best_cost, best_match = math.inf, None
    while True:
        chunk = np.array(list(islice(maps, _CHUNK)), dtype=int)
        if chunk.size == 0:
            break
        costs = c.values[rows, chunk].sum(axis=1)
        low = float(costs.min())
        if best_match is None or low < best_cost - c.tolerance(best_cost):
            first = int(np.argmax(costs <= low + c.tolerance(low)))
            best_cost, best_match = float(costs[first]), chunk[first]
    return _assignment(c, best_match)


MATCHERS = {"hungarian": hungarian, "brute_force": brute_force}
