"""Annotation cost model and mixture-policy budget planner.

Per-image annotation times in seconds follow from three dataset statistics:
the number of categories C, the average number of categories per image
C_avg and the average number of instances per image I_avg. A mixture policy
assigns a fraction of a dataset to each format; its cost in hours is the
fraction-weighted sum of per-image times.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from src.annotation import LabelFormat
from src.exceptions import BudgetError
from src.utils import load_reference_policies, load_profiles

logger = logging.getLogger(__name__)

# Seconds per tag decision, per point click, per extreme-clicking box, per
# full-quality box.
TAG_SECONDS = 1.0
POINT_SECONDS = 0.9
POINT_TAG_SECONDS = 2.4
EC_BOX_SECONDS = 7.0
BOX_SECONDS = 35.0

# TagsK / PointsK cost ratio averaged over the multi-class datasets; used for
# TagsK on single-class data.
SINGLE_CLASS_TAGS_K_FACTOR = 0.95

SECONDS_PER_HOUR = 3600.0

# Column order of the cost table.
COST_FORMATS = (LabelFormat.TAGS_U, LabelFormat.TAGS_K, LabelFormat.POINTS_U,
                LabelFormat.POINTS_K, LabelFormat.BOXES_EC,
                LabelFormat.BOXES_U, LabelFormat.FULLY)


@dataclass(frozen=True)
class DatasetStats:
    """Annotation statistics of a dataset.

    Attributes:
        name: dataset name
        num_classes: total number of categories (C)
        avg_classes: average number of categories per image (C_avg)
        avg_instances: average number of instances per image (I_avg)
        size: number of images, used as the default policy size
    """

    name: str
    num_classes: int
    avg_classes: float
    avg_instances: float
    size: int = None

    def __post_init__(self):
        if self.num_classes < 1:
            raise BudgetError(
                f"{self.name}: number of classes must be >= 1")
        if not 0 < self.avg_classes <= self.num_classes:
            raise BudgetError(
                f"{self.name}: average classes per image must lie in "
                f"(0, {self.num_classes}]")
        if self.avg_instances < self.avg_classes:
            raise BudgetError(
                f"{self.name}: average instances per image must be at least "
                f"the average classes per image")
        if self.size is not None and self.size < 0:
            raise BudgetError(f"{self.name}: dataset size must be >= 0")

    @property
    def single_class(self):
        return self.num_classes == 1


@dataclass(frozen=True)
class MixturePolicy:
    """Fraction of a dataset annotated with each format."""

    fractions: dict = field(default_factory=dict)
    dataset_size: int = 0

    def __post_init__(self):
        fractions = {}
        for name, value in dict(self.fractions).items():
            fmt = LabelFormat.parse(name)
            value = float(value)
            if not 0.0 <= value <= 1.0:
                raise BudgetError(
                    f"Fraction of {fmt.value} must lie in [0, 1], got {value}")
            fractions[fmt] = fractions.get(fmt, 0.0) + value
        total = sum(fractions.values())
        if abs(total - 1.0) > 1e-6:
            raise BudgetError(f"Policy fractions sum to {total}, not 1")
        if int(self.dataset_size) < 0:
            raise BudgetError("Dataset size must be >= 0")
        ordered = {fmt: fractions[fmt] for fmt in LabelFormat if fmt in fractions}
        object.__setattr__(self, "fractions", ordered)
        object.__setattr__(self, "dataset_size", int(self.dataset_size))

    def fraction(self, fmt):
        return self.fractions.get(LabelFormat.parse(fmt), 0.0)

    def to_dict(self):
        return {fmt.value: value for fmt, value in self.fractions.items()}


def builtin_profiles():
    """The five built-in datasets keyed by lower-case name."""
    return dict(load_profiles())


def get_profile(name):
    profiles = load_profiles()
    key = str(name).lower()
    if key not in profiles:
        raise BudgetError(
            f"Unknown dataset '{name}'; built-in profiles are "
            f"{sorted(profiles)}")
    return profiles[key]


def cost_per_image(stats: DatasetStats, fmt) -> float:
    """Seconds needed to annotate one image of the dataset in ``fmt``.

    Raises:
        BudgetError: TagsU requested for a single-class dataset
    """
    fmt = LabelFormat.parse(fmt)
    c, c_avg, i_avg = stats.num_classes, stats.avg_classes, stats.avg_instances

    points_u = POINT_SECONDS * i_avg
    if stats.single_class:
        points_k = points_u
    else:
        points_k = ((c - c_avg) * TAG_SECONDS + POINT_TAG_SECONDS * c_avg
                    + POINT_SECONDS * (i_avg - c_avg))

    if fmt is LabelFormat.NONE:
        return 0.0
    if fmt is LabelFormat.TAGS_U:
        if stats.single_class:
            raise BudgetError(
                f"TagsU is not defined for the single-class dataset "
                f"{stats.name}")
        return TAG_SECONDS * c
    if fmt is LabelFormat.TAGS_K:
        if stats.single_class:
            return SINGLE_CLASS_TAGS_K_FACTOR * points_k
        return c + i_avg - c_avg
    if fmt is LabelFormat.POINTS_U:
        return points_u
    if fmt is LabelFormat.POINTS_K:
        return points_k
    if fmt is LabelFormat.BOXES_EC:
        return EC_BOX_SECONDS * i_avg
    if fmt is LabelFormat.BOXES_U:
        return BOX_SECONDS * i_avg
    if stats.single_class:
        return BOX_SECONDS * i_avg
    return (c - c_avg) * TAG_SECONDS + BOX_SECONDS * i_avg


def policy_cost(policy: MixturePolicy, stats: DatasetStats) -> float:
    """Hours needed to annotate the dataset following ``policy``."""
    seconds = 0.0
    for fmt, fraction in policy.fractions.items():
        if fraction == 0.0:
            continue
        seconds += policy.dataset_size * fraction * cost_per_image(stats, fmt)
    return seconds / SECONDS_PER_HOUR


def _compositions(num_parts, units):
    """Every vector of ``num_parts`` non-negative ints with sum <= units."""
    grid = np.arange(units + 1, dtype=np.int32).reshape(-1, 1)
    for _ in range(num_parts - 1):
        remaining = units - grid.sum(axis=1)
        counts = remaining + 1
        starts = np.repeat(np.cumsum(counts) - counts, counts)
        column = np.arange(counts.sum(), dtype=np.int32) - starts
        grid = np.hstack([np.repeat(grid, counts, axis=0),
                          column.reshape(-1, 1).astype(np.int32)])
    return grid


def enumerate_policies(stats: DatasetStats, budget_hours, formats,
                       step=0.01, tolerance=0.01, dataset_size=None,
                       min_spend=None):
    """Grid search over mixture policies that fit a budget.

    Fractions move in multiples of ``step``. When None is not among
    ``formats`` it is added implicitly and takes whatever the listed formats
    leave over.

    Args:
        stats: Dataset statistics
        budget_hours: Annotation budget in hours
        formats: Formats the mixture may use
        step: Grid step; must divide 1
        tolerance: Relative slack over the budget
        dataset_size: Images in the dataset, defaults to stats.size
        min_spend: Optional fraction of the budget a policy must at least
            spend

    Returns:
        list of MixturePolicy sorted by Fully fraction, then by the other
        fractions in format order
    """
    formats = [LabelFormat.parse(f) for f in formats]
    formats = [f for f in LabelFormat if f in formats]
    if not formats:
        raise BudgetError("At least one format is needed")
    if budget_hours < 0:
        raise BudgetError(f"Budget must be >= 0, got {budget_hours}")
    if step <= 0 or step > 1:
        raise BudgetError(f"Grid step must lie in (0, 1], got {step}")
    units = int(round(1.0 / step))
    if abs(units * step - 1.0) > 1e-9:
        raise BudgetError(f"Grid step {step} does not divide 1")
    size = stats.size if dataset_size is None else dataset_size
    if size is None:
        raise BudgetError(f"No dataset size known for {stats.name}")

    free = [f for f in formats if f is not LabelFormat.NONE]
    hours_per_unit = np.array(
        [size * cost_per_image(stats, f) / units / SECONDS_PER_HOUR
         for f in free])

    if not free:
        grid = np.zeros((1, 0), dtype=np.int32)
    else:
        grid = _compositions(len(free), units)
    none_units = units - grid.sum(axis=1)
    hours = grid @ hours_per_unit if free else np.zeros(1)

    keep = hours <= budget_hours * (1.0 + tolerance) + 1e-12
    if min_spend is not None:
        keep &= hours >= budget_hours * min_spend - 1e-12
    grid, none_units, hours = grid[keep], none_units[keep], hours[keep]

    fully_col = (free.index(LabelFormat.FULLY)
                 if LabelFormat.FULLY in free else None)
    keys = [grid[:, j] for j in reversed(range(grid.shape[1]))
            if j != fully_col]
    if fully_col is not None:
        keys.append(grid[:, fully_col])
    order = np.lexsort(keys) if keys else np.arange(len(hours))

    logger.debug(f"{len(order)} of the grid policies fit {budget_hours} h")
    policies = []
    for row in order:
        fractions = {f: grid[row, j] / units for j, f in enumerate(free)}
        fractions[LabelFormat.NONE] = none_units[row] / units
        policies.append(MixturePolicy(fractions=fractions, dataset_size=size))
    return policies


def cost_table(profiles=None):
    """Per-image annotation seconds for every dataset and format.

    Cells that are not defined (TagsU on single-class data) are NaN. Values
    are kept at full precision; round for presentation.

    Returns:
        pandas DataFrame indexed by dataset name with one column per format
    """
    profiles = builtin_profiles() if profiles is None else profiles
    if isinstance(profiles, DatasetStats):
        profiles = {profiles.name: profiles}
    rows = {}
    for name, stats in profiles.items():
        row = {}
        for fmt in COST_FORMATS:
            if fmt is LabelFormat.TAGS_U and stats.single_class:
                row[fmt.value] = np.nan
            else:
                row[fmt.value] = cost_per_image(stats, fmt)
        rows[name] = row
    table = pd.DataFrame.from_dict(rows, orient="index",
                                   columns=[f.value for f in COST_FORMATS])
    table.index.name = "dataset"
    return table


def single_class_tags_k_factor(profiles=None):
    """Average TagsK / PointsK cost ratio over the multi-class datasets."""
    profiles = builtin_profiles() if profiles is None else profiles
    ratios = [cost_per_image(s, LabelFormat.TAGS_K)
              / cost_per_image(s, LabelFormat.POINTS_K)
              for s in profiles.values() if not s.single_class]
    if not ratios:
        raise BudgetError("No multi-class dataset to average over")
    return float(np.mean(ratios))


def reference_policies():
    """The mixture policies of the omni-supervision experiments.

    Returns:
        list of (dataset name, MixturePolicy, printed hours) tuples
    """
    policies = []
    for row in load_reference_policies():
        stats = get_profile(row["dataset"])
        policy = MixturePolicy(fractions=row["fractions"],
                               dataset_size=stats.size)
        policies.append((row["dataset"], policy, row["hours"]))
    return policies


def policy_table():
    """Computed against printed hours for every experiment policy.

    A row is ``within_rounding`` when the computed hours are within half the
    printed precision of the printed value, and never less than one hour.
    """
    records = []
    for row in load_reference_policies():
        stats = get_profile(row["dataset"])
        policy = MixturePolicy(fractions=row["fractions"],
                               dataset_size=stats.size)
        hours = policy_cost(policy, stats)
        allowed = max(1.0, row["hours_unit"] / 2)
        record = {"dataset": row["dataset"], "mixture": row["mixture"]}
        record.update({f"{name}_pct": round(100 * value)
                       for name, value in row["fractions"].items()})
        record.update({
            "hours": hours,
            "printed_hours": row["hours"],
            "difference": hours - row["hours"],
            "within_rounding": abs(hours - row["hours"]) <= allowed,
            "map": row["map"],
        })
        records.append(record)
    return pd.DataFrame.from_records(records)
