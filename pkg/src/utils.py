# Built-in reference data shipped with the package
import csv
import logging
from functools import lru_cache
from pathlib import Path

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent.joinpath("data")


def read_csv(name):
    """Read one of the bundled CSV files into a list of row dicts."""
    path = DATA_DIR.joinpath(name)
    with open(path, 'r', encoding="utf-8", newline="") as file:
        csv_dict_reader = csv.DictReader(file)
        rows = [dict(row) for row in csv_dict_reader]
    logger.debug(f"Read {len(rows)} rows from {path.name}")
    return rows


@lru_cache(maxsize=None)
def load_profiles():
    """Dataset statistics of the five built-in datasets, keyed by name."""

    # Import here and not at the top of the file to avoid circular import
    # issues
    from src.schemas import DatasetStatsSchema

    schema = DatasetStatsSchema()
    profiles = {}
    for row in read_csv("dataset_stats.csv"):
        stats = schema.load(row)
        profiles[stats.name] = stats
    return profiles


@lru_cache(maxsize=None)
def load_reference_policies():
    """Mixture policies of the omni-supervision experiments.

    Returns:
        tuple of dicts with keys dataset, mixture, fractions (format name ->
        fraction), hours, hours_unit and map
    """
    fraction_columns = ("fully", "none", "tags_k", "points_u", "boxes_ec")
    rows = []
    for row in read_csv("reference_policies.csv"):
        rows.append({
            "dataset": row["dataset"],
            "mixture": row["mixture"],
            "fractions": {name: float(row[name]) for name in fraction_columns},
            "hours": float(row["hours"]),
            "hours_unit": float(row["hours_unit"]),
            "map": float(row["map"]),
        })
    return tuple(rows)
