import pytest
from marshmallow import ValidationError

from src.annotation import LabelFormat, NoiseModel
from src.budget import DatasetStats
from src.exceptions import BudgetError, ConfigError
from src.filtering import FilterConfig
from src.loss import LossConfig
from src.schemas import (DatasetStatsSchema, FilterConfigSchema,
                         LossConfigSchema, MixturePolicySchema,
                         NoiseModelSchema)


def test_config_schemas_fill_in_the_defaults():
    assert FilterConfigSchema().load({}) == FilterConfig()
    assert LossConfigSchema().load({}) == LossConfig()
    assert NoiseModelSchema().load({"sigma_scale": 0.1}) == \
        NoiseModel(sigma_scale=0.1)


def test_filter_config_schema():
    """
    GIVEN filter settings as read from a config file
    WHEN they are loaded
    THEN a FilterConfig is built, and out-of-range values raise ConfigError
    while values of the wrong type fail validation
    """
    cfg = FilterConfigSchema().load({"tau": 0.9, "strategy": "simple",
                                     "drop_infeasible": True})
    assert (cfg.tau, cfg.strategy, cfg.drop_infeasible) == (0.9, "simple",
                                                            True)
    with pytest.raises(ConfigError):
        FilterConfigSchema().load({"gamma": 2})
    with pytest.raises(ValidationError):
        FilterConfigSchema().load({"strategy": "greedy"})
    with pytest.raises(ValidationError):
        FilterConfigSchema().load({"tau": "high"})


def test_mixture_policy_schema():
    policy = MixturePolicySchema().load(
        {"fractions": {"fully": 0.1, "tags_k": 0.9}, "dataset_size": 100})
    assert policy.fraction(LabelFormat.TAGS_K) == 0.9
    with pytest.raises(ValidationError):
        MixturePolicySchema().load({"fractions": {"scribbles": 1.0},
                                    "dataset_size": 100})
    with pytest.raises(BudgetError):
        MixturePolicySchema().load({"fractions": {"fully": 0.5},
                                    "dataset_size": 100})


def test_dataset_stats_schema_reads_csv_strings():
    stats = DatasetStatsSchema().load({"name": "VOC", "C": "20",
                                       "C_avg": "1.4", "I_avg": "2.4",
                                       "size": "22136"})
    assert stats == DatasetStats("voc", 20, 1.4, 2.4, 22136)
