"""Exponential moving average update of teacher parameters.

Parameters are handled as opaque flat vectors, so any model can be
serialized in and out with the snapshot codec in ``src.io``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from src.exceptions import ConfigError, DimensionError, InputError

logger = logging.getLogger(__name__)

DEFAULT_K = 0.9996


@dataclass(frozen=True)
class ParamVector:
    """A flat parameter vector and the number of updates applied to it."""

    values: np.ndarray
    version: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.isfinite(values).all():
            raise InputError("Parameter vector entries must be finite")
        if int(self.version) < 0:
            raise InputError(f"Version must be >= 0, got {self.version}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "version", int(self.version))

    def __len__(self):
        return self.values.shape[0]


def ema_step(teacher: ParamVector, student: ParamVector,
             k: float = DEFAULT_K) -> ParamVector:
    """One teacher update: k * teacher + (1 - k) * student.

    Args:
        teacher: Current teacher parameters
        student: Student parameters after its optimizer step
        k: Momentum in [0, 1]; 1 keeps the teacher, 0 copies the student

    Returns:
        ParamVector with the new values and the teacher version plus one
    """
    if not 0.0 <= k <= 1.0:
        raise ConfigError(f"EMA momentum must be in [0, 1], got {k}")
    if len(teacher) != len(student):
        raise DimensionError(
            f"Teacher has {len(teacher)} parameters but student has "
            f"{len(student)}")
    t, s = teacher.values, student.values
    if k == 1.0:
        values = t.copy()
    elif k == 0.0:
        values = s.copy()
    else:
        values = k * t + (1.0 - k) * s
        # rounding can step outside the segment between t and s
        values = np.clip(values, np.minimum(t, s), np.maximum(t, s))
    logger.debug(f"EMA step {teacher.version} -> {teacher.version + 1}, k={k}")
    return ParamVector(values=values, version=teacher.version + 1)


def ema_steps(teacher: ParamVector, student: ParamVector, n: int,
              k: float = DEFAULT_K) -> ParamVector:
    """Apply ``n`` updates against a fixed student."""
    for _ in range(int(n)):
        teacher = ema_step(teacher, student, k)
    return teacher
