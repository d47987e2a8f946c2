"""Glue for scene -> samples -> trained model runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import HsiScene, NormStats, Splits, extract_cubes, normalize
from .metrics import MetricsReport, evaluate
from .models import ModelGraph, build_model
from .training import OptimizerConfig, TrainRecord, train


@dataclass
class Prepared:
    train: tuple[np.ndarray, np.ndarray]
    val: tuple[np.ndarray, np.ndarray]
    test: tuple[np.ndarray, np.ndarray]
    stats: NormStats


def prepare(scene: HsiScene, splits: Splits, S: int, stats: NormStats | None = None) -> Prepared:
    """Extract and standardize every split with training-split statistics."""
    raw = [extract_cubes(scene, coords, S) for coords in splits]
    if stats is None:
        stats = NormStats.from_cubes(raw[0][0])
    parts = [(normalize(x, stats), y) for x, y in raw]
    return Prepared(*parts, stats=stats)


@dataclass
class RunResult:
    model: ModelGraph
    records: list[TrainRecord]
    metrics: MetricsReport | None


def fit(data: Prepared, num_classes: int, cfg: OptimizerConfig, arch: str = "lwnet20",
        model: ModelGraph | None = None, model_seed: int | None = None) -> RunResult:
    """Train (a fresh model unless one is given) and score the test split."""
    if model is None:
        model = build_model(arch, num_classes, cfg.seed if model_seed is None else model_seed)
    model, records = train(model, data.train, data.val, cfg)
    metrics = evaluate(model, *data.test) if len(data.test[1]) else None
    return RunResult(model, records, metrics)
