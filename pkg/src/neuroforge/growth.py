"""Aging-evolution search over growth-space networks.

Phase 1 fills the history with ``n_P`` random networks and fits the
trade-off exponent ``k``.  Phase 2 repeatedly samples ``n_S`` members of the
``n_P`` most recent records, grows the best one by ``epsilon`` and appends
the child.  Iteration ``age`` draws from ``default_rng([seed, age])`` so a
search resumed from its history file continues exactly as an uninterrupted
run would.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .arch.network import NetworkSpec, canonical_json, grow, parameter_count, random_model
from .errors import SearchError

log = logging.getLogger(__name__)

Evaluator = Callable[[NetworkSpec], tuple[float, int]]


@dataclass(frozen=True)
class SearchConfig:
    n_population: int = 100
    n_sample: int = 25
    n_iter: int = 1000
    n_op_max: int = 100
    n_growth_init: int = 10
    n_growth_search: int = 1
    n_blocks_search: int = 1
    seed: int = 0
    # shape of the random initial networks
    n_filters: int = 16
    n_blocks: int = 3
    num_classes: int = 10
    input_shape: tuple[int, int, int] = (3, 32, 32)
    neuron_layer: str = "trainable"

    def __post_init__(self):
        if not 1 <= self.n_sample <= self.n_population:
            raise ValueError(f"need 1 <= n_sample <= n_population, got {self.n_sample}, {self.n_population}")
        if self.n_iter < self.n_population:
            raise ValueError(f"n_iter ({self.n_iter}) must be at least n_population ({self.n_population})")
        if self.n_op_max < 3 * self.n_blocks:
            raise ValueError(f"n_op_max {self.n_op_max} cannot hold {3 * self.n_blocks} single-op blocks")
        for name in ("n_growth_init", "n_growth_search"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 1 <= self.n_blocks_search <= 3 * self.n_blocks:
            raise ValueError(f"n_blocks_search must lie in [1, {3 * self.n_blocks}]")

    def to_json(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "SearchConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown search options {sorted(unknown)}")
        obj = dict(obj)
        if "input_shape" in obj:
            obj["input_shape"] = tuple(obj["input_shape"])
        return cls(**obj)


@dataclass
class SearchRecord:
    spec: NetworkSpec
    alpha: float
    eta: int
    epsilon: float
    age: int
    parent: Optional[str] = None
    sample: list[int] = field(default_factory=list)
    failed: bool = False

    @property
    def digest(self) -> str:
        return self.spec.digest()

    def to_json(self) -> dict:
        # epsilon is unknown (NaN) for initial members until k is fitted
        eps = self.epsilon if math.isfinite(self.epsilon) else None
        return {"age": self.age, "spec": self.digest, "alpha": self.alpha, "eta": self.eta,
                "epsilon": eps, "parent": self.parent, "sample": self.sample,
                "failed": self.failed}


@dataclass(frozen=True)
class Baseline:
    """Normalization point and trade-off exponent fitted on the initial population."""

    alpha_init: float
    eta_init: float
    k: float


def fit_k(population: Sequence[SearchRecord], alpha_init: float, eta_init: float) -> float:
    """Mean of the per-member exponents ``log(a) / log(e)``.

    ``a`` and ``e`` are accuracy and size relative to the baselines; each
    member's exponent is the one that puts it exactly at ``epsilon = 1``, so
    a positive ``k`` means larger networks must earn their size.  Members
    with ``|log e| < 1e-6`` or ``a <= 0`` carry no information and are skipped.

    >>> round(fit_k([SearchRecord(None, 0.9, 1, 0.0, 0)], 1.0, 2.0), 5)
    0.152
    """
    if not population:
        raise SearchError("cannot fit k on an empty population")
    if alpha_init <= 0 or eta_init <= 0:
        raise SearchError(f"baselines must be positive, got alpha_init={alpha_init}, eta_init={eta_init}")
    ks = []
    for r in population:
        a = r.alpha / alpha_init
        log_e = math.log(r.eta / eta_init) if r.eta > 0 else 0.0
        if a <= 0 or abs(log_e) < 1e-6:
            continue
        ks.append(math.log(a) / log_e)
    if not ks:
        raise SearchError(
            "no initial member differs in size from the baseline; perturb the initial population"
            " (larger n_growth_init or another seed)"
        )
    return float(np.mean(ks))


def epsilon_metric(alpha: float, eta: int, alpha_init: float, eta_init: float, k: float) -> float:
    """Relative accuracy over relative size to the power ``k``."""
    if alpha_init <= 0 or eta_init <= 0:
        raise SearchError(f"baselines must be positive, got alpha_init={alpha_init}, eta_init={eta_init}")
    if eta <= 0:
        raise SearchError(f"parameter count must be positive, got {eta}")
    return (alpha / alpha_init) / (eta / eta_init) ** k


def fit_baseline(population: Sequence[SearchRecord]) -> Baseline:
    alpha_init = float(np.mean([r.alpha for r in population]))
    eta_init = float(np.mean([r.eta for r in population]))
    return Baseline(alpha_init, eta_init, fit_k(population, alpha_init, eta_init))


@dataclass
class SearchResult:
    best: SearchRecord
    history: list[SearchRecord]
    baseline: Baseline
    stop_reason: str  # "n_iter" | "n_op_max"


def _evaluate(evaluator: Evaluator, spec: NetworkSpec) -> tuple[float, int, bool]:
    try:
        alpha, eta = evaluator(spec)
        return float(alpha), int(eta), False
    except Exception as exc:  # a failed training run scores zero but the search goes on
        log.warning("evaluation of %s failed: %s", spec.digest(), exc)
        return 0.0, parameter_count(spec), True


def _initial_spec(config: SearchConfig, rng: np.random.Generator) -> NetworkSpec:
    while True:
        spec = random_model(config.n_growth_init, rng, n_filters=config.n_filters,
                            n_blocks=config.n_blocks, num_classes=config.num_classes,
                            input_shape=config.input_shape, neuron_layer=config.neuron_layer)
        if spec.num_ops <= config.n_op_max:
            return spec


class HistoryLog:
    """Line-delimited JSON history plus one spec file per distinct network.

    ``DIR/history.jsonl`` holds one record per line; ``DIR/specs/<hash>.json``
    holds the canonical spec documents.  The first line is a header with the
    search configuration.
    """

    def __init__(self, directory: str):
        self.directory = directory
        self.path = os.path.join(directory, "history.jsonl")
        self.spec_dir = os.path.join(directory, "specs")

    def start(self, config: SearchConfig) -> None:
        os.makedirs(self.spec_dir, exist_ok=True)
        with open(self.path, "w") as f:
            f.write(canonical_json({"type": "config", "config": config.to_json()}) + "\n")

    def append(self, record: SearchRecord) -> None:
        spec_path = os.path.join(self.spec_dir, record.digest + ".json")
        if not os.path.exists(spec_path):
            with open(spec_path, "w") as f:
                f.write(record.spec.dumps())
        with open(self.path, "a") as f:
            f.write(canonical_json({"type": "record", **record.to_json()}) + "\n")

    def write_baseline(self, baseline: Baseline) -> None:
        with open(self.path, "a") as f:
            f.write(canonical_json({"type": "baseline", **asdict(baseline)}) + "\n")

    def load(self) -> tuple[SearchConfig, list[SearchRecord], Optional[Baseline]]:
        config, records, baseline = None, [], None
        with open(self.path) as f:
            for line in f:
                obj = json.loads(line)
                kind = obj.pop("type")
                if kind == "config":
                    config = SearchConfig.from_json(obj["config"])
                elif kind == "baseline":
                    baseline = Baseline(**obj)
                else:
                    with open(os.path.join(self.spec_dir, obj["spec"] + ".json")) as sf:
                        spec = NetworkSpec.loads(sf.read())
                    eps = obj["epsilon"] if obj["epsilon"] is not None else float("nan")
                    records.append(SearchRecord(spec, obj["alpha"], obj["eta"], eps,
                                                obj["age"], obj["parent"], obj["sample"], obj["failed"]))
        if config is None:
            raise SearchError(f"{self.path} has no configuration header")
        return config, records, baseline


def aging_search(config: SearchConfig, evaluator: Evaluator, out_dir: Optional[str] = None,
                 resume: bool = False) -> SearchResult:
    """Run (or resume) the search; returns the highest-epsilon record ever seen.

    Args:
        config: search settings.
        evaluator: maps a spec to ``(alpha, eta)``; exceptions give ``alpha = 0``.
        out_dir: when given, the history is streamed to ``out_dir``.
        resume: continue from the history already in ``out_dir``.
    """
    logbook = HistoryLog(out_dir) if out_dir is not None else None
    history: list[SearchRecord] = []
    baseline: Optional[Baseline] = None
    if resume:
        if logbook is None:
            raise SearchError("resume needs an output directory")
        saved_config, history, baseline = logbook.load()
        if saved_config != config:
            raise SearchError("resume configuration differs from the one in the history file")
    elif logbook is not None:
        logbook.start(config)

    # phase 1: random initial population
    while len(history) < config.n_population:
        age = len(history)
        spec = _initial_spec(config, np.random.default_rng([config.seed, age]))
        alpha, eta, failed = _evaluate(evaluator, spec)
        history.append(SearchRecord(spec, alpha, eta, float("nan"), age, failed=failed))
        if logbook is not None:
            logbook.append(history[-1])
    if baseline is None:
        baseline = fit_baseline(history[:config.n_population])
        for r in history[:config.n_population]:
            r.epsilon = 0.0 if r.failed else epsilon_metric(r.alpha, r.eta, baseline.alpha_init,
                                                            baseline.eta_init, baseline.k)
        if logbook is not None:
            # rewrite so initial records carry their epsilon
            logbook.start(config)
            logbook.write_baseline(baseline)
            for r in history:
                logbook.append(r)
        log.info("fitted k=%.5f alpha_init=%.4f eta_init=%.1f", baseline.k, baseline.alpha_init,
                 baseline.eta_init)

    # phase 2: aging evolution
    stop = "n_iter"
    while len(history) < config.n_iter:
        age = len(history)
        rng = np.random.default_rng([config.seed, age])
        population = history[-config.n_population:]
        picks = rng.integers(len(population), size=config.n_sample)
        sample = [population[i] for i in picks]
        parent = max(sample, key=lambda r: r.epsilon)  # first maximum on ties
        child = grow(parent.spec, config.n_blocks_search, config.n_growth_search, rng)
        if child.num_ops > config.n_op_max:
            stop = "n_op_max"
            break
        alpha, eta, failed = _evaluate(evaluator, child)
        eps = 0.0 if failed else epsilon_metric(alpha, eta, baseline.alpha_init, baseline.eta_init, baseline.k)
        history.append(SearchRecord(child, alpha, eta, eps, age, parent.digest,
                                    [r.age for r in sample], failed))
        if logbook is not None:
            logbook.append(history[-1])
        log.debug("age %d eps %.4f alpha %.4f eta %d", age, eps, alpha, eta)

    best = max(history, key=lambda r: r.epsilon)
    return SearchResult(best, history, baseline, stop)
