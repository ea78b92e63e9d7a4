"""Gravimetric-surface-area reward.

reward(g) = exp((g - cutoff) / cutoff) when g >= cutoff, else 0. The step is
closed at the cutoff, so a value exactly at the cutoff earns reward 1. A
failed evaluation scores 0; the positive floor is applied only where a log
is needed, never to reported rewards.
"""

from __future__ import annotations

import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .env import Environment, Vocabulary
from .errors import ConfigurationError


@dataclass(frozen=True)
class RewardSpec:
    cutoff: float = 5000.0
    reward_floor: float = 1e-6
    surrogate_scale: float = 1.0
    evaluator: str = "surrogate"  # "surrogate" or "external"

    def __post_init__(self):
        if not (self.cutoff > 0):
            raise ConfigurationError("reward cutoff must be positive")
        if not (0 < self.reward_floor <= 1):
            raise ConfigurationError("reward floor must be in (0, 1]")
        if not (self.surrogate_scale > 0):
            raise ConfigurationError("surrogate scale must be positive")
        if self.evaluator not in ("surrogate", "external"):
            raise ConfigurationError(f"unknown evaluator {self.evaluator!r}")


@dataclass(frozen=True)
class GsaResult:
    value: float | None
    error: str | None = None

    @classmethod
    def of(cls, value: float) -> "GsaResult":
        return cls(value=float(value), error=None)

    @classmethod
    def fail(cls, message: str) -> "GsaResult":
        return cls(value=None, error=message)

    @property
    def ok(self) -> bool:
        return self.value is not None


def reward(spec: RewardSpec, gsa: GsaResult | float | None) -> float:
    if isinstance(gsa, GsaResult):
        gsa = gsa.value
    if gsa is None or not np.isfinite(gsa):
        return 0.0
    if gsa < spec.cutoff:
        return 0.0
    return float(np.exp((gsa - spec.cutoff) / spec.cutoff))


def loss_reward(spec: RewardSpec, value: float) -> float:
    """Floored reward used inside the balance loss so its log is finite."""
    return max(float(value), spec.reward_floor)


def surrogate_gsa(vocabulary: Vocabulary, tokens: tuple[int, ...], scale: float = 1.0) -> float:
    """Additive stand-in: scaled total token surface over total token mass."""
    idx = np.asarray(tokens, dtype=np.intp)
    return float(scale * vocabulary.surfaces[idx].sum() / vocabulary.masses[idx].sum())


@dataclass(frozen=True)
class AdapterConfig:
    """External evaluator invocation: record on stdin, one number on stdout."""

    command: tuple[str, ...]
    timeout_s: float = 60.0
    probe_radius: float = 1.525
    sample_count: int = 2000

    def __post_init__(self):
        if not self.command:
            raise ConfigurationError("adapter command is empty")
        if not (self.timeout_s > 0):
            raise ConfigurationError("adapter timeout must be positive")

    def argv(self) -> list[str]:
        return list(self.command) + [
            f"--probe-radius={self.probe_radius}",
            f"--samples={self.sample_count}",
        ]


def external_gsa(adapter: AdapterConfig, record: str) -> GsaResult:
    """Run the adapter once. Every failure mode becomes a GsaResult.fail."""
    try:
        proc = subprocess.run(
            adapter.argv(), input=record + "\n", capture_output=True,
            text=True, timeout=adapter.timeout_s)
    except (subprocess.TimeoutExpired, OSError) as exc:
        return GsaResult.fail(f"adapter did not run: {exc}")
    if proc.returncode != 0:
        return GsaResult.fail(f"adapter exit code {proc.returncode}: {proc.stderr.strip()[:200]}")
    fields = proc.stdout.split()
    if not fields:
        return GsaResult.fail("adapter produced no output")
    try:
        value = float(fields[0])
    except ValueError:
        return GsaResult.fail(f"adapter output not a number: {fields[0]!r}")
    if not np.isfinite(value):
        return GsaResult.fail(f"adapter output not finite: {value!r}")
    return GsaResult.of(value)


class RewardModel:
    """Scores token sequences for one environment, with memoization."""

    def __init__(self, spec: RewardSpec, env: Environment,
                 adapter: AdapterConfig | None = None, memoize: bool = True):
        if spec.evaluator == "external" and adapter is None:
            raise ConfigurationError("external evaluator requires an adapter config")
        self.spec = spec
        self.env = env
        self.adapter = adapter
        self.memoize = memoize
        self._cache: dict[tuple[int, ...], GsaResult] = {}

    def _evaluate(self, tokens: tuple[int, ...]) -> GsaResult:
        if self.spec.evaluator == "surrogate":
            return GsaResult.of(surrogate_gsa(self.env.vocabulary, tokens, self.spec.surrogate_scale))
        record = self.env.format_assembly_record(tokens)
        return external_gsa(self.adapter, record)

    def gsa(self, tokens: tuple[int, ...]) -> GsaResult:
        tokens = tuple(int(t) for t in tokens)
        if self.memoize and tokens in self._cache:
            return self._cache[tokens]
        result = self._evaluate(tokens)
        if self.memoize:
            self._cache[tokens] = result
        return result

    def score(self, tokens: tuple[int, ...]) -> tuple[float, GsaResult]:
        result = self.gsa(tokens)
        return reward(self.spec, result), result

    def score_batch(self, sequences, workers: int = 1) -> list[tuple[float, GsaResult]]:
        """Score many sequences; external evaluations may run in a thread pool."""
        sequences = [tuple(int(t) for t in seq) for seq in sequences]
        pending = []
        seen = set()
        for seq in sequences:
            if seq not in seen and not (self.memoize and seq in self._cache):
                seen.add(seq)
                pending.append(seq)
        if pending and self.spec.evaluator == "external" and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(self._evaluate, pending))
        else:
            results = [self._evaluate(seq) for seq in pending]
        fresh = dict(zip(pending, results))
        if self.memoize:
            self._cache.update(fresh)
        out = []
        for seq in sequences:
            res = self._cache.get(seq) if self.memoize else None
            if res is None:
                res = fresh.get(seq)
            if res is None:
                res = self._evaluate(seq)
            out.append((reward(self.spec, res), res))
        return out
