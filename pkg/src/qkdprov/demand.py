"""Uncertain secret-key-rate demand: discrete scenario levels and sampling.

Demand is modeled as a finite set of key-rate levels ``0..n-1`` with a
truncated, renormalized Poisson distribution. In any realization all
requests share the same level, which keeps the scenario space linear in the
number of levels instead of exponential in the number of requests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .parsing import ParseError, parse_number, read_tokens

PROBABILITY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ScenarioSet:
    """Ordered demand levels with probabilities summing to one."""

    levels: tuple[int, ...]
    probabilities: tuple[float, ...]
    mean_rate: float

    def __post_init__(self):
        if not self.levels:
            raise ValueError("scenario set needs at least one level")
        if len(self.levels) != len(self.probabilities):
            raise ValueError("levels and probabilities differ in length")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("levels must be strictly increasing")
        if any(p < 0 for p in self.probabilities):
            raise ValueError("probabilities must be nonnegative")
        total = math.fsum(self.probabilities)
        if abs(total - 1.0) > PROBABILITY_TOLERANCE:
            raise ValueError(f"probabilities sum to {total}, expected 1")

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def max_level(self) -> int:
        return self.levels[-1]

    def mean_level(self) -> float:
        return math.fsum(l * p for l, p in zip(self.levels, self.probabilities))


def build_scenarios(num_scenarios: int, mean: float | None = None) -> ScenarioSet:
    """Truncated Poisson masses over levels ``0..num_scenarios-1``.

    The default mean is ``floor(num_scenarios / 3)``; mass beyond the top
    level is dropped and the remainder renormalized to sum to one.
    """
    if num_scenarios < 1:
        raise ValueError("need at least one scenario")
    lam = float(num_scenarios // 3) if mean is None else float(mean)
    if lam < 0:
        raise ValueError("mean must be nonnegative")
    if lam == 0.0:
        masses = [1.0] + [0.0] * (num_scenarios - 1)
    else:
        masses = [lam**k / math.factorial(k) for k in range(num_scenarios)]
    total = math.fsum(masses)
    probs = tuple(m / total for m in masses)
    return ScenarioSet(levels=tuple(range(num_scenarios)), probabilities=probs,
                       mean_rate=lam)


def sample_scenario(scenarios: ScenarioSet, rng: np.random.Generator) -> int:
    """Draw one demand level; deterministic given the generator state."""
    return int(rng.choice(scenarios.levels, p=scenarios.probabilities))


def load_scenarios(path) -> ScenarioSet:
    """Parse ``scenario <level> <probability>`` override lines."""
    entries: list[tuple[int, float]] = []
    for line_no, tokens in read_tokens(path):
        if tokens[0] != "scenario" or len(tokens) != 3:
            raise ParseError(str(path), line_no, "expected: scenario <level> <probability>")
        level = parse_number(tokens[1], str(path), line_no, int)
        prob = parse_number(tokens[2], str(path), line_no, float)
        entries.append((level, prob))
    if not entries:
        raise ValueError(f"{path}: no scenario lines")
    entries.sort()
    levels = tuple(level for level, _ in entries)
    if levels != tuple(range(len(levels))):
        raise ValueError(f"{path}: levels must be contiguous from 0")
    probs = tuple(p for _, p in entries)
    scen = ScenarioSet(levels=levels, probabilities=probs,
                       mean_rate=math.fsum(l * p for l, p in entries))
    return scen
