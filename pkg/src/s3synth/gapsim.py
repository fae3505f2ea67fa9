"""Discrete-distribution model of the synthesis gap.

This module makes the mixture story behind error extrapolation executable
at desk scale.  A finite data space carries a real distribution ``P_D``
and a synthesis distribution ``P_S``.  One refinement round forms the
*residual* (the normalized positive part of ``P_D - P_S``, i.e. where
synthesis under-covers) and mixes it back with ratio ``p``; iterating
contracts the total-variation distance to the real distribution.

The residual's unnormalized mass equals the TV distance exactly, which is
why TV is the gap metric used throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError

_SUM_TOL = 1e-12
_STOP_TV = 1e-12


class NoGapError(ValueError):
    """Residual requested for two identical distributions."""


class NoErrorsError(ValueError):
    """The simulated classifier makes no errors under the real distribution."""


@dataclass(frozen=True)
class DiscreteDistribution:
    support: tuple
    probs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "support", tuple(self.support))
        probs = np.asarray(self.probs, dtype=np.float64).copy()
        if probs.ndim != 1 or len(probs) != len(self.support):
            raise ConfigError("probs must be a vector aligned with the support")
        if np.any(probs < 0):
            raise ConfigError("probabilities must be non-negative")
        if abs(float(probs.sum()) - 1.0) > _SUM_TOL:
            raise ConfigError(f"probabilities must sum to 1 (got {float(probs.sum())!r})")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_weights(cls, support: Sequence, weights: Sequence[float]) -> "DiscreteDistribution":
        w = np.asarray(weights, dtype=np.float64)
        total = float(w.sum())
        if total <= 0:
            raise ConfigError("weights must have positive total mass")
        return cls(support=tuple(support), probs=w / total)

    def __len__(self) -> int:
        return len(self.support)


def _check_same_support(p: DiscreteDistribution, q: DiscreteDistribution) -> None:
    if p.support != q.support:
        raise ConfigError("support mismatch: distributions must share the same ordered support")


def tv_distance(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    _check_same_support(p, q)
    return 0.5 * float(np.abs(p.probs - q.probs).sum())


def residual_distribution(
    p_real: DiscreteDistribution, p_syn: DiscreteDistribution
) -> tuple[DiscreteDistribution, float]:
    """Normalized positive part of ``p_real - p_syn`` and its raw mass.

    The mass equals tv_distance(p_real, p_syn) exactly.
    """
    _check_same_support(p_real, p_syn)
    positive = np.maximum(p_real.probs - p_syn.probs, 0.0)
    mass = float(positive.sum())
    if mass == 0.0:
        raise NoGapError("NoGap: the synthesis distribution already equals the target")
    return DiscreteDistribution(support=p_real.support, probs=positive / mass), mass


def mix(p_add: DiscreteDistribution, p_syn: DiscreteDistribution, ratio: float) -> DiscreteDistribution:
    """Convex combination ``ratio * p_add + (1 - ratio) * p_syn``."""
    _check_same_support(p_add, p_syn)
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"mix ratio must lie in [0, 1], got {ratio!r}")
    return DiscreteDistribution(
        support=p_add.support, probs=ratio * p_add.probs + (1.0 - ratio) * p_syn.probs
    )


def optimal_mix_ratio(
    p_real: DiscreteDistribution,
    p_syn: DiscreteDistribution,
    p_add: DiscreteDistribution,
) -> tuple[float, float]:
    """The mixing ratio minimizing TV(mix(p_add, p_syn, p), p_real) over [0, 1].

    The objective 0.5 * sum_i |s_i - d_i + p (a_i - s_i)| is piecewise
    linear and convex in p, so the minimum is attained at an endpoint or at
    a kink where one term vanishes; those are enumerated exactly.  Ties
    resolve toward the smallest ratio.
    """
    _check_same_support(p_real, p_syn)
    _check_same_support(p_real, p_add)
    base = p_syn.probs - p_real.probs
    slope = p_add.probs - p_syn.probs

    candidates = {0.0, 1.0}
    nonzero = slope != 0.0
    kinks = -base[nonzero] / slope[nonzero]
    for k in kinks:
        if 0.0 < k < 1.0:
            candidates.add(float(k))

    best_p, best_tv = 0.0, None
    for p in sorted(candidates):
        tv = 0.5 * float(np.abs(base + p * slope).sum())
        if best_tv is None or tv < best_tv:
            best_p, best_tv = p, tv
    return best_p, float(best_tv)


@dataclass(frozen=True)
class RoundState:
    round: int
    tv: float
    p_used: float | None
    dist: DiscreteDistribution


@dataclass(frozen=True)
class GapTrace:
    rounds: tuple[RoundState, ...]

    @property
    def final_tv(self) -> float:
        return self.rounds[-1].tv

    def tv_series(self) -> list[float]:
        return [s.tv for s in self.rounds]

    def to_json(self) -> dict:
        return {
            "rounds": [
                {
                    "round": s.round,
                    "tv": s.tv,
                    "p_used": s.p_used,
                    "probs": [float(v) for v in s.dist.probs],
                }
                for s in self.rounds
            ],
            "support": list(self.rounds[0].dist.support) if self.rounds else [],
        }


def simulate_ees_rounds(
    p_real: DiscreteDistribution,
    p_syn0: DiscreteDistribution,
    rounds: int,
    policy: str = "optimal_p",
    fixed_p: float | None = None,
) -> GapTrace:
    """Iterate residual-then-mix for up to ``rounds`` rounds.

    ``policy`` is "optimal_p" (pick the TV-minimizing ratio each round) or
    "fixed_p" (always use ``fixed_p``).  Stops early once TV falls below
    1e-12.  The trace's entry 0 is the initial state.
    """
    _check_same_support(p_real, p_syn0)
    if rounds < 0:
        raise ConfigError("rounds must be >= 0")
    if policy not in ("optimal_p", "fixed_p"):
        raise ConfigError(f"unknown policy {policy!r}; expected optimal_p or fixed_p")
    if policy == "fixed_p":
        if fixed_p is None or not 0.0 <= fixed_p <= 1.0:
            raise ConfigError("fixed_p policy requires a ratio in [0, 1]")

    current = p_syn0
    states = [RoundState(round=0, tv=tv_distance(p_real, current), p_used=None, dist=current)]
    for q in range(1, rounds + 1):
        if states[-1].tv <= _STOP_TV:
            break
        p_add, _mass = residual_distribution(p_real, current)
        if policy == "optimal_p":
            ratio, _ = optimal_mix_ratio(p_real, current, p_add)
        else:
            ratio = float(fixed_p)  # type: ignore[arg-type]
        current = mix(p_add, current, ratio)
        states.append(RoundState(round=q, tv=tv_distance(p_real, current), p_used=ratio, dist=current))
    return GapTrace(rounds=tuple(states))


def simulate_classifier_gap(
    s_joint: DiscreteDistribution, d_joint: DiscreteDistribution
) -> tuple[float, DiscreteDistribution]:
    """Error mass and error distribution of the plug-in classifier.

    Both distributions live on the same ordered support of ``(x, y)``
    pairs.  The classifier learned from ``s_joint`` predicts
    ``argmax_y s(y | x)`` with ties toward the label appearing earlier in
    the support; an ``x`` carrying no ``s_joint`` mass at all falls back to
    the argmax of the ``s_joint`` label prior.  The error event is weighted
    under ``d_joint``.
    """
    _check_same_support(s_joint, d_joint)
    atoms = []
    for atom in s_joint.support:
        if not (isinstance(atom, tuple) and len(atom) == 2):
            raise ConfigError("classifier-gap supports must consist of (x, y) pairs")
        atoms.append(atom)

    xs: list = []
    ys: list = []
    for x, y in atoms:
        if x not in xs:
            xs.append(x)
        if y not in ys:
            ys.append(y)

    s_mass = {atom: float(p) for atom, p in zip(atoms, s_joint.probs)}
    prior = [sum(s_mass.get((x, y), 0.0) for x in xs) for y in ys]

    def _argmax(scores: Sequence[float]):
        best = 0
        for i in range(1, len(scores)):
            if scores[i] > scores[best]:
                best = i
        return best

    predicted = {}
    for x in xs:
        scores = [s_mass.get((x, y), 0.0) for y in ys]
        if sum(scores) == 0.0:
            predicted[x] = ys[_argmax(prior)]
        else:
            predicted[x] = ys[_argmax(scores)]

    error_probs = np.array(
        [float(p) if predicted[x] != y else 0.0 for (x, y), p in zip(atoms, d_joint.probs)]
    )
    error_mass = float(error_probs.sum())
    if error_mass == 0.0:
        raise NoErrorsError("NoErrors: the classifier is perfect under the target distribution")
    error_dist = DiscreteDistribution(support=s_joint.support, probs=error_probs / error_mass)
    return error_mass, error_dist
