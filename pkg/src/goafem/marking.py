"""Marking strategies mapping indicator fields to sets of marked elements.

All strategies are deterministic: ties are broken by ascending element
index.  Dörfler selection and its feasibility check use exact rational
arithmetic on the squared indicators, so the defining inequality
theta * xi^2 <= xi(M)^2 holds without floating-point slack.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from goafem.estimators import IndicatorField, weighted_indicator
from goafem.mesh import MarkedSet


class MarkingError(ValueError):
    """Invalid marking request or inapplicable strategy."""


STRATEGIES = ("doerfler", "maximum", "equidistribution", "general", "strategy-b")
COMBINE_RECIPES = ("smaller-set", "union", "weighted-rho", "strategy-b")


def builtin_weight(name: str):
    """Named weighting functions W for the two-indicator bulk criterion."""
    if name == "mean":
        return lambda x, y: 0.5 * (x + y)
    if name == "max-sin-exp":
        return lambda x, y: np.maximum(np.sin(0.5 * np.pi * x), np.exp2(y) - 1.0)
    if name == "pnorm10":
        return lambda x, y: (x**10 + y**10) ** 0.1 / 2**0.1
    raise MarkingError(f"unknown weighting function {name!r}")


BUILTIN_WEIGHTS = ("mean", "max-sin-exp", "pnorm10")


def weight_constant(w, grid: int = 21) -> float:
    """Grid estimate of C_W with W(x, y) <= C_W max(x, y) on the unit square."""
    t = np.linspace(0.0, 1.0, grid)
    x, y = np.meshgrid(t, t)
    mask = np.maximum(x, y) > 0
    ratio = np.asarray(w(x, y), dtype=float)[mask] / np.maximum(x, y)[mask]
    return float(ratio.max())


@dataclass(frozen=True)
class MarkRequest:
    """Strategy selection for the goal-oriented marking step.

    ``strategy`` picks the single-field criterion used by the smaller-set,
    union, and weighted-rho recipes; ``combine`` picks how primal and dual
    indicators interact.  ``m_fn`` drives the general criterion, ``w_fn``
    the two-indicator bulk criterion, and ``v_fn`` is an optional product
    criterion used for post hoc verification.
    """

    theta: float
    strategy: str = "doerfler"
    combine: str = "smaller-set"
    m_fn: object = None
    v_fn: object = None
    w_fn: object = None
    w_name: str = ""

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise MarkingError("theta must lie in (0, 1]")
        if self.strategy not in STRATEGIES:
            raise MarkingError(f"unknown strategy {self.strategy!r}")
        if self.combine not in COMBINE_RECIPES:
            raise MarkingError(f"unknown combination recipe {self.combine!r}")
        if (self.strategy == "strategy-b") != (self.combine == "strategy-b"):
            raise MarkingError("strategy-b must be selected on both axes")
        if self.strategy == "general" and self.m_fn is None:
            raise MarkingError("the general criterion requires an M function")
        if self.w_fn is not None:
            if abs(float(self.w_fn(1.0, 1.0)) - 1.0) > 1e-12:
                raise MarkingError("W(1, 1) must equal 1")
            if not np.isfinite(weight_constant(self.w_fn)):
                raise MarkingError("W admits no finite constant C_W on the grid")
        if self.v_fn is not None and not float(self.v_fn(1e-12, 1e-12)) < 1e-3:
            raise MarkingError("V must be continuous at the origin with V(0,0) = 0")

    @classmethod
    def from_key(cls, key: str, theta: float) -> "MarkRequest":
        """Parse a config key such as ``doerfler-smaller`` or ``strategyB:mean``."""
        table = {
            "doerfler-smaller": dict(strategy="doerfler", combine="smaller-set"),
            "doerfler-union": dict(strategy="doerfler", combine="union"),
            "maximum-union": dict(strategy="maximum", combine="union"),
            "equidist-union": dict(strategy="equidistribution", combine="union"),
            "rho-doerfler": dict(strategy="doerfler", combine="weighted-rho"),
        }
        if key in table:
            return cls(theta=theta, **table[key])
        if key.startswith("strategyB:"):
            name = key.split(":", 1)[1]
            return cls(
                theta=theta,
                strategy="strategy-b",
                combine="strategy-b",
                w_fn=builtin_weight(name),
                w_name=name,
            )
        raise MarkingError(
            f"unknown strategy key {key!r}; valid keys: {', '.join(strategy_keys())}"
        )


def strategy_keys() -> list[str]:
    return [
        "doerfler-smaller",
        "doerfler-union",
        "maximum-union",
        "equidist-union",
        "rho-doerfler",
    ] + [f"strategyB:{name}" for name in BUILTIN_WEIGHTS]


# ---------------------------------------------------------------------------
# Single-field criteria.
# ---------------------------------------------------------------------------

def _descending_order(values: np.ndarray) -> np.ndarray:
    return np.lexsort((np.arange(len(values)), -values))


def _marked(mesh, indices) -> MarkedSet:
    return MarkedSet.of(np.sort(np.asarray(indices, dtype=np.int64)), mesh)


def mark_doerfler(xi: IndicatorField, theta: float) -> MarkedSet:
    """Minimal descending-prefix set with theta * xi^2 <= xi(M)^2 (exact)."""
    if not 0.0 < theta <= 1.0:
        raise MarkingError("theta must lie in (0, 1]")
    sq = xi.squared
    order = _descending_order(sq)
    exact = [Fraction(v) for v in sq[order].tolist()]
    total = sum(exact, Fraction(0))
    if total == 0:
        return _marked(xi.mesh, [])
    target = Fraction(theta) * total
    acc = Fraction(0)
    chosen = 0
    while acc < target:
        acc += exact[chosen]
        chosen += 1
    return _marked(xi.mesh, order[:chosen])


def doerfler_satisfied(xi: IndicatorField, marked, theta: float) -> bool:
    """Exact-arithmetic check of the bulk inequality."""
    idx = marked.indices if isinstance(marked, MarkedSet) else np.asarray(marked)
    sq = xi.squared
    total = sum((Fraction(v) for v in sq.tolist()), Fraction(0))
    part = sum((Fraction(v) for v in sq[idx].tolist()), Fraction(0))
    return Fraction(theta) * total <= part


def mark_maximum(xi: IndicatorField, theta: float) -> MarkedSet:
    """Elements with xi(T) >= (1 - theta) * max xi; empty on a zero field."""
    if not 0.0 < theta <= 1.0:
        raise MarkingError("theta must lie in (0, 1]")
    values = xi.values
    top = values.max(initial=0.0)
    if top == 0.0:
        return _marked(xi.mesh, [])
    threshold = (1.0 - theta) * top
    if theta == 1.0:
        return _marked(xi.mesh, np.flatnonzero(values > 0.0))
    return _marked(xi.mesh, np.flatnonzero(values >= threshold))


def mark_equidistribution(xi: IndicatorField, theta: float) -> MarkedSet:
    """Elements whose squared indicator reaches (1 - theta) times the mean.

    Marks {T : xi(T)^2 >= (1 - theta) * xi^2 / #T}; empty on a zero field.
    The set is never empty otherwise, since the largest indicator always
    reaches the mean.
    """
    if not 0.0 < theta <= 1.0:
        raise MarkingError("theta must lie in (0, 1]")
    sq = xi.squared
    total = float(np.sum(sq))
    if total == 0.0:
        return _marked(xi.mesh, [])
    threshold = (1.0 - theta) * total / len(sq)
    if theta == 1.0:
        return _marked(xi.mesh, np.flatnonzero(sq > 0.0))
    return _marked(xi.mesh, np.flatnonzero(sq >= threshold))


def mark_general(xi: IndicatorField, m_fn) -> MarkedSet:
    """Grow a descending-order prefix until max over the rest <= M(xi(M))."""
    values = xi.values
    order = _descending_order(values)
    sorted_vals = values[order]
    acc = 0.0
    for k in range(len(order) + 1):
        rest_max = sorted_vals[k] if k < len(order) else 0.0
        if rest_max <= float(m_fn(np.sqrt(acc))):
            return _marked(xi.mesh, order[:k])
        acc += sorted_vals[k] ** 2
    return _marked(xi.mesh, order)


# ---------------------------------------------------------------------------
# Goal-oriented marking.
# ---------------------------------------------------------------------------

def _single_field_set(xi: IndicatorField, req: MarkRequest) -> MarkedSet:
    if req.strategy == "doerfler":
        return mark_doerfler(xi, req.theta)
    if req.strategy == "maximum":
        return mark_maximum(xi, req.theta)
    if req.strategy == "equidistribution":
        return mark_equidistribution(xi, req.theta)
    if req.strategy == "general":
        return mark_general(xi, req.m_fn)
    raise MarkingError(f"strategy {req.strategy!r} is not a single-field criterion")


def strategy_b_satisfied(eta: IndicatorField, zeta: IndicatorField, marked,
                         w_fn, theta: float) -> bool:
    """Check theta <= W(eta(M)^2/eta^2, zeta(M)^2/zeta^2)."""
    idx = marked.indices if isinstance(marked, MarkedSet) else np.asarray(marked)
    eta_sq = float(np.sum(eta.squared))
    zeta_sq = float(np.sum(zeta.squared))
    if eta_sq == 0.0 or zeta_sq == 0.0:
        raise MarkingError("strategy B requires nonzero global estimators")
    x = float(np.sum(eta.squared[idx])) / eta_sq
    y = float(np.sum(zeta.squared[idx])) / zeta_sq
    return theta <= float(w_fn(x, y))


def _mark_strategy_b(eta: IndicatorField, zeta: IndicatorField, req: MarkRequest) -> MarkedSet:
    eta_sq = float(np.sum(eta.squared))
    zeta_sq = float(np.sum(zeta.squared))
    if eta_sq == 0.0 or zeta_sq == 0.0:
        raise MarkingError("strategy B requires nonzero global estimators")
    score = np.maximum(eta.squared / eta_sq, zeta.squared / zeta_sq)
    order = _descending_order(score)
    x = np.cumsum(eta.squared[order]) / eta_sq
    y = np.cumsum(zeta.squared[order]) / zeta_sq
    w = np.asarray(req.w_fn(x, y), dtype=float)
    feasible = np.flatnonzero(w >= req.theta)
    k = int(feasible[0]) + 1 if len(feasible) else len(order)
    # Guard against cumulative-sum rounding at the boundary.
    while k < len(order) and not strategy_b_satisfied(eta, zeta, order[:k], req.w_fn, req.theta):
        k += 1
    return _marked(eta.mesh, order[:k])


def mark_goafem(eta: IndicatorField, zeta: IndicatorField, req: MarkRequest) -> MarkedSet:
    """Marking for the goal-oriented loop per the request's combination recipe.

    smaller-set / union apply the single-field strategy to eta and zeta and
    take the smaller set or the union; weighted-rho applies Dörfler marking
    to the globally weighted indicator; strategy-b grows a set in descending
    order of the larger normalized squared indicator until the bulk
    criterion W >= theta holds.
    """
    if eta.mesh is not zeta.mesh:
        raise MarkingError("indicator fields live on different meshes")
    if req.combine == "strategy-b":
        return _mark_strategy_b(eta, zeta, req)
    if req.combine == "weighted-rho":
        return mark_doerfler(weighted_indicator(eta, zeta), req.theta)
    m_eta = _single_field_set(eta, req)
    m_zeta = _single_field_set(zeta, req)
    if req.combine == "union":
        return _marked(eta.mesh, np.union1d(m_eta.indices, m_zeta.indices))
    if len(m_eta) <= len(m_zeta):
        return m_eta
    return m_zeta
