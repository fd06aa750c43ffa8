"""Symbolic asymptotics of scale functions and regime classification.

A scale function here is restricted to the log-power family

    e(eps) = eps**p * |log eps|**q,        p > 0, p and q rational,

the smallest family with a decidable total asymptotic order that still
contains functions such as eps**2 / |log eps|.  Exponents are exact
``fractions.Fraction`` values: asymptotic equality must be exact, and float
equality would misclassify resonances.

The module provides

* the total asymptotic order (`compare`),
* separatedness and well-separatedness tests for ordered lists,
* the joint test for a (spatial, temporal) pair of lists (`check_jointly`),
* the regime classifier (`classify_pair`) deciding which local problem
  characterises the corrector: slow temporal, slow resonant, rapid temporal
  or rapid resonant, together with the position ``k`` of the spatial scale
  among the temporal ones.

All values are immutable; every function is pure and safe to call from any
number of concurrent workers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import ScaleRejection

__all__ = [
    "Order",
    "Relation",
    "RegimeKind",
    "SeparationMode",
    "LogPowerScale",
    "ScalePair",
    "JointCheck",
    "RegimeClassification",
    "compare",
    "is_separated",
    "is_well_separated",
    "check_jointly",
    "classify_pair",
]


class Order(enum.Enum):
    """Asymptotic order of a/b as eps -> 0+."""

    FASTER = "Faster"        # a/b -> 0
    EQUIVALENT = "Equivalent"  # a/b -> positive constant (exact exponent match)
    SLOWER = "Slower"        # a/b -> infinity


class Relation(enum.Enum):
    MATCHES = "Matches"
    BETWEEN = "Between"


class RegimeKind(enum.Enum):
    SLOW_TEMPORAL = "SlowTemporal"
    SLOW_RESONANT = "SlowResonant"
    RAPID_TEMPORAL = "RapidTemporal"
    RAPID_RESONANT = "RapidResonant"


class SeparationMode(enum.Enum):
    SEPARATED = "Separated"
    WELL_SEPARATED = "WellSeparated"


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, float):
        # Floats are accepted for convenience but converted exactly; callers
        # that care about resonance should pass strings or Fractions.
        return Fraction(value).limit_denominator(10**9)
    raise TypeError(f"cannot interpret {value!r} as a rational exponent")


@dataclass(frozen=True, order=False)
class LogPowerScale:
    """The scale function eps**p * |log eps|**q with exact rational exponents.

    Invariant: p > 0, so the function is microscopic and ultimately positive.
    """

    p: Fraction
    q: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "p", _as_fraction(self.p))
        object.__setattr__(self, "q", _as_fraction(self.q))
        if self.p <= 0:
            raise ValueError(f"scale exponent p must be positive, got {self.p}")

    @classmethod
    def parse(cls, spec) -> "LogPowerScale":
        """Build from ``{"p": "a/b", "q": "c/d"}``, ``"a/b"`` or ``"a/b:c/d"``."""
        if isinstance(spec, LogPowerScale):
            return spec
        if isinstance(spec, dict):
            return cls(_as_fraction(spec["p"]), _as_fraction(spec.get("q", 0)))
        if isinstance(spec, str):
            if ":" in spec:
                p_str, q_str = spec.split(":", 1)
                return cls(_as_fraction(p_str), _as_fraction(q_str))
            return cls(_as_fraction(spec))
        if isinstance(spec, (int, float, Fraction)):
            return cls(_as_fraction(spec))
        raise TypeError(f"cannot parse scale specification {spec!r}")

    def square(self) -> "LogPowerScale":
        """The square of this scale function (exponents doubled)."""
        return LogPowerScale(2 * self.p, 2 * self.q)

    def realize(self, eps: float) -> float:
        """Numeric value at a concrete eps in (0, 1)."""
        if not 0.0 < eps < 1.0:
            raise ValueError(f"eps must lie in (0, 1), got {eps}")
        return eps ** float(self.p) * abs(math.log(eps)) ** float(self.q)

    def to_json(self) -> dict:
        return {"p": str(self.p), "q": str(self.q)}

    def __str__(self) -> str:
        if self.q == 0:
            return f"eps^{self.p}"
        return f"eps^{self.p}*|log eps|^{self.q}"


def compare(a: LogPowerScale, b: LogPowerScale) -> Order:
    """Total asymptotic order of a/b as eps -> 0+.

    a is FASTER than b (a/b -> 0) iff a.p > b.p, or a.p == b.p and a.q < b.q;
    EQUIVALENT iff the exponent pairs coincide; SLOWER otherwise.  The order
    is a lexicographic order on (p, -q), hence antisymmetric and transitive.
    """
    if a.p > b.p or (a.p == b.p and a.q < b.q):
        return Order.FASTER
    if a.p == b.p and a.q == b.q:
        return Order.EQUIVALENT
    return Order.SLOWER


def _sort_key(scale: LogPowerScale):
    # Slowest first: increasing p, and for equal p decreasing q.
    return (scale.p, -scale.q)


def is_separated(scales: Sequence[LogPowerScale]) -> bool:
    """True iff every entry tends to 0 faster than its predecessor."""
    scales = list(scales)
    if not scales:
        raise ValueError("separatedness is defined for nonempty lists")
    return all(
        compare(scales[i + 1], scales[i]) is Order.FASTER for i in range(len(scales) - 1)
    )


def is_well_separated(scales: Sequence[LogPowerScale]) -> bool:
    """True iff consecutive power exponents are strictly increasing.

    For log-power scales, (1/e_k) * (e_{k+1}/e_k)**l -> 0 for some positive
    integer l exactly when p_{k+1} > p_k; equal p with differing q fails for
    every l, which is what distinguishes this from mere separatedness.
    """
    scales = list(scales)
    if not scales:
        raise ValueError("well-separatedness is defined for nonempty lists")
    return all(scales[i + 1].p > scales[i].p for i in range(len(scales) - 1))


def _passes(scales: Sequence[LogPowerScale], mode: SeparationMode) -> bool:
    if mode is SeparationMode.SEPARATED:
        return is_separated(scales)
    return is_well_separated(scales)


@dataclass(frozen=True)
class ScalePair:
    """Ordered spatial and temporal scale-function lists (slowest first)."""

    spatial: tuple[LogPowerScale, ...]
    temporal: tuple[LogPowerScale, ...]

    def __post_init__(self):
        object.__setattr__(self, "spatial", tuple(LogPowerScale.parse(s) for s in self.spatial))
        object.__setattr__(self, "temporal", tuple(LogPowerScale.parse(s) for s in self.temporal))
        if not self.spatial or not self.temporal:
            raise ValueError("both scale lists must be nonempty")

    @classmethod
    def parse(cls, spec: dict) -> "ScalePair":
        return cls(tuple(spec["spatial"]), tuple(spec["temporal"]))

    def to_json(self) -> dict:
        return {
            "spatial": [s.to_json() for s in self.spatial],
            "temporal": [s.to_json() for s in self.temporal],
        }


@dataclass(frozen=True)
class JointCheck:
    """Outcome of the joint separatedness test for a pair of lists.

    ``matched_pairs`` holds 0-based (spatial index, temporal index) pairs of
    exactly equal scales (category (i)); ``merged`` is the sorted list of the
    remaining scales (category (ii)), which must itself pass the mode's test.
    """

    accepted: bool
    matched_pairs: tuple[tuple[int, int], ...]
    merged: tuple[LogPowerScale, ...]
    failure: str | None = None

    def to_json(self) -> dict:
        return {
            "accepted": self.accepted,
            "matched_pairs": [list(p) for p in self.matched_pairs],
            "merged": [s.to_json() for s in self.merged],
            "failure": self.failure,
        }


def check_jointly(pair: ScalePair, mode: SeparationMode = SeparationMode.WELL_SEPARATED) -> JointCheck:
    """Joint (well-)separatedness test for a spatial/temporal pair of lists.

    Both lists must individually pass the mode's test.  Exactly equal
    spatial/temporal entries are then matched greedily left to right (greedy
    matching is canonical because equivalence is exact structural equality);
    the unmatched remainder of both lists is merged, sorted by asymptotic
    order, and accepted iff it passes the mode's test.  An empty remainder is
    accepted vacuously.
    """
    if not _passes(pair.spatial, mode):
        return JointCheck(False, (), (), failure=f"spatial list is not {mode.value.lower()}")
    if not _passes(pair.temporal, mode):
        return JointCheck(False, (), (), failure=f"temporal list is not {mode.value.lower()}")

    matched: list[tuple[int, int]] = []
    used_temporal: set[int] = set()
    for i, s in enumerate(pair.spatial):
        for j, tscale in enumerate(pair.temporal):
            if j in used_temporal:
                continue
            if compare(s, tscale) is Order.EQUIVALENT:
                matched.append((i, j))
                used_temporal.add(j)
                break

    matched_spatial = {i for i, _ in matched}
    remainder = [s for i, s in enumerate(pair.spatial) if i not in matched_spatial]
    remainder += [t for j, t in enumerate(pair.temporal) if j not in used_temporal]
    remainder.sort(key=_sort_key)

    if remainder and not _passes(remainder, mode):
        return JointCheck(
            False,
            tuple(matched),
            tuple(remainder),
            failure=f"merged remainder is not {mode.value.lower()}",
        )
    return JointCheck(True, tuple(matched), tuple(remainder))


@dataclass(frozen=True)
class RegimeClassification:
    """Which local problem characterises the corrector for a scale pair.

    ``k`` is the position of the spatial scale among the temporal ones: the
    largest index (1-based) whose temporal scale is slower than or equivalent
    to the spatial scale, 0 if none.  ``relation`` records whether the spatial
    scale exactly matches temporal entry k.  ``index`` carries l-bar for
    RapidTemporal and l-ring for RapidResonant, None for the slow regimes.
    """

    k: int
    relation: Relation
    regime: RegimeKind
    index: int | None = None

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if self.k == 0 and self.relation is Relation.MATCHES:
            raise ValueError("k = 0 forces relation = Between")
        has_index = self.regime in (RegimeKind.RAPID_TEMPORAL, RegimeKind.RAPID_RESONANT)
        if has_index != (self.index is not None):
            raise ValueError("index is carried by rapid regimes exactly")
        if self.regime is RegimeKind.RAPID_TEMPORAL and self.index < self.k + 1:
            raise ValueError("RapidTemporal index must be at least k+1")
        if self.regime is RegimeKind.RAPID_RESONANT and self.index < self.k + 2:
            raise ValueError("RapidResonant index must be at least k+2")

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "relation": self.relation.value,
            "regime": self.regime.value,
            "index": self.index,
        }


def classify_pair(
    spatial: LogPowerScale | str | dict,
    temporal: Iterable[LogPowerScale | str | dict],
) -> RegimeClassification:
    """Classify a (spatial, temporal-list) pair into its corrector regime.

    The pair must pass the joint well-separatedness test with the single
    spatial scale: either the spatial scale exactly matches one temporal
    entry and the remainder is well-separated, or inserting it into the
    temporal list yields a well-separated list.  Classification then compares
    each temporal scale with the square of the spatial scale (the parabolic
    resonance threshold); this is invariant under reparametrising the scale
    parameter, and reduces to comparing with eps**2 once the spatial scale is
    normalised to eps.

    Raises:
        ScaleRejection: if the precondition fails or no regime applies (the
            latter cannot occur for log-power scales; it is kept as a guard
            for future scale families rather than silently guessing).
    """
    spatial = LogPowerScale.parse(spatial)
    temporal = tuple(LogPowerScale.parse(t) for t in temporal)
    if not temporal:
        raise ValueError("temporal list must be nonempty")
    m = len(temporal)

    joint = check_jointly(ScalePair((spatial,), temporal), SeparationMode.WELL_SEPARATED)
    if not joint.accepted:
        raise ScaleRejection(
            f"pair is not jointly well-separated: {joint.failure}", stage="joint_check"
        )

    # Position of the spatial scale: temporal entries slower than or equal to
    # it form a prefix of the (well-separated, hence strictly ordered) list.
    k = 0
    relation = Relation.BETWEEN
    for j, tscale in enumerate(temporal, start=1):
        order = compare(tscale, spatial)
        if order is Order.SLOWER:
            k = j
        elif order is Order.EQUIVALENT:
            k = j
            relation = Relation.MATCHES

    resonant = spatial.square()
    orders = [compare(tscale, resonant) for tscale in temporal]

    equal_positions = [j for j, o in enumerate(orders, start=1) if o is Order.EQUIVALENT]
    if equal_positions:
        j_eq = equal_positions[0]
        if j_eq <= k:
            # Would require a temporal scale both slower than the spatial
            # scale and equal to its square; impossible for valid pairs.
            raise ScaleRejection(
                "resonant temporal scale precedes the spatial scale; "
                "pair is outside the classifiable set",
                stage="regime",
            )
        if j_eq == m:
            return RegimeClassification(k, relation, RegimeKind.SLOW_RESONANT)
        return RegimeClassification(k, relation, RegimeKind.RAPID_RESONANT, index=j_eq + 1)

    if orders[m - 1] is Order.SLOWER:
        return RegimeClassification(k, relation, RegimeKind.SLOW_TEMPORAL)

    # Fastest temporal scale beats the resonance threshold: find the first
    # index past k that does; its predecessor is strictly slower than the
    # threshold (minimality plus the no-equality branch above).
    for j in range(k + 1, m + 1):
        if orders[j - 1] is Order.FASTER:
            return RegimeClassification(k, relation, RegimeKind.RAPID_TEMPORAL, index=j)

    raise ScaleRejection(
        "no regime predicate applies; pair is outside the classifiable set",
        stage="regime",
    )
