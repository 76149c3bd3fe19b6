"""Set-function machinery: ground sets, oracles, greedy and brute-force
maximizers, and exhaustive submodularity / monotonicity verifiers.

Conventions used throughout:
  * ground elements are contiguous integer ids 0..n-1,
  * subsets are passed around as frozensets of ids,
  * every oracle is normalized so that evaluate(emptyset) == 0.
"""

import itertools
from dataclasses import dataclass, field

from .errors import (
    ElementAlreadyPresent,
    GroundSetTooLarge,
    InfeasibleStart,
)

BRUTE_FORCE_LIMIT = 16
VERIFIER_LIMIT = 12
DEFAULT_TOLERANCE = 1e-9


class GroundSet:
    """Universe of elements a set function is defined over.

    Elements are the contiguous ids 0..size-1.
    """

    def __init__(self, size):
        if size < 1:
            raise ValueError("ground set must be nonempty")
        self.size = int(size)

    @property
    def elements(self):
        return list(range(self.size))

    def __len__(self):
        return self.size

    def __iter__(self):
        return iter(range(self.size))

    def __repr__(self):
        return f"GroundSet(size={self.size})"


class SetOracle:
    """Black-box value oracle for a set function with f(emptyset) = 0.

    Subclasses implement ``evaluate``; it must be deterministic and safe to
    call concurrently (read-only). ``empty_value`` is fixed at 0 by the
    normalization convention.
    """

    empty_value = 0.0

    def evaluate(self, subset):
        raise NotImplementedError

    def __call__(self, subset):
        return self.evaluate(frozenset(subset))

    def memoized(self):
        """Wrap this oracle in a subset->score cache.

        Caching never changes scores (oracles are deterministic); it only
        avoids repeated evaluations during greedy search. Off by default.
        """
        return MemoizedOracle(self)


class ModularOracle(SetOracle):
    """f(S) = sum of per-element weights; submodular with equality."""

    def __init__(self, weights):
        self.weights = list(weights)

    def evaluate(self, subset):
        return float(sum(self.weights[e] for e in subset))


class CoverageOracle(SetOracle):
    """Weighted coverage: f(S) = total weight of the union of covered items.

    ``sets`` maps each ground element to the collection of universe items it
    covers. Monotone submodular for nonnegative weights.
    """

    def __init__(self, sets, weights=None):
        self.sets = [frozenset(s) for s in sets]
        self.weights = dict(weights) if weights else None

    def evaluate(self, subset):
        covered = set()
        for e in subset:
            covered |= self.sets[e]
        if self.weights is None:
            return float(len(covered))
        return float(sum(self.weights.get(u, 0.0) for u in covered))


class WeightedSumOracle(SetOracle):
    """Nonnegative linear combination of oracles; preserves submodularity."""

    def __init__(self, oracles, coefficients):
        if len(oracles) != len(coefficients):
            raise ValueError("one coefficient per oracle required")
        if any(c < 0 for c in coefficients):
            raise ValueError("coefficients must be nonnegative")
        self.oracles = list(oracles)
        self.coefficients = [float(c) for c in coefficients]

    def evaluate(self, subset):
        return sum(c * o.evaluate(subset) for o, c in zip(self.oracles, self.coefficients))


class CallableOracle(SetOracle):
    """Adapter turning a plain ``subset -> float`` function into an oracle."""

    def __init__(self, fn):
        self.fn = fn

    def evaluate(self, subset):
        return float(self.fn(frozenset(subset)))


class MemoizedOracle(SetOracle):
    """Subset->score cache keyed by the sorted element tuple."""

    def __init__(self, inner):
        self.inner = inner
        self._cache = {}

    def evaluate(self, subset):
        key = tuple(sorted(subset))
        if key not in self._cache:
            self._cache[key] = self.inner.evaluate(subset)
        return self._cache[key]


class MembershipConstraint:
    """Down-monotone feasibility family over subsets."""

    kind = "custom"

    def is_feasible(self, subset):
        raise NotImplementedError


class CardinalityConstraint(MembershipConstraint):
    """Uniform matroid: feasible iff |S| <= k."""

    kind = "cardinality"

    def __init__(self, k):
        if k < 0:
            raise ValueError("cardinality bound must be nonnegative")
        self.k = int(k)

    def is_feasible(self, subset):
        return len(subset) <= self.k


class CustomConstraint(MembershipConstraint):
    """Constraint from a user predicate; the predicate must be down-monotone."""

    def __init__(self, predicate):
        self.predicate = predicate

    def is_feasible(self, subset):
        return bool(self.predicate(frozenset(subset)))


@dataclass
class GreedyTrace:
    """Ordered choices of a greedy run and the objective value after each."""

    chosen: list = field(default_factory=list)
    values: list = field(default_factory=list)

    @property
    def final_set(self):
        return frozenset(self.chosen)

    @property
    def final_value(self):
        return self.values[-1] if self.values else 0.0


def marginal_gain(oracle, base, e):
    """Gain of inserting element ``e`` into ``base``: f(base + e) - f(base)."""
    base = frozenset(base)
    if e in base:
        raise ElementAlreadyPresent(f"element {e} already in base set")
    return oracle.evaluate(base | {e}) - oracle.evaluate(base)


def greedy_maximize(
    oracle,
    ground,
    constraint,
    strategy="marginal-gain",
    positions=None,
    stop_when_no_gain=False,
):
    """Greedy set-function maximization.

    ``marginal-gain`` repeatedly adds the feasible element with the largest
    marginal gain (ties broken by lowest id) and stops when no feasible
    augmentation remains; with ``stop_when_no_gain`` it also stops once the
    best gain is <= 0.

    ``position-sequential`` scans ``positions`` (a list of element-id groups)
    left to right, fixing at each position the candidate that maximizes the
    objective, or none when no candidate beats the current value.
    """
    if not constraint.is_feasible(frozenset()):
        raise InfeasibleStart("empty set is infeasible")

    if strategy == "marginal-gain":
        return _greedy_marginal(oracle, ground, constraint, stop_when_no_gain)
    if strategy == "position-sequential":
        if positions is None:
            raise ValueError("position-sequential strategy requires grouped positions")
        return _greedy_sequential(oracle, constraint, positions)
    raise ValueError(f"unknown strategy: {strategy}")


def _greedy_marginal(oracle, ground, constraint, stop_when_no_gain):
    chosen = []
    values = []
    current = frozenset()
    current_value = 0.0
    remaining = set(ground)
    while True:
        feasible = [e for e in sorted(remaining) if constraint.is_feasible(current | {e})]
        if not feasible:
            break
        best_e = None
        best_gain = None
        for e in feasible:
            gain = oracle.evaluate(current | {e}) - current_value
            if best_gain is None or gain > best_gain:
                best_e, best_gain = e, gain
        if stop_when_no_gain and best_gain <= 0:
            break
        current = current | {best_e}
        current_value = current_value + best_gain
        remaining.discard(best_e)
        chosen.append(best_e)
        values.append(current_value)
    return GreedyTrace(chosen=chosen, values=values)


def _greedy_sequential(oracle, constraint, positions):
    chosen = []
    values = []
    current = frozenset()
    current_value = 0.0
    for group in positions:
        best_e = None
        best_value = current_value  # keeping the original token is always an option
        for e in sorted(group):
            if e in current or not constraint.is_feasible(current | {e}):
                continue
            value = oracle.evaluate(current | {e})
            if value > best_value:
                best_e, best_value = e, value
        if best_e is not None:
            current = current | {best_e}
            current_value = best_value
            chosen.append(best_e)
            values.append(current_value)
    return GreedyTrace(chosen=chosen, values=values)


def brute_force_maximize(oracle, ground, constraint, max_ground=BRUTE_FORCE_LIMIT):
    """Exact argmax over all feasible subsets by exhaustive enumeration.

    Ties are broken toward the lexicographically smallest subset (compared as
    sorted id tuples). Intended as the OPT oracle for small instances.
    """
    n = len(ground)
    if n > max_ground:
        raise GroundSetTooLarge(f"|E|={n} exceeds brute-force limit {max_ground}")
    best_subset = None
    best_value = None
    subsets = []
    elements = list(ground)
    for r in range(n + 1):
        subsets.extend(itertools.combinations(elements, r))
    subsets.sort()
    for subset in subsets:
        fs = frozenset(subset)
        if not constraint.is_feasible(fs):
            continue
        value = oracle.evaluate(fs) if subset else 0.0
        if best_value is None or value > best_value:
            best_subset, best_value = fs, value
    if best_subset is None:
        raise InfeasibleStart("empty set is infeasible")
    return best_subset, best_value


def _all_values(oracle, n):
    """Score every subset of 0..n-1, indexed by bitmask."""
    values = [0.0] * (1 << n)
    for mask in range(1, 1 << n):
        subset = frozenset(i for i in range(n) if mask >> i & 1)
        values[mask] = oracle.evaluate(subset)
    return values


@dataclass
class SubmodularityViolation:
    smaller: frozenset
    larger: frozenset
    element: int
    gap: float


@dataclass
class MonotonicityViolation:
    smaller: frozenset
    larger: frozenset
    gap: float


@dataclass
class VerifierReport:
    violations: list
    cases_checked: int
    tolerance: float

    @property
    def ok(self):
        return not self.violations


def check_submodular(oracle, ground, tolerance=DEFAULT_TOLERANCE, max_ground=VERIFIER_LIMIT):
    """Exhaustively test diminishing returns on every A <= B <= E, e not in B.

    Reports each case where gain(e|A) < gain(e|B) - tolerance. An empty
    report means the oracle is submodular within tolerance.
    """
    n = len(ground)
    if n > max_ground:
        raise GroundSetTooLarge(f"|E|={n} exceeds verifier limit {max_ground}")
    values = _all_values(oracle, n)
    violations = []
    checked = 0
    for bmask in range(1 << n):
        amask = bmask
        while True:
            for e in range(n):
                bit = 1 << e
                if bmask & bit:
                    continue
                checked += 1
                gain_a = values[amask | bit] - values[amask]
                gain_b = values[bmask | bit] - values[bmask]
                if gain_a < gain_b - tolerance:
                    violations.append(
                        SubmodularityViolation(
                            smaller=_mask_to_set(amask, n),
                            larger=_mask_to_set(bmask, n),
                            element=e,
                            gap=gain_b - gain_a,
                        )
                    )
            if amask == 0:
                break
            amask = (amask - 1) & bmask
    return VerifierReport(violations=violations, cases_checked=checked, tolerance=tolerance)


def check_monotone(oracle, ground, tolerance=DEFAULT_TOLERANCE, max_ground=VERIFIER_LIMIT):
    """Exhaustively test f(A) <= f(B) for every A <= B."""
    n = len(ground)
    if n > max_ground:
        raise GroundSetTooLarge(f"|E|={n} exceeds verifier limit {max_ground}")
    values = _all_values(oracle, n)
    violations = []
    checked = 0
    for bmask in range(1 << n):
        amask = bmask
        while True:
            if amask != bmask:
                checked += 1
                if values[amask] > values[bmask] + tolerance:
                    violations.append(
                        MonotonicityViolation(
                            smaller=_mask_to_set(amask, n),
                            larger=_mask_to_set(bmask, n),
                            gap=values[amask] - values[bmask],
                        )
                    )
            if amask == 0:
                break
            amask = (amask - 1) & bmask
    return VerifierReport(violations=violations, cases_checked=checked, tolerance=tolerance)


def _mask_to_set(mask, n):
    return frozenset(i for i in range(n) if mask >> i & 1)
