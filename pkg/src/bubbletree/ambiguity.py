"""Measure families and sublinear conditional expectations.

Two representations of a set of probability measures on the tree's leaves:

* ``RectangularFamily`` — a transition set per non-leaf node (a probability
  box over the children, or an explicit vertex list). The induced upper
  expectation is computed by backward recursion and is dynamically consistent
  (tower property), which is what makes one-step supermartingale checks
  equivalent to multi-step ones.
* ``ExplicitFamily`` — a finite list of leaf-probability vectors. Conditional
  values are extrema over the measures charging the conditioning node; nodes
  charged by no measure are polar and conditioning there is an error.

Upper expectations are suprema over the family; lower expectations are the
conjugates ``lower[X] = -upper[-X]`` (exact, by construction).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import prod
from typing import Mapping, Sequence, Union

from .lattice import AdaptedProcess, EventTree

CHARGE_TOL = 1e-12

CLASS_ORDER = ("none", "infi_supermartingale", "G_supermartingale", "G_martingale")


class PolarNodeError(ValueError):
    """Conditioning on a node that no measure in the family charges."""


class CapExceededError(RuntimeError):
    """An enumeration grew past its configured cap."""


def _dot(weights: Sequence[float], values: Sequence[float]) -> float:
    total = 0.0
    for w, v in zip(weights, values):
        total += w * v
    return total


@dataclass(frozen=True)
class TransitionSet:
    """One node's set of transition probabilities over its children.

    Either a box ``lower <= p <= upper`` intersected with the simplex, or an
    explicit finite list of probability vectors. Box extrema have a closed
    form: fill mass greedily toward the best children, ties resolved in child
    order so results are deterministic.
    """

    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None
    vertices: tuple[tuple[float, ...], ...] | None = None

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "TransitionSet":
        return cls(lower=tuple(float(x) for x in lower), upper=tuple(float(x) for x in upper))

    @classmethod
    def point(cls, weights: Sequence[float]) -> "TransitionSet":
        w = tuple(float(x) for x in weights)
        return cls(lower=w, upper=w)

    @classmethod
    def vertex_set(cls, vertices: Sequence[Sequence[float]]) -> "TransitionSet":
        return cls(vertices=tuple(tuple(float(x) for x in v) for v in vertices))

    @property
    def is_box(self) -> bool:
        return self.vertices is None

    def arity(self) -> int:
        if self.vertices is not None:
            return len(self.vertices[0]) if self.vertices else 0
        return len(self.lower)

    def problems(self, k: int) -> list[str]:
        out = []
        if self.vertices is not None:
            if not self.vertices:
                out.append("empty vertex list")
            for v in self.vertices:
                if len(v) != k:
                    out.append(f"vertex arity {len(v)} != {k}")
                elif min(v) < -CHARGE_TOL or abs(sum(v) - 1.0) > 1e-9:
                    out.append(f"vertex {v} not a probability vector")
            return out
        if self.lower is None or self.upper is None:
            return ["transition set needs bounds or vertices"]
        if len(self.lower) != k or len(self.upper) != k:
            return [f"bounds arity != {k}"]
        if any(l < 0 for l in self.lower):
            out.append("negative lower bound")
        if any(l > u for l, u in zip(self.lower, self.upper)):
            out.append("lower bound above upper bound")
        if sum(self.lower) > 1.0 + 1e-12 or sum(self.upper) < 1.0 - 1e-12:
            out.append("box does not intersect the probability simplex")
        return out

    def maximize(self, values: Sequence[float]) -> tuple[float, tuple[float, ...]]:
        """Max of sum(p * values) over the set, with an attaining vector."""
        if self.vertices is not None:
            best_val = None
            best_w = None
            for w in self.vertices:
                s = _dot(w, values)
                if best_val is None or s > best_val:
                    best_val, best_w = s, w
            return best_val, best_w
        k = len(values)
        p = list(self.lower)
        rem = 1.0 - sum(p)
        for i in sorted(range(k), key=lambda j: -values[j]):
            if rem <= 0.0:
                break
            add = min(self.upper[i] - self.lower[i], rem)
            p[i] += add
            rem -= add
        return _dot(p, values), tuple(p)

    def minimize(self, values: Sequence[float]) -> tuple[float, tuple[float, ...]]:
        val, w = self.maximize([-v for v in values])
        return -val, w

    def support(self) -> tuple[bool, ...]:
        """Which children can receive positive mass."""
        if self.vertices is not None:
            k = self.arity()
            return tuple(any(v[i] > CHARGE_TOL for v in self.vertices) for i in range(k))
        return tuple(u > CHARGE_TOL for u in self.upper)

    def vertex_list(self, cap: int = 4096) -> tuple[tuple[float, ...], ...]:
        """Extreme points. For a box these are the greedy fills over all child
        orderings (every vertex maximizes some linear functional)."""
        if self.vertices is not None:
            return self.vertices
        k = len(self.lower)
        if prod(range(1, k + 1)) > cap:
            raise CapExceededError(f"vertex enumeration over {k} children exceeds cap")
        seen = set()
        out = []
        for order in itertools.permutations(range(k)):
            p = list(self.lower)
            rem = 1.0 - sum(p)
            for i in order:
                if rem <= 0.0:
                    break
                add = min(self.upper[i] - self.lower[i], rem)
                p[i] += add
                rem -= add
            key = tuple(round(x, 15) for x in p)
            if key not in seen:
                seen.add(key)
                out.append(tuple(p))
        return tuple(out)


@dataclass(frozen=True)
class RectangularFamily:
    """Per-node transition sets; the induced set of path measures."""

    tree: EventTree
    transitions: Mapping[str, TransitionSet]
    role: str = "pricing"

    def with_role(self, role: str) -> "RectangularFamily":
        return RectangularFamily(self.tree, self.transitions, role)


@dataclass(frozen=True)
class ExplicitFamily:
    """A finite list of measures given by leaf probabilities."""

    tree: EventTree
    measures: tuple[dict[str, float], ...]
    role: str = "pricing"

    def with_role(self, role: str) -> "ExplicitFamily":
        return ExplicitFamily(self.tree, self.measures, role)


MeasureFamily = Union[RectangularFamily, ExplicitFamily]


def validate_family(family: MeasureFamily) -> list[str]:
    tree = family.tree
    problems: list[str] = []
    if isinstance(family, RectangularFamily):
        for n in tree.non_leaves():
            ts = family.transitions.get(n)
            if ts is None:
                problems.append(f"no transition set at node {n!r}")
                continue
            for msg in ts.problems(len(tree.children(n))):
                problems.append(f"node {n!r}: {msg}")
        return problems
    if not family.measures:
        problems.append("empty measure family")
    for i, q in enumerate(family.measures):
        total = 0.0
        for leaf, p in q.items():
            if leaf not in tree or not tree.is_leaf(leaf):
                problems.append(f"measure {i}: key {leaf!r} is not a leaf")
            if p < -CHARGE_TOL:
                problems.append(f"measure {i}: negative probability at {leaf!r}")
            total += p
        if abs(total - 1.0) > 1e-12:
            problems.append(f"measure {i}: probabilities sum to {total!r}")
    return problems


def _measure_mass(tree: EventTree, q: Mapping[str, float], node: str) -> float:
    return sum(q.get(leaf, 0.0) for leaf in tree.subtree_leaves(node))


def node_charged(family: MeasureFamily, node: str) -> bool:
    """Positive supremal probability of reaching the node under the family."""
    tree = family.tree
    if isinstance(family, ExplicitFamily):
        return any(_measure_mass(tree, q, node) > CHARGE_TOL for q in family.measures)
    path = tree.path(node)
    for par, child in zip(path, path[1:]):
        idx = tree.children(par).index(child)
        if not family.transitions[par].support()[idx]:
            return False
    return True


def charged_leaves(family: MeasureFamily | None, tree: EventTree) -> tuple[str, ...]:
    if family is None:
        return tree.leaves
    return tuple(leaf for leaf in tree.leaves if node_charged(family, leaf))


def check_full_support(family: MeasureFamily) -> bool:
    """True iff every leaf is charged by some measure of the family."""
    return all(node_charged(family, leaf) for leaf in family.tree.leaves)


def _target_time(tree: EventTree, values: Mapping[str, float], node: str) -> int:
    times = {tree.time(k) for k in values}
    if len(times) != 1:
        raise ValueError("values must all sit at a single time slice")
    (t,) = times
    if t < tree.time(node):
        raise ValueError("conditioning node is later than the target time")
    missing = [m for m in tree.descendants_at(node, t) if m not in values]
    if missing:
        raise ValueError(f"values missing at nodes {missing}")
    return t


def _cond_upper(
    family: MeasureFamily, values: Mapping[str, float], node: str, target_t: int
) -> float:
    tree = family.tree
    if isinstance(family, RectangularFamily):
        def val(n: str) -> float:
            if tree.time(n) == target_t:
                return float(values[n])
            kids = tree.children(n)
            v, _ = family.transitions[n].maximize([val(c) for c in kids])
            return v

        return val(node)

    best = None
    for q in family.measures:
        mass = _measure_mass(tree, q, node)
        if mass <= CHARGE_TOL:
            continue
        total = 0.0
        for m in tree.descendants_at(node, target_t):
            qm = _measure_mass(tree, q, m)
            if qm:
                total += qm * float(values[m])
        e = total / mass
        if best is None or e > best:
            best = e
    if best is None:
        raise PolarNodeError(f"no measure in the family charges node {node!r}")
    return best


def cond_expectation(
    family: MeasureFamily,
    values: Mapping[str, float] | AdaptedProcess,
    node: str,
    bound: str = "upper",
) -> float:
    """Conditional sublinear expectation at ``node`` of a single-time slice.

    ``bound="upper"`` takes the supremum over the family, ``"lower"`` the
    infimum (computed as the exact conjugate of the upper bound).
    """
    if isinstance(values, AdaptedProcess):
        values = values.values
    t = _target_time(family.tree, values, node)
    if bound == "upper":
        return _cond_upper(family, values, node, t)
    if bound == "lower":
        return -_cond_upper(family, {k: -v for k, v in values.items()}, node, t)
    raise ValueError(f"bound must be 'upper' or 'lower', got {bound!r}")


def expectation_sweep(
    family: RectangularFamily,
    values: Mapping[str, float],
    bound: str = "upper",
) -> dict[str, float]:
    """Conditional expectation of a single-time slice at every node at or
    above it, in one backward pass. Composes the same per-node extrema as
    ``cond_expectation`` (the recursion is the tower property), so values
    agree bitwise with the per-node calls."""
    if not isinstance(family, RectangularFamily):
        raise TypeError("expectation_sweep needs a rectangular family")
    tree = family.tree
    times = {tree.time(k) for k in values}
    if len(times) != 1:
        raise ValueError("values must all sit at a single time slice")
    (target_t,) = times
    missing = [n for n in tree.level(target_t) if n not in values]
    if missing:
        raise ValueError(f"values missing at nodes {missing}")
    sign = 1.0 if bound == "upper" else -1.0
    out: dict[str, float] = {}
    for t in range(target_t, -1, -1):
        for n in tree.level(t):
            if t == target_t:
                out[n] = float(values[n])
            else:
                kids = tree.children(n)
                v, _ = family.transitions[n].maximize([sign * out[c] for c in kids])
                out[n] = sign * v
    return out


def enumerate_extreme_measures(
    family: MeasureFamily, cap: int = 4096
) -> tuple[dict[str, float], ...]:
    """All products of per-node transition-set vertices, as leaf measures.

    The convex hull of the result equals the induced set of path measures;
    used as an independent oracle against the backward recursion.
    """
    if isinstance(family, ExplicitFamily):
        return family.measures
    tree = family.tree
    nodes = tree.non_leaves()
    vlists = [family.transitions[n].vertex_list(cap) for n in nodes]
    count = prod(len(v) for v in vlists)
    if count > cap:
        raise CapExceededError(f"{count} product measures exceed cap {cap}")
    measures = []
    for combo in itertools.product(*vlists):
        pick = dict(zip(nodes, combo))
        q: dict[str, float] = {}
        stack = [(tree.root, 1.0)]
        while stack:
            n, mass = stack.pop()
            if tree.is_leaf(n):
                q[n] = mass
                continue
            for w, c in zip(pick[n], tree.children(n)):
                stack.append((c, mass * w))
        measures.append(q)
    return tuple(measures)


def argmax_measure(
    family: MeasureFamily, payoff: Mapping[str, float]
) -> dict[str, float]:
    """A measure attaining the (unconditional) upper expectation of a leaf
    payoff; for rectangular families assembled from per-node maximizers."""
    tree = family.tree
    if isinstance(family, ExplicitFamily):
        best_q, best_v = None, None
        for q in family.measures:
            v = sum(q.get(leaf, 0.0) * payoff[leaf] for leaf in tree.leaves)
            if best_v is None or v > best_v:
                best_q, best_v = q, v
        if best_q is None:
            raise PolarNodeError("empty family")
        return dict(best_q)

    weights: dict[str, tuple[float, ...]] = {}

    def val(n: str) -> float:
        if tree.is_leaf(n):
            return float(payoff[n])
        v, w = family.transitions[n].maximize([val(c) for c in tree.children(n)])
        weights[n] = w
        return v

    val(tree.root)
    q = {}
    stack = [(tree.root, 1.0)]
    while stack:
        n, mass = stack.pop()
        if tree.is_leaf(n):
            q[n] = mass
            continue
        for w, c in zip(weights[n], tree.children(n)):
            stack.append((c, mass * w))
    return q


@dataclass(frozen=True)
class Classification:
    """Strongest martingale-type property a process satisfies, with slacks.

    ``per_node`` maps each checked node to (value, upper, lower) at the worst
    horizon. The classes are nested: every G-martingale is a G-supermartingale
    and every G-supermartingale is an infi-supermartingale.
    """

    strongest: str
    martingale_gap: float
    supermartingale_slack: float
    infi_slack: float
    per_node: dict[str, tuple[float, float, float]]

    def satisfies(self, cls: str) -> bool:
        return CLASS_ORDER.index(self.strongest) >= CLASS_ORDER.index(cls)

    @property
    def worst_slack(self) -> float:
        if self.strongest == "G_martingale":
            return self.martingale_gap
        if self.strongest == "G_supermartingale":
            return -min(self.supermartingale_slack, 0.0)
        return -min(self.infi_slack, 0.0)


def classify_process(
    family: MeasureFamily,
    process: Mapping[str, float] | AdaptedProcess,
    T: int | None = None,
    tol: float = 1e-9,
) -> Classification:
    """Classify a process as G-martingale / G-supermartingale /
    infi-supermartingale / none under the family.

    Rectangular families are checked one step at a time (dynamic consistency
    makes that equivalent to all horizons); explicit families are checked
    against every horizon directly. Nodes the family does not charge are
    skipped — the statements are quasi-sure.
    """
    if isinstance(process, AdaptedProcess):
        process = process.values
    tree = family.tree
    if T is None:
        T = tree.horizon
    per_node: dict[str, tuple[float, float, float]] = {}
    mart_gap = 0.0
    sup_slack = 0.0
    infi_slack = 0.0
    first = True

    def record(n: str, v: float, up: float, low: float):
        nonlocal mart_gap, sup_slack, infi_slack, first
        if n not in per_node or (v - up) < (per_node[n][0] - per_node[n][1]):
            per_node[n] = (v, up, low)
        if first:
            mart_gap, sup_slack, infi_slack = abs(v - up), v - up, v - low
            first = False
        else:
            mart_gap = max(mart_gap, abs(v - up))
            sup_slack = min(sup_slack, v - up)
            infi_slack = min(infi_slack, v - low)

    if isinstance(family, RectangularFamily):
        for n in tree.non_leaves():
            if tree.time(n) >= T or n not in process:
                continue
            kids = tree.children(n)
            if any(c not in process for c in kids):
                continue
            if not node_charged(family, n):
                continue
            vals = [process[c] for c in kids]
            ts = family.transitions[n]
            up, _ = ts.maximize(vals)
            low, _ = ts.minimize(vals)
            record(n, process[n], up, low)
    else:
        for n in tree.preorder():
            t = tree.time(n)
            if t >= T or n not in process or not node_charged(family, n):
                continue
            for t2 in range(t + 1, T + 1):
                level = tree.descendants_at(n, t2)
                if any(m not in process for m in level):
                    continue
                slice_vals = {m: process[m] for m in level}
                up = _cond_upper(family, slice_vals, n, t2)
                low = -_cond_upper(family, {k: -v for k, v in slice_vals.items()}, n, t2)
                record(n, process[n], up, low)

    if first:
        return Classification("G_martingale", 0.0, 0.0, 0.0, {})
    if mart_gap <= tol:
        strongest = "G_martingale"
    elif sup_slack >= -tol:
        strongest = "G_supermartingale"
    elif infi_slack >= -tol:
        strongest = "infi_supermartingale"
    else:
        strongest = "none"
    return Classification(strongest, mart_gap, sup_slack, infi_slack, per_node)


def check_absolute_continuity(
    pricing: MeasureFamily,
    actual: MeasureFamily,
    payoffs: Sequence[Mapping[str, float]],
) -> bool:
    """For each payoff, the measure attaining its upper pricing expectation
    must put mass only on states some actual measure charges. (The actual
    family is read as its convex hull, so a mixture may dominate.)"""
    for payoff in payoffs:
        qt = argmax_measure(pricing, payoff)
        for leaf, p in qt.items():
            if p > CHARGE_TOL and not node_charged(actual, leaf):
                return False
    return True
