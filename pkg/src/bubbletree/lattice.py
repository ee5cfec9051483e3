"""Event-tree market model: topology, market data, discounting, wealth.

The market lives on a finite uniform-depth event tree. Interior nodes are
information states, leaves are terminal states. All cash-flow arithmetic is
done in discounted units (time-0 money): a cash amount c paid at a node whose
money-market account value is B is worth c / B.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, NamedTuple

TAU_KINDS = ("bounded", "unbounded_finite", "possibly_infinite")


class InvalidMarketError(ValueError):
    """An operation was asked to run on a market that fails validation."""


class ShortSaleViolationError(ValueError):
    """A trading strategy holds a negative position in the risky asset."""


@dataclass(frozen=True)
class Node:
    id: str
    t: int
    parent: str | None
    children: tuple[str, ...]


class EventTree:
    """Rooted tree with ordered children; node times derived from parent links.

    Construction only requires a coherent parent map (single root, every
    parent known, everything reachable). Uniform leaf depth and the other
    market-level invariants are checked by ``validate_market`` so that broken
    trees can be represented and reported rather than rejected outright.
    """

    def __init__(self, parents: Mapping[str, str | None]):
        parents = dict(parents)
        if not parents:
            raise ValueError("empty tree")
        children: dict[str, list[str]] = {nid: [] for nid in parents}
        roots = []
        for nid, par in parents.items():
            if par is None:
                roots.append(nid)
            elif par not in parents:
                raise ValueError(f"node {nid!r} has unknown parent {par!r}")
            else:
                children[par].append(nid)
        if len(roots) != 1:
            raise ValueError(f"expected exactly one root, found {len(roots)}")
        self.root: str = roots[0]

        nodes: dict[str, Node] = {}
        order: list[str] = []
        stack = [(self.root, 0)]
        while stack:
            nid, t = stack.pop()
            nodes[nid] = Node(nid, t, parents[nid], tuple(children[nid]))
            order.append(nid)
            for c in reversed(children[nid]):
                stack.append((c, t + 1))
        if len(nodes) != len(parents):
            missing = sorted(set(parents) - set(nodes))
            raise ValueError(f"nodes unreachable from root: {missing}")
        self._nodes = nodes
        self._preorder = tuple(order)
        self.leaves: tuple[str, ...] = tuple(
            n for n in self._preorder if not nodes[n].children
        )
        self.horizon: int = max(nodes[n].t for n in self.leaves)
        levels: dict[int, list[str]] = {}
        for n in self._preorder:
            levels.setdefault(nodes[n].t, []).append(n)
        self._levels = {t: tuple(ns) for t, ns in levels.items()}

    @classmethod
    def uniform(cls, branching: Iterable[int], root: str = "r") -> "EventTree":
        """Build a uniform-depth tree; ``branching[t]`` children at depth t."""
        parents: dict[str, str | None] = {root: None}
        frontier = [root]
        for k in branching:
            nxt = []
            for nid in frontier:
                for j in range(k):
                    cid = f"{nid}{j}"
                    parents[cid] = nid
                    nxt.append(cid)
            frontier = nxt
        return cls(parents)

    # -- accessors ---------------------------------------------------------
    def node(self, nid: str) -> Node:
        return self._nodes[nid]

    def time(self, nid: str) -> int:
        return self._nodes[nid].t

    def parent(self, nid: str) -> str | None:
        return self._nodes[nid].parent

    def children(self, nid: str) -> tuple[str, ...]:
        return self._nodes[nid].children

    def is_leaf(self, nid: str) -> bool:
        return not self._nodes[nid].children

    def preorder(self) -> tuple[str, ...]:
        return self._preorder

    def non_leaves(self) -> tuple[str, ...]:
        return tuple(n for n in self._preorder if self._nodes[n].children)

    def level(self, t: int) -> tuple[str, ...]:
        return self._levels.get(t, ())

    def path(self, nid: str) -> tuple[str, ...]:
        out = []
        cur: str | None = nid
        while cur is not None:
            out.append(cur)
            cur = self._nodes[cur].parent
        return tuple(reversed(out))

    def subtree(self, nid: str) -> Iterator[str]:
        stack = [nid]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(self._nodes[n].children))

    def subtree_leaves(self, nid: str) -> tuple[str, ...]:
        return tuple(n for n in self.subtree(nid) if self.is_leaf(n))

    def descendants_at(self, nid: str, t: int) -> tuple[str, ...]:
        return tuple(n for n in self.subtree(nid) if self._nodes[n].t == t)

    @property
    def parent_map(self) -> dict[str, str | None]:
        return {n: self._nodes[n].parent for n in self._preorder}

    def __eq__(self, other) -> bool:
        return isinstance(other, EventTree) and self.parent_map == other.parent_map

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, nid: str) -> bool:
        return nid in self._nodes

    def structure_problems(self) -> list[str]:
        """Invariant violations deferred from construction (uniform depth)."""
        problems = []
        depths = {self._nodes[n].t for n in self.leaves}
        if len(depths) > 1:
            problems.append(
                "non-uniform depth: leaves at times "
                + ", ".join(str(t) for t in sorted(depths))
            )
        if self.horizon < 1:
            problems.append("horizon must be >= 1")
        return problems


@dataclass(frozen=True)
class StoppingTime:
    """Maturity events: an antichain of nodes where the asset is liquidated.

    A path whose prefix hits a tau node matures there; paths that reach the
    horizon without hitting one encode "tau beyond the truncation".
    """

    tau_nodes: frozenset[str]

    def infinite_on(self, tree: EventTree) -> frozenset[str]:
        dead = set()
        for a in self.tau_nodes:
            dead.update(tree.subtree_leaves(a))
        return frozenset(set(tree.leaves) - dead)

    def problems(self, tree: EventTree) -> list[str]:
        out = []
        for a in self.tau_nodes:
            if a not in tree:
                out.append(f"tau node {a!r} not in tree")
                continue
            if tree.time(a) < 1:
                out.append(f"tau node {a!r} at time {tree.time(a)} (tau must be > 0)")
            for anc in tree.path(a)[:-1]:
                if anc in self.tau_nodes:
                    out.append(f"tau nodes {anc!r} and {a!r} violate the antichain")
        return out


@dataclass(frozen=True)
class AdaptedProcess:
    """Real value per node. May live on a sub-domain such as {t < tau}."""

    values: dict[str, float]

    def __getitem__(self, nid: str) -> float:
        return self.values[nid]

    def get(self, nid: str, default: float | None = None):
        return self.values.get(nid, default)

    def __contains__(self, nid: str) -> bool:
        return nid in self.values

    def items(self):
        return self.values.items()

    def __len__(self) -> int:
        return len(self.values)

    def at_time(self, tree: EventTree, t: int) -> dict[str, float]:
        return {n: self.values[n] for n in tree.level(t) if n in self.values}


@dataclass(frozen=True)
class Strategy:
    """Risky-asset holdings: pi[n] is the position taken at node n and held
    over the following step. Nodes absent from the map hold zero."""

    pi: dict[str, float]

    def holding(self, nid: str) -> float:
        return self.pi.get(nid, 0.0)


@dataclass(frozen=True)
class ValidationFailure:
    code: str
    message: str
    nodes: tuple[str, ...] = ()


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    failures: tuple[ValidationFailure, ...]

    def messages(self) -> list[str]:
        return [f.message for f in self.failures]


@dataclass(frozen=True)
class MarketSpec:
    """Market data on an event tree.

    rates[n] is the spot rate over the step leaving node n, so the account
    value at a node of time t is the product of (1 + rate) along the path of
    its t ancestors and B(root) = 1. ``price`` is the ex-dividend price,
    ``dividend`` the dividend paid at the node (known there), ``payoff`` the
    liquidation value, defined exactly on the tau nodes.
    """

    tree: EventTree
    rates: dict[str, float]
    price: dict[str, float]
    dividend: dict[str, float]
    payoff: dict[str, float]
    tau: StoppingTime
    tau_kind: str = "bounded"


def tau_node_map(spec: MarketSpec) -> dict[str, str | None]:
    """For each node, the tau node on its path (itself included), if any."""
    tree = spec.tree
    out: dict[str, str | None] = {}
    for n in tree.preorder():
        par = tree.parent(n)
        inherited = out[par] if par is not None else None
        if inherited is not None:
            out[n] = inherited
        elif n in spec.tau.tau_nodes:
            out[n] = n
        else:
            out[n] = None
    return out


def validate_market(spec: MarketSpec) -> ValidationReport:
    """Check every market invariant; failures carry offending node ids."""
    failures: list[ValidationFailure] = []
    tree = spec.tree

    for msg in tree.structure_problems():
        failures.append(ValidationFailure("tree", msg))
    for msg in spec.tau.problems(tree):
        failures.append(ValidationFailure("tau", msg))

    def check_nonneg(data: Mapping[str, float], label: str, domain: Iterable[str]):
        missing = [n for n in domain if n not in data]
        if missing:
            failures.append(
                ValidationFailure(
                    f"missing {label}", f"missing {label} at nodes", tuple(missing)
                )
            )
        bad = [n for n in domain if n in data and data[n] < 0]
        if bad:
            failures.append(
                ValidationFailure(
                    f"negative {label}", f"negative {label} at nodes", tuple(bad)
                )
            )

    check_nonneg(spec.price, "price", tree.preorder())
    check_nonneg(spec.dividend, "dividend", tree.preorder())
    check_nonneg(spec.rates, "rate", tree.non_leaves())

    extra = sorted(set(spec.payoff) - spec.tau.tau_nodes)
    missing = sorted(spec.tau.tau_nodes - set(spec.payoff))
    if extra:
        failures.append(
            ValidationFailure("payoff domain", "payoff defined off tau nodes", tuple(extra))
        )
    if missing:
        failures.append(
            ValidationFailure("payoff domain", "tau nodes without payoff", tuple(missing))
        )
    bad = [n for n, x in spec.payoff.items() if x < 0]
    if bad:
        failures.append(
            ValidationFailure("negative payoff", "negative payoff at nodes", tuple(bad))
        )

    if spec.tau_kind not in TAU_KINDS:
        failures.append(
            ValidationFailure("tau kind", f"unknown tau_kind {spec.tau_kind!r}")
        )
    else:
        inf_on = spec.tau.infinite_on(tree)
        if spec.tau_kind == "bounded" and inf_on:
            failures.append(
                ValidationFailure(
                    "tau kind",
                    "tau_kind 'bounded' but some paths never mature",
                    tuple(sorted(inf_on)),
                )
            )
        if spec.tau_kind == "possibly_infinite" and not inf_on:
            failures.append(
                ValidationFailure(
                    "tau kind",
                    "tau_kind 'possibly_infinite' requires at least one path without a tau node",
                )
            )

    return ValidationReport(ok=not failures, failures=tuple(failures))


def require_valid(spec: MarketSpec) -> None:
    report = validate_market(spec)
    if not report.ok:
        raise InvalidMarketError("; ".join(report.messages()))


def discount_factors(spec: MarketSpec) -> AdaptedProcess:
    """Money-market account value per node: B(root) = 1, accruing the spot
    rate of each step along the path."""
    require_valid(spec)
    tree = spec.tree
    B: dict[str, float] = {}
    for n in tree.preorder():
        par = tree.parent(n)
        B[n] = 1.0 if par is None else B[par] * (1.0 + spec.rates[par])
    return AdaptedProcess(B)


def cumulative_dividends(spec: MarketSpec) -> AdaptedProcess:
    """Discounted dividends accumulated along the path, frozen from the tau
    node on (the asset pays nothing after liquidation)."""
    require_valid(spec)
    tree = spec.tree
    B = discount_factors(spec).values
    taumap = tau_node_map(spec)
    acc: dict[str, float] = {}
    for n in tree.preorder():
        par = tree.parent(n)
        prev = acc[par] if par is not None else 0.0
        tau_at = taumap[n]
        if tau_at is not None and tau_at != n:
            acc[n] = prev  # strictly after liquidation
        else:
            acc[n] = prev + spec.dividend[n] / B[n]
    return AdaptedProcess(acc)


def wealth_process(spec: MarketSpec) -> AdaptedProcess:
    """Discounted wealth: price while alive plus dividends collected so far,
    or collected dividends plus the discounted liquidation payoff after tau."""
    require_valid(spec)
    tree = spec.tree
    B = discount_factors(spec).values
    cum = cumulative_dividends(spec).values
    taumap = tau_node_map(spec)
    W: dict[str, float] = {}
    for n in tree.preorder():
        tau_at = taumap[n]
        if tau_at is None:
            W[n] = spec.price[n] / B[n] + cum[n]
        else:
            W[n] = cum[n] + spec.payoff[tau_at] / B[tau_at]
    return AdaptedProcess(W)


class GainsResult(NamedTuple):
    gains: AdaptedProcess
    value: AdaptedProcess
    self_financing: bool


def gains_process(
    spec: MarketSpec, strategy: Strategy, tol: float = 1e-9
) -> GainsResult:
    """Cumulative trading gains and portfolio value of a strategy.

    The gain over each step uses the holding chosen at the step's start node.
    ``self_financing`` is the literal no-rebalancing-while-funded criterion:
    the holding may only change at nodes where wealth is zero; under it the
    value process equals holding times wealth.
    """
    require_valid(spec)
    for n, p in strategy.pi.items():
        if p < 0:
            raise ShortSaleViolationError(f"negative holding {p} at node {n!r}")
    tree = spec.tree
    W = wealth_process(spec).values
    G: dict[str, float] = {}
    for n in tree.preorder():
        par = tree.parent(n)
        if par is None:
            G[n] = 0.0
        else:
            G[n] = G[par] + strategy.holding(par) * (W[n] - W[par])
    v0 = strategy.holding(tree.root) * W[tree.root]
    V = {n: v0 + g for n, g in G.items()}
    self_financing = True
    for n in tree.preorder():
        par = tree.parent(n)
        if par is None or tree.is_leaf(n):
            continue
        if abs((strategy.holding(n) - strategy.holding(par)) * W[n]) > tol:
            self_financing = False
            break
    return GainsResult(AdaptedProcess(G), AdaptedProcess(V), self_financing)


def strategy_eta(spec: MarketSpec, strategy: Strategy) -> AdaptedProcess:
    """Money-market leg implied by a self-financing risky position: the
    holding times collected dividends plus payoff once matured."""
    require_valid(spec)
    tree = spec.tree
    B = discount_factors(spec).values
    cum = cumulative_dividends(spec).values
    taumap = tau_node_map(spec)
    eta = {}
    for n in tree.preorder():
        x = cum[n]
        tau_at = taumap[n]
        if tau_at is not None:
            x += spec.payoff[tau_at] / B[tau_at]
        eta[n] = strategy.holding(n) * x
    return AdaptedProcess(eta)


def cash_flow_payoff(spec: MarketSpec) -> dict[str, float]:
    """Per leaf: all discounted dividends plus the discounted liquidation
    payoff if the path matured within the horizon. Residual price on paths
    that never mature is excluded (it is not a realizable cash flow)."""
    require_valid(spec)
    tree = spec.tree
    B = discount_factors(spec).values
    cum = cumulative_dividends(spec).values
    taumap = tau_node_map(spec)
    out = {}
    for leaf in tree.leaves:
        tau_at = taumap[leaf]
        cf = cum[leaf]
        if tau_at is not None:
            cf += spec.payoff[tau_at] / B[tau_at]
        out[leaf] = cf
    return out
