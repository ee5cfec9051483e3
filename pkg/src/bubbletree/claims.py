"""Forward, European, and American claim pricing with bubble relations.

Claims live on a horizon [0, T] over which the asset pays no dividends and
does not mature on any charged path, so the asset's fundamental value at a
node is just the upper conditional expectation of its discounted time-T
price. Strikes are monetary: a strike K exercised at a node is worth K over
the account value there, which collapses to plain K when rates are zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Mapping

from .ambiguity import (
    CapExceededError,
    MeasureFamily,
    RectangularFamily,
    cond_expectation,
    enumerate_extreme_measures,
    expectation_sweep,
    node_charged,
)
from .lattice import AdaptedProcess, MarketSpec, discount_factors, require_valid, tau_node_map

CLAIM_KINDS = ("forward", "euro_call", "euro_put", "amer_call", "amer_put", "custom_terminal")


class AssumptionViolationError(ValueError):
    """The claim-pricing assumptions (no dividends before T, no maturity on a
    charged path by T) do not hold."""


class RectangularityError(TypeError):
    """American pricing needs a rectangular family (the exchange of suprema
    over stopping times and measures is only safe there)."""


@dataclass(frozen=True)
class Claim:
    kind: str
    maturity: int
    strike: float = 0.0
    payoff: Mapping[str, float] | None = None  # custom_terminal only

    def __post_init__(self):
        if self.kind not in CLAIM_KINDS:
            raise ValueError(f"unknown claim kind {self.kind!r}")
        if self.strike < 0:
            raise ValueError("strike must be nonnegative")
        if self.kind == "custom_terminal" and self.payoff is None:
            raise ValueError("custom_terminal claims need a payoff map")


def validate_claim(
    spec: MarketSpec, claim: Claim, actual: MeasureFamily | None = None
) -> None:
    require_valid(spec)
    tree = spec.tree
    T = claim.maturity
    if not 1 <= T <= tree.horizon:
        raise AssumptionViolationError(f"maturity {T} outside [1, {tree.horizon}]")
    taumap = tau_node_map(spec)
    for n in tree.preorder():
        t = tree.time(n)
        if t > T:
            continue
        if actual is not None and not node_charged(actual, n):
            continue
        if taumap[n] is not None:
            raise AssumptionViolationError(
                f"asset matures at {taumap[n]!r} on a charged path before T={T}"
            )
        if 1 <= t and abs(spec.dividend[n]) > 1e-12:
            raise AssumptionViolationError(f"dividend paid at {n!r} inside [0, T]")


def _intrinsic(spec: MarketSpec, claim: Claim, node: str, B: Mapping[str, float]) -> float:
    s = spec.price[node] / B[node]
    k = claim.strike / B[node]
    if claim.kind in ("forward",):
        return s - k
    if claim.kind in ("euro_call", "amer_call"):
        return max(s - k, 0.0)
    if claim.kind in ("euro_put", "amer_put"):
        return max(k - s, 0.0)
    raise ValueError(f"no intrinsic value for {claim.kind!r}")


def terminal_payoff(spec: MarketSpec, claim: Claim) -> dict[str, float]:
    """Discounted payoff of the claim at its maturity nodes."""
    tree = spec.tree
    B = discount_factors(spec).values
    nodes = tree.level(claim.maturity)
    if claim.kind == "custom_terminal":
        missing = [n for n in nodes if n not in claim.payoff]
        if missing:
            raise ValueError(f"custom payoff missing at {missing}")
        return {n: float(claim.payoff[n]) for n in nodes}
    return {n: _intrinsic(spec, claim, n, B) for n in nodes}


def fundamental_claim_price(
    spec: MarketSpec, pricing: MeasureFamily, claim: Claim, actual: MeasureFamily | None = None
) -> AdaptedProcess:
    """Upper conditional expectation of the terminal payoff at every node up
    to maturity (European-style claims, forwards, custom terminal payoffs)."""
    if claim.kind in ("amer_call", "amer_put"):
        raise ValueError("American claims are priced by american_fundamental_price")
    validate_claim(spec, claim, actual)
    tree = spec.tree
    target = terminal_payoff(spec, claim)
    if isinstance(pricing, RectangularFamily):
        return AdaptedProcess(expectation_sweep(pricing, target))
    out = {}
    for t in range(claim.maturity + 1):
        for n in tree.level(t):
            if not node_charged(pricing, n):
                continue
            out[n] = cond_expectation(pricing, target, n, "upper")
    return AdaptedProcess(out)


def asset_fundamental(
    spec: MarketSpec, pricing: MeasureFamily, maturity: int, actual: MeasureFamily | None = None
) -> AdaptedProcess:
    """Claim-horizon fundamental value of the asset itself: the upper
    conditional expectation of the discounted time-T price."""
    return fundamental_claim_price(
        spec, pricing, Claim("forward", maturity, 0.0), actual
    )


def asset_bubble(
    spec: MarketSpec, pricing: MeasureFamily, maturity: int, actual: MeasureFamily | None = None
) -> AdaptedProcess:
    star = asset_fundamental(spec, pricing, maturity, actual)
    B = discount_factors(spec).values
    return AdaptedProcess(
        {n: spec.price[n] / B[n] - v for n, v in star.items()}
    )


@dataclass(frozen=True)
class ParityTriple:
    lower: float
    spread: float
    upper: float

    def ok(self, tol: float = 1e-9) -> bool:
        return self.lower - tol <= self.spread <= self.upper + tol


@dataclass(frozen=True)
class ParityReport:
    strike: float
    maturity: int
    t: int
    per_node: dict[str, ParityTriple]
    ok: bool

    @property
    def root(self) -> ParityTriple:
        if len(self.per_node) != 1:
            raise ValueError("root triple only defined when t indexes a single node")
        return next(iter(self.per_node.values()))


def parity_bounds(
    spec: MarketSpec,
    pricing: MeasureFamily,
    strike: float,
    maturity: int,
    t: int = 0,
    actual: MeasureFamily | None = None,
    tol: float = 1e-9,
) -> ParityReport:
    """Sandwich of the call-put spread between the lower and upper
    expectations of the forward payoff, per node at time t."""
    validate_claim(spec, Claim("forward", maturity, strike), actual)
    tree = spec.tree
    fwd = terminal_payoff(spec, Claim("forward", maturity, strike))
    call = fundamental_claim_price(spec, pricing, Claim("euro_call", maturity, strike), actual)
    put = fundamental_claim_price(spec, pricing, Claim("euro_put", maturity, strike), actual)
    per_node = {}
    all_ok = True
    for n in tree.level(t):
        if n not in call:
            continue
        lower = cond_expectation(pricing, fwd, n, "lower")
        upper = cond_expectation(pricing, fwd, n, "upper")
        triple = ParityTriple(lower, call[n] - put[n], upper)
        per_node[n] = triple
        all_ok = all_ok and triple.ok(tol)
    return ParityReport(strike, maturity, t, per_node, all_ok)


@dataclass(frozen=True)
class MarketParityReport:
    deviations: dict[str, float]
    enforced: bool
    ok: bool | None
    failing_nodes: tuple[str, ...]


def _strike_discount(spec: MarketSpec, maturity: int) -> float | None:
    """1/B at maturity when the account value there is path-independent."""
    B = discount_factors(spec).values
    vals = {B[n] for n in spec.tree.level(maturity)}
    lo, hi = min(vals), max(vals)
    if hi - lo > 1e-12:
        return None
    return 1.0 / lo


def market_parity(
    spec: MarketSpec,
    market_prices: Mapping[str, Mapping[str, float]],
    strike: float,
    maturity: int,
    no_dominance: bool,
    tol: float = 1e-9,
) -> MarketParityReport:
    """Check call minus put against asset minus (discounted) strike on the
    supplied market prices. With the no-dominance flag the identity is
    enforced; otherwise deviations are only reported."""
    require_valid(spec)
    if "euro_call" not in market_prices or "euro_put" not in market_prices:
        raise ValueError("market parity needs euro_call and euro_put prices")
    call = market_prices["euro_call"]
    put = market_prices["euro_put"]
    B = discount_factors(spec).values
    disc = _strike_discount(spec, maturity)
    forward = market_prices.get("forward")
    if forward is None and disc is None:
        raise ValueError(
            "market parity needs a forward price when the strike discount is path-dependent"
        )
    deviations = {}
    for n in call:
        if n not in put:
            continue
        if forward is not None and n in forward:
            target = forward[n]
        else:
            asset = market_prices.get("asset", {}).get(n, spec.price[n] / B[n])
            target = asset - strike * disc
        deviations[n] = (call[n] - put[n]) - target
    failing = tuple(n for n, d in deviations.items() if abs(d) > tol)
    return MarketParityReport(
        deviations=deviations,
        enforced=no_dominance,
        ok=(not failing) if no_dominance else None,
        failing_nodes=failing,
    )


@dataclass(frozen=True)
class ClaimBubbleReport:
    deltas: dict[str, dict[str, float]]
    forward_equals_asset: bool
    spread_dominates: bool

    @property
    def ok(self) -> bool:
        return self.forward_equals_asset and self.spread_dominates


def claim_bubbles(
    spec: MarketSpec,
    pricing: MeasureFamily,
    market_prices: Mapping[str, Mapping[str, float]],
    strike: float,
    maturity: int,
    actual: MeasureFamily | None = None,
    tol: float = 1e-9,
) -> ClaimBubbleReport:
    """Bubbles of the asset, forward, call, and put (market minus
    fundamental), with the relations: the forward bubble equals the asset
    bubble, and it cannot exceed the call-put bubble spread."""
    require_valid(spec)
    B = discount_factors(spec).values
    disc = _strike_discount(spec, maturity)
    star = {
        "asset": asset_fundamental(spec, pricing, maturity, actual),
        "forward": fundamental_claim_price(
            spec, pricing, Claim("forward", maturity, strike), actual
        ),
        "euro_call": fundamental_claim_price(
            spec, pricing, Claim("euro_call", maturity, strike), actual
        ),
        "euro_put": fundamental_claim_price(
            spec, pricing, Claim("euro_put", maturity, strike), actual
        ),
    }
    market: dict[str, Mapping[str, float]] = dict(market_prices)
    if "asset" not in market:
        market["asset"] = {
            n: spec.price[n] / B[n] for n in star["asset"].values
        }
    if "forward" not in market:
        if disc is None:
            raise ValueError("need a forward price or path-independent strike discount")
        market["forward"] = {n: market["asset"][n] - strike * disc for n in market["asset"]}
    deltas: dict[str, dict[str, float]] = {}
    for key in ("asset", "forward", "euro_call", "euro_put"):
        if key not in market:
            raise ValueError(f"missing market prices for {key}")
        deltas[key] = {
            n: market[key][n] - star[key][n] for n in market[key] if n in star[key]
        }
    common = set(deltas["asset"]) & set(deltas["forward"])
    feq = all(abs(deltas["forward"][n] - deltas["asset"][n]) <= tol for n in common)
    common2 = set(deltas["asset"]) & set(deltas["euro_call"]) & set(deltas["euro_put"])
    dom = all(
        deltas["asset"][n] <= deltas["euro_call"][n] - deltas["euro_put"][n] + tol
        for n in common2
    )
    return ClaimBubbleReport(deltas=deltas, forward_equals_asset=feq, spread_dominates=dom)


@dataclass(frozen=True)
class AmericanResult:
    process: AdaptedProcess
    exercise: frozenset[str]


def american_fundamental_price(
    spec: MarketSpec, pricing: MeasureFamily, claim: Claim, actual: MeasureFamily | None = None
) -> AmericanResult:
    """Backward dynamic program for the American fundamental price: at each
    node the larger of immediate (discounted-strike) exercise and the upper
    one-step expectation of continuing. Ties exercise, so the exercise region
    is closed and deterministic."""
    if claim.kind not in ("amer_call", "amer_put"):
        raise ValueError("american_fundamental_price prices amer_call / amer_put")
    if not isinstance(pricing, RectangularFamily):
        raise RectangularityError(
            "rectangularity required: American pricing needs a rectangular family"
        )
    validate_claim(spec, claim, actual)
    tree = spec.tree
    B = discount_factors(spec).values
    T = claim.maturity
    values: dict[str, float] = {}
    exercise: set[str] = set()
    for t in range(T, -1, -1):
        for n in tree.level(t):
            intrinsic = _intrinsic(spec, claim, n, B)
            if t == T:
                values[n] = intrinsic
                exercise.add(n)
                continue
            cont, _ = pricing.transitions[n].maximize(
                [values[c] for c in tree.children(n)]
            )
            if intrinsic >= cont:
                values[n] = intrinsic
                exercise.add(n)
            else:
                values[n] = cont
    return AmericanResult(AdaptedProcess(values), frozenset(exercise))


def _stopping_rule_count(tree, node: str, T: int, memo: dict) -> int:
    if node in memo:
        return memo[node]
    if tree.time(node) == T:
        memo[node] = 1
        return 1
    total = 1 + prod(_stopping_rule_count(tree, c, T, memo) for c in tree.children(node))
    memo[node] = total
    return total


def _stopping_rules(tree, node: str, T: int):
    if tree.time(node) == T:
        yield (node,)
        return
    yield (node,)
    child_rules = [list(_stopping_rules(tree, c, T)) for c in tree.children(node)]
    idx = [0] * len(child_rules)
    while True:
        combined: tuple[str, ...] = ()
        for rules, i in zip(child_rules, idx):
            combined = combined + rules[i]
        yield combined
        j = 0
        while j < len(idx):
            idx[j] += 1
            if idx[j] < len(child_rules[j]):
                break
            idx[j] = 0
            j += 1
        if j == len(idx):
            return


def american_oracle(
    spec: MarketSpec,
    pricing: MeasureFamily,
    claim: Claim,
    rule_cap: int = 50_000,
    measure_cap: int = 50_000,
) -> float:
    """Independent check of the dynamic program: enumerate every stopping
    rule (antichains covering all paths by maturity), evaluate the stopped
    payoff's expectation under every extreme measure, and take the largest."""
    if claim.kind not in ("amer_call", "amer_put"):
        raise ValueError("american_oracle prices amer_call / amer_put")
    validate_claim(spec, claim)
    tree = spec.tree
    B = discount_factors(spec).values
    T = claim.maturity
    n_rules = _stopping_rule_count(tree, tree.root, T, {})
    if n_rules > rule_cap:
        raise CapExceededError(f"{n_rules} stopping rules exceed cap {rule_cap}")
    measures = enumerate_extreme_measures(pricing, cap=measure_cap)
    intrinsic = {
        n: _intrinsic(spec, claim, n, B)
        for t in range(T + 1)
        for n in tree.level(t)
    }
    best = None
    for rule in _stopping_rules(tree, tree.root, T):
        rule_set = set(rule)
        stop_at = {}
        for leaf in tree.leaves:
            for n in tree.path(leaf):
                if n in rule_set:
                    stop_at[leaf] = n
                    break
        for q in measures:
            val = sum(
                q.get(leaf, 0.0) * intrinsic[stop_at[leaf]] for leaf in tree.leaves
            )
            if best is None or val > best:
                best = val
    return float(best)


@dataclass(frozen=True)
class AmericanBoundsReport:
    fundamental_ok: bool
    fundamental_worst: float
    market_ok: bool | None
    market_worst: float | None
    per_node: dict[str, tuple[float, float, float]]  # CE*, CA*, asset bubble


def american_bounds(
    spec: MarketSpec,
    pricing: MeasureFamily,
    strike: float,
    maturity: int,
    market_prices: Mapping[str, Mapping[str, float]] | None = None,
    actual: MeasureFamily | None = None,
    tol: float = 1e-9,
) -> AmericanBoundsReport:
    """American call bounds: the European value from below, the European
    value plus the asset bubble from above; and the same squeeze shifted by
    claim bubbles for market prices when those are supplied."""
    euro = fundamental_claim_price(spec, pricing, Claim("euro_call", maturity, strike), actual)
    amer = american_fundamental_price(
        spec, pricing, Claim("amer_call", maturity, strike), actual
    ).process
    bubble = asset_bubble(spec, pricing, maturity, actual)
    per_node = {}
    worst = 0.0
    ok = True
    for n in euro.values:
        ce, ca, d = euro[n], amer[n], bubble[n]
        per_node[n] = (ce, ca, d)
        lower_slack = ca - ce
        upper_slack = ce + d - ca
        worst = min(worst, lower_slack, upper_slack)
        if lower_slack < -tol or upper_slack < -tol:
            ok = False

    market_ok = None
    market_worst = None
    if market_prices is not None:
        needed = ("euro_call", "euro_put", "amer_call")
        missing = [k for k in needed if k not in market_prices]
        if missing:
            raise ValueError(f"missing market prices for {missing}")
        euro_put = fundamental_claim_price(
            spec, pricing, Claim("euro_put", maturity, strike), actual
        )
        market_ok = True
        market_worst = 0.0
        for n in market_prices["amer_call"]:
            if n not in euro.values:
                continue
            if any(n not in market_prices[k] for k in ("euro_call", "euro_put")):
                continue
            d_ac = market_prices["amer_call"][n] - amer[n]
            d_ec = market_prices["euro_call"][n] - euro[n]
            d_ep = market_prices["euro_put"][n] - euro_put[n]
            ca_m = market_prices["amer_call"][n]
            ce_m = market_prices["euro_call"][n]
            lower_slack = ca_m - (ce_m + d_ac - d_ec)
            upper_slack = (ce_m + d_ac - d_ep) - ca_m
            market_worst = min(market_worst, lower_slack, upper_slack)
            if lower_slack < -tol or upper_slack < -tol:
                market_ok = False
    return AmericanBoundsReport(ok, worst, market_ok, market_worst, per_node)
