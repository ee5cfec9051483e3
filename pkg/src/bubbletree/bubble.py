"""Fundamental prices, bubble processes, their classification, and dominance.

The fundamental value of the asset at a node is the upper conditional
expectation of its remaining discounted cash flows: dividends strictly after
the node, plus the liquidation payoff when the path matures inside the
horizon. Cash flows on paths that never mature are not realizable and
contribute nothing. The bubble is the discounted price minus this value; it
is zero from the maturity node on.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .ambiguity import (
    Classification,
    MeasureFamily,
    RectangularFamily,
    classify_process,
    cond_expectation,
    expectation_sweep,
    node_charged,
)
from .lattice import (
    AdaptedProcess,
    MarketSpec,
    Strategy,
    cash_flow_payoff,
    cumulative_dividends,
    discount_factors,
    require_valid,
    tau_node_map,
    wealth_process,
)
from .noarb import FtapReport, HedgeSolution, superhedge, verify_ftap


def _conditional_value_process(spec: MarketSpec, pricing: MeasureFamily) -> dict[str, float]:
    """Upper conditional expectation, per node, of total discounted cash
    flows. This is exactly the fundamental wealth process."""
    tree = spec.tree
    cf = cash_flow_payoff(spec)
    if isinstance(pricing, RectangularFamily):
        return expectation_sweep(pricing, cf)
    return {n: cond_expectation(pricing, cf, n, "upper") for n in tree.preorder()}


def fundamental_price(spec: MarketSpec, pricing: MeasureFamily) -> AdaptedProcess:
    """Fundamental price on the pre-maturity domain {t < tau}: superhedging
    value of the remaining cash flows, equal to their upper conditional
    expectation. Computed by backward recursion for rectangular families."""
    require_valid(spec)
    taumap = tau_node_map(spec)
    cum = cumulative_dividends(spec).values
    val = _conditional_value_process(spec, pricing)
    return AdaptedProcess(
        {n: val[n] - cum[n] for n in spec.tree.preorder() if taumap[n] is None}
    )


def fundamental_wealth(
    spec: MarketSpec, pricing: MeasureFamily, tol: float = 1e-9
) -> tuple[AdaptedProcess, bool]:
    """Fundamental wealth and whether it classifies as a G-martingale (it
    must, for rectangular families: the recursion is the tower property)."""
    require_valid(spec)
    w_star = AdaptedProcess(_conditional_value_process(spec, pricing))
    cls = classify_process(pricing, w_star, tol=tol)
    return w_star, cls.strongest == "G_martingale"


def stopped_price_process(spec: MarketSpec) -> AdaptedProcess:
    """Discounted market price while the asset lives, frozen at the
    discounted liquidation value from the maturity node on. This is the
    price-level process the necessary conditions classify."""
    require_valid(spec)
    tree = spec.tree
    B = discount_factors(spec).values
    taumap = tau_node_map(spec)
    out = {}
    for n in tree.preorder():
        a = taumap[n]
        out[n] = spec.price[n] / B[n] if a is None else spec.payoff[a] / B[a]
    return AdaptedProcess(out)


def bubble_process(
    spec: MarketSpec, pricing: MeasureFamily, tol: float = 1e-12
) -> AdaptedProcess:
    """Bubble = discounted price minus fundamental price before maturity and
    zero afterwards. Verifies the wealth identity bubble = W - W*."""
    require_valid(spec)
    tree = spec.tree
    B = discount_factors(spec).values
    taumap = tau_node_map(spec)
    cum = cumulative_dividends(spec).values
    val = _conditional_value_process(spec, pricing)
    W = wealth_process(spec).values
    beta = {}
    for n in tree.preorder():
        if taumap[n] is None:
            beta[n] = spec.price[n] / B[n] - (val[n] - cum[n])
        else:
            beta[n] = 0.0
        dev = abs(beta[n] - (W[n] - val[n]))
        if dev > tol:
            raise AssertionError(
                f"bubble identity beta = W - W* violated at {n!r} by {dev:.3g}"
            )
    return AdaptedProcess(beta)


def bubble_exists(
    beta: AdaptedProcess | Mapping[str, float],
    actual: MeasureFamily,
    tol: float = 1e-9,
) -> bool:
    """A bubble exists when some node the actual family charges carries a
    positive bubble."""
    values = beta.values if isinstance(beta, AdaptedProcess) else beta
    for n, b in values.items():
        if b > tol and node_charged(actual, n):
            return True
    return False


@dataclass(frozen=True)
class BubbleClassification:
    bubble_class: Classification
    price_class: Classification
    exists: bool
    consistency: dict


def classify_bubble(
    spec: MarketSpec,
    pricing: MeasureFamily,
    beta: AdaptedProcess | None = None,
    actual: MeasureFamily | None = None,
    tol: float = 1e-9,
) -> BubbleClassification:
    """Classify the bubble and the (stopped) price process, and evaluate the
    consistency of the outcome with the maturity structure:

    * bounded maturity and a bubble: bubble and price should classify as
      G-supermartingales;
    * unbounded maturity and a bubble: at least infi-supermartingales;
    * no dividends, price a G-supermartingale but not a G-martingale: a
      bubble should exist (sufficiency).

    Violations are reported, not raised; these are structural claims whose
    hypotheses the caller may not have granted.
    """
    require_valid(spec)
    if beta is None:
        beta = bubble_process(spec, pricing)
    price = stopped_price_process(spec)
    # classify over the bubble's own domain: up to the last pre-maturity time
    taumap = tau_node_map(spec)
    alive = [spec.tree.time(n) for n in spec.tree.preorder() if taumap[n] is None]
    horizon = max(alive) if alive else 0
    bubble_class = classify_process(pricing, beta, T=horizon, tol=tol)
    price_class = classify_process(pricing, price, T=horizon, tol=tol)
    exists = bubble_exists(beta, actual if actual is not None else pricing, tol=tol)

    consistency: dict = {"tau_kind": spec.tau_kind, "bubble_exists": exists}
    if exists:
        if spec.tau_kind == "bounded":
            consistency["expected_bubble_class"] = "G_supermartingale"
            consistency["expected_price_class"] = "G_supermartingale"
        else:
            consistency["expected_bubble_class"] = "infi_supermartingale"
            consistency["expected_price_class"] = "infi_supermartingale"
        consistency["bubble_class_ok"] = bubble_class.satisfies(
            consistency["expected_bubble_class"]
        )
        consistency["price_class_ok"] = price_class.satisfies(
            consistency["expected_price_class"]
        )
    no_dividends = all(abs(d) <= 1e-12 for d in spec.dividend.values())
    sufficiency: dict = {"applicable": no_dividends}
    if no_dividends:
        premise = price_class.satisfies("G_supermartingale") and not price_class.satisfies(
            "G_martingale"
        )
        sufficiency["premise"] = premise
        if premise:
            sufficiency["ok"] = exists
    consistency["sufficiency"] = sufficiency
    return BubbleClassification(bubble_class, price_class, exists, consistency)


@dataclass(frozen=True)
class BubblePropertyReport:
    nonneg_under_noarb: dict
    vanishes_at_tau: dict
    persistence: dict

    @property
    def ok(self) -> bool:
        return all(
            d.get("status") in ("holds", "skipped", "recorded")
            for d in (self.nonneg_under_noarb, self.vanishes_at_tau, self.persistence)
        )


def check_bubble_properties(
    spec: MarketSpec,
    pricing: MeasureFamily,
    actual: MeasureFamily | None = None,
    beta: AdaptedProcess | None = None,
    ftap: FtapReport | None = None,
    tol: float = 1e-9,
) -> BubblePropertyReport:
    """Structural bubble properties:

    (i) under no arbitrage the bubble is nonnegative on charged nodes
    (skipped, with a note, when the market admits arbitrage);
    (ii) the bubble vanishes at maturity nodes;
    (iii) with bounded maturity and no dividends, a dead bubble stays dead
    down the subtree; for unbounded maturities counterexamples are recorded
    without failing.
    """
    require_valid(spec)
    tree = spec.tree
    if beta is None:
        beta = bubble_process(spec, pricing)
    if ftap is None:
        ftap = verify_ftap(spec, actual)

    if ftap.no_arbitrage:
        charged = [
            n for n in tree.preorder()
            if actual is None or node_charged(actual, n)
        ]
        bad = [n for n in charged if beta[n] < -tol]
        worst = min((beta[n] for n in charged), default=0.0)
        nonneg = {
            "status": "holds" if not bad else "violated",
            "worst": worst,
            "nodes": tuple(bad),
        }
    else:
        nonneg = {"status": "skipped", "note": "market fails no-arbitrage"}

    tau_dev = max(
        (abs(beta[a]) for a in spec.tau.tau_nodes if a in beta), default=0.0
    )
    vanishes = {
        "status": "holds" if tau_dev <= 1e-12 else "violated",
        "worst": tau_dev,
    }

    no_dividends = all(abs(d) <= 1e-12 for d in spec.dividend.values())
    if not no_dividends:
        persistence = {"status": "skipped", "note": "market pays dividends"}
    else:
        counterexamples = []
        for n in tree.preorder():
            if abs(beta[n]) > tol:
                continue
            for m in tree.subtree(n):
                if beta[m] > tol:
                    counterexamples.append((n, m, beta[m]))
                    break
        if spec.tau_kind == "bounded":
            status = "holds" if not counterexamples else "violated"
        else:
            status = "holds" if not counterexamples else "recorded"
        persistence = {"status": status, "counterexamples": tuple(counterexamples)}

    return BubblePropertyReport(nonneg, vanishes, persistence)


@dataclass(frozen=True)
class DominancePair:
    """A cheap superhedge of the asset's cash flows, paired against buying
    and holding the asset at its market price. The hedge's gains dominate
    the buy-and-hold gains by at least the root price premium on every
    charged leaf."""

    hedge: HedgeSolution
    buy_and_hold: Strategy
    hedge_cost: float
    asset_cost: float
    fundamental_root: float
    gain_gap: dict[str, float]

    @property
    def min_gap(self) -> float:
        return min(self.gain_gap.values())


def find_dominating_strategy(
    spec: MarketSpec,
    pricing: MeasureFamily,
    actual: MeasureFamily | None = None,
    tol: float = 1e-9,
) -> DominancePair | None:
    """When the root price exceeds the fundamental value, superhedging the
    asset's cash flows for less than the asset costs dominates holding the
    asset. Returns None when there is no root bubble, or when the hedge cost
    does not undercut the price (possible when the supplied family is a
    strict subset of the supermartingale measures; the gap is then a pricing
    duality gap, not a dominance opportunity)."""
    require_valid(spec)
    tree = spec.tree
    B = discount_factors(spec).values
    s0_hat = spec.price[tree.root] / B[tree.root]
    cum0 = cumulative_dividends(spec)[tree.root]
    star = fundamental_price(spec, pricing)
    s_star0 = star[tree.root]
    if s0_hat - s_star0 <= tol:
        return None
    # cash flows accruing to a time-0 buyer: everything after the root dividend
    cf = {leaf: v - cum0 for leaf, v in cash_flow_payoff(spec).items()}
    hedge = superhedge(spec, cf, actual)
    if s0_hat - hedge.price <= tol:
        return None
    # hedge gains dominate cf - x'; buy-and-hold gains are cf - price
    gap = {leaf: s + (s0_hat - hedge.price) for leaf, s in hedge.slack.items()}
    return DominancePair(
        hedge=hedge,
        buy_and_hold=Strategy({n: 1.0 for n in tree.non_leaves()}),
        hedge_cost=hedge.price,
        asset_cost=s0_hat,
        fundamental_root=s_star0,
        gain_gap=gap,
    )


@dataclass(frozen=True)
class BubbleReport:
    """Bundle of the bubble analysis used by the command-line entry point."""

    S_star: AdaptedProcess
    W_star: AdaptedProcess
    beta: AdaptedProcess
    exists: bool
    classification: BubbleClassification
    properties: BubblePropertyReport
    tau_kind: str


def analyze_bubble(
    spec: MarketSpec,
    pricing: MeasureFamily,
    actual: MeasureFamily | None = None,
    ftap: FtapReport | None = None,
    tol: float = 1e-9,
) -> BubbleReport:
    require_valid(spec)
    s_star = fundamental_price(spec, pricing)
    w_star, _ = fundamental_wealth(spec, pricing, tol=tol)
    beta = bubble_process(spec, pricing)
    classification = classify_bubble(spec, pricing, beta, actual, tol=tol)
    properties = check_bubble_properties(spec, pricing, actual, beta, ftap, tol=tol)
    return BubbleReport(
        S_star=s_star,
        W_star=w_star,
        beta=beta,
        exists=classification.exists,
        classification=classification,
        properties=properties,
        tau_kind=spec.tau_kind,
    )
