"""Command-line front end: market-file ingestion, dispatch, report emission.

Market files are JSON documents describing the tree, market data, the
stopping structure, and the ambiguity families (see ``parse_market_file``).
Reports come in three shapes: a human-readable text summary, a
machine-readable JSON document (byte-stable for identical inputs), and a CSV
of per-node values for external plotting.

Exit codes: 0 success, 1 input or schema error, 2 arbitrage where a
no-arbitrage precondition was required, 3 solver or enumeration limits hit.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from typing import Any, Mapping

from .ambiguity import (
    CapExceededError,
    ExplicitFamily,
    MeasureFamily,
    PolarNodeError,
    RectangularFamily,
    TransitionSet,
    classify_process,
    cond_expectation,
    validate_family,
)
from .bubble import analyze_bubble, bubble_process, find_dominating_strategy, stopped_price_process
from .claims import (
    AssumptionViolationError,
    Claim,
    RectangularityError,
    american_fundamental_price,
    american_oracle,
    fundamental_claim_price,
    terminal_payoff,
)
from .lattice import (
    EventTree,
    InvalidMarketError,
    MarketSpec,
    StoppingTime,
    discount_factors,
    validate_market,
    wealth_process,
)
from .noarb import NotRiskNeutralError, UnboundedHedgeError, robust_price, superhedge, verify_ftap

CLAIM_ALIASES = {
    "forward": "forward",
    "ecall": "euro_call",
    "eput": "euro_put",
    "acall": "amer_call",
    "aput": "amer_put",
}


class MarketFileError(ValueError):
    """Schema or validation failure in a market file, with field context."""


def _round12(x: float) -> float:
    return float(f"{float(x):.12g}")


def _rounded(obj: Any) -> Any:
    if isinstance(obj, float):
        return _round12(obj)
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, Mapping):
        return {str(k): _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = sorted(obj) if isinstance(obj, (set, frozenset)) else obj
        return [_rounded(v) for v in items]
    return str(obj)


@dataclass
class ParsedMarket:
    spec: MarketSpec
    actual: MeasureFamily
    pricing: MeasureFamily | None
    market_prices: dict[str, dict[str, float]]
    path: str


def _need(doc: Mapping, key: str, where: str):
    if key not in doc:
        raise MarketFileError(f"{where}: missing required field {key!r}")
    return doc[key]


def _num_map(doc: Mapping, key: str, where: str) -> dict[str, float]:
    raw = _need(doc, key, where)
    if not isinstance(raw, Mapping):
        raise MarketFileError(f"{where}: field {key!r} must map node ids to numbers")
    out = {}
    for nid, v in raw.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise MarketFileError(f"{where}: {key}[{nid!r}] is not a number")
        out[str(nid)] = float(v)
    return out


def _parse_family(doc: Mapping, tree: EventTree, where: str, role: str) -> MeasureFamily:
    kind = _need(doc, "type", where)
    if kind == "rectangular":
        raw = _need(doc, "transitions", where)
        transitions: dict[str, TransitionSet] = {}
        for nid, block in raw.items():
            if nid not in tree:
                raise MarketFileError(f"{where}: transition at unknown node {nid!r}")
            if "vertices" in block:
                transitions[nid] = TransitionSet.vertex_set(block["vertices"])
            else:
                lo = _need(block, "lower", f"{where}.{nid}")
                hi = _need(block, "upper", f"{where}.{nid}")
                transitions[nid] = TransitionSet.box(lo, hi)
        family: MeasureFamily = RectangularFamily(tree, transitions, role)
    elif kind == "explicit":
        raw = _need(doc, "measures", where)
        measures = tuple({str(k): float(v) for k, v in q.items()} for q in raw)
        family = ExplicitFamily(tree, measures, role)
    else:
        raise MarketFileError(f"{where}: unknown family type {kind!r}")
    problems = validate_family(family)
    if problems:
        raise MarketFileError(f"{where}: " + "; ".join(problems))
    return family


def parse_market_file(path: str) -> ParsedMarket:
    """Load and fully validate a JSON market file.

    Required fields: horizon, nodes (list of {id, parent, time}; listing
    order fixes child order), rates, prices, dividends, tau
    ({nodes, kind}), payoffs, actual (a measure family). Optional: pricing,
    market_prices ({claim-kind: {node: price}}).
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise MarketFileError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MarketFileError(f"{path}: not valid JSON: {exc}") from exc

    nodes = _need(doc, "nodes", path)
    parents: dict[str, str | None] = {}
    stated_times: dict[str, int] = {}
    for entry in nodes:
        nid = str(_need(entry, "id", f"{path}: node entry"))
        if nid in parents:
            raise MarketFileError(f"{path}: duplicate node id {nid!r}")
        par = entry.get("parent")
        parents[nid] = None if par is None else str(par)
        if "time" in entry:
            stated_times[nid] = int(entry["time"])
    try:
        tree = EventTree(parents)
    except ValueError as exc:
        raise MarketFileError(f"{path}: bad tree: {exc}") from exc
    for nid, t in stated_times.items():
        if tree.time(nid) != t:
            raise MarketFileError(
                f"{path}: node {nid!r} states time {t} but sits at depth {tree.time(nid)}"
            )
    horizon = _need(doc, "horizon", path)
    if horizon != tree.horizon:
        raise MarketFileError(
            f"{path}: stated horizon {horizon} != tree depth {tree.horizon}"
        )

    tau_doc = _need(doc, "tau", path)
    tau = StoppingTime(frozenset(str(n) for n in _need(tau_doc, "nodes", f"{path}.tau")))
    kind = _need(tau_doc, "kind", f"{path}.tau")

    spec = MarketSpec(
        tree=tree,
        rates=_num_map(doc, "rates", path),
        price=_num_map(doc, "prices", path),
        dividend=_num_map(doc, "dividends", path),
        payoff=_num_map(doc, "payoffs", path),
        tau=tau,
        tau_kind=str(kind),
    )
    report = validate_market(spec)
    if not report.ok:
        details = "; ".join(
            f"{f.message}" + (f" ({', '.join(f.nodes)})" if f.nodes else "")
            for f in report.failures
        )
        raise MarketFileError(f"{path}: invalid market: {details}")

    actual = _parse_family(_need(doc, "actual", path), tree, f"{path}.actual", "actual")
    pricing = None
    if "pricing" in doc:
        pricing = _parse_family(doc["pricing"], tree, f"{path}.pricing", "pricing")
    market_prices = {}
    for key, block in doc.get("market_prices", {}).items():
        market_prices[str(key)] = {str(n): float(v) for n, v in block.items()}
    return ParsedMarket(spec, actual, pricing, market_prices, path)


@dataclass
class Report:
    command: str
    inputs: dict[str, Any]
    verdicts: dict[str, Any] = field(default_factory=dict)
    processes: dict[str, dict[str, float]] = field(default_factory=dict)
    diagnostics: dict[str, Any] = field(default_factory=dict)
    exit_status: int = 0

    def as_dict(self) -> dict:
        return _rounded(
            {
                "command": self.command,
                "inputs": self.inputs,
                "verdicts": self.verdicts,
                "processes": self.processes,
                "diagnostics": self.diagnostics,
                "exit_status": self.exit_status,
            }
        )


def report_from_dict(doc: Mapping) -> Report:
    return Report(
        command=doc["command"],
        inputs=dict(doc["inputs"]),
        verdicts=dict(doc["verdicts"]),
        processes={k: dict(v) for k, v in doc["processes"].items()},
        diagnostics=dict(doc["diagnostics"]),
        exit_status=int(doc["exit_status"]),
    )


def _resolve_pricing(parsed: ParsedMarket, ftap=None):
    """Pricing family: the one in the file, else the supermartingale family
    discovered by the equivalence check (None when arbitrage blocks it)."""
    if parsed.pricing is not None:
        return parsed.pricing, ftap
    if ftap is None:
        ftap = verify_ftap(parsed.spec, parsed.actual)
    return ftap.pricing_family, ftap


def _process_table(parsed: ParsedMarket, pricing) -> dict[str, dict[str, float]]:
    spec = parsed.spec
    out: dict[str, dict[str, float]] = {
        "S": dict(spec.price),
        "W": dict(wealth_process(spec).values),
        "B": dict(discount_factors(spec).values),
    }
    if pricing is not None:
        rep = analyze_bubble(spec, pricing, parsed.actual)
        out["Sstar"] = dict(rep.S_star.values)
        out["Wstar"] = dict(rep.W_star.values)
        out["beta"] = dict(rep.beta.values)
    return out


def run_analysis(command: str, parsed: ParsedMarket, options: Mapping[str, Any]) -> Report:
    """Dispatch a subcommand over parsed inputs and assemble its report."""
    spec = parsed.spec
    tree = spec.tree
    tol = float(options.get("tolerance", 1e-9))
    report = Report(
        command=command,
        inputs={"file": parsed.path, **{k: v for k, v in options.items() if v is not None}},
    )

    if command == "analyze":
        ftap = verify_ftap(spec, parsed.actual)
        pricing, ftap = _resolve_pricing(parsed, ftap)
        report.verdicts["validation"] = "pass"
        report.verdicts["arbitrage"] = "FOUND" if ftap.arbitrage else "none"
        report.verdicts["ftap_consistent"] = ftap.consistent
        if ftap.arbitrage:
            report.diagnostics["arbitrage_witness"] = ftap.arbitrage.witness
            report.diagnostics["arbitrage_gain"] = ftap.arbitrage.witness_gain
        if pricing is None:
            report.verdicts["bubble"] = "unavailable (no pricing family)"
            report.exit_status = 2
            return report
        rep = analyze_bubble(spec, pricing, parsed.actual, ftap=ftap, tol=tol)
        beta1 = rep.beta.at_time(tree, 1)
        if beta1:
            report.diagnostics["inf E[beta_1]"] = cond_expectation(
                pricing, beta1, tree.root, "lower"
            )
            report.diagnostics["sup E[beta_1]"] = cond_expectation(
                pricing, beta1, tree.root, "upper"
            )
        report.verdicts["bubble_exists"] = rep.exists
        report.verdicts["bubble_class"] = rep.classification.bubble_class.strongest
        report.verdicts["price_class"] = rep.classification.price_class.strongest
        report.verdicts["properties"] = {
            "nonneg_under_noarb": rep.properties.nonneg_under_noarb.get("status"),
            "vanishes_at_tau": rep.properties.vanishes_at_tau.get("status"),
            "persistence": rep.properties.persistence.get("status"),
        }
        violated = [
            (name, clause)
            for name, clause in (
                ("nonneg_under_noarb", rep.properties.nonneg_under_noarb),
                ("vanishes_at_tau", rep.properties.vanishes_at_tau),
                ("persistence", rep.properties.persistence),
            )
            if clause.get("status") == "violated"
        ]
        report.verdicts["checks"] = "FAIL" if violated else "pass"
        for name, clause in violated:
            nodes = clause.get("nodes") or tuple(
                c[0] for c in clause.get("counterexamples", ())
            )
            report.diagnostics[f"{name}_nodes"] = sorted(nodes)
        report.processes = _process_table(parsed, pricing)
        report.diagnostics["beta_0"] = rep.beta[tree.root]
        report.diagnostics["tau_kind"] = spec.tau_kind
        return report

    if command == "price":
        kind = CLAIM_ALIASES[options["claim"]]
        maturity = int(options.get("maturity") or tree.horizon)
        claim = Claim(kind, maturity, float(options["strike"]))
        pricing, _ = _resolve_pricing(parsed)
        if pricing is None:
            report.verdicts["error"] = "no pricing family available (arbitrage)"
            report.exit_status = 2
            return report
        if kind in ("amer_call", "amer_put"):
            try:
                result = american_fundamental_price(spec, pricing, claim, parsed.actual)
                report.processes["claim_value"] = dict(result.process.values)
                report.diagnostics["exercise_region"] = sorted(result.exercise)
                value = result.process[tree.root]
            except RectangularityError:
                value = american_oracle(spec, pricing, claim)
                report.diagnostics["note"] = "explicit family: priced by stopping-rule enumeration"
        else:
            proc = fundamental_claim_price(spec, pricing, claim, parsed.actual)
            report.processes["claim_value"] = dict(proc.values)
            value = proc[tree.root]
        report.verdicts["value"] = value
        report.processes.update(_process_table(parsed, pricing))
        return report

    if command == "hedge":
        pricing, _ = _resolve_pricing(parsed)
        if options.get("payoff_file"):
            with open(options["payoff_file"]) as fh:
                payoff = {str(k): float(v) for k, v in json.load(fh).items()}
        else:
            kind = CLAIM_ALIASES[options["claim"]]
            maturity = int(options.get("maturity") or tree.horizon)
            claim = Claim(kind, maturity, float(options["strike"]))
            target = terminal_payoff(spec, claim)
            # claims settling before the horizon are hedged as the path-wise
            # constant payoff fixed at maturity
            payoff = {}
            for leaf in tree.leaves:
                anc = tree.path(leaf)[claim.maturity]
                payoff[leaf] = target[anc]
        if pricing is None:
            hedge = superhedge(spec, payoff, parsed.actual)
            report.verdicts["price"] = hedge.price
            report.verdicts["note"] = "no pricing family (arbitrage); primal hedge only"
            report.exit_status = 2
            return report
        result = robust_price(spec, pricing, payoff, parsed.actual, tol=tol)
        report.verdicts["price"] = result.hedge.price
        report.verdicts["value"] = result.value
        report.verdicts["duality_gap"] = result.duality_gap
        report.processes["hedge_pi"] = dict(result.hedge.strategy.pi)
        report.processes["hedge_slack"] = dict(result.hedge.slack)
        report.processes.update(_process_table(parsed, pricing))
        return report

    if command == "classify":
        which = options["process"]
        pricing, _ = _resolve_pricing(parsed)
        if pricing is None:
            report.verdicts["error"] = "no pricing family available (arbitrage)"
            report.exit_status = 2
            return report
        if which == "S":
            proc = stopped_price_process(spec).values
        elif which == "W":
            proc = wealth_process(spec).values
        elif which == "Wstar":
            from .bubble import fundamental_wealth

            proc = fundamental_wealth(spec, pricing)[0].values
        elif which == "beta":
            proc = bubble_process(spec, pricing).values
        else:
            raise MarketFileError(f"unknown process {which!r}")
        cls = classify_process(pricing, proc, tol=tol)
        report.verdicts["class"] = cls.strongest
        report.verdicts["martingale_gap"] = cls.martingale_gap
        report.verdicts["supermartingale_slack"] = cls.supermartingale_slack
        report.verdicts["infi_slack"] = cls.infi_slack
        report.processes[which] = dict(proc)
        report.processes.update(_process_table(parsed, pricing))
        return report

    if command == "dominance":
        pricing, ftap = _resolve_pricing(parsed)
        if pricing is None:
            report.verdicts["error"] = "no pricing family available (arbitrage)"
            report.exit_status = 2
            return report
        pair = find_dominating_strategy(spec, pricing, parsed.actual, tol=tol)
        if pair is None:
            report.verdicts["dominance"] = "none"
        else:
            report.verdicts["dominance"] = "FOUND"
            report.verdicts["hedge_cost"] = pair.hedge_cost
            report.verdicts["asset_cost"] = pair.asset_cost
            report.verdicts["min_gain_gap"] = pair.min_gap
            report.processes["hedge_pi"] = dict(pair.hedge.strategy.pi)
            report.processes["gain_gap"] = dict(pair.gain_gap)
        report.processes.update(_process_table(parsed, pricing))
        return report

    raise MarketFileError(f"unknown command {command!r}")


CSV_COLUMNS = ("S", "Sstar", "beta", "W", "Wstar")


def emit_report(report: Report, fmt: str = "text", tree: EventTree | None = None) -> str:
    """Render a report. ``machine`` is JSON that round-trips; ``csv`` needs
    the tree to order rows by node."""
    if fmt == "machine":
        return json.dumps(report.as_dict(), sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        if tree is None:
            raise ValueError("csv emission needs the event tree")
        header = "node,time," + ",".join(CSV_COLUMNS)
        lines = [header]
        for n in tree.preorder():
            cells = [n, str(tree.time(n))]
            for col in CSV_COLUMNS:
                val = report.processes.get(col, {}).get(n)
                cells.append("" if val is None else f"{_round12(val):.12g}")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")

    doc = report.as_dict()
    lines = [f"command: {doc['command']}"]
    for key, val in doc["inputs"].items():
        lines.append(f"  input {key} = {val}")
    for key, val in doc["verdicts"].items():
        if isinstance(val, dict):
            for k2, v2 in val.items():
                lines.append(f"{key}.{k2}: {_fmt_scalar(v2)}")
        else:
            lines.append(f"{key}: {_fmt_scalar(val)}")
    for key, val in doc["diagnostics"].items():
        lines.append(f"{key} = {_fmt_scalar(val)}")
    for name in sorted(doc["processes"]):
        proc = doc["processes"][name]
        body = ", ".join(f"{n}={_fmt_scalar(v)}" for n, v in sorted(proc.items()))
        lines.append(f"{name}: {body}")
    status = doc["exit_status"]
    lines.append(f"status: {'OK' if status == 0 else f'FAIL ({status})'}")
    return "\n".join(lines) + "\n"


def _fmt_scalar(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bubbletree",
        description="Price assets and claims on finite event trees under model uncertainty.",
    )
    p.add_argument("--tolerance", type=float, default=1e-9, help="classification tolerance")
    p.add_argument(
        "--format", choices=("text", "machine", "csv"), default="text", help="output format"
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("analyze", help="full bubble analysis of a market file")
    sp.add_argument("market")

    sp = sub.add_parser("price", help="fundamental price of a standard claim")
    sp.add_argument("--claim", required=True, choices=sorted(CLAIM_ALIASES))
    sp.add_argument("--strike", type=float, default=0.0)
    sp.add_argument("--maturity", type=int, help="defaults to the horizon")
    sp.add_argument("market")

    sp = sub.add_parser("hedge", help="superhedge a payoff and report the duality gap")
    sp.add_argument("--claim", choices=sorted(CLAIM_ALIASES))
    sp.add_argument("--strike", type=float, default=0.0)
    sp.add_argument("--maturity", type=int)
    sp.add_argument("--payoff-file", dest="payoff_file", help="JSON {leaf: value}")
    sp.add_argument("market")

    sp = sub.add_parser("classify", help="martingale-type classification of a process")
    sp.add_argument("--process", required=True, choices=("S", "W", "Wstar", "beta"))
    sp.add_argument("market")

    sp = sub.add_parser("dominance", help="search for a dominating strategy")
    sp.add_argument("market")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        parsed = parse_market_file(args.market)
    except MarketFileError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1

    options = {
        k: v
        for k, v in vars(args).items()
        if k not in ("command", "market", "format") and v is not None
    }
    try:
        report = run_analysis(args.command, parsed, options)
    except NotRiskNeutralError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (CapExceededError, UnboundedHedgeError, PolarNodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 3
    except (MarketFileError, InvalidMarketError, AssumptionViolationError,
            ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    sys.stdout.write(emit_report(report, args.format, parsed.spec.tree))
    return report.exit_status


if __name__ == "__main__":
    sys.exit(main())
