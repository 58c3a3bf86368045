"""Command-line surface: check, moduli, epsilon, design, audit, simulate,
montecarlo, and histogram subcommands over a JSON scenario file.

Exit codes: 0 success, 2 validation error, 3 infeasible design, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis, output, privacy, sim
from .config import LoadedScenario, load_scenario
from .errors import (ConfigError, DpcError, InfeasibleDesignError, NumericError,
                     PreconditionError)
from .graphs import degrees, spectrum

HISTOGRAM_RATIO_SLACK = 1.2


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleDesignError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 3
    except (NumericError, DpcError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpc",
        description="Observer-based differentially private consensus toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("check", "verify consensus/observer conditions", cmd_check),
        ("moduli", "per-agent contraction moduli", cmd_moduli),
        ("epsilon", "privacy budgets: series, closed forms, bound", cmd_epsilon),
        ("design", "solve for the noise decay rate meeting eps*", cmd_design),
        ("audit", "deterministic privacy ledger on adjacent outputs", cmd_audit),
        ("simulate", "one closed-loop run with trace and plots", cmd_simulate),
        ("montecarlo", "mean-square estimates over repeated runs", cmd_montecarlo),
        ("histogram", "paired adjacent-trajectory histograms", cmd_histogram),
    ]
    for name, help_text, func in specs:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--strict-paper", action="store_true",
                       help="enforce the stated closed-form parameter intervals")
        p.add_argument("--tol", type=float, default=None,
                       help="series truncation tolerance (absolute)")
        p.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="format for tabular side outputs")
        if name == "design":
            p.add_argument("--eps-star", type=float, default=None,
                           help="target privacy level")
        if name == "histogram":
            p.add_argument("--k", type=int, required=True, help="message step")
            p.add_argument("--runs", type=int, default=1000, help="paired run count")
        p.set_defaults(func=func)
    return parser


def _load(args) -> LoadedScenario:
    return load_scenario(args.config, seed_override=args.seed,
                         tol_override=args.tol, strict_override=args.strict_paper)


def _outdir(args) -> Path:
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _conditions(ls: LoadedScenario) -> dict:
    cfg = ls.cfg
    if cfg.observer_kind == "full":
        rep = analysis.check_full_conditions(cfg.plant, cfg.observer, cfg.gains,
                                             cfg.graph, cfg.schedules)
    else:
        rep = analysis.check_reduced_conditions(cfg.reduced, cfg.gains, cfg.graph,
                                                cfg.schedules, cfg.plant)
    spec = spectrum(cfg.graph)
    try:
        rate = analysis.theoretical_ms_rate(rep.rho_observer, rep.rho_consensus,
                                            cfg.schedules)
    except PreconditionError:
        rate = None
    return {
        "rho_observer": rep.rho_observer,
        "rho_consensus": rep.rho_consensus,
        "summable_noise": list(rep.summable_noise),
        "passed": rep.passed,
        "lambda_2": spec.fiedler,
        "lambda_max": spec.lambda_max,
        "theoretical_ms_rate": rate,
    }


def _moduli(ls: LoadedScenario):
    cfg = ls.cfg
    deg = degrees(cfg.graph)
    if cfg.observer_kind == "full":
        mod = analysis.contraction_moduli_full(cfg.plant, cfg.observer, cfg.gains, deg)
    else:
        mod = analysis.contraction_moduli_reduced(cfg.reduced, cfg.gains, deg)
    return mod, deg


def _l_norm(ls: LoadedScenario) -> float:
    from .matops import induced_one_norm
    return induced_one_norm(ls.cfg.observer.l)


def _epsilon_tables(ls: LoadedScenario):
    """Per-agent budgets by every applicable method."""
    cfg = ls.cfg
    adj = cfg.adjacency
    if adj is None:
        raise ConfigError("scenario has no adjacency section; privacy budgets "
                          "need i0, k0, m, alpha")
    mod, _ = _moduli(ls)
    if cfg.observer_kind == "full":
        l1 = _l_norm(ls)
        series = privacy.epsilon_series_full(mod.l, l1, adj, cfg.schedules, ls.tol)
        closed, bound = [], []
        for l_i, sched in zip(mod.l, cfg.schedules):
            closed.append(_try(privacy.closed_form_epsilon,
                               l_i, 0.0, l1, adj, sched, "full", ls.strict))
            bound.append(_bound_full(l_i, l1, adj, sched))
        return series, closed, bound, mod
    series = privacy.epsilon_series_reduced(mod.v, mod.w, adj, cfg.schedules, ls.tol)
    closed = [_try(privacy.closed_form_epsilon,
                   v_i, w_i, 0.0, adj, sched, "reduced", ls.strict)
              for v_i, w_i, sched in zip(mod.v, mod.w, cfg.schedules)]
    return series, closed, [None] * cfg.graph.n, mod


def _bound_full(l_i, l1, adj, sched):
    if sched.kind != "exponential" or adj.m == 0:
        return None
    b = _try(privacy.simplified_bound_full, l_i, l1, adj.m, sched.c, sched.g)
    return None if b is None else b * sched.g ** (-adj.k0)


def _try(fn, *fn_args):
    from .errors import DivergenceError
    try:
        return fn(*fn_args)
    except (PreconditionError, DivergenceError):
        return None


def _ledger(ls: LoadedScenario, horizon: int | None = None):
    cfg = ls.cfg
    adj = cfg.adjacency
    if adj is None:
        raise ConfigError("scenario has no adjacency section; the audit needs "
                          "i0, k0, m, alpha")
    deg = degrees(cfg.graph)
    h = horizon if horizon is not None else ls.audit_horizon
    if cfg.observer_kind == "full":
        return privacy.privacy_ledger("full", adj, cfg.schedules, h,
                                      plant=cfg.plant, obs=cfg.observer,
                                      gains=cfg.gains, degree_seq=deg, tol=ls.tol)
    return privacy.privacy_ledger("reduced", adj, cfg.schedules, h,
                                  rf=cfg.reduced, gains=cfg.gains,
                                  degree_seq=deg, tol=ls.tol)


def _summary(command: str, ls: LoadedScenario, results: dict) -> dict:
    return {"command": command, "config": ls.echo, "results": results}


def _write_table(args, outdir: Path, name: str, header, rows) -> None:
    if args.format == "json":
        payload = [dict(zip(header, [_jsonable(v) for v in row])) for row in rows]
        (outdir / f"{name}.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n")
    else:
        output.write_csv(outdir / f"{name}.csv", header, rows)


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_check(args) -> int:
    ls = _load(args)
    outdir = _outdir(args)
    cond = _conditions(ls)
    output.write_summary(outdir / "summary.json", _summary("check", ls, cond))
    verdict = "pass" if cond["passed"] else "fail"
    print(f"check: {verdict} (rho_observer={cond['rho_observer']:.6g}, "
          f"rho_consensus={cond['rho_consensus']:.6g})")
    return 0


def cmd_moduli(args) -> int:
    ls = _load(args)
    outdir = _outdir(args)
    mod, deg = _moduli(ls)
    if ls.cfg.observer_kind == "full":
        header = ["agent", "degree", "l"]
        rows = [(i, int(deg[i]), mod.l[i]) for i in range(ls.cfg.graph.n)]
        results = {"kind": "full", "l": list(mod.l), "degrees": [int(d) for d in deg]}
    else:
        header = ["agent", "degree", "v", "w"]
        rows = [(i, int(deg[i]), mod.v[i], mod.w[i]) for i in range(ls.cfg.graph.n)]
        results = {"kind": "reduced", "v": list(mod.v), "w": list(mod.w),
                   "degrees": [int(d) for d in deg]}
    _write_table(args, outdir, "moduli", header, rows)
    output.write_summary(outdir / "summary.json", _summary("moduli", ls, results))
    print(f"moduli: wrote {len(rows)} agents")
    return 0


def cmd_epsilon(args) -> int:
    ls = _load(args)
    outdir = _outdir(args)
    series, closed, bound, mod = _epsilon_tables(ls)
    n = ls.cfg.graph.n
    if ls.cfg.observer_kind == "full":
        header = ["agent", "l", "c", "g", "eps_series", "eps_closed", "eps_bound"]
        rows = [(i, mod.l[i], ls.cfg.schedules[i].c, ls.cfg.schedules[i].g,
                 series.per_agent[i], closed[i], bound[i]) for i in range(n)]
    else:
        header = ["agent", "v", "w", "c", "g", "eps_series", "eps_closed"]
        rows = [(i, mod.v[i], mod.w[i], ls.cfg.schedules[i].c, ls.cfg.schedules[i].g,
                 series.per_agent[i], closed[i]) for i in range(n)]
    _write_table(args, outdir, "epsilon", header, rows)
    results = {
        "epsilon_series": series.epsilon,
        "per_agent_series": list(series.per_agent),
        "per_agent_closed": closed,
        "per_agent_bound": bound,
        "truncation_residual": series.truncation_residual,
        "method": series.method,
    }
    output.write_summary(outdir / "summary.json", _summary("epsilon", ls, results))
    print(f"epsilon: max over agents = {series.epsilon:.6g} "
          f"(residual <= {series.truncation_residual:.3g})")
    return 0


def cmd_design(args) -> int:
    ls = _load(args)
    outdir = _outdir(args)
    eps_star = args.eps_star if args.eps_star is not None else ls.eps_star
    if eps_star is None:
        raise ConfigError("design needs --eps-star or privacy.eps_star in the config")
    adj = ls.cfg.adjacency
    if adj is None:
        raise ConfigError("design needs the adjacency section (m, alpha)")
    if not adj.geometric:
        raise ConfigError("design is stated for geometric h(k) = alpha**k")
    mod, _ = _moduli(ls)
    rows = []
    any_infeasible = False
    for i, sched in enumerate(ls.cfg.schedules):
        try:
            if ls.cfg.observer_kind == "full":
                g = privacy.design_g_full(eps_star, adj.m, adj.alpha, mod.l[i],
                                          sched.c, _l_norm(ls), ls.strict)
                eps_back = privacy.epsilon_closed_exp_full(
                    mod.l[i], _l_norm(ls), adj.m, adj.alpha, sched.c, g)
            else:
                g = privacy.design_g_reduced(eps_star, adj.m, adj.alpha, mod.v[i],
                                             mod.w[i], sched.c, ls.strict)
                eps_back = privacy.epsilon_closed_exp_reduced(
                    mod.v[i], mod.w[i], adj.m, adj.alpha, sched.c, g)
            rows.append((i, sched.c, g, eps_back, None))
        except InfeasibleDesignError as exc:
            any_infeasible = True
            rows.append((i, sched.c, None, None, exc.margin))
    header = ["agent", "c", "g_designed", "eps_recomputed", "infeasibility_margin"]
    _write_table(args, outdir, "design", header, rows)
    results = {
        "eps_star": float(eps_star),
        "designed_g": [r[2] for r in rows],
        "eps_recomputed": [r[3] for r in rows],
        "infeasibility_margin": [r[4] for r in rows],
        "all_feasible": not any_infeasible,
    }
    output.write_summary(outdir / "summary.json", _summary("design", ls, results))
    if any_infeasible:
        print("design: infeasible for at least one agent (margins in design table)")
        return 3
    print(f"design: eps*={eps_star:g} met for all agents")
    return 0


def cmd_audit(args) -> int:
    ls = _load(args)
    outdir = _outdir(args)
    led = _ledger(ls)
    rows = [(k, float(np.abs(led.betas[k]).sum()), float(led.terms[k]))
            for k in range(led.horizon_used + 1)]
    output.write_csv(outdir / "audit.csv", ["k", "beta_l1_norm", "term"], rows)
    results = {
        "s_value": led.s_value,
        "tail_bound": led.tail,
        "eps_reference": led.eps_reference,
        "holds": led.holds,
        "horizon_used": led.horizon_used,
        "i0": ls.cfg.adjacency.i0,
    }
    output.write_summary(outdir / "summary.json", _summary("audit", ls, results))
    print(f"audit: S = {led.s_value:.10g} <= eps = {led.eps_reference:.10g}: "
          f"{'holds' if led.holds else 'VIOLATED'}")
    return 0


def cmd_simulate(args) -> int:
    ls = _load(args)
    outdir = _outdir(args)
    cfg = ls.cfg
    trace = sim.simulate(cfg, run=0)
    # echo the drawn initial states so the echo re-runs identically
    x0 = sim.initial_states(cfg, 0)
    ls.echo["sim"]["x0"] = {"kind": "explicit",
                            "values": [[float(v) for v in row] for row in x0]}
    output.write_trace_csv(outdir / "trace.csv", trace)
    output.write_norms_csv(outdir / "norms.csv", trace)
    output.svg_line_plot(outdir / "delta.svg",
                         [("||delta(k)||", trace.norm_delta)],
                         "Consensus error", "k", "||delta||", log_y=True)
    output.svg_line_plot(outdir / "error.svg",
                         [("||e(k)||", trace.norm_e)],
                         "Observer error", "k", "||e||", log_y=True)
    results = {
        "conditions": _conditions(ls),
        "truncated_at": trace.truncated_at,
        "norm_delta_first": float(trace.norm_delta[0]),
        "norm_delta_last": float(trace.norm_delta[-1]),
        "norm_e_first": float(trace.norm_e[0]),
        "norm_e_last": float(trace.norm_e[-1]),
    }
    output.write_summary(outdir / "summary.json", _summary("simulate", ls, results))
    print(f"simulate: H={cfg.horizon}, ||delta(H)||/||delta(0)|| = "
          f"{trace.norm_delta[-1] / max(trace.norm_delta[0], 1e-300):.3e}")
    return 0


def cmd_montecarlo(args) -> int:
    ls = _load(args)
    outdir = _outdir(args)
    cfg = ls.cfg
    ms = sim.monte_carlo(cfg, runs=ls.runs)
    output.write_ms_csv(outdir / "ms.csv", ms)
    output.svg_line_plot(outdir / "ms.svg",
                         [("E||delta(k)||^2", ms.mean_delta_sq),
                          ("E||e(k)||^2", ms.mean_e_sq)],
                         "Mean-square errors", "k", "mean square", log_y=True)
    window = (cfg.horizon // 2, cfg.horizon)
    try:
        rate = sim.empirical_rate(ms, window)
        rate_error = None
    except PreconditionError as exc:
        rate, rate_error = None, str(exc)
    cond = _conditions(ls)
    results = {
        "conditions": cond,
        "runs": ls.runs,
        "fit_window": list(window),
        "empirical_rate": rate,
        "empirical_rate_error": rate_error,
        "theoretical_ms_rate": cond["theoretical_ms_rate"],
        "ms_delta_first": float(ms.mean_delta_sq[0]),
        "ms_delta_last": float(ms.mean_delta_sq[-1]),
    }
    output.write_summary(outdir / "summary.json", _summary("montecarlo", ls, results))
    shown = f"{rate:.4f}" if rate is not None else "n/a"
    print(f"montecarlo: R={ls.runs}, empirical rate = {shown}, "
          f"theoretical = {cond['theoretical_ms_rate']}")
    return 0


def cmd_histogram(args) -> int:
    ls = _load(args)
    outdir = _outdir(args)
    cfg = ls.cfg
    if cfg.adjacency is None:
        raise ConfigError("histogram needs the adjacency section")
    k_star = args.k
    hist = sim.histogram_experiment(cfg, runs=args.runs, k_star=k_star, component=0)
    led = _ledger(ls, horizon=max(ls.audit_horizon, k_star))
    eps_upto = led.prefix_sum(k_star)
    threshold = math.exp(eps_upto) * HISTOGRAM_RATIO_SLACK
    output.write_histogram_csv(outdir / "histogram.csv", hist)
    output.svg_histogram(outdir / "histogram.svg", hist.edges, hist.counts_primary,
                         hist.counts_counterfactual, "theta", "theta'",
                         f"Messages of agent {cfg.adjacency.i0} at k={k_star}",
                         "value")
    results = {
        "k_star": k_star,
        "runs": args.runs,
        "max_bin_ratio": hist.max_ratio,
        "eps_upto_k_star": eps_upto,
        "ratio_threshold": threshold,
        "within_bound": hist.max_ratio <= threshold,
        "pooled_threshold": hist.pooled_threshold,
    }
    output.write_summary(outdir / "summary.json", _summary("histogram", ls, results))
    print(f"histogram: max bin ratio = {hist.max_ratio:.4f}, "
          f"bound e^eps*{HISTOGRAM_RATIO_SLACK:g} = {threshold:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
