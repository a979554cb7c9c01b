"""Batch front end: config ingestion, pipeline orchestration, file outputs.

Stages run in the design order (microgrid -> setpoint -> local design ->
global co-design -> simulation -> verification); every output file carries
a provenance header with the seeds and parameters that produced it, and
reruns with the same config are byte-identical for the CSV outputs.

Exit codes: 0 ok, 1 parse/config error, 2 design infeasible, 3 simulation
failure, 4 acceptance/verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import codesign, equilibrium
from .grid import (MicrogridSpec, benchmark_microgrid, microgrid_from_dict,
                   microgrid_to_dict, random_geometric_topology)
from .sim import (Disturbance, Event, Scenario, compute_metrics,
                  dissipation_check, droop_baseline, layer_activation_scenario,
                  load_change_scenario, simulate)

EXIT_OK, EXIT_PARSE, EXIT_INFEASIBLE, EXIT_SIM, EXIT_ACCEPT = 0, 1, 2, 3, 4


def _provenance_lines(config: dict) -> list[str]:
    keys = {}
    mgc = config.get("microgrid", {})
    for k in ("n_dgs", "seed", "topology_seed", "connectivity", "spread"):
        if k in mgc:
            keys[f"microgrid.{k}"] = mgc[k]
    for sc in config.get("scenarios", []):
        if sc.get("disturbance", {}).get("enabled"):
            keys[f"scenario.{sc.get('name', '?')}.noise_seed"] = \
                sc["disturbance"].get("seed", 0)
    keys["design.graph_mode"] = config.get("design", {}).get("graph_mode", "soft")
    return [f"# {k} = {v}" for k, v in sorted(keys.items())]


def write_trajectory_csv(path: Path, traj, provenance: list[str]):
    N = traj.V.shape[1]
    L = traj.I_l.shape[1]
    cols = (["t"] + [f"V_{i+1}" for i in range(N)]
            + [f"It_{i+1}" for i in range(N)] + [f"v_{i+1}" for i in range(N)]
            + [f"I_line_{l+1}" for l in range(L)] + [f"u_{i+1}" for i in range(N)])
    data = np.hstack([traj.t[:, None], traj.V, traj.I_t, traj.v, traj.I_l, traj.u])
    with open(path, "w") as f:
        for line in provenance:
            f.write(line + "\n")
        f.write(",".join(cols) + "\n")
        np.savetxt(f, data, delimiter=",", fmt="%.10g")


def write_metrics_csv(path: Path, rows: list[dict], provenance: list[str]):
    keys = sorted({k for r in rows for k in r})
    with open(path, "w") as f:
        for line in provenance:
            f.write(line + "\n")
        f.write(",".join(keys) + "\n")
        for r in rows:
            f.write(",".join(_fmt(r.get(k, "")) for k in keys) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def load_config(path: str) -> dict:
    with open(path) as f:
        return json.load(f)


def build_microgrid(config: dict) -> MicrogridSpec:
    return microgrid_from_dict(config.get("microgrid", {}))


def design_params(config: dict) -> codesign.DesignParams:
    d = dict(config.get("design", {}))
    if "c_link" in d and d["c_link"] is not None:
        d["c_link"] = np.asarray(d["c_link"], dtype=float)
    return codesign.DesignParams(**d)


def scenario_from_dict(sc: dict) -> Scenario:
    kind = sc.get("kind", "custom")
    dist = Disturbance(**sc.get("disturbance", {}))
    if kind == "load_change":
        base = load_change_scenario(t_end=sc.get("t_end", 10.0),
                                    h=sc.get("h", 1e-4))
    elif kind == "activation":
        base = layer_activation_scenario(t_end=sc.get("t_end", 10.0),
                                         h=sc.get("h", 1e-4))
    else:
        events = tuple(Event(**e) for e in sc.get("events", []))
        base = Scenario(t_end=sc.get("t_end", 10.0), h=sc.get("h", 1e-4),
                        events=events,
                        steady_on=sc.get("steady_on", True),
                        local_on=sc.get("local_on", True),
                        distributed_on=sc.get("distributed_on", True))
    return dataclasses.replace(base, disturbance=dist)


def run_pipeline(config: dict, out_dir: Path, verbose: bool = True) -> int:
    """Execute the full chain and write the report, trajectories and checks."""
    log = print if verbose else (lambda *a, **k: None)
    out_dir.mkdir(parents=True, exist_ok=True)
    prov = _provenance_lines(config)
    timings = {}

    mg = build_microgrid(config)
    log(f"microgrid: {mg.n_dgs} DGs, {mg.n_lines} lines")

    spc = config.get("setpoint", {})
    t0 = time.perf_counter()
    try:
        sp = equilibrium.optimize_reference(
            mg, V_min=spc.get("V_min"), V_max=spc.get("V_max"),
            alpha_V=spc.get("alpha_V", 1.0), alpha_I=spc.get("alpha_I", 0.1))
    except ValueError as e:
        log(f"setpoint stage failed: {e}")
        return EXIT_INFEASIBLE
    timings["setpoint_s"] = time.perf_counter() - t0
    log(f"setpoint: I_s* = {sp.I_s_star:.4f}")

    params = design_params(config)
    t0 = time.perf_counter()
    try:
        local = codesign.design_local(mg, params)
    except ValueError as e:
        log(f"local design stage failed: {e}")
        return EXIT_INFEASIBLE
    timings["design_local_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    try:
        result = codesign.design_global(mg, local, params)
    except ValueError as e:
        log(f"global design stage failed: {e}")
        return EXIT_INFEASIBLE
    timings["design_global_s"] = time.perf_counter() - t0
    log(f"design: gamma = {result.gamma:.4g}, {len(result.comm_links)} links "
        f"({result.graph_mode} mode)")

    report = {
        "provenance": {ln.lstrip("# ").split(" = ")[0]: ln.split(" = ")[1]
                       for ln in prov},
        "indices": {
            "nu": local.nu, "rho": local.rho, "gamma_tilde_local": local.gamma_tilde,
            "nu_bar": local.nu_bar, "rho_bar": local.rho_bar,
        },
        "local_gains": [k.ravel() for k in local.K0],
        "comm_graph": [{"from": j, "to": i,
                        "gain": result.link_gains[i, j]}
                       for (j, i) in sorted(result.comm_links)],
        "gamma": result.gamma,
        "gamma_tilde": result.gamma_tilde,
        "objective": result.objective,
        "slack_trace": result.slack_trace,
        "approximate_dissipativity": result.approximate_dissipativity,
        "p": result.p, "p_bar": result.p_bar,
        "graph_mode": result.graph_mode,
        "setpoint": {"V_r_star": sp.V_r_star, "I_s_star": sp.I_s_star,
                     "u_S": sp.u_S},
        "timings": {k: round(v, 3) for k, v in timings.items()},
    }
    with open(out_dir / "design.json", "w") as f:
        json.dump(report, f, indent=2, default=_json_default)

    metrics_rows = []
    scenarios = config.get("scenarios",
                           [{"name": "loadsteps", "kind": "load_change"}])
    trajs = {}
    for sc_cfg in scenarios:
        name = sc_cfg.get("name", sc_cfg.get("kind", "scenario"))
        sc = scenario_from_dict(sc_cfg)
        try:
            traj = simulate(mg, sp, local, result.K, sc)
        except FloatingPointError as e:
            log(f"simulation stage failed ({name}): {e}")
            return EXIT_SIM
        trajs[name] = (sc_cfg, sc, traj)
        event_times = [e.t for e in sc.events
                       if e.kind in ("set_I_L_bar", "scale_Y_L")]
        m = compute_metrics(traj, mg, sp, event_times=event_times)
        row = {"scenario": name,
               "max_voltage_dev_V": m.max_voltage_deviation,
               "per_unit_spread": m.per_unit_spread,
               "sharing_ratio": m.sharing_ratio,
               "l2_ratio": m.l2_ratio}
        for te, ts in m.settling_times.items():
            row[f"settle_after_{te:g}s"] = "" if ts is None else ts
        metrics_rows.append(row)
        write_trajectory_csv(out_dir / f"traj_{name}.csv", traj, prov)
        log(f"scenario {name}: max dev {m.max_voltage_deviation:.3f} V, "
            f"spread {m.per_unit_spread:.4f}")

    if config.get("droop_baseline", False):
        dr = droop_baseline(mg)
        sc = Scenario(t_end=2.0)
        traj = simulate(mg, None, None, None, sc, droop=dr)
        write_trajectory_csv(out_dir / "traj_droop.csv", traj, prov)
        avg = np.abs(traj.V.mean(axis=1) - float(np.mean(mg.V_r)))
        metrics_rows.append({
            "scenario": "droop_baseline",
            "max_voltage_dev_V": float(avg[traj.t <= dr.secondary_on_at].max()),
            "per_unit_spread": "", "sharing_ratio": "", "l2_ratio": ""})

    write_metrics_csv(out_dir / "metrics.csv", metrics_rows, prov)

    status = EXIT_OK
    if config.get("verify", True):
        lines, ok = run_verification(mg, sp, local, result)
        (out_dir / "verify.txt").write_text("\n".join(prov + lines) + "\n")
        for ln in lines:
            log(ln)
        if not ok:
            status = EXIT_ACCEPT
    return status


def run_verification(mg, sp, local, result) -> tuple[list[str], bool]:
    """Necessity chain, equilibrium residual and dissipation checks.

    The dissipation check runs on a dedicated perturbed, event-free,
    undisturbed trajectory: load events move the equilibrium the error
    coordinates are anchored to, which would invalidate the comparison.
    """
    lines = []
    ok = True

    verdicts = codesign.necessary_condition_matrices(
        mg, local.nu, local.rho, local.nu_bar, local.rho_bar,
        result.p, result.p_bar, result.gamma_tilde)
    bad = [k for k, (_, pd) in verdicts.items() if not pd]
    lines.append(f"necessity chain: {len(verdicts) - len(bad)}/{len(verdicts)} "
                 f"condition matrices positive definite"
                 + (f" (FAIL at {bad})" if bad else " [pass]"))
    ok &= not bad

    eq = equilibrium.compute_equilibrium(mg, sp.V_r_star)
    resid = equilibrium.equilibrium_residual(mg, eq)
    good = resid <= 1e-9
    lines.append(f"equilibrium residual: {resid:.3e} "
                 + ("[pass]" if good else "[FAIL]"))
    ok &= good

    x0 = eq.state_vector()
    x0[mg.n_dgs: 2 * mg.n_dgs] = mg.I_n * sp.I_s_star
    x0[:mg.n_dgs] += 0.5
    traj = simulate(mg, sp, local, result.K, Scenario(t_end=1.0), x0=x0)
    frac = dissipation_check(traj, mg, local, sp)
    worst = max(frac.values()) if frac else 0.0
    good = worst <= 0.01
    lines.append(f"dissipation check: worst violation fraction "
                 f"{worst:.4f} " + ("[pass]" if good else "[FAIL]"))
    ok &= good
    return lines, ok


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(
        prog="mgcodesign",
        description="DC microgrid controller / communication-topology co-design")
    ap.add_argument("--config", help="JSON config file (overrides flags)")
    ap.add_argument("--out", default="runs/out", help="output directory")
    ap.add_argument("--quiet", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-topology", help="generate a random geometric topology")
    g.add_argument("--n-dgs", type=int, default=4)
    g.add_argument("--connectivity", type=float, default=0.6)
    g.add_argument("--seed", type=int, default=1)

    for name in ("setpoint", "design-local", "design-global", "simulate",
                 "verify", "run"):
        p = sub.add_parser(name)
        p.add_argument("--n-dgs", type=int, default=4)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--topology-seed", type=int, default=1)
        p.add_argument("--mode", choices=("hard", "soft"), default="soft")
        p.add_argument("--droop-baseline", action="store_true")
        p.add_argument("--no-verify", action="store_true")

    args = ap.parse_args(argv)
    log = print if not args.quiet else (lambda *a, **k: None)

    if args.cmd == "gen-topology":
        topo = random_geometric_topology(args.n_dgs, args.connectivity,
                                         args.seed)
        print(json.dumps({"n_dgs": topo.n_dgs,
                          "lines": [list(l) for l in topo.lines]}, indent=2))
        return EXIT_OK

    try:
        if args.config:
            config = load_config(args.config)
        else:
            config = {
                "microgrid": {"n_dgs": args.n_dgs, "seed": args.seed,
                              "topology_seed": args.topology_seed},
                "design": {"graph_mode": args.mode},
                "droop_baseline": bool(args.droop_baseline),
                "verify": not args.no_verify,
            }
    except (OSError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_PARSE

    try:
        mg = build_microgrid(config)
    except (TypeError, ValueError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_PARSE

    out = Path(args.out)
    if args.cmd == "run":
        return run_pipeline(config, out, verbose=not args.quiet)

    # single stages
    try:
        sp = equilibrium.optimize_reference(
            mg, **{k: config.get("setpoint", {}).get(k)
                   for k in ("V_min", "V_max")})
        if args.cmd == "setpoint":
            print(json.dumps({"V_r_star": sp.V_r_star.tolist(),
                              "I_s_star": sp.I_s_star,
                              "u_S": sp.u_S.tolist()}, indent=2))
            return EXIT_OK
        params = design_params(config)
        local = codesign.design_local(mg, params)
        if args.cmd == "design-local":
            print(json.dumps({"nu": local.nu.tolist(),
                              "rho": local.rho.tolist(),
                              "K0": [k.ravel().tolist() for k in local.K0]},
                             indent=2))
            return EXIT_OK
        result = codesign.design_global(mg, local, params)
        if args.cmd == "design-global":
            print(json.dumps({"gamma": result.gamma,
                              "links": sorted(result.comm_links),
                              "objective": result.objective}, indent=2,
                             default=_json_default))
            return EXIT_OK
    except ValueError as e:
        print(f"design infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE

    scenarios = config.get("scenarios",
                           [{"name": "loadsteps", "kind": "load_change"}])
    try:
        sc = scenario_from_dict(scenarios[0])
        traj = simulate(mg, sp, local, result.K, sc)
    except FloatingPointError as e:
        print(f"simulation failed: {e}", file=sys.stderr)
        return EXIT_SIM
    if args.cmd == "simulate":
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(out / "traj.csv", traj, _provenance_lines(config))
        log(f"wrote {out / 'traj.csv'}")
        return EXIT_OK

    lines, ok = run_verification(mg, sp, local, result)
    for ln in lines:
        print(ln)
    return EXIT_OK if ok else EXIT_ACCEPT


if __name__ == "__main__":
    sys.exit(main())
