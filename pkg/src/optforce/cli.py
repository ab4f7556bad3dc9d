"""Command-line front end.

Subcommands orchestrate the pipeline and emit CSV/JSON data files for
offline plotting; nothing is plotted in-process.  Reruns with the same
config and seed produce byte-identical outputs, and every output embeds the
config hash.

    reference   finite-difference reference curves + quadrature oracle probes
    optimize    learn the forcing by gradient descent (or milestoning shells)
    estimate    reweighted estimators from tilted paths
    gradcheck   fixed-horizon exact gradient vs finite differences
    compare     join reference and estimates into a pass/fail report
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .ansatz import GaussianAnsatz, init_fill_wells, make_uniform_ansatz, tilted_potential_from
from .config import ConfigError, RunConfig
from .estimators import estimate_mfpt_reweighted, estimate_psi_reweighted
from .milestoning import build_ladder, run_milestoning, MilestoneLadder
from .objective import estimate_cost, estimate_exact_gradient_fixed_horizon, make_objective
from .optimizer import descend
from .reference import build_grid, mfpt_quadrature_oracle, solve_mfpt_pde, solve_reference

N_ORACLE_PROBES = 20

# Slack for the variational-bound check: covers the time-discretization shift
# of the estimated cost plus reference-grid error.  Measured once against the
# finite-difference reference at the default step sizes (the observed shift
# is below 0.02); pinned as a regression bound.
DISCRETIZATION_ALLOWANCE = 0.05

SPEEDUP_BAND = (30.0, 300.0)


def _write_json(path: Path, doc):
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, default=float) + "\n")


def _write_reference_csv(path: Path, sol, config_hash: str):
    lines = [f"# config_hash: {config_hash}", "x,psi,F,mfpt"]
    for i, x in enumerate(sol.grid.nodes):
        lines.append(f"{float(x)!r},{float(sol.psi[i])!r},"
                     f"{float(sol.free_energy[i])!r},{float(sol.mfpt[i])!r}")
    path.write_text("\n".join(lines) + "\n")


def cmd_reference(cfg: RunConfig, out: Path, workers: int) -> int:
    model = cfg.build_model()
    grid = build_grid(model.stopping_set, model.domain, cfg.dx)
    sol = solve_reference(model.potential, cfg.sigma, cfg.epsilon, grid,
                          model.stopping_set)
    solve_mfpt_pde(model.potential, cfg.epsilon, grid, model.stopping_set,
                   verify_sigma_derivative=True)
    _write_reference_csv(out / "reference.csv", sol, cfg.config_hash())

    # oracle probes strictly inside the grid
    lo, hi = grid.lo, grid.hi
    probes = np.linspace(lo + 0.05 * (hi - lo), hi, N_ORACLE_PROBES)
    rows = []
    for x in probes:
        quad_val = mfpt_quadrature_oracle(model.potential, cfg.epsilon, float(x),
                                          absorb_at=lo, reflect_at=hi)
        pde_val = float(sol.interp("mfpt", x))
        rows.append({"x": float(x), "mfpt_pde": pde_val, "mfpt_quadrature": quad_val,
                     "rel_error": abs(pde_val - quad_val) / abs(quad_val)})
    _write_json(out / "oracle_probes.json", {
        "config_hash": cfg.config_hash(),
        "max_rel_error": max(r["rel_error"] for r in rows),
        "probes": rows,
    })
    print(f"reference: wrote {out/'reference.csv'} and {out/'oracle_probes.json'}")
    return 0


def cmd_optimize(cfg: RunConfig, out: Path, workers: int) -> int:
    model = cfg.build_model()
    grid = build_grid(model.stopping_set, model.domain, cfg.dx)
    x0 = cfg.start_point(model)
    ansatz = make_uniform_ansatz(cfg.ansatz.m, model.domain, model.stopping_set,
                                 cfg.ansatz.width)
    a0 = init_fill_wells(ansatz, model.potential, grid)
    ansatz = ansatz.with_coefficients(a0)
    sim_cfg = cfg.descent_sim_config()
    descent_cfg = cfg.descent_config()
    chash = cfg.config_hash()

    use_milestoning = cfg.ladder.shells > 1 or cfg.ladder.thresholds is not None
    if use_milestoning:
        if cfg.ladder.thresholds is not None:
            ladder = MilestoneLadder(np.asarray(cfg.ladder.thresholds, dtype=np.float64),
                                     model.stopping_set)
        else:
            ladder = build_ladder(model.stopping_set, model.domain, cfg.ladder.shells)
        result = run_milestoning(ladder, ansatz, model, sim_cfg, descent_cfg,
                                 seed=cfg.seed, x0=x0)
        final = result.ansatz
        for i, trace in enumerate(result.shell_traces):
            trace.write_csv(out / f"trace_shell_{i}.csv", chash)
        traces = result.shell_traces
        summary_extra = {"boundary_values": [float(v) for v in result.boundary_values],
                         "shells": ladder.n_shells}
    else:
        objective = make_objective(ansatz, x0, model, sim_cfg,
                                   n_paths=descent_cfg.batch_size, workers=workers)
        a_best, trace = descend(a0, descent_cfg, objective, seed=cfg.seed)
        final = ansatz.with_coefficients(a_best)
        trace.write_csv(out / "trace.csv", chash)
        traces = [trace]
        summary_extra = {"shells": 1}

    (out / "ansatz.json").write_text(final.to_json() + "\n")
    # the termination rule is norm < max(grad_tol, 2 * gradient stderr norm);
    # report the level actually in force at the final iterate
    thresholds = [max(descent_cfg.grad_tol, 2.0 * t.records[-1].grad_stderr_norm)
                  for t in traces]
    _write_json(out / "optimize.json", {
        "config_hash": chash,
        "x0": x0,
        "converged": all(t.converged for t in traces),
        "non_converging_flag": any(t.non_converging for t in traces),
        "final_cost": traces[-1].records[-1].cost,
        "grad_norm": traces[-1].records[-1].grad_norm,
        "termination_threshold": max(thresholds),
        "boundary_offset": float(final.value(model.stopping_set.hi)),
        "iterations": sum(len(t.records) for t in traces),
        "mean_steps": float(np.mean([t.mean_steps for t in traces])),
        **summary_extra,
    })
    print(f"optimize: wrote {out/'ansatz.json'} "
          f"({'milestoning' if use_milestoning else 'descent'}, "
          f"{sum(len(t.records) for t in traces)} iterations)")
    return 0


def _load_ansatz(out: Path) -> GaussianAnsatz:
    path = out / "ansatz.json"
    if not path.exists():
        raise FileNotFoundError(
            f"{path} not found; run the `optimize` subcommand first")
    return GaussianAnsatz.from_json(path.read_text())


def cmd_estimate(cfg: RunConfig, out: Path, workers: int) -> int:
    model = cfg.build_model()
    x0 = cfg.start_point(model)
    ansatz = _load_ansatz(out)
    if cfg.estimate.untilted:
        ansatz = ansatz.with_coefficients(np.zeros(ansatz.m))
    n = cfg.estimate.n_paths
    sim_cfg = cfg.sim_config(batch_size=n)
    chash = cfg.config_hash()

    records = []

    def record(quantity, res):
        records.append({"quantity": quantity, "x0": x0, "estimate": res.estimate,
                        "stderr": res.stderr, "ci95": list(res.ci95), "n": res.n_paths,
                        "ess": res.ess, "config_hash": chash})

    psi = estimate_psi_reweighted(ansatz, x0, cfg.sigma, model, sim_cfg,
                                  seed=cfg.seed, tag=1, n_paths=n, workers=workers)
    record("psi", psi.psi)
    record("free_energy", psi.free_energy)

    # MFPT of the tilted landscape G = V + 2F (plain Monte Carlo: the tilt is
    # realized as a change of potential, so all weights are one).
    tilted = tilted_potential_from(ansatz, model.potential)
    tilted_model = cfg.build_model()
    tilted_model = type(tilted_model)(tilted, tilted_model.observable,
                                      tilted_model.stopping_set, tilted_model.domain)
    mfpt_tilted = estimate_mfpt_reweighted(None, x0, tilted_model, sim_cfg,
                                           seed=cfg.seed, tag=2, n_paths=n,
                                           workers=workers)
    record("mfpt_tilted", mfpt_tilted)

    if cfg.estimate.untilted:
        crude = estimate_mfpt_reweighted(None, x0, model, sim_cfg, seed=cfg.seed,
                                         tag=3, n_paths=n, workers=workers)
        record("mfpt", crude)

    _write_json(out / "estimates.json", {"config_hash": chash, "records": records})
    print(f"estimate: wrote {out/'estimates.json'} ({len(records)} quantities)")
    return 0


def cmd_gradcheck(cfg: RunConfig, out: Path, workers: int) -> int:
    model = cfg.build_model()
    x0 = cfg.start_point(model)
    ansatz = make_uniform_ansatz(cfg.ansatz.m, model.domain, model.stopping_set,
                                 cfg.ansatz.width)
    horizon = 0.5
    n_paths = 4000
    sim_cfg = cfg.sim_config(batch_size=n_paths)
    rng = np.random.default_rng(cfg.seed)
    a = 0.5 * rng.standard_normal(ansatz.m)
    ansatz = ansatz.with_coefficients(a)

    est = estimate_exact_gradient_fixed_horizon(ansatz, x0, model, sim_cfg, horizon,
                                                seed=cfg.seed, tag=5,
                                                n_paths=n_paths, workers=workers)
    delta = 1e-3
    rows = []
    ok_all = True
    for j in range(ansatz.m):
        step = np.zeros(ansatz.m)
        step[j] = delta
        up, up_se = estimate_cost(ansatz.with_coefficients(a + step), x0, model,
                                  sim_cfg, seed=cfg.seed, tag=5,
                                  fixed_horizon=horizon, n_paths=n_paths,
                                  workers=workers)
        dn, dn_se = estimate_cost(ansatz.with_coefficients(a - step), x0, model,
                                  sim_cfg, seed=cfg.seed, tag=5,
                                  fixed_horizon=horizon, n_paths=n_paths,
                                  workers=workers)
        fd = (up - dn) / (2 * delta)
        combined_se = float(np.hypot(est.gradient_stderr[j],
                                     np.hypot(up_se, dn_se) / (2 * delta)))
        tol = max(3.0 * combined_se, 1e-3 * abs(est.gradient[j]))
        ok = bool(abs(fd - est.gradient[j]) <= tol)
        ok_all &= ok
        rows.append({"component": j, "gradient": float(est.gradient[j]),
                     "finite_difference": fd, "combined_stderr": combined_se,
                     "pass": ok})
    _write_json(out / "gradcheck.json", {
        "config_hash": cfg.config_hash(), "horizon": horizon, "n_paths": n_paths,
        "pass": ok_all, "components": rows,
    })
    print(f"gradcheck: {'PASS' if ok_all else 'FAIL'} ({ansatz.m} components)")
    return 0 if ok_all else 1


def _read_reference_csv(path: Path):
    rows = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    data = np.array([[float(v) for v in ln.split(",")] for ln in rows[1:]])
    return {"x": data[:, 0], "psi": data[:, 1], "F": data[:, 2], "mfpt": data[:, 3]}


def cmd_compare(cfg: RunConfig, out: Path, workers: int) -> int:
    model = cfg.build_model()
    x0 = cfg.start_point(model)
    checks = []

    def check(name, ok, detail):
        checks.append({"name": name, "pass": bool(ok), "detail": detail})

    ref = _read_reference_csv(out / "reference.csv")
    probes = json.loads((out / "oracle_probes.json").read_text())
    check("pde_vs_oracle", probes["max_rel_error"] < 1e-3,
          {"max_rel_error": probes["max_rel_error"], "tolerance": 1e-3})

    estimates = json.loads((out / "estimates.json").read_text())
    by_name = {r["quantity"]: r for r in estimates["records"]}
    ansatz = _load_ansatz(out)
    grid = build_grid(model.stopping_set, model.domain, cfg.dx)
    tilted = tilted_potential_from(ansatz, model.potential)
    m_tilted_ref = solve_mfpt_pde(tilted, cfg.epsilon, grid, model.stopping_set)
    m_tilted_x0 = float(np.interp(x0, grid.nodes, m_tilted_ref))

    rec = by_name.get("mfpt_tilted")
    if rec is not None:
        lo, hi = rec["ci95"]
        check("tilted_mfpt_coverage", lo <= m_tilted_x0 <= hi,
              {"reference": m_tilted_x0, "ci95": [lo, hi]})

    m_plain_x0 = float(np.interp(x0, ref["x"], ref["mfpt"]))
    ratio = m_plain_x0 / m_tilted_x0
    check("speedup_band", SPEEDUP_BAND[0] <= ratio <= SPEEDUP_BAND[1],
          {"ratio": ratio, "band": list(SPEEDUP_BAND),
           "mfpt_plain": m_plain_x0, "mfpt_tilted": m_tilted_x0})

    # variational bound over every iterate of the descent trace
    f_x0 = float(np.interp(x0, ref["x"], ref["F"]))
    trace_files = sorted(out.glob("trace*.csv"))
    bound_ok = True
    worst = np.inf
    for tf in trace_files:
        rows = [ln for ln in tf.read_text().splitlines()
                if ln and not ln.startswith("#")][1:]
        for ln in rows:
            vals = ln.split(",")
            cost, stderr = float(vals[1]), float(vals[4])
            margin = cost - (f_x0 - 3.0 * stderr - DISCRETIZATION_ALLOWANCE)
            worst = min(worst, margin)
            bound_ok &= margin >= 0.0
    check("variational_bound", bound_ok,
          {"f_reference": f_x0, "allowance": DISCRETIZATION_ALLOWANCE,
           "worst_margin": None if not np.isfinite(worst) else worst,
           "trace_files": [t.name for t in trace_files]})

    ok_all = all(c["pass"] for c in checks)
    _write_json(out / "compare.json", {"config_hash": cfg.config_hash(),
                                       "pass": ok_all, "checks": checks})
    for c in checks:
        print(f"compare: {c['name']}: {'PASS' if c['pass'] else 'FAIL'}")
    return 0 if ok_all else 1


COMMANDS = {
    "reference": cmd_reference,
    "optimize": cmd_optimize,
    "estimate": cmd_estimate,
    "gradcheck": cmd_gradcheck,
    "compare": cmd_compare,
}


def _parse_set(pairs):
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        overrides[key.strip()] = yaml.safe_load(raw)
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optforce",
        description="Rare-event statistics of overdamped diffusions via learned "
                    "optimal forcing")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, default=None,
                        help="YAML config file (defaults reproduce the headline run)")
    parser.add_argument("--seed", type=int, default=None, help="override the seed")
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument("--workers", type=int, default=1,
                        help="batch-parallel worker count (results are identical "
                             "for any value)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field by dotted path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        overrides = _parse_set(args.set)
        if args.seed is not None:
            overrides["seed"] = args.seed
        if overrides:
            cfg = cfg.with_overrides(overrides)
    except (ConfigError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, out, args.workers)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
