"""Command-line entry point: ``polaron <subcommand> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 numerical or mixing
failure, 4 no root lambda* found.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import clusters, experiments, gibbs, pekar, pekar_process
from .errors import ConfigurationError, PolaronError, RootNotFoundError
from .io import SCHEMAS, RunConfig, RunResult, derive_seed, dumps, parse_config, write_results

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ROOT = 0, 2, 3, 4


def _npy(array) -> bytes:
    buf = _io.BytesIO()
    np.save(buf, np.asarray(array), allow_pickle=False)
    return buf.getvalue()


def _rng(cfg: RunConfig, replica: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(cfg.seed, replica, label))


def _load_profile(path: str):
    """Profile from CSV, or the solved Pekar profile when ``path`` is empty."""
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"profile: cannot read {path}: {exc}") from exc
        profile = pekar.RadialProfile.from_csv(text)
        return profile, pekar.pekar_energy(profile)
    solved = pekar.solve_ground_state()
    return solved.profile, solved.g0


# ---------------------------------------------------------------------------
# Subcommands; each returns (artifacts, timings)


def cmd_solve_pekar(cfg: RunConfig):
    p = cfg.params
    result = pekar.solve_ground_state(pekar.RadialGrid(p["n"], p["r_max"]), tol=p["tol"],
                                      mixing=p["mixing"], max_iter=p["max_iter"])
    return {"profile.csv": result.profile.to_csv(), "summary.json": result.summary_json()}, {}


def cmd_sample_pekar(cfg: RunConfig):
    p = cfg.params
    if p["drift"] == "pekar":
        profile, _ = _load_profile(p["profile"])
        drift = pekar.drift_field(profile)
    elif p["drift"] == "ou":
        profile = pekar.RadialProfile.gaussian(pekar.RadialGrid(), math.sqrt(0.5 / p["theta"]))
        drift = pekar_process.ou_drift(p["theta"])
    else:
        profile, drift = None, pekar_process.zero_drift
    artifacts = {}
    for r in range(cfg.replicas):
        rng = _rng(cfg, r, "sample-pekar")
        if profile is not None:
            paths = pekar_process.stationary_run(profile, drift, rng, n_chains=p["n_chains"],
                                                 n_record=p["n_record"], record_every=p["record_every"],
                                                 dt=p["dt"], burn_in=p["burn_in"])
        else:
            paths = pekar_process.euler_maruyama(drift, np.zeros((p["n_chains"], 3)), p["dt"],
                                                 p["n_record"], rng, record_every=p["record_every"])
        summary = {"replica": r, "record_dt": paths.dt, "n_chains": paths.n_chains,
                   "n_records": paths.n_steps + 1, "laws": []}
        if profile is not None:
            summary["invariant_density_l1"] = pekar_process.invariant_density_check(paths, profile)
        for lag in p["lags"]:
            law = pekar_process.increment_law(paths, lag)
            summary["laws"].append(law.summary())
            artifacts[f"increments_r{r}_lag{lag!r}.csv"] = law.to_csv()
        artifacts[f"summary_r{r}.json"] = dumps(summary)
    return artifacts, {}


def cmd_mcmc_polaron(cfg: RunConfig):
    p = cfg.params
    params = gibbs.PolaronParams(p["epsilon"], p["T"], eta=p["eta"], delta=p["delta"] or None,
                                 beta=p["beta"])
    burn_in = None if p["burn_in"] < 0 else p["burn_in"]
    artifacts = {}
    for r in range(cfg.replicas):
        rng = _rng(cfg, r, "mcmc-polaron")
        chain = gibbs.run_chain(params, p["n_steps"], rng, burn_in=burn_in, thin=p["thin"])
        s2, s2_err, n_eff = gibbs.estimate_sigma2(chain)
        diag = chain.diagnostics()
        diag.update({"sigma2": s2, "stderr": s2_err, "sigma2_n_eff": n_eff, "replica": r})
        artifacts[f"chain_r{r}.npy"] = _npy(np.stack(chain.samples))
        if p["free_energy"]:
            fe = gibbs.free_energy_thermo_integration(params.with_beta(1.0),
                                                      np.linspace(0.0, 1.0, p["ti_points"]),
                                                      _rng(cfg, r, "thermo-integration"),
                                                      n_steps=p["n_steps"])
            diag.update({"free_energy": fe.g, "free_energy_stderr": fe.stderr})
            artifacts[f"thermo_r{r}.csv"] = fe.table_csv()
        artifacts[f"diagnostics_r{r}.json"] = dumps(diag)
    return artifacts, {}


def cmd_cluster_sim(cfg: RunConfig):
    p = cfg.params
    alpha = p["alpha"]
    sol = clusters.solve_lambda(alpha, _rng(cfg, 0, "solve-lambda"), n_clusters=p["n_clusters"])
    artifacts = {"solution.json": dumps(sol.summary())}
    for r in range(cfg.replicas):
        path = clusters.assemble_stationary_polaron(alpha, sol.lam, p["horizon"],
                                                    _rng(cfg, r, "cluster-sim"), solution=sol,
                                                    dt=p["dt"])
        artifacts[f"configuration_r{r}.json"] = path.configuration.to_json()
        artifacts[f"positions_r{r}.npy"] = _npy(path.positions)
    return artifacts, {}


def cmd_solve_lambda(cfg: RunConfig):
    p = cfg.params
    sol = clusters.solve_lambda(p["alpha"], _rng(cfg, 0, "solve-lambda"),
                                bracket=(p["lambda_lo"], p["lambda_hi"]),
                                tol=p["tol"], n_clusters=p["n_clusters"])
    return {"solution.json": dumps(sol.summary()), "q_table.csv": sol.table_csv()}, {}


def cmd_sigma2(cfg: RunConfig):
    p = cfg.params
    sol = clusters.solve_lambda(p["alpha"], _rng(cfg, 0, "solve-lambda"), n_clusters=p["n_clusters"])
    est = clusters.sigma2(sol)
    payload = {"alpha": p["alpha"], "lambda": sol.lam, "lambda_stderr": sol.stderr}
    payload.update(est.summary())
    return {"sigma2.json": dumps(payload)}, {}


def cmd_sweep(cfg: RunConfig):
    p = cfg.params
    backends = list(p["backends"])
    if len(backends) == 1:
        backends = backends * len(p["epsilons"])
    plan = experiments.SweepPlan(epsilons=list(p["epsilons"]), backends=backends, lags=list(p["lags"]),
                                 seed=cfg.seed, n_samples=p["n_samples"],
                                 n_permutations=p["n_permutations"], n_clusters=p["n_clusters"],
                                 dt=p["dt"], mcmc_T=p["mcmc_T"] or None, mcmc_steps=p["mcmc_steps"],
                                 beta=p["beta"], free_energy=p["free_energy"])
    profile, g0 = _load_profile(p["profile"])
    report = experiments.run_sweep(plan, profile, g0)
    return {"report.csv": report.to_csv(), "metadata.json": report.metadata_json()}, report.runtimes


def _read_report(directory: Path):
    try:
        rows = list(csv.DictReader(_io.StringIO((directory / "report.csv").read_text(encoding="utf-8"))))
        meta = json.loads((directory / "metadata.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"input: cannot read sweep output in {directory}: {exc}") from exc
    out = []
    for row in rows:
        values = {k: (row[k] if k in ("backend", "status") else float(row[k]))
                  for k in experiments.REPORT_COLUMNS}
        out.append(experiments.ReportRow(**values))
    return experiments.ComparisonReport(out, float(meta["g0"]), meta)


def cmd_report(cfg: RunConfig):
    p = cfg.params
    if not p["input"]:
        raise ConfigurationError("report.input: a sweep output directory is required")
    report = _read_report(Path(p["input"]))
    lags = list(p["lag_check"]) or sorted({r.lag for r in report.rows})
    table = []
    for eps, rows in report.by_epsilon().items():
        for r in rows:
            table.append({"epsilon": eps, "lag": r.lag, "distance": r.distance, "stderr": r.stderr,
                          "g_gap": r.g_eps - report.g0, "status": r.status})
    summary = {
        "g0": report.g0,
        "distance_non_increasing": {repr(lag): report.distance_trend(lag) for lag in lags},
        "g_moves_toward_g0": report.free_energy_trend(),
        "rows": table,
    }
    return {"trend.json": dumps(summary)}, {}


COMMANDS = {
    "solve-pekar": cmd_solve_pekar,
    "sample-pekar": cmd_sample_pekar,
    "mcmc-polaron": cmd_mcmc_polaron,
    "cluster-sim": cmd_cluster_sim,
    "solve-lambda": cmd_solve_lambda,
    "sigma2": cmd_sigma2,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polaron", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS:
        keys = ", ".join(SCHEMAS[name])
        cmd = sub.add_parser(name, help=f"keys: {keys}", description=f"[{name}] keys: {keys}")
        cmd.add_argument("--config", help="INI file with [run] and [%s] sections" % name)
        cmd.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="override a key; prefix run. for seed, output, replicas")
        cmd.add_argument("--seed", help="master seed")
        cmd.add_argument("--output", help="output directory")
        cmd.add_argument("--replicas", help="replica count")
    return parser


def run(cfg: RunConfig) -> RunResult:
    """Execute a parsed config and write its artifacts."""
    t0 = time.perf_counter()
    artifacts, timings = COMMANDS[cfg.subcommand](cfg)
    result = RunResult(cfg, wall_clock=time.perf_counter() - t0, timings=timings)
    write_results(result, artifacts)
    return result


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_CONFIG
        overrides[key.strip()] = value.strip()
    for key in ("seed", "output", "replicas"):
        if getattr(args, key) is not None:
            overrides[f"run.{key}"] = getattr(args, key)
    try:
        cfg = parse_config(args.subcommand, args.config, overrides)
        result = run(cfg)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RootNotFoundError as exc:
        print(f"root not found: {exc}", file=sys.stderr)
        return EXIT_ROOT
    except PolaronError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"{cfg.subcommand}: wrote {len(result.manifest)} artifacts to {cfg.output} "
          f"in {result.wall_clock:.1f}s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
