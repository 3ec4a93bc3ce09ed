"""Command-line entry point.

Every run writes its outputs and a ``<command>.manifest.json`` into the
output directory (``--out-dir``, else ``$SDECOV_OUTPUT_DIR``, else
``./sdecov-output``).  ``sdecov replay MANIFEST`` reruns a manifest and checks
that every output is reproduced byte for byte.

Exit status: 0 success, 1 user error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import _seeding, io
from .bayes import (PriorSpec, abc_rejection, chain_diagnostics, empirical_bayes_prior,
                    gibbs_sampler)
from .bootstrap import histogram, parametric_bootstrap
from .errors import (BootstrapFailureError, BudgetExhaustedError, DomainError, IngestionError,
                     NotIdentifiableError, NumericalError, ParameterError, RefusalError,
                     SdeCovError, SimulationOverflowError, SingularDiffusionError)
from .estimation import block_relaxation_mle, random_init
from .experiments import (GibbsConfig, consistency_experiment, normality_experiment,
                          posterior_normality_experiment, qq_data)
from .likelihood import subject_stats
from .model import TimeGrid
from .presets import (IDENTIFIABLE_THETA, identifiable_iid_spec, identifiable_spec,
                      nse_like_panel, product_panel)
from .random_effects import REParams, re_marginal_loglik
from .simulate import CovariateModel, simulate_covariates, simulate_panel, stack_covariates

log = logging.getLogger("sdecov")

ENV_OUTPUT_DIR = "SDECOV_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "sdecov-output"

USER_ERRORS = (ParameterError, IngestionError, RefusalError, NotIdentifiableError)
NUMERICAL_ERRORS = (NumericalError, SimulationOverflowError, SingularDiffusionError, DomainError,
                    BudgetExhaustedError, BootstrapFailureError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class Run:
    """Output directory, declared inputs/outputs and manifest bookkeeping."""

    def __init__(self, command: str, args: argparse.Namespace, config: dict | None):
        self.command = command
        self.args = args
        self.config = config or {}
        self.out_dir = Path(args.out_dir or os.environ.get(ENV_OUTPUT_DIR) or DEFAULT_OUTPUT_DIR)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.outputs: dict = {}
        self.inputs: dict = {}
        self.resolved: dict = {}
        self.seeds: dict = {}
        self.summary: dict = {}
        self.start = time.perf_counter()

    def path(self, name: str) -> Path:
        """Resolve an output name, refusing anything outside the output directory."""
        p = Path(name)
        if p.is_absolute():
            raise ParameterError(f"output {name!r} must be a path relative to the output directory")
        root = self.out_dir.resolve()
        full = (root / p).resolve()
        if root != full and root not in full.parents:
            raise ParameterError(f"output {name!r} escapes the output directory")
        full.parent.mkdir(parents=True, exist_ok=True)
        return full

    def output(self, name: str) -> Path:
        p = self.path(name)
        self.outputs[name] = p
        return p

    def input(self, name) -> Path:
        p = Path(name)
        if not p.exists() and not p.is_absolute() and (self.out_dir / p).exists():
            p = self.out_dir / p
        if not p.exists():
            raise ParameterError(f"input file {str(name)!r} does not exist")
        full = str(p.resolve())
        self.inputs[full] = io.file_hash(p)
        self.resolved[str(name)] = full
        return p

    def manifest(self) -> dict:
        # input arguments are stored resolved so the manifest replays from any directory
        args = {k: self.resolved.get(v, v) if isinstance(v, str) else v
                for k, v in vars(self.args).items() if k not in ("config_dict", "out_dir")}
        return {
            "command": self.command,
            "args": args,
            "config": self.config,
            "config_sha256": io.config_hash(self.config),
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": {k: io.file_hash(v) for k, v in sorted(self.outputs.items())},
            "versions": io.versions(),
            "runtime_seconds": time.perf_counter() - self.start,
        }

    def finish(self):
        io.write_json(self.path(f"{self.command}.manifest.json"), self.manifest())


def _config(args) -> dict:
    if getattr(args, "config_dict", None) is not None:
        return io.validate_config(args.config_dict)
    if getattr(args, "config", None):
        return io.load_config(args.config)
    return {}


def _seed(args, config) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    return int(config.get("seed", 0))


def _load_panel(run: Run, data):
    panel = io.ingest_panel(run.input(data))
    spec = io.spec_from_config(run.config, panel.spec.p)
    return panel.with_spec(spec)


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "x", name)


def _fit(run: Run, panel, seed, tol, max_sweeps):
    init = run.config.get("init", "random")
    if init == "random":
        init = random_init(panel.spec, seed)
    return block_relaxation_mle(panel, init, tol=tol, max_sweeps=max_sweeps)


def _fit_settings(args, config):
    fit = config.get("fit", {})
    tol = args.tol if getattr(args, "tol", None) is not None else fit.get("tol", 1e-5)
    sweeps = fit.get("max_sweeps", 10_000)
    return float(tol), int(sweeps)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(run: Run):
    args, config = run.args, run.config
    seed = _seed(args, config)
    run.seeds["simulate"] = seed
    preset = args.preset or config.get("preset")
    if preset == "product":
        panel, _ = product_panel(seed, n=args.n or config.get("n", 20))
    elif preset == "nse-like":
        panel = nse_like_panel(seed)
    else:
        if not config:
            raise ParameterError("simulate needs --config or --preset")
        for key in ("grid", "theta"):
            if key not in config:
                raise ParameterError(f"config field {key!r} is required for simulate")
        spec = io.spec_from_config(config)
        n = args.n or config.get("n", 1)
        grid = TimeGrid(**config["grid"])
        cm = config.get("covariates", {})
        bounds = cm.get("bounds")
        covs = None
        if spec.p:
            groups = [simulate_covariates(n, grid, cm.get("xi_mean", 7.0), cm.get("xi_sd", 1.0),
                                          cm.get("z0", 0.0), seed=_seeding.derive(seed, l),
                                          bounds=bounds)
                      for l in range(spec.p)]
            covs = stack_covariates(*groups)
        panel = simulate_panel(spec, spec.theta(config["theta"]), n, grid,
                               config.get("x0", 0.0), covs, seed=seed, workers=args.workers)
    io.write_panel_csv(panel, run.output(args.out))
    model = {"model": panel.spec.to_dict(), "seed": seed}
    if preset is None:
        model = dict(config, **model)
    else:
        model.update(preset=preset, n=panel.n)
    io.write_json(run.output(args.model_out), model)
    run.summary = {"n": panel.n, "p": panel.spec.p}


def cmd_ingest(run: Run):
    panel = _load_panel(run, run.args.data)
    io.write_panel_csv(panel, run.output(run.args.out))
    summary = {
        "n": panel.n,
        "p": panel.spec.p,
        "subjects": list(panel.subjects),
        "n_steps": [g.n_steps for g in panel.grids],
        "t_end": [g.t_end for g in panel.grids],
        "x0": panel.x0s,
    }
    io.write_json(run.output("ingest_summary.json"), summary)
    run.summary = {"n": panel.n, "p": panel.spec.p}


def cmd_fit(run: Run):
    args = run.args
    panel = _load_panel(run, args.data)
    tol, sweeps = _fit_settings(args, run.config)
    seed = _seed(args, run.config)
    run.seeds["init"] = seed
    res = _fit(run, panel, seed, tol, sweeps)
    spec = panel.spec
    out = {
        "theta_hat": res.theta_hat.as_dict(),
        "coefficients": dict(zip(spec.coefficient_names(), spec.coefficients(res.theta_hat.values))),
        "loglik": res.loglik,
        "iterations": res.iterations,
        "converged": res.converged,
        "final_move": res.final_move,
        "tol": tol,
        "flat_coordinates": [spec.names[j] for j in sorted(res.flat_coordinates)],
        "clamped_coordinates": [spec.names[j] for j in sorted(res.clamped_coordinates)],
        "loglik_trace": res.loglik_trace,
        "identifiable": spec.identifiable,
    }
    io.write_json(run.output(args.out), out)
    if args.uv:
        st = subject_stats(panel, res.theta_hat)
        io.write_csv(run.output("uv.csv"), ["subject", "U", "V"],
                     [(s, g.U, g.V) for s, g in zip(panel.subjects, st)])
    run.summary = {"theta_hat": res.theta_hat.as_dict(), "converged": res.converged}
    if not res.converged:
        run.finish()
        raise NumericalError(f"block relaxation did not converge in {res.iterations} sweeps")


def _bootstrap(run: Run, panel, B, seed, level, workers, regenerate):
    tol, sweeps = _fit_settings(run.args, run.config)
    res = _fit(run, panel, seed, tol, sweeps)
    cm = None
    if regenerate:
        c = run.config.get("covariates", {})
        cm = CovariateModel(c.get("xi_mean", 7.0), c.get("xi_sd", 1.0), c.get("z0", 0.0),
                            tuple(c["bounds"]) if c.get("bounds") else None, panel.spec.p)
    boot = parametric_bootstrap(panel.spec, res.theta_hat, panel.shape(cm), B, seed=seed,
                                regenerate_covariates=regenerate, tol=tol, max_sweeps=sweeps,
                                workers=workers)
    return res, boot


def cmd_bootstrap(run: Run):
    args, config = run.args, run.config
    bc = config.get("bootstrap", {})
    B = args.B or bc.get("B", 1000)
    level = args.level or bc.get("level", 0.95)
    workers = args.workers or bc.get("workers", 1)
    regen = args.regenerate_covariates or bc.get("regenerate_covariates", False)
    panel = _load_panel(run, args.data)
    seed = _seed(args, config)
    run.seeds["bootstrap"] = seed
    res, boot = _bootstrap(run, panel, B, seed, level, workers, regen)
    names = list(boot.names)
    io.write_csv(run.output("replicates.csv"), ["replicate"] + names + ["converged"],
                 [[b + 1] + list(map(float, r)) + [int(c)]
                  for b, (r, c) in enumerate(zip(boot.replicates, boot.converged))])
    ok = boot.finite()
    series = {n: boot.replicates[ok, j] for j, n in enumerate(names)}
    series.update({n: boot.products[ok, k] for k, n in enumerate(boot.product_names)})
    for name, vals in series.items():
        lo, hi, cnt = histogram(vals, 40)
        io.write_csv(run.output(f"hist_{_safe(name)}.csv"), ["bin_left", "bin_right", "count"],
                     zip(map(float, lo), map(float, hi), map(int, cnt)))
    summary = {"theta_hat": res.theta_hat.as_dict(), "B": B, "level": level,
               "converged": int(boot.converged.sum()), "regenerate_covariates": regen,
               "intervals": boot.intervals(level)}
    io.write_json(run.output("bootstrap_summary.json"), summary)
    run.summary = summary["intervals"]


def _prior(run: Run, block: dict, panel, seed, dim):
    pr = block.get("prior", {})
    kind = getattr(run.args, "prior", None) or pr.get("kind", "normal")
    if kind == "empirical-bayes":
        B = getattr(run.args, "bootstrap_B", None) or pr.get("bootstrap_B", 1000)
        _, boot = _bootstrap(run, panel, B, seed, 0.95, getattr(run.args, "workers", 1) or 1,
                             False)
        return empirical_bayes_prior(boot)
    mean = pr.get("mean", 0.0)
    sd = pr.get("sd", 10.0)
    return PriorSpec(np.broadcast_to(mean, dim), np.broadcast_to(sd, dim))


def cmd_abc(run: Run):
    args, config = run.args, run.config
    ac = config.get("abc", {})
    panel = _load_panel(run, args.data)
    seed = _seed(args, config)
    run.seeds["abc"] = seed
    prior = _prior(run, ac, panel, seed, panel.spec.dim)
    eps = args.epsilon or ac.get("epsilon", 0.1)
    n_acc = args.n_accept or ac.get("n_accept", 10_000)
    max_trials = args.max_trials or ac.get("max_trials", 10**8)
    distance = args.distance or ac.get("distance", "rms")
    workers = args.workers or ac.get("workers", 1)
    chain = abc_rejection(panel, prior, eps, n_acc, seed=seed, max_trials=max_trials,
                          distance=distance, workers=workers)
    names = list(chain.names)
    io.write_csv(run.output("abc_chain.csv"), ["draw"] + names + ["distance"],
                 [[k + 1] + list(map(float, r)) + [float(d)]
                  for k, (r, d) in enumerate(zip(chain.draws, chain.distances))])
    summary = {"meta": chain.meta, "prior": prior.to_dict(),
               "credible_intervals": chain.credible_intervals(0.95, panel.spec)}
    io.write_json(run.output("abc_summary.json"), summary)
    run.summary = chain.meta


def cmd_gibbs(run: Run):
    args, config = run.args, run.config
    gc = config.get("gibbs", {})
    panel = _load_panel(run, args.data)
    spec = panel.spec
    seed = _seed(args, config)
    run.seeds["gibbs"] = seed
    if args.prior_var is not None or args.prior_mean is not None:
        prior = PriorSpec(np.full(spec.dim, args.prior_mean or 0.0),
                          np.full(spec.dim, np.sqrt(args.prior_var or 100.0)))
    else:
        prior = _prior(run, gc, panel, seed, spec.dim) if "prior" in gc else PriorSpec.iid(spec.dim)
    iters = args.iters or gc.get("iters", 100_000)
    thin = args.thin or gc.get("thin", 10)
    init = args.init if args.init is not None else gc.get("init", 0.1)
    fixed = [spec.names.index(n) for n in (args.fix or gc.get("fixed", []))]
    chain = gibbs_sampler(panel, prior, iters, thin, np.broadcast_to(init, spec.dim).copy(),
                          seed=seed, fixed=fixed)
    names = list(chain.names)
    io.write_csv(run.output("gibbs_chain.csv"), ["draw"] + names,
                 [[(k + 1) * thin] + list(map(float, r)) for k, r in enumerate(chain.draws)])
    diag = chain_diagnostics(chain)
    io.write_csv(run.output("running_means.csv"), ["draw"] + names,
                 [[(k + 1) * thin] + list(map(float, r)) for k, r in enumerate(diag.running_means)])
    io.write_csv(run.output("acf.csv"), ["lag"] + names,
                 [[lag] + list(map(float, diag.acf[:, lag])) for lag in range(1, diag.acf.shape[1])])
    summary = {"meta": chain.meta, "prior": prior.to_dict(), "diagnostics": diag.summary(),
               "credible_intervals": chain.credible_intervals(0.95, spec)}
    io.write_json(run.output("gibbs_summary.json"), summary)
    run.summary = {"iters": iters, "thin": thin, "recorded": len(chain)}


def cmd_re_loglik(run: Run):
    args = run.args
    panel = _load_panel(run, args.data)
    params = REParams.from_dict(io.read_json(run.input(args.params)))
    total, terms = re_marginal_loglik(panel, params, form=args.form, return_terms=True)
    io.write_csv(run.output("re_terms.csv"), ["subject", "term"],
                 zip(panel.subjects, map(float, terms)))
    io.write_json(run.output("re_loglik.json"), {"loglik": total, "form": args.form,
                                                  "params": params.to_dict()})
    run.summary = {"loglik": total}


def cmd_verify(run: Run):
    args, config = run.args, run.config
    ec = config.get("experiments", {})
    seed = _seed(args, config)
    run.seeds["verify"] = seed
    setup = args.setup or ec.get("setup", "non-iid")
    spec = identifiable_spec() if setup == "non-iid" else identifiable_iid_spec()
    theta0 = ec.get("theta0", IDENTIFIABLE_THETA if setup == "non-iid" else IDENTIFIABLE_THETA[:1])
    reps = args.reps or ec.get("reps", 500)
    n = args.n or ec.get("n", 160)
    n_steps = ec.get("n_steps", 100)
    workers = args.workers or ec.get("workers", 1)
    if args.experiment == "consistency":
        n_list = args.n_list or ec.get("n_list", [10, 40, 160])
        rep = consistency_experiment(spec, theta0, n_list, reps, seed, setup, n_steps,
                                     workers)
        rows = [[nn, r + 1] + list(map(float, est)) for nn, arr in rep.estimates.items()
                for r, est in enumerate(arr)]
        io.write_csv(run.output("estimates.csv"), ["n", "replicate"] + list(spec.names), rows)
        mae = rep.mae()
        if not np.all(np.diff(mae) < 0):
            rep.flags.append("mean absolute error not strictly decreasing in n")
    elif args.experiment == "mle-normality":
        rep = normality_experiment(spec, theta0, n, reps, seed, setup, n_steps, workers)
    else:
        g = GibbsConfig(args.iters or 100_000, args.thin or 10)
        rep = posterior_normality_experiment(spec, theta0, n, g, seed, setup, n_steps)
    if rep.samples is not None:
        io.write_csv(run.output("standardized.csv"), ["sample"] + list(spec.names),
                     [[k + 1] + list(map(float, r)) for k, r in enumerate(rep.samples)])
        for j, name in enumerate(spec.names):
            q, x = qq_data(rep.samples[:, j])
            io.write_csv(run.output(f"qq_{_safe(name)}.csv"),
                         ["theoretical_quantile", "empirical_quantile"],
                         zip(map(float, q), map(float, x)))
    out = rep.to_dict()
    out.pop("runtime_seconds")
    io.write_json(run.output(f"{args.experiment}_report.json"), out)
    run.summary = {"rows": rep.rows, "ks": rep.ks, "flags": rep.flags}


def cmd_replay(run: Run):
    """Rerun a manifest into this output directory and compare output hashes."""
    man = io.read_json(run.input(run.args.manifest))
    argv_args = dict(man["args"])
    argv_args["out_dir"] = str(run.out_dir)
    if run.args.workers is not None and "workers" in argv_args:
        argv_args["workers"] = run.args.workers
    ns = argparse.Namespace(**argv_args)
    ns.config_dict = man.get("config") or None
    ns.config = None
    for name, digest in man.get("inputs", {}).items():
        p = Path(name)
        if not p.exists() or io.file_hash(p) != digest:
            raise ParameterError(f"replay input {name!r} is missing or has changed")
    command = man["command"]
    status = _execute(command, ns, quiet=True)
    if status != 0:
        raise NumericalError(f"replayed command exited with status {status}")
    fresh = io.read_json(run.out_dir / f"{command}.manifest.json")
    diff = [k for k, v in man["outputs"].items() if fresh["outputs"].get(k) != v]
    io.write_json(run.output("replay_report.json"),
                  {"command": command, "identical": not diff, "mismatched": diff})
    run.summary = {"identical": not diff, "mismatched": diff}
    if diff:
        raise NumericalError(f"replay differs in {diff}")


COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "bootstrap": cmd_bootstrap,
    "abc": cmd_abc,
    "gibbs": cmd_gibbs,
    "re-loglik": cmd_re_loglik,
    "verify": cmd_verify,
    "replay": cmd_replay,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sdecov", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True, seed=True):
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--out-dir", help=f"output directory (default ${ENV_OUTPUT_DIR})")
        if data:
            p.add_argument("--data", required=True, help="panel CSV")
        if seed:
            p.add_argument("--seed", type=int)

    p = sub.add_parser("simulate", help="simulate a panel CSV")
    common(p, data=False)
    p.add_argument("--preset", choices=["product", "nse-like"])
    p.add_argument("--n", type=int)
    p.add_argument("--out", default="panel.csv")
    p.add_argument("--model-out", default="model.json")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("ingest", help="validate and normalize a panel CSV")
    p.add_argument("data")
    p.add_argument("--config")
    p.add_argument("--out-dir")
    p.add_argument("--out", default="ingested.csv")

    p = sub.add_parser("fit", help="block-relaxation MLE")
    common(p)
    p.add_argument("--tol", type=float)
    p.add_argument("--out", default="estimates.json")
    p.add_argument("--uv", action="store_true", help="also write per-subject (U, V)")

    p = sub.add_parser("bootstrap", help="parametric bootstrap")
    common(p)
    p.add_argument("--B", type=int)
    p.add_argument("--level", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--regenerate-covariates", action="store_true")

    p = sub.add_parser("abc", help="rejection ABC")
    common(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--n-accept", type=int)
    p.add_argument("--max-trials", type=int)
    p.add_argument("--distance", choices=["rms", "mean-path"])
    p.add_argument("--prior", choices=["normal", "empirical-bayes"])
    p.add_argument("--bootstrap-B", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("gibbs", help="Gibbs sampler")
    common(p)
    p.add_argument("--iters", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--init", type=float)
    p.add_argument("--prior-mean", type=float)
    p.add_argument("--prior-var", type=float)
    p.add_argument("--fix", nargs="*", help="coordinate names held at their initial value")

    p = sub.add_parser("re-loglik", help="random-effects marginal log-likelihood")
    common(p, seed=False)
    p.add_argument("--params", required=True, help="JSON with mu, Sigma, beta")
    p.add_argument("--form", choices=["stable", "inverse"], default="stable")

    p = sub.add_parser("verify", help="asymptotics experiments")
    common(p, data=False)
    p.add_argument("--experiment", required=True,
                   choices=["consistency", "mle-normality", "posterior-normality"])
    p.add_argument("--reps", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--n-list", type=int, nargs="+")
    p.add_argument("--setup", choices=["iid", "non-iid"])
    p.add_argument("--iters", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("replay", help="rerun a manifest and compare outputs")
    p.add_argument("manifest")
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int, help="override the worker count")
    return parser


def _execute(command: str, args: argparse.Namespace, quiet: bool = False) -> int:
    try:
        config = {} if command == "replay" else _config(args)
        run = Run(command, args, config)
        COMMANDS[command](run)
        run.finish()
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except SdeCovError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not quiet:
        print(io.json.dumps(io._jsonable(run.summary), sort_keys=True))
    return 0


def run(argv=None) -> int:
    """Parse ``argv`` and execute; returns the exit status."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.command
    del args.command, args.verbose
    return _execute(command, args)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
