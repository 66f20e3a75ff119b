"""Run configured experiments and persist their results.

Each replication writes line-delimited records while it runs. The manifest
is written before the first model call and rewritten when the experiment
ends.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from abris.baselines import GaussianPrior, MhConfig, SmcConfig, mh_run, smc_run
from abris.driver import AbrisConfig, ConvergenceRule, run
from abris.errors import AbrisError, BudgetExhausted
from abris.forward_models.fem import PoissonMesh
from abris.forward_models.gaussian import GaussianTarget
from abris.forward_models.poisson import PoissonProblem, ground_truth_field, save_table
from abris.harness.evaluation import BatchModel, CountingModel
from abris.metrics import posterior_mean_field, relative_l2, weighted_a_norm_error
from abris.optimizer import DampingSchedule, StochasticOptimizer
from abris.variational import GaussianMixture, MeanFieldGaussian, VariationalParams

_logger = logging.getLogger(__name__)

STREAMS = ("init", "sampling", "e_ref", "noise", "mcmc", "smc", "eval")


def rng_streams(seed):
    """Independent named generators derived from one root seed."""
    return {
        name: np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(k,)))
        for k, name in enumerate(STREAMS)
    }


def _now():
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunManifest:
    """Bookkeeping of one experiment.

    Attributes:
        path (str): Location of the manifest file.
        config (dict): Config snapshot.
        config_hash (str): SHA-256 of the config snapshot.
        started (str): ISO timestamp before the first model call.
        finished (str or None): ISO timestamp at exit.
        replications (list[dict]): Per-replication file paths and summaries.
    """

    path: str
    config: dict
    config_hash: str
    started: str
    finished: str = None
    replications: list = field(default_factory=list)

    def write(self):
        Path(self.path).write_text(json.dumps(asdict(self), indent=2, default=_json_default))

    @classmethod
    def load(cls, path):
        data = json.loads(Path(path).read_text())
        data["path"] = str(path)
        return cls(**data)

    @property
    def directory(self):
        return Path(self.path).parent


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


class ProblemContext:
    """Forward model and truth shared by all replications of an experiment."""

    def __init__(self, cfg, out_dir):
        p = cfg.section("problem")
        self.kind = cfg.problem
        if self.kind == "gaussian-match":
            self.target = GaussianTarget.standard_match(p["dim"], p["variance"])
            self.dim = p["dim"]
            self.single = self.target.logjoint
            self.batch = self.target
            self.log_likelihood = lambda x: self.target(x) - GaussianPrior(np.zeros(self.dim)).logpdf(x)
        else:
            noise = rng_streams(p["noise_seed"])["noise"]
            mesh = PoissonMesh.default(p["mesh_n"])
            self.problem = PoissonProblem.build(noise, p["n_kkl"], p["length_scale"], p["scaled_basis"], mesh)
            self.truth = ground_truth_field(mesh)
            self.dim = p["n_kkl"]
            self.single = self.problem.logjoint
            self.batch = BatchModel(self.problem.logjoint, cfg["experiment.parallel"])
            self.log_likelihood = BatchModel(self.problem.log_likelihood, cfg["experiment.parallel"])
            save_table(out_dir / "y_obs.txt", self.problem.y_obs)
            save_table(out_dir / "zeta_true.txt", self.truth)
            save_table(out_dir / "basis.txt", self.problem.expansion.basis)
            save_table(out_dir / "eigenvalues.txt", self.problem.expansion.eigenvalues)

    def field_errors(self, posterior, rng, n_draws):
        mean = posterior_mean_field(posterior, self.problem.expansion, n_draws, rng)
        return relative_l2(mean, self.truth), weighted_a_norm_error(mean, self.truth, self.truth**2)


def _write_tsv(path, header, rows):
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _build_variational(cfg, dim, rng):
    a = cfg.section("abris")
    if a["family"] == "gmm":
        fam = GaussianMixture(dim, a["n_components"])
    else:
        fam = MeanFieldGaussian(dim)
    return VariationalParams(fam, fam.initialize(rng))


def _build_optimizer(cfg, dim):
    o = cfg.section("optimizer")
    lr = o["learning_rate"] if o["learning_rate"] is not None else 0.1 / dim
    return StochasticOptimizer(
        learning_rate=lr,
        lr_rule=o["lr_rule"],
        lr_factor=o["lr_factor"],
        lr_interval=o["lr_interval"],
        natural_gradient=o["natural_gradient"],
        damping=DampingSchedule(o["eta_tilde"], o["i_b"], o["eta_bound"]),
        clip_threshold=o["clip_threshold"],
        alpha_reg=o["alpha_reg"],
    )


def _build_abris_config(cfg, plain):
    a = cfg.section("abris")
    o = cfg.section("optimizer")
    return AbrisConfig(
        batch_size=a["batch_size"],
        window=0 if plain else a["window"],
        n_periodic=1 if plain else a["n_periodic"],
        alpha_sc=a["alpha_sc"],
        max_iterations=a["max_iterations"],
        max_model_calls=a["max_model_calls"],
        use_ess_criterion=a["use_ess_criterion"],
        use_score_criterion=a["use_score_criterion"],
        criterion_damping=DampingSchedule(o["eta_tilde"], o["i_b"], o["eta_bound"]),
        baseline=a["baseline"],
    )


def _convergence_rule(cfg, ctx):
    rule = cfg["convergence.rule"]
    if rule is None:
        rule = "relative-parameter-error" if ctx.kind == "gaussian-match" else "budget-only"
    if rule == "relative-parameter-error":
        return ConvergenceRule(rule, ctx.target.optimal_params(), cfg["convergence.tol"])
    return ConvergenceRule("budget-only")


def _run_variational(cfg, ctx, streams, files, plain):
    counter = CountingModel(ctx.batch)
    q0 = _build_variational(cfg, ctx.dim, streams["init"])
    rule = _convergence_rule(cfg, ctx)
    if rule.kind == "relative-parameter-error" and not isinstance(q0.family, MeanFieldGaussian):
        rule = ConvergenceRule("budget-only")
    interval = cfg["evaluation.interval"]
    n_draws = cfg["evaluation.n_draws"]
    errors = []
    next_eval = [interval]
    last_tags = [None]

    with open(files["records"], "a") as fh:

        def sink(rec):
            row = rec.as_dict()
            if rec.batch_tags != last_tags[0]:
                row["batch_tags"] = list(rec.batch_tags)
                row["batch_sizes"] = list(rec.batch_sizes)
                last_tags[0] = rec.batch_tags
            fh.write(json.dumps(row, default=_json_default) + "\n")
            if ctx.kind == "poisson" and rec.cumulative_calls >= next_eval[0]:
                q = q0.with_params(rec.lam)
                errors.append((rec.cumulative_calls, rec.iteration, *ctx.field_errors(q, streams["eval"], n_draws)))
                while next_eval[0] <= rec.cumulative_calls:
                    next_eval[0] += interval

        result = run(
            counter,
            q0,
            _build_abris_config(cfg, plain),
            _build_optimizer(cfg, ctx.dim),
            streams["sampling"],
            ref_rng=streams["e_ref"],
            convergence=rule,
            callback=sink,
        )

    summary = {
        "status": result.status,
        "iterations": len(result.records),
        "total_calls": result.total_calls,
        "audited_calls": counter.calls,
        "final_lam": result.q.lam,
    }
    if rule.kind == "relative-parameter-error":
        ref = rule.reference
        summary["final_relative_parameter_error"] = float(np.linalg.norm(result.q.lam - ref) / np.linalg.norm(ref))
    if ctx.kind == "poisson":
        errors.append((result.total_calls, len(result.records), *ctx.field_errors(result.q, streams["eval"], n_draws)))
    return summary, errors


def _run_mh(cfg, ctx, streams, files):
    m = cfg.section("mh")
    counter = CountingModel(ctx.batch)
    mh_cfg = MhConfig(n_steps=m["n_steps"], i_tune=m["i_tune"], initial_scale=m["initial_scale"], burn_in=m["burn_in"])
    res = mh_run(counter, mh_cfg, streams["mcmc"], dim=ctx.dim)
    with open(files["records"], "a") as fh:
        for k, (rate, scale) in enumerate(zip(res.acceptance, res.scales), start=1):
            step = k * mh_cfg.i_tune
            fh.write(json.dumps({"iteration": step, "cumulative_calls": step + 1, "acceptance": rate, "scale": scale}) + "\n")
    errors = []
    if ctx.kind == "poisson":
        interval = cfg["evaluation.interval"]
        for k in list(range(interval, mh_cfg.n_steps + 1, interval)) or [mh_cfg.n_steps]:
            start = int(mh_cfg.burn_in * (k + 1))
            errors.append((k + 1, k, *ctx.field_errors(res.chain[start : k + 1], None, 0)))
    summary = {
        "status": "completed",
        "iterations": mh_cfg.n_steps,
        "total_calls": res.calls,
        "audited_calls": counter.calls,
        "posterior_mean": res.samples.mean(axis=0),
        "final_acceptance": float(res.acceptance[-1]) if res.acceptance.size else None,
    }
    return summary, errors


def _run_smc(cfg, ctx, streams, files):
    s = cfg.section("smc")
    counter = CountingModel(ctx.log_likelihood)
    smc_cfg = SmcConfig(n_particles=s["n_particles"], n_rejuvenation=s["n_rejuvenation"], ess_threshold=s["ess_threshold"])
    res = smc_run(counter, GaussianPrior(np.zeros(ctx.dim)), smc_cfg, streams["smc"])
    with open(files["records"], "a") as fh:
        for row in res.trace:
            fh.write(json.dumps(row, default=_json_default) + "\n")
    errors = []
    draws = res.cloud.particles
    if ctx.kind == "poisson":
        errors.append((res.calls, len(res.gammas) - 1, *ctx.field_errors(draws, None, 0)))
    summary = {
        "status": "completed",
        "iterations": len(res.gammas) - 1,
        "total_calls": res.calls,
        "audited_calls": counter.calls,
        "posterior_mean": res.cloud.mean(),
    }
    return summary, errors


def _calls_to_threshold(errors, threshold):
    return next((calls for calls, _, rel, _ in errors if rel <= threshold), None)


def run_experiment(config, out_dir=None):
    """Run every replication of ``config`` and return the finalized manifest.

    Replication ``r`` uses seed ``experiment.seed + r``. Failures inside a
    replication are recorded in its summary and do not stop the others.
    """
    out = Path(out_dir or config["experiment.out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        path=str(out / "manifest.json"),
        config=config.to_dict(),
        config_hash=config.content_hash(),
        started=_now(),
    )
    n_rep = config["experiment.replications"]
    for r in range(n_rep):
        manifest.replications.append(
            {
                "replication": r,
                "seed": config["experiment.seed"] + r,
                "records": f"records_{r:03d}.jsonl",
                "errors": f"errors_{r:03d}.tsv",
                "summary": None,
            }
        )
    manifest.write()

    ctx = ProblemContext(config, out)
    for entry in manifest.replications:
        files = {"records": out / entry["records"], "errors": out / entry["errors"]}
        files["records"].write_text("")
        streams = rng_streams(entry["seed"])
        t0 = time.perf_counter()
        try:
            if config.method in ("abris", "bbvi-plain"):
                summary, errors = _run_variational(config, ctx, streams, files, config.method == "bbvi-plain")
            elif config.method == "mh":
                summary, errors = _run_mh(config, ctx, streams, files)
            else:
                summary, errors = _run_smc(config, ctx, streams, files)
        except BudgetExhausted as err:
            summary, errors = {"status": "budget_exhausted", "error": str(err)}, []
        except AbrisError as err:
            _logger.error("replication %d failed: %s", entry["replication"], err)
            summary, errors = {"status": "failed", "error": repr(err)}, []
        summary["wall_time"] = time.perf_counter() - t0
        if ctx.kind == "poisson" and errors:
            summary["final_rel_l2"] = errors[-1][2]
            summary["final_a_norm"] = errors[-1][3]
            summary["calls_to_threshold"] = _calls_to_threshold(errors, config["evaluation.threshold"])
        _write_tsv(files["errors"], ("cumulative_calls", "iteration", "rel_l2", "a_norm"), errors)
        entry["summary"] = summary
        manifest.write()

    manifest.finished = _now()
    manifest.write()
    return manifest


def run_sweep(config, out_dir=None):
    """Run every point of the sweep grid into ``point_XXX`` subdirectories.

    Writes ``sweep_summary.tsv`` with the swept values, mean model calls,
    mean iterations and the fraction of converged replications per point.
    """
    out = Path(out_dir or config["experiment.out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    keys = sorted(config.sweep)
    rows, manifests = [], []
    for k, point in enumerate(config.expand()):
        manifest = run_experiment(point, out / f"point_{k:03d}")
        manifests.append(manifest)
        sums = [e["summary"] for e in manifest.replications]
        calls = [s.get("total_calls", np.nan) for s in sums]
        iters = [s.get("iterations", np.nan) for s in sums]
        converged = np.mean([s.get("status") == "converged" for s in sums])
        rows.append([point[key] for key in keys] + [np.mean(calls), np.mean(iters), converged])
    _write_tsv(out / "sweep_summary.tsv", keys + ["mean_calls", "mean_iterations", "converged_fraction"], rows)
    return manifests
