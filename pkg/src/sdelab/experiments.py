"""Config-driven experiment runners that write gnuplot-friendly CSV files.

Every file starts with a '#' metadata block (library version, seed, the
resolved configuration, and the Gaussian-transform identifier of the RNG),
so a result can always be traced back to the exact run that produced it.
Floats are written with repr, and all parallel work is accumulated in
submission order, which makes outputs byte-identical for a fixed seed no
matter how many worker threads are used.
"""

from __future__ import annotations

import functools
import os
from typing import Callable

import numpy as np

from . import __version__, brownian as bw
from . import convergence, estimators, models, oracles, schemes, util
from .config import ConfigError, ExperimentConfig, SchemeSpec, echo_lines


def _needs_cir(spec: SchemeSpec, model: models.Model, what: str) -> models.CirParams:
    if not isinstance(model.params, models.CirParams):
        raise ConfigError(
            [
                f"scheme {spec.label!r} needs a square-root (cir) model for its "
                f"{what}, got model {model.model_id!r}"
            ]
        )
    return model.params


def build_stepper_config(
    spec: SchemeSpec, model: models.Model
) -> schemes.StepperConfig:
    """Turn a config-file scheme request into a StepperConfig."""
    alias = spec.alias
    if alias is None:
        ext = None
        if spec.extension is not None:
            p = _needs_cir(spec, model, f"{spec.extension!r} extension")
            ext = (
                schemes.extension_truncated_sqrt(p)
                if spec.extension == "truncate"
                else schemes.extension_absolute_sqrt(p)
            )
        proj = schemes.projection_abs() if spec.projection == "abs" else None
        try:
            cfg = schemes.StepperConfig(
                scheme_id=spec.scheme_id,
                extension=ext,
                projection=proj,
                truncate_sqrt=spec.truncate_sqrt,
            )
            schemes.make_stepper(cfg, model)
        except schemes.SchemeError as exc:
            raise ConfigError([f"[scheme]: {exc}"]) from exc
        return cfg

    if alias in ("truncated_euler", "absolute_euler", "truncated_milstein",
                 "absolute_milstein"):
        p = _needs_cir(spec, model, "square-root extension")
        ext = (
            schemes.extension_truncated_sqrt(p)
            if alias.startswith("truncated")
            else schemes.extension_absolute_sqrt(p)
        )
        scheme_id = (
            "modified_euler" if alias.endswith("euler") else "modified_milstein"
        )
        cfg = schemes.StepperConfig(scheme_id=scheme_id, extension=ext)
    elif alias == "euler":
        cfg = schemes.StepperConfig(scheme_id="explicit_euler")
    elif alias == "milstein":
        cfg = schemes.StepperConfig(scheme_id="milstein")
    elif alias == "symmetrized_euler":
        cfg = schemes.StepperConfig(
            scheme_id="reflected_euler", projection=schemes.projection_abs()
        )
    elif alias == "tamed_euler":
        cfg = schemes.StepperConfig(scheme_id="tamed_euler")
    elif alias == "split_step":
        cfg = schemes.StepperConfig(scheme_id="split_step_backward_euler")
    elif alias == "backward_euler":
        cfg = schemes.StepperConfig(scheme_id="backward_euler")
    elif alias in ("implicit_sqrt", "implicit_sqrt_truncated"):
        cfg = schemes.StepperConfig(
            scheme_id="cir_implicit_sqrt_euler",
            truncate_sqrt=alias.endswith("truncated"),
        )
    elif alias in ("dimp_milstein", "dimp_milstein_truncated"):
        cfg = schemes.StepperConfig(
            scheme_id="cir_implicit_milstein",
            truncate_sqrt=alias.endswith("truncated"),
        )
    elif alias == "log_heston":
        cfg = schemes.StepperConfig(scheme_id="log_heston_composite")
    else:  # unreachable: config validation rejects unknown aliases
        raise ConfigError([f"unknown scheme alias {alias!r}"])
    try:
        schemes.make_stepper(cfg, model)
    except schemes.SchemeError as exc:
        raise ConfigError(
            [f"[scheme]: {alias!r} does not apply to model {model.model_id!r}: {exc}"]
        ) from exc
    return cfg


def _build_model(cfg: ExperimentConfig) -> models.Model:
    return models.build_model(cfg.model_id, cfg.params)


def _discount_rate(cfg: ExperimentConfig) -> float:
    if isinstance(cfg.params, models.HestonParams):
        return cfg.params.r
    return 0.0


def _build_payoff(cfg: ExperimentConfig, default_phi: str | None = None):
    run = cfg.run
    phi = run.get("payoff", default_phi)
    if phi is None:
        phi = "call" if cfg.strike is not None else "identity"
    barrier = "lower" in run or "upper" in run
    if phi == "abs" and not barrier:
        return estimators.PayoffSpec(
            kind="absolute_terminal", discount=_discount_rate(cfg)
        )
    if phi in ("call", "put") and cfg.strike is None:
        raise ConfigError(
            [f"payoff {phi!r} needs a strike: set strike in [model] or use a preset"]
        )
    return estimators.PayoffSpec(
        kind="barrier" if barrier else "terminal",
        phi=phi,
        strike=cfg.strike if phi in ("call", "put") else None,
        lower=run.get("lower"),
        upper=run.get("upper"),
        discount=_discount_rate(cfg),
    )


def _header(cfg: ExperimentConfig, seed: int) -> list[str]:
    return [
        f"sdelab {__version__}",
        f"gaussian-transform = {bw.GAUSSIAN_TRANSFORM}",
        *echo_lines(cfg, seed),
    ]


def _regression_comments(report: convergence.ErrorReport) -> list[str]:
    if not report.valid:
        return ["invalid: reference overflowed; errors are meaningless"]
    if report.regression is None:
        return ["no regression (needs >= 2 finite positive errors)"]
    r = report.regression
    return [
        f"regression: slope = {r.slope!r} intercept = {r.intercept!r} "
        f"residual_stderr = {r.residual_stderr!r}"
    ]


def _report_rows(report: convergence.ErrorReport):
    stderrs = report.stderrs or (None,) * len(report.errors)
    overs = report.overflow_counts or (0,) * len(report.errors)
    return [
        (dt, err, se, ov)
        for dt, err, se, ov in zip(report.stepsizes, report.errors, stderrs, overs)
    ]


def _truth_value(cfg: ExperimentConfig) -> float:
    raw = cfg.run["truth"]
    if raw == "oracle":
        if not isinstance(cfg.params, models.HestonParams) or cfg.strike is None:
            raise ConfigError(
                [
                    "truth = oracle needs a heston model with a strike "
                    "(the Fourier call-price oracle)"
                ]
            )
        return oracles.heston_call_price(cfg.params, cfg.strike, cfg.T)
    return raw


def _run_negstats(cfg, model, seed, out_dir, threads, header):
    scheme_cfg = build_stepper_config(cfg.schemes[0], model)
    stats = convergence.negativity_stats(
        scheme_cfg,
        model,
        T=cfg.T,
        seed=seed,
        n=cfg.run["n"],
        n_samples=cfg.run["n_samples"],
    )
    path = os.path.join(out_dir, "negstats.csv")
    util.write_csv(
        path,
        ("scheme", "n_steps", "n_samples", "avg_negative_steps",
         "negative_path_fraction"),
        [
            (
                cfg.schemes[0].label,
                stats.n_steps,
                stats.n_samples,
                stats.avg_negative_steps,
                stats.negative_path_fraction,
            )
        ],
        header,
    )
    return [path]


def _run_pathwise(cfg, model, seed, out_dir, threads, header):
    run = cfg.run
    scheme_cfg = build_stepper_config(cfg.schemes[0], model)
    ref_cfg = (
        build_stepper_config(SchemeSpec(alias=run["ref_scheme"]), model)
        if "ref_scheme" in run
        else None
    )
    key = bw.StreamKey(seed, run.get("sample_index", 0), 0)
    report = convergence.pathwise_error_curve(
        scheme_cfg,
        model,
        T=cfg.T,
        key=key,
        n_list=run["n_list"],
        ref_config=ref_cfg,
        ref_n=run.get("ref_n"),
        reference=run.get("reference", "scheme"),
    )
    path = os.path.join(out_dir, "pathwise.csv")
    util.write_csv(
        path,
        ("delta", "error", "stderr", "n_overflow"),
        _report_rows(report),
        header + [f"reference = {report.metadata['reference']}"],
        _regression_comments(report),
    )
    return [path]


def _run_converge(cfg, model, seed, out_dir, threads, header):
    run = cfg.run
    scheme_cfgs = [build_stepper_config(s, model) for s in cfg.schemes]
    ref_cfg = (
        build_stepper_config(SchemeSpec(alias=run["ref_scheme"]), model)
        if "ref_scheme" in run
        else None
    )
    reports = convergence.strong_error_curves(
        scheme_cfgs,
        model,
        T=cfg.T,
        seed=seed,
        n_list=run["n_list"],
        n_samples=run["n_samples"],
        p=run.get("p", 2),
        ref_config=ref_cfg,
        ref_n=run.get("ref_n"),
        reference=run.get("reference", "scheme"),
        policy=run.get("policy", "propagate"),
    )
    paths = []
    for spec, report in zip(cfg.schemes, reports):
        path = os.path.join(out_dir, f"converge_{spec.label}.csv")
        util.write_csv(
            path,
            ("delta", "error", "stderr", "n_overflow"),
            _report_rows(report),
            header
            + [
                f"scheme = {spec.label}",
                f"reference = {report.metadata['reference']}",
            ],
            _regression_comments(report),
        )
        paths.append(path)
    return paths


def _run_explode(cfg, model, seed, out_dir, threads, header):
    run = cfg.run
    scheme_cfg = build_stepper_config(cfg.schemes[0], model)
    payoff = _build_payoff(cfg, default_phi="abs")
    n_samples_list = run.get("n_samples_list") or (run["n_samples"],)
    jobs = [(n, N) for n in run["n_list"] for N in n_samples_list]
    radius = run.get("radius")

    def run_one(job):
        n, N = job
        if radius is None:
            return estimators.mc_estimate(
                scheme_cfg,
                model,
                payoff,
                T=cfg.T,
                seed=seed,
                n=n,
                n_samples=N,
                policy=run.get("policy", "propagate"),
            )
        return estimators.mc_estimate_discarded(
            scheme_cfg,
            model,
            payoff,
            T=cfg.T,
            seed=seed,
            n=n,
            n_samples=N,
            radius=radius,
        )

    results = util.parallel_map_ordered(run_one, jobs, threads)
    rows = [
        (cfg.T / n, N, est.value, est.stderr, est.n_overflow)
        for (n, N), est in zip(jobs, results)
    ]
    path = os.path.join(out_dir, "explode.csv")
    util.write_csv(
        path,
        ("delta", "n_samples", "estimate", "stderr", "n_overflow"),
        rows,
        header,
    )
    return [path]


def _run_mlmc(cfg, model, seed, out_dir, threads, header):
    run = cfg.run
    scheme_cfg = build_stepper_config(cfg.schemes[0], model)
    payoff = _build_payoff(cfg)
    method = run.get("method", "mlmc")
    if method in ("mc", "mc_discarded"):
        raise ConfigError(
            ["experiment 'mlmc' supports method = mlmc or standard; "
             "use experiment 'price' for single fixed-grid estimates"]
        )
    eps_list = run.get("epsilon_list") or (run["epsilon"],)
    replications = run.get("replications")
    policy = run.get("policy", "propagate")
    mapper = functools.partial(util.parallel_map_ordered, threads=threads)

    rows = []
    for eps in eps_list:
        if method == "mlmc":
            plan = estimators.mlmc_plan(eps, cfg.T)
            levels: object = plan.levels
            steps = plan.total_steps
        else:
            pairing = estimators.mc_standard_pairing(eps, cfg.T)
            levels = None
            steps = pairing.total_steps
        if replications:
            study = estimators.rmsq_study(
                method,
                scheme_cfg,
                model,
                payoff,
                T=cfg.T,
                epsilon=eps,
                truth=_truth_value(cfg),
                replications=replications,
                seed=seed,
                policy=policy,
                mapper=mapper,
            )
            mean_est = float(np.mean(study.estimates))
            rows.append(
                (eps, levels, steps, mean_est, study.rmsq, study.n_overflow)
            )
        elif method == "mlmc":
            est = estimators.mlmc_estimate(
                scheme_cfg,
                model,
                payoff,
                T=cfg.T,
                epsilon=eps,
                seed=seed,
                policy=policy,
            )
            rows.append((eps, levels, est.total_steps, est.value, None,
                         est.n_overflow))
        else:
            est = estimators.mc_estimate(
                scheme_cfg,
                model,
                payoff,
                T=cfg.T,
                seed=seed,
                n=pairing.n,
                n_samples=pairing.n_samples,
                policy=policy,
            )
            rows.append((eps, levels, est.total_steps, est.value, None,
                         est.n_overflow))
    path = os.path.join(out_dir, "mlmc.csv")
    util.write_csv(
        path,
        ("epsilon", "levels", "total_steps", "estimate", "rmsq_if_study",
         "overflow_count"),
        rows,
        header + [f"method = {method}"],
    )
    return [path]


def _run_price(cfg, model, seed, out_dir, threads, header):
    run = cfg.run
    scheme_cfg = build_stepper_config(cfg.schemes[0], model)
    payoff = _build_payoff(cfg)
    method = run["method"]
    policy = run.get("policy", "propagate")
    if method == "mc":
        est = estimators.mc_estimate(
            scheme_cfg, model, payoff, T=cfg.T, seed=seed,
            n=run["n"], n_samples=run["n_samples"], policy=policy,
        )
    elif method == "mc_discarded":
        est = estimators.mc_estimate_discarded(
            scheme_cfg, model, payoff, T=cfg.T, seed=seed,
            n=run["n"], n_samples=run["n_samples"], radius=run["radius"],
        )
    elif method == "mlmc":
        est = estimators.mlmc_estimate(
            scheme_cfg, model, payoff, T=cfg.T, epsilon=run["epsilon"],
            seed=seed, policy=policy,
        )
    else:
        pairing = estimators.mc_standard_pairing(run["epsilon"], cfg.T)
        est = estimators.mc_estimate(
            scheme_cfg, model, payoff, T=cfg.T, seed=seed,
            n=pairing.n, n_samples=pairing.n_samples, policy=policy,
        )
    path = os.path.join(out_dir, "price.csv")
    util.write_csv(
        path,
        ("method", "estimate", "stderr", "n_samples", "total_steps",
         "n_overflow"),
        [(method, est.value, est.stderr, est.n_samples, est.total_steps,
          est.n_overflow)],
        header,
    )
    return [path]


def _run_validate(cfg, model, seed, out_dir, threads, header):
    run = cfg.run
    p = cfg.params
    rows: list[tuple[str, object]] = []
    if isinstance(p, (models.CirParams, models.HestonParams)):
        rows.append(("feller_ratio", models.feller_ratio(p)))
        for mp in run.get("moment_p_list", (1.0, 2.0, 4.0, 8.0)):
            thr = models.bbd_threshold(p, mp)
            rows.append((f"bbd_threshold(p={mp:g})", thr.threshold))
            rows.append((f"bbd_satisfied(p={mp:g})", thr.satisfied))
    if isinstance(p, models.HestonParams):
        for mp in run.get("moment_p_list", (2.0,)):
            if mp > 1.0:
                mb = models.heston_moment_bound(p, mp)
                rows.append((f"moment_rho_bound(p={mp:g})", mb.threshold))
                rows.append((f"moment_bound_satisfied(p={mp:g})", mb.satisfied))
    if isinstance(p, models.AitSahaliaParams):
        wp = models.ait_sahalia_wellposed(p)
        rows.append(("strong_solution_ok", wp.strong_solution_ok))
        rows.append(("backward_euler_ok", wp.backward_euler_ok))
    if "l1" in run and "l2" in run:
        rows.append(
            ("implicit_step_bound", schemes.implicit_step_bound(run["l1"], run["l2"]))
        )
    if not rows:
        rows.append(("model", cfg.model_id))
    path = os.path.join(out_dir, "validate.csv")
    util.write_csv(path, ("quantity", "value"), rows, header)
    return [path]


_RUNNERS: dict[str, Callable] = {
    "negstats": _run_negstats,
    "pathwise": _run_pathwise,
    "converge": _run_converge,
    "explode": _run_explode,
    "mlmc": _run_mlmc,
    "price": _run_price,
    "validate": _run_validate,
}


def run_experiment(
    cfg: ExperimentConfig, *, seed: int, out_dir: str, threads: int = 1
) -> list[str]:
    """Run one experiment, write its CSV artifacts, return their paths."""
    if not 0 <= seed < 2**64:
        raise ConfigError([f"seed must fit in an unsigned 64-bit integer, got {seed}"])
    model = _build_model(cfg)
    os.makedirs(out_dir, exist_ok=True)
    header = _header(cfg, seed)
    try:
        return _RUNNERS[cfg.kind](cfg, model, seed, out_dir, threads, header)
    except (
        models.ModelError,
        schemes.SchemeError,
        convergence.MeasurementError,
        estimators.EstimatorError,
    ) as exc:
        raise ConfigError([str(exc)]) from exc
