"""Empirical convergence measurement: error curves, order fits, negativity.

The central quantity is the root mean square maximum error at the grid nodes,

    e(dt) = ( (1/N) sum_i max_k |X*_i(t_k) - Xbar_i(t_k)|^p )^(1/p),

with the reference X* and the scheme under test driven by the same Brownian
increments (coupling), so e is a pure discretization error.  A reference is
either the same or another scheme at a finer dyadic resolution on the shared
lattice, or the exact solution where one exists (geometric Brownian motion).

Orders are estimated by least squares on (log dt, log e).  Overflowed paths
are data: under the default "propagate" policy they push the error to
infinity, under "exclude" they are dropped and counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import brownian as bw
from .models import Model, feller_ratio
from .oracles import gbm_exact_nodes
from .schemes import SamplePath, SchemeError, StepperConfig, make_stepper, simulate_batch

_BATCH_FLOATS = 1 << 23  # per-batch increment budget, keeps blocks ~64 MB


class MeasurementError(ValueError):
    """Ill-posed error-curve request (grids, references, fit inputs)."""


@dataclass(frozen=True)
class Regression:
    """Least-squares line through (log dt, log e)."""

    slope: float
    intercept: float
    residual_stderr: float


@dataclass
class ErrorReport:
    """One error-vs-stepsize curve with its provenance.

    ``stepsizes`` are strictly decreasing.  ``stderrs`` hold the Monte Carlo
    standard error of each point (None for single-path curves).  ``valid`` is
    cleared when the reference itself overflowed, in which case the errors
    are meaningless and no regression is attached.
    """

    stepsizes: tuple[float, ...]
    errors: tuple[float, ...]
    p: int
    regression: Regression | None
    stderrs: tuple[float, ...] | None = None
    overflow_counts: tuple[int, ...] | None = None
    valid: bool = True
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.stepsizes) != len(self.errors):
            raise MeasurementError("stepsizes and errors must have equal length")
        steps = np.asarray(self.stepsizes)
        if len(steps) and not (steps > 0).all():
            raise MeasurementError("stepsizes must be positive")
        if len(steps) > 1 and not (np.diff(steps) < 0).all():
            raise MeasurementError("stepsizes must be strictly decreasing")
        if self.p < 1:
            raise MeasurementError(f"p must be >= 1, got {self.p}")


@dataclass(frozen=True)
class NegativityStats:
    """Average negative steps per path and fraction of paths going negative."""

    scheme_id: str
    n_steps: int
    n_samples: int
    avg_negative_steps: float
    negative_path_fraction: float


def fit_order(stepsizes: Sequence[float], errors: Sequence[float]) -> Regression:
    """Least-squares slope of log(error) against log(stepsize).

    Requires at least two points and strictly positive, finite errors; a
    two-point fit is exact and reports zero residual spread.
    """
    steps = np.asarray(stepsizes, dtype=np.float64)
    errs = np.asarray(errors, dtype=np.float64)
    if steps.shape != errs.shape or steps.ndim != 1:
        raise MeasurementError("stepsizes and errors must be 1-d and equal length")
    if len(steps) < 2:
        raise MeasurementError("order fit needs at least two points")
    if not np.all(steps > 0):
        raise MeasurementError("stepsizes must be positive")
    if not np.all(np.isfinite(errs)) or not np.all(errs > 0):
        raise MeasurementError(
            "order fit needs positive finite errors; got "
            f"{[float(e) for e in errs]}"
        )
    lx = np.log(steps)
    ly = np.log(errs)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    dof = len(steps) - 2
    stderr = float(np.sqrt((resid**2).sum() / dof)) if dof > 0 else 0.0
    return Regression(slope=float(slope), intercept=float(intercept), residual_stderr=stderr)


def max_node_error(path: SamplePath, reference: SamplePath) -> float:
    """Maximum Euclidean deviation at the path's grid nodes.

    The reference must live on the same horizon and on a refinement of the
    path's grid, so every node of ``path`` is a node of ``reference``.
    """
    if path.grid.T != reference.grid.T:
        raise MeasurementError(
            f"horizon mismatch: {path.grid.T} vs {reference.grid.T}"
        )
    if reference.grid.n % path.grid.n != 0:
        raise MeasurementError(
            f"grids are incompatible: reference n={reference.grid.n} is not a "
            f"multiple of path n={path.grid.n}"
        )
    if path.values.shape[0] != reference.values.shape[0]:
        raise MeasurementError("dimension mismatch between path and reference")
    stride = reference.grid.n // path.grid.n
    with np.errstate(over="ignore", invalid="ignore"):
        diff = reference.values[:, ::stride] - path.values
        dist = np.abs(diff[0]) if diff.shape[0] == 1 else np.sqrt((diff**2).sum(axis=0))
    dist = np.where(np.isfinite(dist), dist, np.inf)
    return float(dist.max())


def default_reference_config(config: StepperConfig, model: Model) -> StepperConfig:
    """Reference scheme for coupled error curves.

    For the square-root process the drift-implicit square-root Euler scheme is
    the reference inside the Feller regime; outside it (where that scheme
    needs truncation itself) the truncated Euler scheme is used.  Every other
    model is referenced by the scheme under test at the finer resolution.
    """
    if model.model_id == "cir":
        if feller_ratio(model.params) >= 1.0:
            return StepperConfig(scheme_id="cir_implicit_sqrt_euler")
        from .schemes import extension_truncated_sqrt

        return StepperConfig(
            scheme_id="modified_euler",
            extension=extension_truncated_sqrt(model.params),
        )
    return config


def _dist_max(rec: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Per-path max node deviation for recorded blocks (d, nodes, b)."""
    with np.errstate(over="ignore", invalid="ignore"):
        diff = ref - rec
        if diff.shape[0] == 1:
            dist = np.abs(diff[0])
        else:
            dist = np.sqrt((diff**2).sum(axis=0))
    dist = np.where(np.isfinite(dist), dist, np.inf)
    return dist.max(axis=0)


def _validate_n_list(n_list: Sequence[int], ref_n: int) -> list[int]:
    ns = sorted(set(int(n) for n in n_list))
    if not ns:
        raise MeasurementError("n_list is empty")
    for n in ns:
        if n < 1 or ref_n % n != 0 or not bw.is_power_of_two(ref_n // n):
            raise MeasurementError(
                f"resolution n={n} does not dyadically divide the reference "
                f"resolution {ref_n}"
            )
    return ns


def strong_error_curves(
    configs: Sequence[StepperConfig],
    model: Model,
    *,
    T: float,
    seed: int,
    n_list: Sequence[int],
    n_samples: int,
    p: int = 2,
    ref_config: StepperConfig | None = None,
    ref_n: int | None = None,
    reference: str = "scheme",
    policy: str = "propagate",
    substream: int = 0,
    batch_floats: int = _BATCH_FLOATS,
) -> list[ErrorReport]:
    """Coupled strong-error curves for several schemes over one sample set.

    Brownian paths use sample indices 0..n_samples-1 of the given seed; the
    reference path is simulated once per sample and shared by all configs.
    ``reference="exact"`` (geometric Brownian motion only) compares against
    the closed-form solution on the same Brownian path instead of a scheme.
    """
    if policy not in ("propagate", "exclude"):
        raise MeasurementError(f"unknown overflow policy {policy!r}")
    if reference not in ("scheme", "exact"):
        raise MeasurementError(f"unknown reference kind {reference!r}")
    if reference == "exact" and model.model_id != "gbm":
        raise MeasurementError("exact reference is available for gbm only")
    if n_samples < 1:
        raise MeasurementError("n_samples must be >= 1")
    ns = sorted(set(int(n) for n in n_list))
    if not ns:
        raise MeasurementError("n_list is empty")
    if ref_n is None:
        ref_n = 4 * max(ns) if reference == "scheme" else max(ns)
    ns = _validate_n_list(ns, ref_n)
    n_top = max(ns)
    if reference == "scheme":
        if ref_config is None:
            ref_config = default_reference_config(configs[0], model)
        make_stepper(ref_config, model)  # fail fast on bad combinations
    for c in configs:
        make_stepper(c, model)

    m = model.m
    nc, nn = len(configs), len(ns)
    pow_sum = np.zeros((nc, nn))
    pow_sq = np.zeros((nc, nn))
    kept = np.zeros((nc, nn), dtype=np.int64)
    over = np.zeros((nc, nn), dtype=np.int64)
    ref_overflowed = 0

    dt_ref = T / ref_n
    batch = max(1, min(n_samples, batch_floats // (ref_n * m)))
    for start in range(0, n_samples, batch):
        idx = np.arange(start, min(start + batch, n_samples))
        incr = np.stack(
            [
                bw.batch_standard_normals(seed, idx, substream + j, ref_n)
                * math.sqrt(dt_ref)
                for j in range(m)
            ]
        )
        if reference == "scheme":
            stride = ref_n // n_top
            rres = simulate_batch(ref_config, model, dt_ref, incr, record_every=stride)
            ref_top = rres.recorded  # (d, n_top+1, b)
            ref_bad = rres.overflow
        else:
            incr_top = bw.aggregate_to(incr, n_top) if ref_n != n_top else incr
            w = np.zeros((len(idx), n_top + 1))
            np.cumsum(incr_top[0], axis=-1, out=w[:, 1:])
            ref_top = gbm_exact_nodes(model.params, T, n_top, w).T[None]  # (1, n+1, b)
            ref_bad = np.zeros(len(idx), dtype=bool)
        ref_overflowed += int(ref_bad.sum())

        for j_n, n in enumerate(ns):
            incr_n = bw.aggregate_to(incr, n) if n != ref_n else incr
            for j_c, cfg in enumerate(configs):
                res = simulate_batch(cfg, model, T / n, incr_n, record_every=1)
                ref_sub = ref_top[:, :: n_top // n, :]
                errs = _dist_max(res.recorded, ref_sub)
                bad = res.overflow | ref_bad
                over[j_c, j_n] += int(bad.sum())
                if policy == "exclude":
                    errs = errs[~bad]
                else:
                    errs = np.where(bad, np.inf, errs)
                with np.errstate(over="ignore"):
                    ep = errs**p
                    pow_sum[j_c, j_n] += ep.sum()
                    finite = ep[np.isfinite(ep)]
                    pow_sq[j_c, j_n] += (finite**2).sum()
                kept[j_c, j_n] += len(errs)

    reports = []
    steps = tuple(T / n for n in ns)  # increasing n -> decreasing dt
    order = np.argsort([-s for s in steps])
    for j_c, cfg in enumerate(configs):
        errors, stderrs = [], []
        for j_n in range(nn):
            cnt = kept[j_c, j_n]
            if cnt == 0:
                errors.append(math.inf)
                stderrs.append(math.inf)
                continue
            mean_p = pow_sum[j_c, j_n] / cnt
            err = mean_p ** (1.0 / p)
            if math.isfinite(mean_p) and cnt > 1:
                with np.errstate(over="ignore", invalid="ignore"):
                    var = pow_sq[j_c, j_n] / cnt - np.float64(mean_p) ** 2
                var = float(var) * cnt / (cnt - 1) if np.isfinite(var) else math.inf
                if var < 0.0:
                    var = 0.0
                se_mean = math.sqrt(var / cnt)
                se = (
                    (1.0 / p) * mean_p ** (1.0 / p - 1.0) * se_mean
                    if mean_p > 0
                    else 0.0
                )
            else:
                se = math.inf if not math.isfinite(mean_p) else 0.0
            errors.append(float(err))
            stderrs.append(float(se))
        steps_dec = tuple(steps[i] for i in order)
        errs_dec = tuple(errors[i] for i in order)
        ses_dec = tuple(stderrs[i] for i in order)
        ov_dec = tuple(int(over[j_c, i]) for i in order)
        valid = ref_overflowed == 0
        reg = None
        if valid and all(math.isfinite(e) and e > 0 for e in errs_dec) and nn >= 2:
            reg = fit_order(steps_dec, errs_dec)
        reports.append(
            ErrorReport(
                stepsizes=steps_dec,
                errors=errs_dec,
                p=p,
                regression=reg,
                stderrs=ses_dec,
                overflow_counts=ov_dec,
                valid=valid,
                metadata={
                    "scheme_id": cfg.scheme_id,
                    "model_id": model.model_id,
                    "T": T,
                    "seed": seed,
                    "n_samples": n_samples,
                    "reference": (
                        "exact"
                        if reference == "exact"
                        else f"{ref_config.scheme_id}@n={ref_n}"
                    ),
                    "policy": policy,
                    "reference_overflowed": ref_overflowed,
                },
            )
        )
    return reports


def strong_error_curve(
    config: StepperConfig,
    model: Model,
    **kwargs,
) -> ErrorReport:
    """Single-scheme wrapper around :func:`strong_error_curves`."""
    return strong_error_curves([config], model, **kwargs)[0]


def pathwise_error_curve(
    config: StepperConfig,
    model: Model,
    *,
    T: float,
    key: bw.StreamKey,
    n_list: Sequence[int],
    ref_config: StepperConfig | None = None,
    ref_n: int | None = None,
    reference: str = "scheme",
) -> ErrorReport:
    """Error curve along one fixed Brownian path (no averaging).

    All resolutions and the reference run on the same lattice sampled from
    ``key``, so the curve shows the pathwise convergence for that single
    realization.  If the reference overflows the report is marked invalid.
    """
    if reference not in ("scheme", "exact"):
        raise MeasurementError(f"unknown reference kind {reference!r}")
    if reference == "exact" and model.model_id != "gbm":
        raise MeasurementError("exact reference is available for gbm only")
    ns = sorted(set(int(n) for n in n_list))
    if not ns:
        raise MeasurementError("n_list is empty")
    if ref_n is None:
        ref_n = 4 * max(ns) if reference == "scheme" else max(ns)
    ns = _validate_n_list(ns, ref_n)
    n_top = max(ns)
    lattice = bw.sample_lattice(key, T=T, m=model.m, finest_n=ref_n)
    incr = lattice.increments[:, None, :]

    if reference == "scheme":
        if ref_config is None:
            ref_config = default_reference_config(config, model)
        rres = simulate_batch(
            ref_config, model, T / ref_n, incr, record_every=ref_n // n_top
        )
        ref_top = rres.recorded
        ref_bad = bool(rres.overflow[0])
    else:
        incr_top = bw.increments_at(lattice, n_top)
        w = np.concatenate([[0.0], np.cumsum(incr_top[0])])
        ref_top = gbm_exact_nodes(model.params, T, n_top, w[None]).T[None]
        ref_bad = False

    errors = []
    over = []
    for n in ns:
        incr_n = bw.increments_at(lattice, n)[:, None, :]
        res = simulate_batch(config, model, T / n, incr_n, record_every=1)
        ref_sub = ref_top[:, :: n_top // n, :]
        errors.append(float(_dist_max(res.recorded, ref_sub)[0]))
        over.append(int(res.overflow[0]) + int(ref_bad))

    steps = [T / n for n in ns]
    order = np.argsort([-s for s in steps])
    steps_dec = tuple(steps[i] for i in order)
    errs_dec = tuple(errors[i] for i in order)
    ov_dec = tuple(over[i] for i in order)
    valid = not ref_bad
    reg = None
    if valid and len(ns) >= 2 and all(math.isfinite(e) and e > 0 for e in errs_dec):
        reg = fit_order(steps_dec, errs_dec)
    return ErrorReport(
        stepsizes=steps_dec,
        errors=errs_dec,
        p=1,
        regression=reg,
        stderrs=None,
        overflow_counts=ov_dec,
        valid=valid,
        metadata={
            "scheme_id": config.scheme_id,
            "model_id": model.model_id,
            "T": T,
            "key": (key.seed, key.sample_index, key.substream),
            "reference": (
                "exact"
                if reference == "exact"
                else f"{ref_config.scheme_id}@n={ref_n}"
            ),
        },
    )


def negativity_stats(
    config: StepperConfig,
    model: Model,
    *,
    T: float,
    seed: int,
    n: int,
    n_samples: int,
    substream: int = 0,
    batch_floats: int = _BATCH_FLOATS,
) -> NegativityStats:
    """Average negative steps per path and the fraction of negative paths.

    Counts grid nodes k >= 1 whose value is strictly negative.  Schemes that
    preserve the domain report zeros; the extension-based Euler variants on
    the square-root process reproduce the known negativity levels.
    """
    make_stepper(config, model)
    if model.m != 1:
        raise MeasurementError("negativity statistics are defined for scalar noise")
    dt = T / n
    total_neg = 0
    neg_paths = 0
    batch = max(1, min(n_samples, batch_floats // n))
    for start in range(0, n_samples, batch):
        idx = np.arange(start, min(start + batch, n_samples))
        incr = (
            bw.batch_standard_normals(seed, idx, substream, n) * math.sqrt(dt)
        )[None]
        res = simulate_batch(config, model, dt, incr)
        total_neg += int(res.negative_steps.sum())
        neg_paths += int((res.negative_steps > 0).sum())
    return NegativityStats(
        scheme_id=config.scheme_id,
        n_steps=n,
        n_samples=n_samples,
        avg_negative_steps=total_neg / n_samples,
        negative_path_fraction=neg_paths / n_samples,
    )
