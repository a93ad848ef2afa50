"""Monte Carlo price estimators: plain, discarded-path, and multilevel.

Sampling is fully deterministic given (seed, index_offset): plain MC uses
one Brownian stream per sample index, the multilevel estimator assigns each
(level, sample) pair a fresh index from contiguous blocks, and replication
studies stride their offsets so no stream is ever reused.  Overflowed paths
are never hidden: the default policy propagates them as +inf (reproducing
moment explosion), "exclude" drops and counts them, and the discarded-path
estimator zeroes every path whose running maximum leaves the chosen radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import brownian as bw
from .models import Model
from .schemes import StepperConfig, make_stepper, simulate_batch

_BATCH_FLOATS = 1 << 23


class EstimatorError(ValueError):
    """Ill-posed estimator request."""


PAYOFF_KINDS = ("terminal", "barrier", "absolute_terminal")
PHI_NAMES = ("call", "put", "identity", "abs")


@dataclass(frozen=True)
class PayoffSpec:
    """Discounted payoff of a simulated path.

    ``terminal`` applies ``phi`` to the terminal price observable;
    ``absolute_terminal`` is |X_T| (no phi); ``barrier`` multiplies the
    terminal payoff by the indicator that the running price observable stayed
    inside [lower, upper].  ``discount`` is the rate r in e^(-rT).
    """

    kind: str = "terminal"
    phi: str = "identity"
    strike: float | None = None
    lower: float | None = None
    upper: float | None = None
    discount: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in PAYOFF_KINDS:
            raise EstimatorError(
                f"unknown payoff kind {self.kind!r}; known: {', '.join(PAYOFF_KINDS)}"
            )
        if self.phi not in PHI_NAMES:
            raise EstimatorError(
                f"unknown payoff function {self.phi!r}; known: {', '.join(PHI_NAMES)}"
            )
        if self.phi in ("call", "put"):
            if self.strike is None or self.strike < 0:
                raise EstimatorError(
                    f"{self.phi} payoff needs a nonnegative strike, got {self.strike}"
                )
        if self.kind == "barrier":
            lo = 0.0 if self.lower is None else self.lower
            hi = math.inf if self.upper is None else self.upper
            if not 0 <= lo <= hi:
                raise EstimatorError(
                    f"barrier bounds must satisfy 0 <= lower <= upper, got "
                    f"({self.lower}, {self.upper})"
                )

    @property
    def needs_extrema(self) -> bool:
        return self.kind == "barrier"

    def _apply_phi(self, s: np.ndarray) -> np.ndarray:
        if self.kind == "absolute_terminal":
            return np.abs(s)
        if self.phi == "call":
            return np.maximum(s - self.strike, 0.0)
        if self.phi == "put":
            return np.maximum(self.strike - s, 0.0)
        if self.phi == "abs":
            return np.abs(s)
        return s

    def evaluate(
        self,
        terminal_obs: np.ndarray,
        T: float,
        runmin_obs: np.ndarray | None = None,
        runmax_obs: np.ndarray | None = None,
    ) -> np.ndarray:
        """Discounted payoff values from observables (all in price units)."""
        out = self._apply_phi(np.asarray(terminal_obs, dtype=np.float64))
        if self.kind == "barrier":
            if runmin_obs is None or runmax_obs is None:
                raise EstimatorError("barrier payoff needs running extrema")
            alive = np.ones_like(out, dtype=bool)
            if self.lower is not None:
                alive &= runmin_obs >= self.lower
            if self.upper is not None:
                alive &= runmax_obs <= self.upper
            out = np.where(alive, out, 0.0)
        if self.discount != 0.0:
            out = out * math.exp(-self.discount * T)
        return out


@dataclass(frozen=True)
class LevelStat:
    """Per-level summary of a multilevel run."""

    level: int
    n_fine: int
    n_samples: int
    mean: float
    variance: float
    n_overflow: int


@dataclass(frozen=True)
class PriceEstimate:
    value: float
    stderr: float
    n_samples: int
    total_steps: int
    n_overflow: int
    levels: tuple[LevelStat, ...] | None = None
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MlmcPlan:
    """Level/sample layout for target accuracy epsilon:

        L = ceil(log2(T/eps)),  N_l = ceil(L * eps^-2 * T * 2^-l).

    A level-l path costs 2^l fine steps plus, for l >= 1, 2^(l-1) coupled
    coarse steps.
    """

    epsilon: float
    T: float
    levels: int
    samples: tuple[int, ...]
    level_steps: tuple[int, ...]
    total_steps: int

    @property
    def sample_span(self) -> int:
        """Stream indices consumed by one estimate using this plan."""
        return sum(self.samples)


def mlmc_plan(epsilon: float, T: float) -> MlmcPlan:
    if not 0 < epsilon <= T / 2:
        raise EstimatorError(
            f"epsilon must lie in (0, T/2] so that at least one refinement "
            f"level exists; got epsilon={epsilon}, T={T}"
        )
    levels = math.ceil(math.log2(T / epsilon))
    samples = tuple(
        math.ceil(levels * T / (epsilon * epsilon) * 2.0 ** (-l))
        for l in range(levels + 1)
    )
    level_steps = tuple(
        (2**l + 2 ** (l - 1)) if l >= 1 else 1 for l in range(levels + 1)
    )
    total = sum(n * c for n, c in zip(samples, level_steps))
    return MlmcPlan(
        epsilon=epsilon,
        T=T,
        levels=levels,
        samples=samples,
        level_steps=level_steps,
        total_steps=total,
    )


@dataclass(frozen=True)
class StandardPlan:
    """Step/sample pairing for plain MC at target accuracy epsilon:
    n = ceil(T/eps) steps, N = ceil(T/eps^2) samples."""

    epsilon: float
    T: float
    n: int
    n_samples: int
    total_steps: int


def mc_standard_pairing(epsilon: float, T: float) -> StandardPlan:
    if not 0 < epsilon <= T:
        raise EstimatorError(f"epsilon must lie in (0, T], got {epsilon}")
    n = math.ceil(T / epsilon)
    n_samples = math.ceil(T / (epsilon * epsilon))
    return StandardPlan(
        epsilon=epsilon, T=T, n=n, n_samples=n_samples, total_steps=n * n_samples
    )


def _observable_row(model: Model, row: np.ndarray) -> np.ndarray:
    """Price observable applied to coordinate-0 values (monotone transforms)."""
    if model.price_observable is None:
        return row
    return model.observable(row[None])


def _mc_core(
    config: StepperConfig,
    model: Model,
    payoff: PayoffSpec,
    *,
    T: float,
    seed: int,
    n: int,
    n_samples: int,
    policy: str,
    radius: float | None,
    index_offset: int,
    substream: int,
    batch_floats: int,
) -> PriceEstimate:
    if policy not in ("propagate", "exclude"):
        raise EstimatorError(f"unknown overflow policy {policy!r}")
    if n_samples < 1:
        raise EstimatorError("n_samples must be >= 1")
    if radius is not None and model.d != 1:
        raise EstimatorError("the discarded-path estimator is scalar-only")
    make_stepper(config, model)
    track = payoff.needs_extrema or radius is not None
    m = model.m
    dt = T / n
    total = 0.0
    total_sq = 0.0
    kept = 0
    n_over = 0
    steps = 0
    batch = max(1, min(n_samples, batch_floats // (n * m)))
    for start in range(0, n_samples, batch):
        idx = np.arange(start, min(start + batch, n_samples)) + index_offset
        incr = np.stack(
            [
                bw.batch_standard_normals(seed, idx, substream + j, n)
                * math.sqrt(dt)
                for j in range(m)
            ]
        )
        res = simulate_batch(config, model, dt, incr, track_extrema=track)
        steps += res.steps * len(idx)
        obs_T = model.observable(res.terminal)
        rmin = rmax = None
        if track:
            rmin = _observable_row(model, res.runmin)
            rmax = _observable_row(model, res.runmax)
        vals = payoff.evaluate(obs_T, T, rmin, rmax)
        over = res.overflow
        n_over += int(over.sum())
        if radius is not None:
            sup = np.maximum(np.abs(res.runmax), np.abs(res.runmin))
            sup = np.where(over, np.inf, sup)
            vals = np.where(sup <= radius, vals, 0.0)
        elif policy == "exclude":
            vals = vals[~over]
        else:
            vals = np.where(over, np.inf, vals)
        with np.errstate(invalid="ignore", over="ignore"):
            total += vals.sum()
            total_sq += (vals[np.isfinite(vals)] ** 2).sum()
        kept += len(vals)

    if kept == 0:
        value, stderr = math.inf, math.inf
    else:
        value = total / kept
        if math.isfinite(value) and kept > 1:
            with np.errstate(over="ignore", invalid="ignore"):
                var = max(total_sq / kept - value * value, 0.0) * kept / (kept - 1)
                stderr = math.sqrt(var / kept)
            if not math.isfinite(stderr):
                stderr = math.inf
        elif math.isfinite(value):
            stderr = 0.0
        else:
            stderr = math.inf
    return PriceEstimate(
        value=float(value),
        stderr=float(stderr),
        n_samples=n_samples,
        total_steps=steps,
        n_overflow=n_over,
        levels=None,
        metadata={
            "scheme_id": config.scheme_id,
            "model_id": model.model_id,
            "T": T,
            "n": n,
            "seed": seed,
            "policy": policy if radius is None else f"discard(radius={radius})",
            "index_offset": index_offset,
        },
    )


def mc_estimate(
    config: StepperConfig,
    model: Model,
    payoff: PayoffSpec,
    *,
    T: float,
    seed: int,
    n: int,
    n_samples: int,
    policy: str = "propagate",
    index_offset: int = 0,
    substream: int = 0,
    batch_floats: int = _BATCH_FLOATS,
) -> PriceEstimate:
    """Plain Monte Carlo mean of the discounted payoff at resolution n."""
    return _mc_core(
        config,
        model,
        payoff,
        T=T,
        seed=seed,
        n=n,
        n_samples=n_samples,
        policy=policy,
        radius=None,
        index_offset=index_offset,
        substream=substream,
        batch_floats=batch_floats,
    )


def mc_estimate_discarded(
    config: StepperConfig,
    model: Model,
    payoff: PayoffSpec,
    *,
    T: float,
    seed: int,
    n: int,
    n_samples: int,
    radius: float,
    index_offset: int = 0,
    substream: int = 0,
    batch_floats: int = _BATCH_FLOATS,
) -> PriceEstimate:
    """MC with paths whose running maximum |X| exceeds ``radius`` zeroed out.

    Overflowed paths always count as outside the radius, so the estimate
    stays finite where the plain estimator explodes.  ``radius=inf`` keeps
    every path and reproduces :func:`mc_estimate` exactly.
    """
    if not radius >= 0:
        raise EstimatorError(f"radius must be nonnegative, got {radius}")
    return _mc_core(
        config,
        model,
        payoff,
        T=T,
        seed=seed,
        n=n,
        n_samples=n_samples,
        policy="propagate",
        radius=radius,
        index_offset=index_offset,
        substream=substream,
        batch_floats=batch_floats,
    )


def mlmc_estimate(
    config: StepperConfig,
    model: Model,
    payoff: PayoffSpec,
    *,
    T: float,
    epsilon: float,
    seed: int,
    policy: str = "propagate",
    index_offset: int = 0,
    substream: int = 0,
    plan: MlmcPlan | None = None,
) -> PriceEstimate:
    """Multilevel Monte Carlo over dyadic resolutions 2^0 .. 2^L.

    Level 0 averages the payoff on the one-step grid; level l >= 1 averages
    the payoff difference between resolutions 2^l and 2^(l-1), both driven by
    the same Brownian increments (the coarse path aggregates the fine ones).
    Every (level, sample) pair consumes its own stream index, so levels are
    independent and the whole estimate is reproducible from (seed, offset).
    """
    if policy not in ("propagate", "exclude"):
        raise EstimatorError(f"unknown overflow policy {policy!r}")
    plan = plan or mlmc_plan(epsilon, T)
    make_stepper(config, model)
    m = model.m
    track = payoff.needs_extrema
    offsets = [index_offset]
    for nl in plan.samples:
        offsets.append(offsets[-1] + nl)

    total = 0.0
    var_sum = 0.0
    stats: list[LevelStat] = []
    n_over = 0
    steps = 0
    any_inf = False
    for level, n_l in enumerate(plan.samples):
        if n_l < 1:
            raise EstimatorError(f"plan allocates no samples to level {level}")
        n_fine = 2**level
        idx = np.arange(n_l) + offsets[level]
        dt_f = T / n_fine
        incr = np.stack(
            [
                bw.batch_standard_normals(seed, idx, substream + j, n_fine)
                * math.sqrt(dt_f)
                for j in range(m)
            ]
        )
        fine = simulate_batch(config, model, dt_f, incr, track_extrema=track)
        steps += fine.steps * n_l
        obs_f = model.observable(fine.terminal)
        pf = payoff.evaluate(
            obs_f,
            T,
            _observable_row(model, fine.runmin) if track else None,
            _observable_row(model, fine.runmax) if track else None,
        )
        over = fine.overflow
        if level == 0:
            y = pf
        else:
            n_coarse = n_fine // 2
            coarse = simulate_batch(
                config,
                model,
                T / n_coarse,
                bw.aggregate_to(incr, n_coarse),
                track_extrema=track,
            )
            steps += coarse.steps * n_l
            obs_c = model.observable(coarse.terminal)
            pc = payoff.evaluate(
                obs_c,
                T,
                _observable_row(model, coarse.runmin) if track else None,
                _observable_row(model, coarse.runmax) if track else None,
            )
            over = over | coarse.overflow
            y = pf - pc
        n_over_l = int(over.sum())
        n_over += n_over_l
        if policy == "exclude":
            y = y[~over]
        else:
            y = np.where(over, np.inf, y)
        if len(y) == 0 or not np.isfinite(y).all():
            any_inf = True
            mean_l = math.inf
            var_l = math.inf
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                mean_l = float(y.mean())
                var_l = float(y.var(ddof=1)) if len(y) > 1 else 0.0
            if not math.isfinite(mean_l):
                any_inf = True
                mean_l = math.inf
                var_l = math.inf
            else:
                if not math.isfinite(var_l):
                    var_l = math.inf
                total += mean_l
                var_sum += var_l / len(y)
        stats.append(
            LevelStat(
                level=level,
                n_fine=n_fine,
                n_samples=n_l,
                mean=mean_l,
                variance=var_l,
                n_overflow=n_over_l,
            )
        )

    if steps != plan.total_steps:
        raise RuntimeError(
            f"step accounting bug: simulated {steps}, plan says {plan.total_steps}"
        )
    value = math.inf if any_inf else total
    stderr = math.inf if any_inf else math.sqrt(var_sum)
    return PriceEstimate(
        value=value,
        stderr=stderr,
        n_samples=plan.sample_span,
        total_steps=steps,
        n_overflow=n_over,
        levels=tuple(stats),
        metadata={
            "scheme_id": config.scheme_id,
            "model_id": model.model_id,
            "T": T,
            "epsilon": epsilon,
            "seed": seed,
            "policy": policy,
            "index_offset": index_offset,
        },
    )


@dataclass(frozen=True)
class RmsqStudy:
    """Replicated root-mean-square error of an estimator against a truth."""

    method: str
    epsilon: float
    truth: float
    replications: int
    rmsq: float
    steps_per_replication: int
    n_overflow: int
    estimates: tuple[float, ...]


def rmsq_study(
    method: str,
    config: StepperConfig,
    model: Model,
    payoff: PayoffSpec,
    *,
    T: float,
    epsilon: float,
    truth: float,
    replications: int,
    seed: int,
    policy: str = "propagate",
    substream: int = 0,
    mapper=None,
) -> RmsqStudy:
    """Empirical rmsq of the multilevel or standard estimator at accuracy eps.

    Replication r uses stream indices [r*span, (r+1)*span), so replications
    are independent and the study is reproducible and parallelizable without
    any shared state.  ``mapper`` (an ordered map like
    ``util.parallel_map_ordered``) distributes replications over workers;
    the result is identical for any mapper because accumulation follows
    replication order.
    """
    if method not in ("mlmc", "standard"):
        raise EstimatorError(f"unknown method {method!r}; use 'mlmc' or 'standard'")
    if replications < 1:
        raise EstimatorError("replications must be >= 1")
    if method == "mlmc":
        plan = mlmc_plan(epsilon, T)
        span = plan.sample_span
        steps_per = plan.total_steps
    else:
        pairing = mc_standard_pairing(epsilon, T)
        span = pairing.n_samples
        steps_per = pairing.total_steps

    def run_one(r: int) -> PriceEstimate:
        off = r * span
        if method == "mlmc":
            return mlmc_estimate(
                config,
                model,
                payoff,
                T=T,
                epsilon=epsilon,
                seed=seed,
                policy=policy,
                index_offset=off,
                substream=substream,
                plan=plan,
            )
        return mc_estimate(
            config,
            model,
            payoff,
            T=T,
            seed=seed,
            n=pairing.n,
            n_samples=pairing.n_samples,
            policy=policy,
            index_offset=off,
            substream=substream,
        )

    results = (
        [run_one(r) for r in range(replications)]
        if mapper is None
        else mapper(run_one, range(replications))
    )
    estimates = [est.value for est in results]
    n_over = sum(est.n_overflow for est in results)
    arr = np.asarray(estimates)
    with np.errstate(invalid="ignore", over="ignore"):
        rmsq = float(np.sqrt(np.mean((arr - truth) ** 2)))
    return RmsqStudy(
        method=method,
        epsilon=epsilon,
        truth=truth,
        replications=replications,
        rmsq=rmsq,
        steps_per_replication=steps_per,
        n_overflow=n_over,
        estimates=tuple(float(e) for e in estimates),
    )
