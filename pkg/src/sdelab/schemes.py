"""One-step maps and path simulation for SDE discretization schemes.

The scheme inventory covers the standard explicit methods (Euler, scalar
Milstein), domain-aware modifications (auxiliary coefficient extensions,
reflection/symmetrization), implicit methods (split-step and drift-implicit
Euler, with closed forms where the drift is affine), taming, and the
square-root-process specials: the drift-implicit square-root Euler scheme in
Lamperti coordinates, the drift-implicit Milstein scheme in its
positivity-preserving rearrangement, and the composite log-price/volatility
scheme for the Heston model.

Two policies are enforced everywhere and never silently relaxed:

* Coefficients are evaluated only where they are defined.  Feeding a square
  root a negative state without configuring an extension is treated as a
  programming error and raises :class:`DomainError`; all truncation behavior
  is opt-in via :class:`AuxiliaryExtension` or scheme flags.
* Non-finite values freeze a path.  Overflow is data (it reproduces moment
  explosion), so it sets a flag instead of raising; downstream estimators
  decide how to aggregate it.

One-step maps are pure and vectorized: state has shape (d, b) for a batch of
b paths, increments (m, b).  ``simulate_path`` drives a single path;
``simulate_batch`` is the engine used by the measurement modules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .brownian import BrownianLattice, TimeGrid, increments_at
from .models import (
    CirParams,
    DomainDescriptor,
    FULL_LINE,
    HestonParams,
    LampertiCir,
    Model,
    lamperti_cir,
)


class SchemeError(ValueError):
    """Invalid scheme configuration for the given model."""


class DomainError(RuntimeError):
    """A coefficient was about to be evaluated outside its domain."""


class SolverError(RuntimeError):
    """The implicit-step equation could not be solved."""


SCHEME_IDS = (
    "explicit_euler",
    "milstein",
    "modified_euler",
    "modified_milstein",
    "reflected_euler",
    "split_step_backward_euler",
    "backward_euler",
    "tamed_euler",
    "cir_implicit_sqrt_euler",
    "cir_implicit_milstein",
    "log_heston_composite",
)

_IMPLICIT_SCHEMES = ("split_step_backward_euler", "backward_euler")


# ---------------------------------------------------------------------------
# configuration types


@dataclass(frozen=True)
class AuxiliaryExtension:
    """Coefficient values used outside the domain D.

    The modified schemes run the usual update with a*1_D + f*1_E and
    b*1_D + g*1_E, where E is the complement of D.  ``g_prime`` is the
    derivative of g, needed only by the modified Milstein scheme; it defaults
    to zero, which is exact for the truncation extension g = 0.
    """

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    g_prime: Callable[[np.ndarray], np.ndarray] | None = None


def extension_truncated_sqrt(p: CirParams) -> AuxiliaryExtension:
    """Keep the drift, kill the diffusion left of zero: the truncated Euler
    scheme's auxiliary coefficients f = a, g = 0."""
    kappa, lam = p.kappa, p.lam
    return AuxiliaryExtension(
        name="truncate",
        f=lambda x: kappa * (lam - x),
        g=lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
        g_prime=lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
    )


def extension_absolute_sqrt(p: CirParams) -> AuxiliaryExtension:
    """Mirror the diffusion left of zero: f = a, g(x) = theta*sqrt(-x), which
    turns the diffusion coefficient into theta*sqrt(|x|)."""
    kappa, lam, theta = p.kappa, p.lam, p.theta
    return AuxiliaryExtension(
        name="absolute",
        f=lambda x: kappa * (lam - x),
        g=lambda x: theta * np.sqrt(-np.asarray(x, dtype=np.float64)),
        g_prime=lambda x: -theta / (2.0 * np.sqrt(-np.asarray(x, dtype=np.float64))),
    )


@dataclass(frozen=True)
class ProjectionMap:
    """Measurable map sending points outside D into closure(D)."""

    name: str
    psi: Callable[[np.ndarray], np.ndarray]


def projection_abs() -> ProjectionMap:
    """psi = |.|, turning the reflected Euler scheme into the symmetrized one."""
    return ProjectionMap(name="abs", psi=np.abs)


def projection_constant(c: float) -> ProjectionMap:
    return ProjectionMap(
        name=f"const({c})",
        psi=lambda x: np.full_like(np.asarray(x, dtype=np.float64), c),
    )


@dataclass(frozen=True)
class SolverSettings:
    """Controls for the implicit-step equation x - drift(x)*dt = rhs."""

    mode: str = "newton_bisection"  # or "closed_form"
    abs_tol: float = 1e-12
    max_iter: int = 100
    bracket_factor: float = 2.0

    def __post_init__(self) -> None:
        if self.mode not in ("newton_bisection", "closed_form"):
            raise SchemeError(f"unknown solver mode {self.mode!r}")
        if not self.abs_tol > 0:
            raise SchemeError(f"abs_tol must be positive, got {self.abs_tol}")
        if self.max_iter < 1:
            raise SchemeError(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.bracket_factor > 1:
            raise SchemeError(
                f"bracket expansion factor must exceed 1, got {self.bracket_factor}"
            )


DEFAULT_SOLVER = SolverSettings()


@dataclass(frozen=True)
class StepperConfig:
    """Everything needed to turn a model into a concrete one-step map.

    ``truncate_sqrt`` opts the square-root-process implicit schemes into
    evaluating sqrt(x^+) instead of sqrt(x), which is how they are run when
    the Feller-type conditions fail and iterates may leave the domain.
    ``stability_constants`` are the optional one-sided-Lipschitz/growth
    constants (L1, L2); when provided, simulation checks the implicit-scheme
    well-definedness bound dt < 1/max(1 + 2*L1, 4*L2).
    """

    scheme_id: str
    extension: AuxiliaryExtension | None = None
    projection: ProjectionMap | None = None
    solver: SolverSettings = field(default_factory=SolverSettings)
    truncate_sqrt: bool = False
    stability_constants: tuple[float, float] | None = None
    description: str = ""

    def __post_init__(self) -> None:
        if self.scheme_id not in SCHEME_IDS:
            raise SchemeError(
                f"unknown scheme {self.scheme_id!r}; known: {', '.join(SCHEME_IDS)}"
            )
        if self.scheme_id.startswith("modified_") and self.extension is None:
            raise SchemeError(f"{self.scheme_id} requires an AuxiliaryExtension")
        if self.scheme_id == "reflected_euler" and self.projection is None:
            raise SchemeError("reflected_euler requires a ProjectionMap")
        if self.extension is not None and not self.scheme_id.startswith("modified_"):
            raise SchemeError(
                f"extension given but scheme {self.scheme_id} does not use one; "
                "use modified_euler or modified_milstein"
            )


# ---------------------------------------------------------------------------
# paths


@dataclass
class SamplePath:
    """One simulated path on a uniform grid, with diagnostic flags."""

    grid: TimeGrid
    values: np.ndarray  # (d, n+1)
    scheme_id: str
    negative_step_count: int
    domain_exit_count: int
    overflow: bool
    first_non_finite: int | None = None

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation between grid nodes, per coordinate."""
        nodes = self.grid.nodes()
        if not 0.0 <= t <= self.grid.T:
            raise ValueError(f"t={t} outside [0, {self.grid.T}]")
        return np.array([np.interp(t, nodes, row) for row in self.values])


# ---------------------------------------------------------------------------
# coefficient extension


def apply_extension(model: Model, ext: AuxiliaryExtension) -> Model:
    """Extend a model with a proper domain to all of R (scalar models).

    The new coefficients are a*1_D + f*1_E and b*1_D + g*1_E.  The diffusion
    derivative on the boundary of D is taken as the one-sided limit from
    inside; where that limit diverges (as for sqrt at 0) it falls back to 0.
    """
    if model.domain.is_full:
        raise SchemeError(f"model {model.model_id!r} already lives on full space")
    if model.d != 1:
        raise SchemeError("coefficient extensions are implemented for scalar models")

    a, b, db = model.drift, model.diffusion[0], model.diffusion_jacobian[0]
    f, g = ext.f, ext.g
    g_prime = ext.g_prime or (lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)))

    # boundary value of the extended derivative: one-sided limit from D,
    # probed at two scales; 0 where the probes disagree (diverging limit)
    with np.errstate(all="ignore"):
        v1 = float(np.asarray(db(np.array([1e-100]))).reshape(-1)[0])
        v2 = float(np.asarray(db(np.array([1e-200]))).reshape(-1)[0])
    if math.isfinite(v1) and math.isfinite(v2) and abs(v1 - v2) <= 1e-9 * max(1.0, abs(v1)):
        boundary_db = v1
    else:
        boundary_db = 0.0

    def _blend(inside_fn, outside_fn, x):
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(all="ignore"):
            inside = x > 0
            return np.where(inside, inside_fn(x), outside_fn(x))

    def ext_drift(x):
        return _blend(a, f, x)

    def ext_diff(x):
        return _blend(b, g, x)

    def ext_ddiff(x):
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(all="ignore"):
            vals = np.where(x > 0, db(x), g_prime(x))
        return np.where(x == 0.0, boundary_db, vals)

    return replace(
        model,
        drift=ext_drift,
        diffusion=(ext_diff,),
        diffusion_jacobian=(ext_ddiff,),
        domain=FULL_LINE,
    )


# ---------------------------------------------------------------------------
# one-step maps (public, vectorized)


def step_explicit_euler(model: Model, x, dt: float, dw) -> np.ndarray:
    """x' = x + a(x)*dt + sum_j b_j(x)*dW_j."""
    x = np.asarray(x, dtype=np.float64)
    dw = np.asarray(dw, dtype=np.float64)
    out = x + model.drift(x) * dt
    if model.m == 1 and model.d == 1:
        return out + model.diffusion[0](x) * dw
    for j in range(model.m):
        out = out + model.diffusion[j](x) * dw[j]
    return out


def step_milstein_scalar(model: Model, x, dt: float, dw) -> np.ndarray:
    """Euler plus the scalar-noise Milstein correction b*b'*((dW)^2 - dt)/2."""
    if model.m != 1 or model.d != 1:
        raise SchemeError(
            "Milstein correction implemented for scalar noise only; "
            f"model {model.model_id!r} has d={model.d}, m={model.m}"
        )
    x = np.asarray(x, dtype=np.float64)
    dw = np.asarray(dw, dtype=np.float64)
    b = model.diffusion[0]
    db = model.diffusion_jacobian[0]
    euler = x + model.drift(x) * dt + b(x) * dw
    return euler + 0.5 * b(x) * db(x) * (dw * dw - dt)


def step_reflected(model: Model, projection: ProjectionMap, x, dt: float, dw):
    """Euler step, projected back into closure(D) whenever it leaves D."""
    if model.d != 1:
        raise SchemeError("reflected Euler is implemented for scalar models")
    x = np.asarray(x, dtype=np.float64)
    h = step_explicit_euler(model, x, dt, dw)
    inside = model.domain.contains(h)
    return np.where(inside, h, projection.psi(h))


def step_tamed_euler(model: Model, x, dt: float, dw) -> np.ndarray:
    """Euler with the drift increment damped to a(x)*dt/(1 + |a(x)|*dt)."""
    x = np.asarray(x, dtype=np.float64)
    dw = np.asarray(dw, dtype=np.float64)
    a = model.drift(x)
    if model.d == 1:
        denom = 1.0 + np.abs(a) * dt
    else:
        denom = 1.0 + np.sqrt((a * a).sum(axis=0)) * dt
    out = x + a * dt / denom
    if model.m == 1 and model.d == 1:
        return out + model.diffusion[0](x) * dw
    for j in range(model.m):
        out = out + model.diffusion[j](x) * dw[j]
    return out


# --- implicit machinery ----------------------------------------------------


def implicit_step_bound(L1: float, L2: float) -> float:
    """Largest safe dt for the implicit schemes under a one-sided Lipschitz
    constant L1 and polynomial-growth constant L2: 1/max(1 + 2*L1, 4*L2)."""
    return 1.0 / max(1.0 + 2.0 * L1, 4.0 * L2)


def cir_affine_implicit(p: CirParams) -> Callable[[np.ndarray, float], np.ndarray]:
    """Closed form of x - kappa*(lam - x)*dt = rhs."""

    def solve(rhs: np.ndarray, dt: float) -> np.ndarray:
        return (rhs + p.kappa * p.lam * dt) / (1.0 + p.kappa * dt)

    return solve


def lamperti_implicit(
    p: LampertiCir, truncate: bool = False
) -> Callable[[np.ndarray, float], np.ndarray]:
    """Closed form of y - (alpha/y + beta*y)*dt = rhs, positive root:

        y = rhs/(2*(1-beta*dt)) + sqrt(rhs^2/(4*(1-beta*dt)^2) + alpha*dt/(1-beta*dt))

    With alpha > 0 the root is strictly positive for every rhs.  With
    ``truncate`` the (possibly negative, when alpha < 0) radicand is clipped
    at zero, which is the sqrt(x^+) convention used outside the Feller regime.
    """

    def solve(rhs: np.ndarray, dt: float) -> np.ndarray:
        denom = 1.0 - p.beta * dt
        if denom <= 0:
            raise SolverError(
                f"implicit sqrt step ill-posed: 1 - beta*dt = {denom} <= 0"
            )
        half = rhs / (2.0 * denom)
        radicand = half * half + p.alpha * dt / denom
        if truncate:
            radicand = np.maximum(radicand, 0.0)
        elif np.any(radicand < 0):
            raise DomainError(
                "negative radicand in implicit sqrt step (alpha < 0 regime); "
                "enable truncate_sqrt to run outside the Feller condition"
            )
        return half + np.sqrt(radicand)

    return solve


def linear_implicit(c: float) -> Callable[[np.ndarray, float], np.ndarray]:
    """Closed form of x - c*x*dt = rhs."""

    def solve(rhs: np.ndarray, dt: float) -> np.ndarray:
        denom = 1.0 - c * dt
        if denom <= 0:
            raise SolverError(f"linear implicit step ill-posed: 1 - c*dt = {denom}")
        return rhs / denom

    return solve


def _drift_prime(model: Model) -> Callable[[np.ndarray], np.ndarray] | None:
    """Analytic drift derivative for Newton, for the models that have one."""
    p = model.params
    mid = model.model_id
    if mid == "cir":
        return lambda x: np.full_like(np.asarray(x, dtype=np.float64), -p.kappa)
    if mid == "gbm":
        return lambda x: np.full_like(np.asarray(x, dtype=np.float64), p.mu)
    if mid == "cubic_toy":
        return lambda x: -3.0 * np.asarray(x, dtype=np.float64) ** 2
    if mid == "cir_lamperti":
        return lambda y: -p.alpha / np.asarray(y, dtype=np.float64) ** 2 + p.beta
    if mid == "ait_sahalia":
        return lambda x: (
            -p.a_m1 / x**2 + p.a_1 - p.a_2 * p.r * x ** (p.r - 1.0)
        )
    if mid == "three_halves_vol":
        return lambda x: p.c1 * p.c2 - 2.0 * p.c1 * np.asarray(x, dtype=np.float64)
    return None


def solve_drift_implicit(
    drift: Callable[[np.ndarray], np.ndarray],
    rhs,
    dt: float,
    domain: DomainDescriptor,
    settings: SolverSettings = DEFAULT_SOLVER,
    x_init=None,
    closed_form: Callable[[np.ndarray, float], np.ndarray] | None = None,
    drift_prime: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Solve x - drift(x)*dt = rhs for x in the domain, vectorized over rhs.

    Uses the registered closed form when one is supplied; otherwise brackets
    a sign change of g(x) = x - dt*drift(x) - rhs inside the domain
    (geometric expansion on (0, inf), additive on R) and drives it home with
    bisection accelerated by Newton/secant candidates.  The result satisfies
    |g(x*)| <= settings.abs_tol; failure to bracket raises
    :class:`SolverError`, which typically signals dt above the scheme's
    well-definedness bound or a non-coercive drift.
    """
    rhs = np.atleast_1d(np.asarray(rhs, dtype=np.float64))
    if closed_form is not None:
        return closed_form(rhs, dt)
    if settings.mode == "closed_form":
        raise SolverError("closed_form mode requested but no closed form registered")

    def g(x):
        return x - dt * drift(x) - rhs

    positive = domain.kind == "positive_half_line"
    if x_init is None:
        x0 = np.maximum(rhs, 1.0) if positive else rhs.copy()
    else:
        x0 = np.broadcast_to(
            np.asarray(x_init, dtype=np.float64), rhs.shape
        ).astype(np.float64)
        if positive:
            x0 = np.maximum(x0, 1e-12)

    fac = settings.bracket_factor
    lo = x0.copy()
    hi = x0.copy()
    with np.errstate(all="ignore"):
        glo = g(lo)
        ghi = g(hi)
        # expand until g(lo) <= 0 <= g(hi); drift coercivity makes g increase
        # from -inf near the lower end of the domain to +inf at the upper end
        for _ in range(600):
            need_lo = glo > 0
            need_hi = ghi < 0
            if not (need_lo.any() or need_hi.any()):
                break
            if positive:
                lo = np.where(need_lo, lo / fac, lo)
                hi = np.where(need_hi, hi * fac, hi)
            else:
                lo = np.where(
                    need_lo, lo - (fac - 1.0) * np.maximum(np.abs(lo), 1.0), lo
                )
                hi = np.where(
                    need_hi, hi + (fac - 1.0) * np.maximum(np.abs(hi), 1.0), hi
                )
            glo = g(lo)
            ghi = g(hi)
        else:
            raise SolverError(
                "no sign change found for the implicit equation after bracket "
                "expansion; dt may exceed the well-definedness bound, or the "
                "drift is not coercive on the domain"
            )

        x = 0.5 * (lo + hi)
        gx = g(x)
        dp = drift_prime
        for _ in range(settings.max_iter):
            done = np.abs(gx) <= settings.abs_tol
            if done.all():
                break
            # maintain the bracket
            neg = gx < 0
            lo = np.where(neg, x, lo)
            hi = np.where(neg, hi, x)
            glo = np.where(neg, gx, glo)
            ghi = np.where(neg, ghi, gx)
            if dp is not None:
                slope = 1.0 - dt * dp(x)
                cand = x - gx / slope
            else:
                cand = (lo * ghi - hi * glo) / (ghi - glo)
            bad = ~np.isfinite(cand) | (cand <= lo) | (cand >= hi)
            x = np.where(bad, 0.5 * (lo + hi), cand)
            x = np.where(done, np.where(neg, lo, hi), x)  # hold converged entries
            gx = g(x)
    if np.any(np.abs(gx) > settings.abs_tol) or not np.all(np.isfinite(x)):
        worst = float(np.max(np.abs(gx)))
        raise SolverError(
            f"implicit solve did not reach abs_tol={settings.abs_tol} within "
            f"{settings.max_iter} iterations (worst residual {worst:.3e})"
        )
    return x


def _guard_domain_eval(model: Model, x: np.ndarray, what: str) -> None:
    if model.domain.is_full:
        return
    ok = model.domain.contains(x if model.d > 1 else np.asarray(x))
    if not np.all(ok):
        raise DomainError(
            f"{what}: state left the domain of model {model.model_id!r} and no "
            "extension/projection/truncation is configured for this scheme"
        )


def step_split_step_backward(
    model: Model,
    x,
    dt: float,
    dw,
    settings: SolverSettings = DEFAULT_SOLVER,
) -> np.ndarray:
    """x* = x + a(x*)*dt, then x' = x* + sum_j b_j(x*)*dW_j."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    dw = np.asarray(dw, dtype=np.float64)
    xs = solve_drift_implicit(
        model.drift, x, dt, model.domain, settings,
        x_init=x, closed_form=_closed_form_for(model),
        drift_prime=_drift_prime(model),
    )
    _guard_domain_eval(model, xs, "split-step diffusion stage")
    if model.m == 1 and model.d == 1:
        return xs + model.diffusion[0](xs) * dw
    out = xs.copy()
    for j in range(model.m):
        out = out + model.diffusion[j](xs) * dw[j]
    return out


def step_backward_euler(
    model: Model,
    x,
    dt: float,
    dw,
    settings: SolverSettings = DEFAULT_SOLVER,
) -> np.ndarray:
    """x' solves x' = x + a(x')*dt + sum_j b_j(x)*dW_j."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    dw = np.asarray(dw, dtype=np.float64)
    _guard_domain_eval(model, x, "backward Euler diffusion term")
    if model.m == 1 and model.d == 1:
        rhs = x + model.diffusion[0](x) * dw
    else:
        rhs = x.astype(np.float64, copy=True)
        for j in range(model.m):
            rhs = rhs + model.diffusion[j](x) * dw[j]
    return solve_drift_implicit(
        model.drift, rhs, dt, model.domain, settings,
        x_init=x, closed_form=_closed_form_for(model),
        drift_prime=_drift_prime(model),
    )


def _closed_form_for(model: Model):
    if model.model_id == "cir":
        return cir_affine_implicit(model.params)
    if model.model_id == "cir_lamperti":
        return lamperti_implicit(model.params)
    if model.model_id == "gbm":
        return linear_implicit(model.params.mu)
    return None


# --- square-root process specials ------------------------------------------


def step_cir_implicit_sqrt(
    lamperti: LampertiCir, y, dt: float, dw, truncate: bool = False
) -> np.ndarray:
    """Drift-implicit Euler for Y = sqrt(X): closed-form positive root of

        y' = y + (alpha/y' + beta*y')*dt + gamma*dW.

    For alpha > 0 the output is strictly positive for any input; the CIR
    approximation is y'^2.  ``truncate`` enables the sqrt(x^+) convention
    needed when alpha < 0.
    """
    y = np.asarray(y, dtype=np.float64)
    dw = np.asarray(dw, dtype=np.float64)
    solve = lamperti_implicit(lamperti, truncate=truncate)
    return solve(y + lamperti.gamma * dw, dt)


def step_cir_implicit_milstein(
    p: CirParams, z, dt: float, dw, truncate: bool = False
) -> np.ndarray:
    """Drift-implicit Milstein for CIR in the positivity-revealing form

        z' = [ (sqrt(z) + (theta/2)*dW)^2 + (kappa*lam - theta^2/4)*dt ] / (1 + kappa*dt).

    Strictly positive whenever 4*kappa*lam >= theta^2 and dW is not exactly
    at the zero of the square.  Negative input is rejected unless
    ``truncate`` is set, in which case sqrt(z^+) is used.
    """
    z = np.asarray(z, dtype=np.float64)
    dw = np.asarray(dw, dtype=np.float64)
    if truncate:
        root = np.sqrt(np.maximum(z, 0.0))
    else:
        if np.any(z < 0):
            raise DomainError(
                "negative state passed to the drift-implicit Milstein step; "
                "enable truncate_sqrt to run outside the Feller regime"
            )
        root = np.sqrt(z)
    half_theta = 0.5 * p.theta
    sq = root + half_theta * dw
    return (sq * sq + (p.kappa * p.lam - half_theta * half_theta) * dt) / (
        1.0 + p.kappa * dt
    )


def step_log_heston(p: HestonParams, state, dt: float, dws) -> tuple:
    """Composite step for (H, Y) = (log-price, sqrt-variance):

        H' = H + (mu - Y^2/2)*dt + Y*(sqrt(1-rho^2)*dW1 + rho*dW2)
        Y' = implicit sqrt step driven by dW2.
    """
    h, y = state
    dw1, dw2 = dws
    h = np.asarray(h, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rho_bar = math.sqrt(1.0 - p.rho * p.rho)
    h_new = h + (p.mu - 0.5 * y * y) * dt + y * (rho_bar * np.asarray(dw1) + p.rho * np.asarray(dw2))
    y_new = step_cir_implicit_sqrt(lamperti_cir(p.vol_cir()), y, dt, dw2)
    return h_new, y_new


# ---------------------------------------------------------------------------
# stepper factory


@dataclass(frozen=True)
class _Stepper:
    """Internal bundle: initial state, one-step map on (d, b) blocks, and the
    transform from internal state to recorded path values."""

    step: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    state0: np.ndarray  # (d,)
    emit: Callable[[np.ndarray], np.ndarray] | None = None  # state -> values
    check_domain: bool = False
    model: Model | None = None


def _initial_state(model: Model) -> np.ndarray:
    p = model.params
    mid = model.model_id
    if mid in ("cir", "cev", "gbm", "ait_sahalia", "cubic_toy"):
        x0 = getattr(p, "x0", None)
        if x0 is None:
            x0 = p.s0
        return np.array([float(x0)])
    if mid == "three_halves_vol":
        return np.array([float(p.v0)])
    if mid == "cir_lamperti":
        return np.array([float(p.y0)])
    if mid == "heston_log":
        return np.array([math.log(p.s0), math.sqrt(p.v0)])
    if mid == "heston":
        return np.array([float(p.s0), float(p.v0)])
    raise SchemeError(f"no initial state rule for model {model.model_id!r}")


def validate_config(config: StepperConfig, model: Model) -> None:
    """Reject scheme/model combinations that are not defined."""
    sid = config.scheme_id
    if sid in ("milstein", "modified_milstein") and (model.m != 1 or model.d != 1):
        raise SchemeError(
            "Milstein schemes are restricted to scalar noise; "
            f"model {model.model_id!r} has d={model.d}, m={model.m}"
        )
    if sid.startswith("modified_") and model.domain.is_full:
        raise SchemeError(
            f"{sid} extends coefficients outside the domain, but model "
            f"{model.model_id!r} already lives on full space"
        )
    if sid == "reflected_euler" and model.domain.is_full:
        raise SchemeError("reflected_euler needs a model with a proper domain")
    if sid == "cir_implicit_sqrt_euler" and model.model_id not in (
        "cir", "cir_lamperti",
    ):
        raise SchemeError(f"{sid} requires a CIR or Lamperti-CIR model")
    if sid == "cir_implicit_milstein" and model.model_id != "cir":
        raise SchemeError(f"{sid} requires a CIR model")
    if sid == "log_heston_composite" and model.model_id != "heston_log":
        raise SchemeError(f"{sid} requires the log-Heston model")
    if sid in ("explicit_euler", "milstein") and not model.domain.is_full:
        # legal for one-step use from inside D, but a path will exit the
        # domain with positive probability; simulate_path enforces the domain
        # at every step and raises DomainError on exit.
        pass


def make_stepper(config: StepperConfig, model: Model) -> _Stepper:
    validate_config(config, model)
    sid = config.scheme_id
    x0 = _initial_state(model)

    if sid in ("modified_euler", "modified_milstein"):
        ext_model = apply_extension(model, config.extension)
        base = step_explicit_euler if sid == "modified_euler" else step_milstein_scalar

        def step(x, dw, dt):
            return base(ext_model, x[0], dt, dw[0])[None]

        return _Stepper(step=step, state0=x0, model=model)

    if sid == "explicit_euler":
        if model.d == 1:
            def step(x, dw, dt):
                return step_explicit_euler(model, x[0], dt, dw[0])[None]
        else:
            def step(x, dw, dt):
                return step_explicit_euler(model, x, dt, dw)
        return _Stepper(
            step=step, state0=x0, check_domain=not model.domain.is_full, model=model
        )

    if sid == "milstein":
        def step(x, dw, dt):
            return step_milstein_scalar(model, x[0], dt, dw[0])[None]
        return _Stepper(
            step=step, state0=x0, check_domain=not model.domain.is_full, model=model
        )

    if sid == "reflected_euler":
        proj = config.projection

        def step(x, dw, dt):
            return step_reflected(model, proj, x[0], dt, dw[0])[None]
        return _Stepper(step=step, state0=x0, model=model)

    if sid == "tamed_euler":
        if model.d == 1:
            def step(x, dw, dt):
                return step_tamed_euler(model, x[0], dt, dw[0])[None]
        else:
            def step(x, dw, dt):
                return step_tamed_euler(model, x, dt, dw)
        return _Stepper(
            step=step, state0=x0, check_domain=not model.domain.is_full, model=model
        )

    if sid == "split_step_backward_euler":
        def step(x, dw, dt):
            return step_split_step_backward(model, x[0], dt, dw[0], config.solver)[None]
        return _Stepper(step=step, state0=x0, model=model)

    if sid == "backward_euler":
        def step(x, dw, dt):
            return step_backward_euler(model, x[0], dt, dw[0], config.solver)[None]
        return _Stepper(step=step, state0=x0, model=model)

    if sid == "cir_implicit_sqrt_euler":
        if model.model_id == "cir":
            lam = lamperti_cir(model.params)
            y0 = np.array([lam.y0])

            def emit(y):
                return y * y

        else:
            lam = model.params
            y0 = np.array([lam.y0])
            emit = None
        if lam.alpha <= 0 and not config.truncate_sqrt:
            raise SchemeError(
                "implicit sqrt Euler requires 2*kappa*lam > theta^2 "
                f"(alpha = {lam.alpha:.6g}); set truncate_sqrt to run anyway"
            )
        trunc = config.truncate_sqrt

        def step(y, dw, dt):
            return step_cir_implicit_sqrt(lam, y[0], dt, dw[0], truncate=trunc)[None]

        return _Stepper(step=step, state0=y0, emit=emit, model=model)

    if sid == "cir_implicit_milstein":
        p = model.params
        if 4.0 * p.kappa * p.lam < p.theta * p.theta and not config.truncate_sqrt:
            raise SchemeError(
                "drift-implicit Milstein loses positivity when 4*kappa*lam < "
                "theta^2; set truncate_sqrt to run in that regime"
            )
        trunc = config.truncate_sqrt

        def step(z, dw, dt):
            return step_cir_implicit_milstein(p, z[0], dt, dw[0], truncate=trunc)[None]

        return _Stepper(step=step, state0=x0, model=model)

    if sid == "log_heston_composite":
        p = model.params
        lam = lamperti_cir(p.vol_cir())
        rho, rho_bar = p.rho, math.sqrt(1.0 - p.rho * p.rho)
        mu = p.mu
        solve = lamperti_implicit(lam, truncate=config.truncate_sqrt)
        gamma = lam.gamma
        if lam.alpha <= 0 and not config.truncate_sqrt:
            raise SchemeError(
                "volatility equation violates 2*kappa*lam > theta^2; "
                "set truncate_sqrt to run anyway"
            )

        def step(x, dw, dt):
            h, y = x[0], x[1]
            dw1, dw2 = dw[0], dw[1]
            h_new = h + (mu - 0.5 * y * y) * dt + y * (rho_bar * dw1 + rho * dw2)
            y_new = solve(y + gamma * dw2, dt)
            return np.stack([h_new, y_new])

        return _Stepper(step=step, state0=x0, model=model)

    raise SchemeError(f"unhandled scheme {sid!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# simulation engine


@dataclass
class BatchResult:
    """Vectorized simulation output for a block of paths."""

    recorded: np.ndarray | None  # (d, n_rec+1, b) emitted values, or None
    terminal: np.ndarray  # (d, b) emitted values at T
    negative_steps: np.ndarray  # (b,) int
    domain_exits: np.ndarray  # (b,) int
    overflow: np.ndarray  # (b,) bool
    first_bad: np.ndarray  # (b,) int step index, -1 if clean
    runmax: np.ndarray | None  # (b,) signed max of emitted coordinate 0
    runmin: np.ndarray | None  # (b,) signed min of emitted coordinate 0
    steps: int


def simulate_batch(
    config: StepperConfig,
    model: Model,
    dt: float,
    incr: np.ndarray,
    record_every: int | None = None,
    track_extrema: bool = False,
) -> BatchResult:
    """Drive a batch of paths through the configured scheme.

    ``incr`` has shape (m, b, n): per noise dimension, per path, per step.
    ``record_every = s`` stores emitted values at nodes 0, s, 2s, ..., n
    (n must be divisible by s).  Non-finite states freeze their path's flags
    but the iteration continues for the rest of the batch; the frozen values
    stay non-finite (all maps here propagate them).
    """
    if config.stability_constants is not None:
        l1, l2 = config.stability_constants
        bound = implicit_step_bound(l1, l2)
        if not dt < bound:
            raise SchemeError(
                f"dt = {dt} violates the implicit-scheme bound dt < {bound} "
                f"for (L1, L2) = {config.stability_constants}"
            )
    stepper = make_stepper(config, model)
    m, b, n = incr.shape
    if m != model.m:
        raise SchemeError(
            f"increment block has {m} noise dimensions, model needs {model.m}"
        )
    if record_every is not None and n % record_every != 0:
        raise SchemeError(f"record_every={record_every} must divide n={n}")

    d = model.d
    x = np.repeat(stepper.state0[:, None], b, axis=1)
    emit = stepper.emit or (lambda s: s)

    rec = None
    if record_every is not None:
        n_rec = n // record_every
        rec = np.empty((d, n_rec + 1, b))
        rec[:, 0, :] = emit(x)
    neg = np.zeros(b, dtype=np.int64)
    exits = np.zeros(b, dtype=np.int64)
    first_bad = np.full(b, -1, dtype=np.int64)
    runmax = runmin = None
    if track_extrema:
        row0 = emit(x)[0]
        runmax = row0.copy()
        runmin = row0.copy()

    domain = model.domain
    check = stepper.check_domain
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for k in range(n):
            x = stepper.step(x, incr[:, :, k], dt)
            if check and domain.violates_closure(x).any():
                raise DomainError(
                    f"scheme {config.scheme_id!r} left the domain of model "
                    f"{model.model_id!r} at step {k + 1}; configure an "
                    "extension (modified_*), a projection (reflected_euler), "
                    "or a truncating scheme"
                )
            finite = np.isfinite(x).all(axis=0) if d > 1 else np.isfinite(x[0])
            newly_bad = ~finite & (first_bad < 0)
            if newly_bad.any():
                first_bad[newly_bad] = k + 1
            vals = emit(x)
            row = vals[0] if d == 1 else None
            if d == 1:
                neg += row < 0
            else:
                neg += (vals < 0).any(axis=0)
            if not domain.is_full:
                exits += domain.violates_closure(vals)
            if track_extrema:
                r0 = row if d == 1 else vals[0]
                np.maximum(runmax, r0, out=runmax)
                np.minimum(runmin, r0, out=runmin)
            if rec is not None and (k + 1) % record_every == 0:
                rec[:, (k + 1) // record_every, :] = vals

    return BatchResult(
        recorded=rec,
        terminal=emit(x),
        negative_steps=neg,
        domain_exits=np.asarray(exits),
        overflow=first_bad >= 0,
        first_bad=first_bad,
        runmax=runmax,
        runmin=runmin,
        steps=n,
    )


def simulate_path(
    config: StepperConfig, model: Model, lattice: BrownianLattice, n: int
) -> SamplePath:
    """Simulate one path at resolution n (a dyadic divisor of the lattice)."""
    if lattice.m != model.m:
        raise SchemeError(
            f"lattice has m={lattice.m} noise dimensions, model needs {model.m}"
        )
    incr = increments_at(lattice, n)[:, None, :]  # (m, 1, n)
    res = simulate_batch(config, model, lattice.T / n, incr, record_every=1)
    values = res.recorded[:, :, 0]
    overflow = bool(res.overflow[0])
    first = int(res.first_bad[0]) if overflow else None
    if overflow:
        # freeze: values from the first non-finite node onward are already
        # non-finite by propagation; nothing to clean up, just report
        pass
    return SamplePath(
        grid=TimeGrid(T=lattice.T, n=n),
        values=values,
        scheme_id=config.scheme_id,
        negative_step_count=int(res.negative_steps[0]),
        domain_exit_count=int(res.domain_exits[0]),
        overflow=overflow,
        first_non_finite=first,
    )
