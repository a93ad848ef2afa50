"""Numerical schemes and estimators for SDEs with square-root and polynomial coefficients.

The package is organized around a reproducible Brownian-increment kernel
(`brownian`), a zoo of interest-rate / volatility models (`models`), one-step
discretization schemes and path drivers (`schemes`), strong-error and
negativity measurement (`convergence`), Monte Carlo and multilevel Monte
Carlo estimators (`estimators`), closed-form and Fourier reference prices
(`oracles`), and a config-file driven experiment harness (`config`,
`experiments`, `cli`).
"""

__version__ = "0.1.0"

from . import (
    brownian,
    config,
    convergence,
    estimators,
    experiments,
    models,
    oracles,
    schemes,
    util,
)

__all__ = [
    "__version__",
    "brownian",
    "config",
    "convergence",
    "estimators",
    "experiments",
    "models",
    "oracles",
    "schemes",
    "util",
]
