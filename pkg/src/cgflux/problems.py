"""Benchmark problem registry: permeabilities, closures, boundary and
initial data for the single- and two-phase examples.

All coefficient functions are vectorized over point arrays of shape (..., 2).
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import CoefficientError, UnknownProblemError

DENOM_GUARD = 1e-10


def kappa_osc(x):
    """Oscillatory permeability 1/(1-0.8 sin(6 pi x1)) / (1-0.8 sin(6 pi x2))."""
    x = np.asarray(x, dtype=float)
    return 1.0 / ((1.0 - 0.8 * np.sin(6 * np.pi * x[..., 0]))
                  * (1.0 - 0.8 * np.sin(6 * np.pi * x[..., 1])))


def kappa_heterog(x):
    """Strongly heterogeneous permeability with near-vanishing denominators.

    1/(0.25 - 0.999 (x1-x1^2) sin(11.2 pi x1)) / (0.25 - 0.999 (x2-x2^2) cos(5.2 pi x2))

    The denominators are guarded: samples within DENOM_GUARD of zero raise
    instead of being clamped, since clamping would corrupt convergence rates.
    """
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    d1 = 0.25 - 0.999 * (x1 - x1 ** 2) * np.sin(11.2 * np.pi * x1)
    d2 = 0.25 - 0.999 * (x2 - x2 ** 2) * np.cos(5.2 * np.pi * x2)
    if np.any(d1 <= DENOM_GUARD) or np.any(d2 <= DENOM_GUARD):
        raise CoefficientError("heterogeneous permeability denominator within "
                               f"{DENOM_GUARD} of zero")
    return 1.0 / (d1 * d2)


def kappa_smooth(x):
    """Smooth degenerate permeability e^(1-x1) (x2 - x2^2) / (x1 + 1)."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.exp(1.0 - x1) * (x2 - x2 ** 2) / (x1 + 1.0)


def total_mobility(s):
    """lambda(S) = S^2/1 + (1-S)^2/5."""
    s = np.asarray(s, dtype=float)
    return s ** 2 + (1.0 - s) ** 2 / 5.0


def fractional_flow(s):
    """f(S) = S^2 / (S^2/1 + (1-S)^2/5); f(0)=0, f(1)=1, increasing."""
    s = np.asarray(s, dtype=float)
    return s ** 2 / total_mobility(s)


def initial_step(x):
    """Step profile: 1 for x1 <= 0, else 0 (a water flood front at inflow)."""
    x = np.asarray(x, dtype=float)
    return np.where(x[..., 0] <= 0.0, 1.0, 0.0)


def initial_smooth(x):
    """Smooth profile: 1 for x1 < 0, else 1/(1 + x1^2)."""
    x = np.asarray(x, dtype=float)
    x1 = x[..., 0]
    return np.where(x1 < 0.0, 1.0, 1.0 / (1.0 + x1 ** 2))


def analytic_saturation_ex13(x, t):
    """Characteristics solution for the smooth-permeability linear-flux case.

    The Darcy velocity is (x2 - x2^2, 0), so the smooth initial profile is
    advected in x1 with speed Y = x2 - x2^2.
    """
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    shift = x1 - (x2 - x2 ** 2) * t
    return np.where(shift < 0.0, 1.0, 1.0 / (1.0 + shift ** 2))


def dirichlet_pressure(x):
    """p = 1 on the left boundary, p = 0 on the right."""
    x = np.asarray(x, dtype=float)
    return np.where(x[..., 0] < 0.5, 1.0, 0.0)


def zero(x):
    x = np.asarray(x, dtype=float)
    return np.zeros(x.shape[:-1])


@dataclass
class ProblemSpec:
    """Complete data set for one simulation scenario."""

    name: str
    kappa: Callable
    fractional: Callable
    s_initial: Callable
    t_final: float
    single_phase: bool
    mobility: Optional[Callable] = None       # None in single-phase mode
    q: Optional[Callable] = None              # pressure source (None = 0)
    q_w: Optional[Callable] = None            # saturation source (None = 0)
    g_D: Callable = dirichlet_pressure
    g_N: Callable = zero
    inflow_saturation: float = 1.0
    analytic_saturation: Optional[Callable] = None


_REGISTRY = {}


def _register(spec):
    _REGISTRY[spec.name] = spec
    return spec


_register(ProblemSpec("ex1-1", kappa_osc, fractional_flow, initial_step,
                      t_final=0.05, single_phase=True))
# the single-phase heterogeneous case is reported as early-time snapshots
# (T up to 0.002); no final time is prescribed beyond that
_register(ProblemSpec("ex1-2", kappa_heterog, fractional_flow, initial_step,
                      t_final=0.002, single_phase=True))
_register(ProblemSpec("ex1-3", kappa_smooth, lambda s: np.asarray(s, dtype=float),
                      initial_smooth, t_final=1.0, single_phase=True,
                      analytic_saturation=analytic_saturation_ex13))
_register(ProblemSpec("ex1-4", kappa_osc, fractional_flow, initial_smooth,
                      t_final=0.05, single_phase=True))
_register(ProblemSpec("ex2-1", kappa_osc, fractional_flow, initial_step,
                      t_final=0.1, single_phase=False, mobility=total_mobility))
_register(ProblemSpec("ex2-2", kappa_osc, fractional_flow, initial_smooth,
                      t_final=0.1, single_phase=False, mobility=total_mobility))
_register(ProblemSpec("ex2-3", kappa_heterog, fractional_flow, initial_smooth,
                      t_final=0.02, single_phase=False, mobility=total_mobility))


def registry(name):
    """Look up a ProblemSpec by name ('ex1-1' ... 'ex2-3')."""
    try:
        return _REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise UnknownProblemError(f"unknown problem {name!r}; known: {known}") from None


def problem_names():
    return sorted(_REGISTRY)
