"""Effective temperature and the Gibbs stationary density.

In the small-rate continuous description, training noise acts like a heat
bath at temperature

    T = l D / (2 C (1 - mu))

so that the stationary phase-space density is proportional to
exp(-H / T) with Hamiltonian H(V, X) = 0.5 V.V + f(X) / l.  Two training
setups with the same T (same l D / (C (1 - mu)) when they share an
objective) are predicted to behave equivalently; same_temperature is that
predicate, used to design and validate equal-temperature experiments.

On a quadratic objective with curvature A the Gibbs marginals are
Gaussian: V has covariance T I and X - minimum has covariance l T A^{-1}.
compare_to_gibbs checks sampled states against those marginals with mean,
variance and Kolmogorov-Smirnov distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import CapacityError, ConfigError, MisuseError
from .objectives import Objective, QuadraticEnsemble


@dataclass(frozen=True)
class ThermoParams:
    """Temperature and Gibbs coefficient with input provenance."""

    temperature: float
    beta: float          # 2 C (1 - mu) / (l D), the exponent coefficient; 1 / T
    lr: float
    diffusion: float
    batch_size: int
    momentum: float


def effective_temperature(lr: float, diffusion: float, batch_size: int,
                          momentum: float) -> ThermoParams:
    """T = l D / (2 C (1 - mu)); the noiseless D = 0 limit gives T = 0."""
    if lr <= 0.0:
        raise ConfigError(f"lr must be positive, got {lr}")
    if diffusion < 0.0:
        raise ConfigError(f"diffusion must be non-negative, got {diffusion}")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be at least 1, got {batch_size}")
    if not 0.0 <= momentum < 1.0:
        raise ConfigError(f"momentum must lie in [0, 1); mu = 1 has no friction")
    T = lr * diffusion / (2.0 * batch_size * (1.0 - momentum))
    beta = math.inf if T == 0.0 else 1.0 / T
    return ThermoParams(temperature=T, beta=beta, lr=lr, diffusion=diffusion,
                        batch_size=batch_size, momentum=momentum)


def same_temperature(a: tuple[float, int, float], b: tuple[float, int, float],
                     rel_tol: float = 1e-9) -> bool:
    """Whether two (l, C, mu) tuples share an effective temperature.

    The diffusion scalar is assumed common to both sides (same objective
    at comparable states), so only l / (C (1 - mu)) is compared.
    """
    la, ca, mua = a
    lb, cb, mub = b
    ta = la / (ca * (1.0 - mua))
    tb = lb / (cb * (1.0 - mub))
    return abs(ta - tb) <= rel_tol * max(abs(ta), abs(tb))


@dataclass
class GibbsDensity:
    """Unnormalized stationary density exp(-H / T) for a given objective.

    H(V, X) = 0.5 V.V + f(X) / lr.  Quadratic objectives additionally
    expose their Gaussian marginals for verification.
    """

    objective: Objective
    lr: float
    temperature: float

    def hamiltonian(self, v: np.ndarray, x: np.ndarray) -> float:
        return 0.5 * float(v @ v) + self.objective.loss(x) / self.lr

    def log_density(self, v: np.ndarray, x: np.ndarray) -> float:
        if self.temperature <= 0.0:
            raise MisuseError("density is degenerate at zero temperature")
        return -self.hamiltonian(v, x) / self.temperature

    def _quadratic(self) -> QuadraticEnsemble:
        if not isinstance(self.objective, QuadraticEnsemble):
            raise MisuseError("analytic marginals exist only for quadratic objectives")
        return self.objective

    @property
    def center(self) -> np.ndarray:
        return self._quadratic().minimum

    def position_covariance(self) -> np.ndarray:
        quad = self._quadratic()
        return self.lr * self.temperature * np.linalg.inv(quad.curvature)

    def velocity_variance(self) -> float:
        return self.temperature


@dataclass
class GibbsComparison:
    """Per-marginal empirical-vs-analytic report with a pass verdict."""

    x_var_ratio: np.ndarray
    v_var_ratio: np.ndarray
    x_mean_shift: np.ndarray   # |mean error| in units of the marginal sd
    v_mean_shift: np.ndarray
    x_ks: np.ndarray
    v_ks: np.ndarray
    var_rtol: float
    mean_tol: float
    max_ks: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def compare_to_gibbs(x_samples: np.ndarray, v_samples: np.ndarray,
                     density: GibbsDensity, var_rtol: float = 0.05,
                     mean_tol: float | None = None,
                     max_ks: float = 0.01) -> GibbsComparison:
    """Check sampled (X, V) states against the analytic Gibbs marginals.

    Marginals are compared in the curvature eigenbasis, where they are
    independent Gaussians.  Requires enough samples that the Monte Carlo
    noise floor of the variance estimate, sqrt(2 / S), sits a factor of
    four below var_rtol; otherwise raises CapacityError.
    """
    quad = density._quadratic()
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    v_samples = np.atleast_2d(np.asarray(v_samples, dtype=float))
    S = x_samples.shape[0]
    if S < 2 or math.sqrt(2.0 / S) > var_rtol / 4.0:
        needed = int(np.ceil(32.0 / var_rtol**2))
        raise CapacityError(f"{S} samples cannot certify a {var_rtol:.3g} variance "
                            f"tolerance; need at least {needed}")
    if mean_tol is None:
        mean_tol = var_rtol

    lams, U = np.linalg.eigh(quad.curvature)
    xe = (x_samples - quad.minimum) @ U
    ve = v_samples @ U
    x_sd = np.sqrt(density.lr * density.temperature / lams)
    v_sd = np.sqrt(density.temperature) * np.ones_like(lams)

    def marginal_checks(samples, sds, tag):
        var_ratio = samples.var(axis=0) / sds**2
        mean_shift = np.abs(samples.mean(axis=0)) / sds
        ks = np.array([stats.kstest(samples[:, i], "norm",
                                    args=(0.0, sds[i])).statistic
                       for i in range(samples.shape[1])])
        failures = []
        for i, (r, m, k) in enumerate(zip(var_ratio, mean_shift, ks)):
            if not (1.0 - var_rtol) <= r <= (1.0 + var_rtol):
                failures.append(f"{tag}[{i}] variance ratio {r:.4f} outside "
                                f"[{1 - var_rtol:.3f}, {1 + var_rtol:.3f}]")
            if m > mean_tol:
                failures.append(f"{tag}[{i}] mean off by {m:.4f} marginal sds")
            if k > max_ks:
                failures.append(f"{tag}[{i}] KS distance {k:.4f} > {max_ks}")
        return var_ratio, mean_shift, ks, failures

    x_ratio, x_shift, x_ks, fx = marginal_checks(xe, x_sd, "X")
    v_ratio, v_shift, v_ks, fv = marginal_checks(ve, v_sd, "V")

    return GibbsComparison(x_var_ratio=x_ratio, v_var_ratio=v_ratio,
                           x_mean_shift=x_shift, v_mean_shift=v_shift,
                           x_ks=x_ks, v_ks=v_ks, var_rtol=var_rtol,
                           mean_tol=mean_tol, max_ks=max_ks,
                           failures=fx + fv)
