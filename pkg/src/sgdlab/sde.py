"""Continuous approximation of the SGD recursion: underdamped Langevin.

The discrete update is approximated (weak order 1 in the time step dt = l)
by the stochastic system

    dV = [-gamma V - (1/l) grad f(X)] dt + sqrt(D / C) dW
    dX = V dt

with friction gamma = (1 - mu) / l and isotropic noise amplitude
sqrt(D / C).  Three tools live here:

- em_step: Euler-Maruyama integration for arbitrary objectives, with the
  position update using the freshly updated velocity (mirroring the
  discrete recursion), and an optional higher-order drift correction that
  replaces f by f + (l/4) |grad f|^2.
- OuTransition / exact_ou_step: the exact transition kernel on quadratic
  potentials, assembled per curvature eigenmode from the 2x2 matrix
  exponential and the stationary covariance, hence free of discretization
  bias.  This is the primary oracle for stationary statistics.
- weak_error_probe: closed-form mean recursions comparing E[x_k] of the
  discrete chain with E[X(k l)] of the SDE at matched physical time,
  fitting the log-log error slope in l.

On a quadratic with curvature A the stationary law is Gaussian with
Var(V) = T and Cov(X) = l T A^{-1}, where T = l D / (2 C (1 - mu)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, DivergenceError, MisuseError
from .objectives import Objective, QuadraticEnsemble
from .thermo import effective_temperature

VELOCITY_DIVERGENCE_NORM = 1e12


@dataclass
class SdeState:
    x: np.ndarray
    v: np.ndarray
    t: float = 0.0


@dataclass
class SdeParams:
    """Continuous-system parameters mirroring the discrete hyperparameters.

    dt defaults to lr / 10: the natural identification is dt = lr, but a
    finer default keeps Euler-Maruyama discretization bias well below the
    statistical tolerances of the stationary checks.
    """

    lr: float
    momentum: float
    diffusion: float
    batch_size: int
    dt: float | None = None
    correction: bool = False

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.diffusion < 0.0:
            raise ConfigError(f"diffusion must be non-negative, got {self.diffusion}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.dt is None:
            self.dt = self.lr / 10.0
        if self.dt <= 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt}")

    @property
    def gamma(self) -> float:
        return (1.0 - self.momentum) / self.lr

    @property
    def noise_amplitude(self) -> float:
        return np.sqrt(self.diffusion / self.batch_size)

    @property
    def temperature(self) -> float:
        return effective_temperature(self.lr, self.diffusion,
                                     self.batch_size, self.momentum).temperature


def _drift_gradient(obj: Objective, x: np.ndarray, params: SdeParams) -> np.ndarray:
    g = obj.grad(x)
    if params.correction:
        # gradient of the modified potential f + (l/4) |grad f|^2
        g = g + (params.lr / 2.0) * obj.hess_vec(x, g)
    return g


def em_step(state: SdeState, obj: Objective, params: SdeParams,
            rng: np.random.Generator) -> SdeState:
    """One Euler-Maruyama step; requires gamma * dt < 2 for stability."""
    dt = params.dt
    if params.gamma * dt >= 2.0:
        raise ConfigError(f"unstable step: gamma * dt = {params.gamma * dt:.3g} >= 2")
    g = _drift_gradient(obj, state.x, params)
    noise = params.noise_amplitude * np.sqrt(dt) * rng.standard_normal(state.v.shape)
    v_new = state.v + dt * (-params.gamma * state.v - g / params.lr) + noise
    x_new = state.x + dt * v_new
    if not np.all(np.isfinite(v_new)) or float(np.linalg.norm(v_new)) > VELOCITY_DIVERGENCE_NORM:
        raise DivergenceError(f"simulation diverged at t = {state.t:.6g}", time=state.t)
    return SdeState(x_new, v_new, state.t + dt)


def _as_curvature(curvature) -> np.ndarray:
    A = np.atleast_2d(np.asarray(curvature, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise MisuseError("curvature must be square")
    if not np.allclose(A, A.T, atol=1e-12):
        raise MisuseError("curvature must be symmetric")
    return A


class OuTransition:
    """Exact transition kernel on a quadratic potential f(y) = 0.5 y^T A y.

    In the eigenbasis of A each mode is an independent 2d linear SDE with
    drift M = [[0, 1], [-lam/l, -gamma]].  Over a step of length dt the
    state maps to E z + zeta with E = expm(M dt) and zeta Gaussian with
    covariance Q = P_inf - E P_inf E^T, where P_inf = diag(l T / lam, T)
    is the stationary covariance.  A single step with dt -> inf therefore
    draws directly from the stationary Gaussian.
    """

    def __init__(self, curvature, params: SdeParams, dt: float | None = None):
        A = _as_curvature(curvature)
        lams, U = np.linalg.eigh(A)
        if lams.min() <= 0.0:
            raise MisuseError("curvature must be positive definite")
        self.modes = A.shape[0]
        self.basis = U
        self.dt = params.dt if dt is None else dt
        if self.dt <= 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        T = params.temperature

        self.propagator = np.empty((self.modes, 2, 2))
        self.noise_factor = np.zeros((self.modes, 2, 2))
        for i, lam in enumerate(lams):
            M = np.array([[0.0, 1.0], [-lam / params.lr, -params.gamma]])
            E = expm(M * self.dt)
            self.propagator[i] = E
            if T > 0.0:
                p_inf = np.diag([params.lr * T / lam, T])
                Q = p_inf - E @ p_inf @ E.T
                Q = 0.5 * (Q + Q.T)
                w, V = np.linalg.eigh(Q)
                self.noise_factor[i] = V @ np.diag(np.sqrt(np.clip(w, 0.0, None)))

    def step_batch(self, xs: np.ndarray, vs: np.ndarray,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Advance (chains, modes) eigenbasis coordinates by one step."""
        E, L = self.propagator, self.noise_factor
        eta = rng.standard_normal((2,) + xs.shape)
        x_new = E[:, 0, 0] * xs + E[:, 0, 1] * vs + L[:, 0, 0] * eta[0] + L[:, 0, 1] * eta[1]
        v_new = E[:, 1, 0] * xs + E[:, 1, 1] * vs + L[:, 1, 0] * eta[0] + L[:, 1, 1] * eta[1]
        return x_new, v_new

    def to_eigenbasis(self, z: np.ndarray) -> np.ndarray:
        return z @ self.basis

    def from_eigenbasis(self, z: np.ndarray) -> np.ndarray:
        return z @ self.basis.T


def exact_ou_step(state: SdeState, curvature, params: SdeParams,
                  rng: np.random.Generator, dt: float | None = None) -> SdeState:
    """One draw from the exact transition kernel (potential centered at 0)."""
    kernel = OuTransition(curvature, params, dt=dt)
    xe = kernel.to_eigenbasis(state.x[None, :])
    ve = kernel.to_eigenbasis(state.v[None, :])
    xe, ve = kernel.step_batch(xe, ve, rng)
    return SdeState(kernel.from_eigenbasis(xe)[0], kernel.from_eigenbasis(ve)[0],
                    state.t + kernel.dt)


def sample_stationary(curvature, params: SdeParams, n_samples: int,
                      rng: np.random.Generator, n_chains: int = 100,
                      burn_time: float | None = None,
                      method: str = "exact") -> tuple[np.ndarray, np.ndarray]:
    """Stationary (X, V) samples on the quadratic potential 0.5 x^T A x.

    Runs n_chains independent chains from the origin, discards ten
    friction times of burn-in (10 l / (1 - mu) unless overridden) and
    collects every post-burn-in state until n_samples are gathered.
    method selects the exact kernel or Euler-Maruyama.
    """
    A = _as_curvature(curvature)
    n = A.shape[0]
    if method not in ("exact", "em"):
        raise ConfigError(f"unknown sampling method {method!r}")
    if burn_time is None:
        burn_time = 10.0 * params.lr / (1.0 - params.momentum)
    dt = params.dt
    burn_steps = int(np.ceil(burn_time / dt))
    keep_steps = int(np.ceil(n_samples / n_chains))

    xs = np.zeros((n_chains, n))
    vs = np.zeros((n_chains, n))
    out_x = np.empty((keep_steps, n_chains, n))
    out_v = np.empty((keep_steps, n_chains, n))

    if method == "exact":
        kernel = OuTransition(A, params)
        xs_e, vs_e = kernel.to_eigenbasis(xs), kernel.to_eigenbasis(vs)
        for _ in range(burn_steps):
            xs_e, vs_e = kernel.step_batch(xs_e, vs_e, rng)
        for k in range(keep_steps):
            xs_e, vs_e = kernel.step_batch(xs_e, vs_e, rng)
            out_x[k] = xs_e
            out_v[k] = vs_e
        out_x = out_x.reshape(-1, n) @ kernel.basis.T
        out_v = out_v.reshape(-1, n) @ kernel.basis.T
    else:
        if params.gamma * dt >= 2.0:
            raise ConfigError(f"unstable step: gamma * dt = {params.gamma * dt:.3g} >= 2")
        amp = params.noise_amplitude * np.sqrt(dt)
        for k in range(burn_steps + keep_steps):
            noise = amp * rng.standard_normal((n_chains, n))
            vs = vs + dt * (-params.gamma * vs - (xs @ A) / params.lr) + noise
            xs = xs + dt * vs
            if k >= burn_steps:
                out_x[k - burn_steps] = xs
                out_v[k - burn_steps] = vs
        out_x = out_x.reshape(-1, n)
        out_v = out_v.reshape(-1, n)

    return out_x[:n_samples], out_v[:n_samples]


@dataclass
class WeakErrorResult:
    points: list[tuple[float, float]]   # (l, |E x_K - E X(K l)|)
    slope: float


def discrete_mean_trajectory(curvature, lr: float, momentum: float, steps: int,
                             x0: np.ndarray, v0: np.ndarray) -> np.ndarray:
    """E[x_k] of the discrete chain on a centered quadratic.

    Expectations pass through the linear recursion exactly because
    E[alpha] = 1 and the per-sample gradients are affine in x, so no
    sampling is involved.
    """
    A = _as_curvature(curvature)
    x, v = x0.astype(float).copy(), v0.astype(float).copy()
    for _ in range(steps):
        v = momentum * v - A @ x
        x = x + lr * v
    return x


def continuous_mean(curvature, lr: float, momentum: float, t: float,
                    x0: np.ndarray, v0: np.ndarray) -> np.ndarray:
    """E[X(t)] of the SDE on a centered quadratic, by matrix exponential."""
    A = _as_curvature(curvature)
    n = A.shape[0]
    gamma = (1.0 - momentum) / lr
    M = np.zeros((2 * n, 2 * n))
    M[:n, n:] = np.eye(n)
    M[n:, :n] = -A / lr
    M[n:, n:] = -gamma * np.eye(n)
    z = expm(M * t) @ np.concatenate([x0, v0])
    return z[:n]


def weak_error_probe(obj: QuadraticEnsemble, momentum: float, l_values,
                     horizon: float, x0: np.ndarray | None = None,
                     v0: np.ndarray | None = None) -> WeakErrorResult:
    """Mean-trajectory mismatch at matched physical time versus the rate l.

    For each l the chain runs K = round(horizon / l) steps and the SDE is
    evolved to time K * l; the fitted log-log slope close to 1 reflects
    the weak order of the approximation.
    """
    A = obj.curvature
    center = obj.minimum
    if x0 is None:
        x0 = center + np.ones(obj.n)
    if v0 is None:
        v0 = np.zeros(obj.n)
    y0 = x0 - center

    points = []
    for lr in l_values:
        steps = int(round(horizon / lr))
        xd = discrete_mean_trajectory(A, lr, momentum, steps, y0, v0)
        xc = continuous_mean(A, lr, momentum, steps * lr, y0, v0)
        points.append((float(lr), float(np.linalg.norm(xd - xc))))

    ls = np.log([p[0] for p in points])
    errs = np.log([max(p[1], 1e-300) for p in points])
    slope = float(np.polyfit(ls, errs, 1)[0])
    return WeakErrorResult(points=points, slope=slope)
