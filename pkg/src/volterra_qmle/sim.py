"""Simulation of small-noise rough Volterra SDEs.

The scheme freezes the coefficients at the left end of each fine cell and
integrates the kernel exactly over the cell:

    X_i = x0 + sum_{j<i} w_{i-j} * (b(X_j, theta) + eps * a(X_j) dB_j / delta)

with ``w_m`` the integral of K over a cell ``m`` lags back.  The same Brownian
increments drive the oracle semimartingale Z, which is accumulated with the
plain Euler rule Z_{i+1} = Z_i + delta * b(X_i) + eps * a(X_i) dB_i.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, InputError, SimulationDivergedError
from .kernel import FractionalKernelParams, drift_weights

DIVERGENCE_BOUND = 1e8


@dataclass(frozen=True)
class Model:
    """Coefficients of the Volterra equation and the parameter box.

    All callables are vectorised over leading axes: ``drift(x, theta)`` maps
    ``x[..., d]`` to ``[..., d]``, ``diffusion(x)`` to ``[..., d, r]`` and
    ``drift_jacobian_theta(x, theta)`` to ``[..., d, d_theta]``.

    ``drift_design``, when given, declares the drift linear in theta:
    it returns ``(Phi[..., d, d_theta], phi0[..., d])`` with
    ``b(x, theta) = Phi(x) @ theta + phi0(x)``.
    """

    dim_x: int
    dim_b: int
    dim_theta: int
    drift: Callable
    diffusion: Callable
    drift_jacobian_theta: Callable
    theta_box: tuple
    theta_star: tuple
    x0: tuple
    drift_design: Optional[Callable] = None
    name: str = "custom"

    def __post_init__(self):
        box = np.asarray(self.theta_box, dtype=float)
        if box.shape != (self.dim_theta, 2) or np.any(box[:, 0] > box[:, 1]):
            raise DomainError("theta_box must hold one (low, high) pair per parameter")
        star = np.asarray(self.theta_star, dtype=float)
        if star.shape != (self.dim_theta,):
            raise DomainError("theta_star has the wrong length")
        if np.any(star < box[:, 0]) or np.any(star > box[:, 1]):
            raise DomainError(f"theta_star {tuple(star)} lies outside theta_box")
        if np.asarray(self.x0, dtype=float).shape != (self.dim_x,):
            raise DomainError("x0 has the wrong length")

    @property
    def box(self) -> np.ndarray:
        return np.asarray(self.theta_box, dtype=float)

    @property
    def theta(self) -> np.ndarray:
        return np.asarray(self.theta_star, dtype=float)

    @property
    def x0_array(self) -> np.ndarray:
        return np.asarray(self.x0, dtype=float)

    @property
    def linear_in_theta(self) -> bool:
        return self.drift_design is not None

    def with_theta(self, theta_star) -> "Model":
        return Model(**{**self.__dict__, "theta_star": tuple(float(v) for v in theta_star)})

    def with_x0(self, x0) -> "Model":
        return Model(**{**self.__dict__, "x0": tuple(float(v) for v in np.atleast_1d(x0))})


def _unit_diffusion(x):
    x = np.asarray(x, dtype=float)
    return np.ones(x.shape + (1,))


def linear_affine_model(theta_star=(-1.0, 1.0), x0=0.0, theta_box=((-10.0, 10.0), (-10.0, 10.0))) -> Model:
    """Scalar model with a = 1 and b(x, theta) = theta_0 x + theta_1."""

    def design(x):
        x = np.asarray(x, dtype=float)
        phi = np.stack([x, np.ones_like(x)], axis=-1)
        return phi, np.zeros_like(x)

    def drift(x, theta):
        x = np.asarray(x, dtype=float)
        return theta[0] * x + theta[1]

    return Model(
        dim_x=1,
        dim_b=1,
        dim_theta=2,
        drift=drift,
        diffusion=_unit_diffusion,
        drift_jacobian_theta=lambda x, theta: design(x)[0],
        theta_box=tuple(tuple(map(float, r)) for r in theta_box),
        theta_star=tuple(map(float, theta_star)),
        x0=(float(x0),),
        drift_design=design,
        name="linear-affine",
    )


def pure_noise_model(x0=0.0) -> Model:
    """Scalar model with b = 0 and a = 1; a dummy parameter keeps the box non-empty."""

    def design(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (1,)), np.zeros_like(x)

    return Model(
        dim_x=1,
        dim_b=1,
        dim_theta=1,
        drift=lambda x, theta: np.zeros_like(np.asarray(x, dtype=float)),
        diffusion=_unit_diffusion,
        drift_jacobian_theta=lambda x, theta: design(x)[0],
        theta_box=((-1.0, 1.0),),
        theta_star=(0.0,),
        x0=(float(x0),),
        drift_design=design,
        name="pure-noise",
    )


MODELS = {
    "linear-affine": linear_affine_model,
    "pure-noise": pure_noise_model,
}


def build_model(name: str, theta_star=None, x0=None) -> Model:
    try:
        factory = MODELS[name]
    except KeyError:
        raise DomainError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    model = factory()
    if theta_star is not None:
        model = model.with_theta(theta_star)
    if x0 is not None:
        model = model.with_x0(x0)
    return model


@dataclass(frozen=True)
class SimConfig:
    epsilon: float
    alpha: float
    T: float
    n_fine: int
    seed: int = 0

    def __post_init__(self):
        FractionalKernelParams(self.alpha)
        if not (0.0 <= self.epsilon <= 1.0):
            raise DomainError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise DomainError(f"T must be positive, got {self.T}")
        if int(self.n_fine) != self.n_fine or self.n_fine < 2:
            raise DomainError(f"n_fine must be an integer >= 2, got {self.n_fine}")

    @property
    def delta(self) -> float:
        return self.T / self.n_fine

    @property
    def params(self) -> FractionalKernelParams:
        return FractionalKernelParams(self.alpha)


@dataclass
class SimulatedPath:
    times: np.ndarray  # (n_fine + 1,)
    x: np.ndarray  # (n_fine + 1, d)
    dB: np.ndarray  # (n_fine, r)
    z_oracle: np.ndarray  # (n_fine + 1, d)
    epsilon: float = 0.0
    alpha: float = 0.8

    @property
    def delta(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_fine(self) -> int:
        return self.times.size - 1

    def to_csv(self, fh) -> None:
        """Write ``t,x_1..x_d,z_1..z_d``, one row per fine-grid node."""
        d = self.x.shape[1]
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"x_{i + 1}" for i in range(d)] + [f"z_{i + 1}" for i in range(d)])
        for t, xr, zr in zip(self.times, self.x, self.z_oracle):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in xr] + [repr(float(v)) for v in zr])


def replication_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream for ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class PathBatch:
    """Replications simulated together; rows of ``failed_at`` are -1 for good paths."""

    times: np.ndarray
    x: np.ndarray  # (R, n + 1, d)
    dB: np.ndarray  # (R, n, r)
    z_oracle: np.ndarray  # (R, n + 1, d)
    failed_at: np.ndarray  # (R,)

    @property
    def ok(self) -> np.ndarray:
        return self.failed_at < 0

    def path(self, i: int, epsilon=0.0, alpha=0.8) -> SimulatedPath:
        return SimulatedPath(self.times, self.x[i], self.dB[i], self.z_oracle[i], epsilon, alpha)


def simulate_batch(model: Model, cfg: SimConfig, dB: Optional[np.ndarray] = None) -> PathBatch:
    """Run the scheme for every row of a Brownian-increment array.

    Parameters
    ----------
    model : Model
    cfg : SimConfig
        ``cfg.seed`` is ignored here; increments are supplied by the caller.
    dB : ndarray, shape (R, n_fine, r), optional
        Brownian increments with variance ``delta``.  ``None`` means a single
        noiseless replication (no random numbers consumed).

    Diverged replications are flagged in ``failed_at`` and their remaining
    values set to NaN instead of raising.
    """
    n = int(cfg.n_fine)
    delta = cfg.delta
    d, r = model.dim_x, model.dim_b
    if dB is None:
        dB = np.zeros((1, n, r))
    dB = np.asarray(dB, dtype=float)
    if dB.ndim != 3 or dB.shape[1:] != (n, r):
        raise InputError(f"dB must have shape (R, {n}, {r}), got {dB.shape}")
    R = dB.shape[0]
    theta = model.theta
    eps = float(cfg.epsilon)
    w_rev = drift_weights(cfg.params, delta, n)[::-1].copy()

    x = np.empty((R, d, n + 1))
    x[:, :, 0] = model.x0_array
    # forcing G_j = b(X_j) + eps a(X_j) dB_j / delta, stored component-major for the dot products
    G = np.zeros((R, d, n))
    G2 = G.reshape(R * d, n)
    failed_at = np.full(R, -1, dtype=np.int64)
    alive = np.ones(R, dtype=bool)
    noisy = eps != 0.0
    for i in range(n):
        xi = x[:, :, i]
        g = np.asarray(model.drift(xi, theta), dtype=float).reshape(R, d)
        if noisy:
            a = np.asarray(model.diffusion(xi), dtype=float).reshape(R, d, r)
            g = g + (eps / delta) * np.einsum("kdr,kr->kd", a, dB[:, i, :])
        G[:, :, i] = g
        xn = model.x0_array + (G2[:, : i + 1] @ w_rev[n - i - 1 :]).reshape(R, d)
        bad = alive & ~(np.all(np.isfinite(xn), axis=1) & np.all(np.abs(xn) <= DIVERGENCE_BOUND, axis=1))
        if bad.any():
            failed_at[bad] = i + 1
            alive &= ~bad
            xn[bad] = np.nan
            G[bad] = 0.0
        x[:, :, i + 1] = xn

    z = np.zeros((R, d, n + 1))
    np.cumsum(G * delta, axis=2, out=z[:, :, 1:])
    z[~alive] = np.nan
    times = np.arange(n + 1) * delta
    return PathBatch(times, x.transpose(0, 2, 1), dB, z.transpose(0, 2, 1), failed_at)


def draw_increments(rngs: Sequence[np.random.Generator], n: int, r: int, delta: float) -> np.ndarray:
    return np.stack([rng.standard_normal((n, r)) for rng in rngs]) * math.sqrt(delta)


def simulate(model: Model, cfg: SimConfig) -> SimulatedPath:
    """One path of X^eps with its coupled oracle Z^eps, seeded by ``cfg.seed``."""
    dB = draw_increments([replication_rng(cfg.seed)], cfg.n_fine, model.dim_b, cfg.delta)
    batch = simulate_batch(model, cfg, dB)
    if batch.failed_at[0] >= 0:
        raise SimulationDivergedError(batch.failed_at[0])
    return batch.path(0, cfg.epsilon, cfg.alpha)


def simulate_deterministic(model: Model, cfg: SimConfig) -> SimulatedPath:
    """The noiseless path X^0 on the fine grid; no random numbers are drawn."""
    zero = SimConfig(0.0, cfg.alpha, cfg.T, cfg.n_fine, cfg.seed)
    batch = simulate_batch(model, zero, None)
    if batch.failed_at[0] >= 0:
        raise SimulationDivergedError(batch.failed_at[0])
    return batch.path(0, 0.0, cfg.alpha)


def empirical_increment_moments(paths: Sequence[SimulatedPath], p: float, lag: float) -> float:
    """Monte Carlo estimate of E|X_{t+lag} - X_t|^p, averaged over t and paths."""
    if len(paths) == 0:
        raise InputError("no paths supplied")
    delta = paths[0].delta
    steps = lag / delta
    m = int(round(steps))
    if m < 1 or abs(steps - m) > 1e-9 * max(1.0, steps):
        raise DomainError(f"lag {lag} is not a positive multiple of the fine step {delta}")
    acc = []
    for path in paths:
        if m >= path.n_fine + 1:
            raise DomainError(f"lag {lag} exceeds the path horizon")
        inc = path.x[m:] - path.x[:-m]
        acc.append(np.mean(np.linalg.norm(inc, axis=1) ** p))
    return float(np.mean(acc))
