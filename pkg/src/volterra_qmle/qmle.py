"""Quasi-likelihood contrast for the drift parameter and its minimisation.

Reconstructed increments over blocks of length ``delta = k h`` are compared
with ``delta * b(X_{j delta}, theta)``; the weighted sum of squared residuals is
minimised over the parameter box.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import lsq_linear, minimize

from .errors import (
    ContractError,
    DomainError,
    FisherSingularError,
    InputError,
    RankDeficiencyError,
    WeightError,
)
from .invert import ReconstructedPath, SampledObservation
from .sim import Model, SimulatedPath

log = logging.getLogger(__name__)

COND_LIMIT = 1e12
FISHER_COND_LIMIT = 1e10


@dataclass(frozen=True)
class Weight:
    """Contrast weight H(x): identity or (a a^T + lam I)^-1, times ``scale``."""

    kind: str = "identity"
    lam: float = 1e-12
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "inverse-diffusion"):
            raise DomainError(f"unknown weight {self.kind!r}")
        if self.lam < 0:
            raise DomainError("regulariser must be non-negative")
        if not self.scale > 0:
            raise DomainError("weight scale must be positive")

    @classmethod
    def identity(cls, scale=1.0):
        return cls("identity", scale=scale)

    @classmethod
    def inverse_diffusion(cls, lam=1e-12, scale=1.0):
        return cls("inverse-diffusion", lam=lam, scale=scale)

    def matrices(self, model: Model, x: np.ndarray) -> np.ndarray:
        """H at each row of ``x`` (shape ``(m, d)``), returned as ``(m, d, d)``."""
        x = np.asarray(x, dtype=float)
        m, d = x.shape
        if self.kind == "identity":
            return np.broadcast_to(self.scale * np.eye(d), (m, d, d)).copy()
        a = np.asarray(model.diffusion(x), dtype=float).reshape(m, d, model.dim_b)
        aat = a @ a.transpose(0, 2, 1) + self.lam * np.eye(d)
        try:
            np.linalg.cholesky(aat)
        except np.linalg.LinAlgError:
            raise WeightError("a a^T + lam I is not positive definite; increase lam") from None
        return self.scale * np.linalg.inv(aat)


@dataclass(frozen=True)
class NelderMeadSettings:
    max_iter: int = 4000
    tolerance: float = 1e-10
    n_starts: int = 5

    def __post_init__(self):
        if self.max_iter < 100 or not self.tolerance > 0 or self.n_starts < 1:
            raise DomainError("Nelder-Mead needs max_iter >= 100, tolerance > 0, n_starts >= 1")


@dataclass(frozen=True)
class ContrastConfig:
    k: int = 1
    weight: Weight = field(default_factory=Weight)
    minimizer: str = "closed-form"
    nelder_mead: NelderMeadSettings = field(default_factory=NelderMeadSettings)
    theta_box: Optional[tuple] = None  # defaults to the model's box

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise DomainError(f"k must be a positive integer, got {self.k}")
        if self.minimizer not in ("closed-form", "nelder-mead"):
            raise DomainError(f"unknown minimizer {self.minimizer!r}")

    def box(self, model: Model) -> np.ndarray:
        return model.box if self.theta_box is None else np.asarray(self.theta_box, dtype=float)


@dataclass
class BlockData:
    """Reconstructed Z and observed X on the block grid ``j * delta``, j = 0..N."""

    delta: float
    z: np.ndarray  # (N + 1, d)
    x: np.ndarray  # (N + 1, d)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        # 1-D input means a scalar state
        if self.z.ndim == 1:
            self.z = self.z[:, None]
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        if self.z.shape != self.x.shape or self.z.shape[0] < 2:
            raise InputError(f"block arrays must share shape (N+1, d) with N >= 1, got {self.z.shape} and {self.x.shape}")

    @property
    def n_blocks(self) -> int:
        return self.z.shape[0] - 1

    @classmethod
    def from_reconstruction(cls, recon: ReconstructedPath, obs: SampledObservation) -> "BlockData":
        idx = np.round(recon.query_times / obs.h).astype(int)
        expected = np.arange(idx.size) * recon.k
        if not np.array_equal(idx, expected):
            raise InputError("reconstruction must cover the full block grid from t = 0")
        return cls(recon.delta, recon.z_values, obs.x_samples[idx])


@dataclass
class EstimationResult:
    theta_hat: np.ndarray
    contrast_value: float
    n_blocks: int
    converged: bool
    method: str
    diagnostics: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theta_hat": [float(v) for v in self.theta_hat],
            "contrast": float(self.contrast_value),
            "n_blocks": int(self.n_blocks),
            "converged": bool(self.converged),
            "method": self.method,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = [f"theta_{i + 1}" for i in range(len(self.theta_hat))]
        writer.writerow(names + ["contrast", "n_blocks", "converged"])
        writer.writerow([repr(float(v)) for v in self.theta_hat] + [repr(float(self.contrast_value)), self.n_blocks, int(self.converged)])
        return buf.getvalue()


@dataclass
class FisherInfo:
    I: np.ndarray
    I_inv: np.ndarray
    used_weight: Weight
    efficient: bool  # H a a^T = Id along X^0, so I^-1 is the limit covariance


def residuals(data: BlockData, model: Model, theta) -> np.ndarray:
    """All block residuals Xi_j, shape ``(N, d)``."""
    theta = np.asarray(theta, dtype=float)
    x = data.x[:-1]
    b = np.asarray(model.drift(x, theta), dtype=float).reshape(x.shape)
    return np.diff(data.z, axis=0) - data.delta * b


def xi_block(data: BlockData, model: Model, j: int, theta) -> np.ndarray:
    """Z^(h)_{(j+1) delta} - Z^(h)_{j delta} - delta * b(X_{j delta}, theta)."""
    if not (0 <= j < data.n_blocks):
        raise DomainError(f"block index {j} outside 0..{data.n_blocks - 1}")
    theta = np.asarray(theta, dtype=float)
    b = np.asarray(model.drift(data.x[j][None, :], theta), dtype=float).reshape(-1)
    return data.z[j + 1] - data.z[j] - data.delta * b


def _check_in_box(theta, box, slack=1e-12):
    theta = np.asarray(theta, dtype=float)
    width = np.maximum(box[:, 1] - box[:, 0], 1.0)
    if np.any(theta < box[:, 0] - slack * width) or np.any(theta > box[:, 1] + slack * width):
        raise DomainError(f"theta {tuple(theta)} lies outside the parameter box")


def _contrast(data, model, theta, H):
    xi = residuals(data, model, theta)
    return float(np.einsum("ji,jik,jk->", xi, H, xi))


def contrast(data: BlockData, model: Model, theta, cfg: ContrastConfig) -> float:
    """Sum over blocks of Xi_j^T H(X_{j delta}) Xi_j."""
    _check_in_box(theta, cfg.box(model))
    H = cfg.weight.matrices(model, data.x[:-1])
    return _contrast(data, model, theta, H)


def normal_equations(data: BlockData, model: Model, H: np.ndarray):
    """Weighted normal matrix and right-hand side for a drift linear in theta."""
    if model.drift_design is None:
        raise ContractError("closed form needs a drift declared linear in theta")
    x = data.x[:-1]
    N, d = x.shape
    Phi, phi0 = model.drift_design(x)
    Phi = np.asarray(Phi, dtype=float).reshape(N, d, model.dim_theta)
    phi0 = np.asarray(phi0, dtype=float).reshape(N, d)
    dz = np.diff(data.z, axis=0)
    PtH = Phi.transpose(0, 2, 1) @ H
    A = data.delta * np.sum(PtH @ Phi, axis=0)
    rhs = np.sum(PtH @ (dz - data.delta * phi0)[:, :, None], axis=0)[:, 0]
    return A, rhs, Phi, phi0


def _closed_form(data, model, box, H):
    A, rhs, Phi, phi0 = normal_equations(data, model, H)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise RankDeficiencyError(cond)
    theta = np.linalg.solve(A, rhs)
    if np.all(theta >= box[:, 0]) and np.all(theta <= box[:, 1]):
        return theta, "closed-form"
    # constrained optimum of the quadratic: bounded least squares on the whitened residuals
    Lt = np.linalg.cholesky(H).transpose(0, 2, 1)
    dz = np.diff(data.z, axis=0)
    design = (Lt @ (data.delta * Phi)).reshape(-1, model.dim_theta)
    target = (Lt @ (dz - data.delta * phi0)[:, :, None]).reshape(-1)
    sol = lsq_linear(design, target, bounds=(box[:, 0], box[:, 1]), method="bvls", tol=1e-14)
    return np.clip(sol.x, box[:, 0], box[:, 1]), "closed-form-bounded"


def _starts(box: np.ndarray, n_starts: int) -> list:
    centre = box.mean(axis=1)
    starts = [centre]
    for corner in itertools.product(*[(lo, hi) for lo, hi in box]):
        if len(starts) >= n_starts:
            break
        starts.append(np.array(corner, dtype=float))
    return starts


def _simplex(x0, box, frac=0.1):
    centre = box.mean(axis=1)
    width = box[:, 1] - box[:, 0]
    verts = [x0]
    for i in range(x0.size):
        v = x0.copy()
        step = frac * (width[i] if width[i] > 0 else 1.0)
        v[i] += step if x0[i] <= centre[i] else -step
        verts.append(v)
    return np.array(verts)


def _nelder_mead(fun, box, settings: NelderMeadSettings):
    bounds = list(map(tuple, box))
    width = np.maximum(box[:, 1] - box[:, 0], 1e-300)
    runs = []
    for start in _starts(box, settings.n_starts):
        x = np.clip(start, box[:, 0], box[:, 1])
        frac = 0.1
        fx = fun(x)
        converged = False
        nfev = 0
        # restart from the incumbent with a shrinking simplex until no progress
        for _ in range(8):
            res = minimize(
                fun,
                x,
                method="Nelder-Mead",
                bounds=bounds,
                options={
                    "initial_simplex": np.clip(_simplex(x, box, frac), box[:, 0], box[:, 1]),
                    "xatol": settings.tolerance,
                    "fatol": 1e-16,
                    "maxiter": settings.max_iter,
                    "maxfev": 4 * settings.max_iter,
                },
            )
            nfev += res.nfev
            moved = np.max(np.abs(res.x - x) / width)
            improved = res.fun < fx
            if improved:
                x, fx = np.clip(res.x, box[:, 0], box[:, 1]), float(res.fun)
            converged = bool(res.success)
            if not improved or moved <= settings.tolerance:
                break
            frac = max(min(10 * moved, 0.1), 1e-6)
        runs.append({"start": start.tolist(), "theta": x, "value": fx, "converged": converged, "nfev": nfev})
    return runs


def estimate(data: BlockData, model: Model, cfg: ContrastConfig) -> EstimationResult:
    """Minimise the contrast over the parameter box."""
    box = cfg.box(model)
    H = cfg.weight.matrices(model, data.x[:-1])
    if cfg.minimizer == "closed-form":
        theta, method = _closed_form(data, model, box, H)
        value = _contrast(data, model, theta, H)
        return EstimationResult(theta, value, data.n_blocks, True, method)

    centre = box.mean(axis=1)
    scale = _contrast(data, model, centre, H)
    scale = scale if scale > 0 and np.isfinite(scale) else 1.0

    def fun(theta):
        return _contrast(data, model, np.clip(theta, box[:, 0], box[:, 1]), H) / scale

    runs = _nelder_mead(fun, box, cfg.nelder_mead)
    best = min(r["value"] for r in runs)
    tied = [r for r in runs if r["value"] - best <= 1e-12 * max(1.0, abs(best))]
    pick = min(tied, key=lambda r: tuple(r["theta"]))
    theta = np.clip(pick["theta"], box[:, 0], box[:, 1])
    diagnostics = [{**r, "theta": [float(v) for v in r["theta"]], "value": r["value"] * scale} for r in runs]
    if not pick["converged"]:
        log.warning("Nelder-Mead did not report convergence; returning best point")
    return EstimationResult(theta, _contrast(data, model, theta, H), data.n_blocks, pick["converged"], "nelder-mead", diagnostics)


def fisher_info(x0_path: SimulatedPath, model: Model, theta_star=None, weight: Weight = Weight()) -> FisherInfo:
    """Information matrix: integral over [0, T] of db/dtheta^T H db/dtheta along X^0.

    Trapezoidal rule on the path's own grid, which must have at least 2^12 nodes.
    """
    if x0_path.times.size < 2**12:
        raise DomainError("fisher_info needs a deterministic path with at least 4096 nodes")
    theta = model.theta if theta_star is None else np.asarray(theta_star, dtype=float)
    x = x0_path.x
    m, d = x.shape
    jac = np.asarray(model.drift_jacobian_theta(x, theta), dtype=float).reshape(m, d, model.dim_theta)
    H = weight.matrices(model, x)
    integrand = jac.transpose(0, 2, 1) @ H @ jac
    info = np.trapezoid(integrand, x0_path.times, axis=0)
    info = 0.5 * (info + info.T)
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond >= FISHER_COND_LIMIT:
        raise FisherSingularError(f"information matrix is not invertible (condition number {cond:.3e})")
    a = np.asarray(model.diffusion(x), dtype=float).reshape(m, d, model.dim_b)
    efficient = bool(np.allclose(H @ (a @ a.transpose(0, 2, 1)), np.eye(d), rtol=1e-6, atol=1e-9))
    return FisherInfo(info, np.linalg.inv(info), weight, efficient)


def asymptotic_std(info: FisherInfo, epsilon: Optional[float] = None) -> np.ndarray:
    """Square roots of diag(I^-1): the limit std of (theta_hat - theta*) / epsilon.

    With ``epsilon`` given the raw-scale std (times epsilon) is returned.
    """
    if not info.efficient:
        raise ContractError("I^-1 is the limit covariance only when H = (a a^T)^-1 along X^0")
    std = np.sqrt(np.diag(info.I_inv))
    return std if epsilon is None else epsilon * std
