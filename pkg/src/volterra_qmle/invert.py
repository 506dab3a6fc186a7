"""Discrete inversion of the fractional kernel.

Given samples X_{jh}, the sampled path is held constant on each cell and
convolved with the resolvent L.  Because the path is piecewise constant the
convolution is an exact finite sum:

    Z^(h)_t = sum_{j h < t} (X_{jh} - x0) * [(t - jh)^(1-a) - (t - min((j+1)h, t))^(1-a)] / Gamma(2-a)
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import AlignmentError, DomainError, InputError
from .kernel import as_params, cell_right_ends, inversion_weights
from .sim import SimulatedPath

SAMPLINGS = ("left", "right")


@dataclass
class SampledObservation:
    """Samples of X on the grid ``j h``, ``j = 0..n``."""

    h: float
    times: np.ndarray
    x_samples: np.ndarray  # (n + 1, d)
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        x = np.asarray(self.x_samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        self.x_samples = x
        if self.times.ndim != 1 or self.times.size < 2 or x.shape[0] != self.times.size:
            raise InputError("need at least two samples with matching times")
        if not self.h > 0:
            raise InputError(f"sampling step must be positive, got {self.h}")
        steps = np.diff(self.times)
        if np.any(np.abs(steps - self.h) > 1e-9 * self.h):
            raise InputError("sample times are not equally spaced with step h")
        # x0 defaults to the first sample
        self.x0 = x[0].copy() if self.x0 is None else np.atleast_1d(np.asarray(self.x0, dtype=float))

    @property
    def n(self) -> int:
        return self.times.size - 1

    @property
    def dim(self) -> int:
        return self.x_samples.shape[1]

    @classmethod
    def from_path(cls, path: SimulatedPath, stride: int = 1) -> "SampledObservation":
        """Read observations off a fine-grid path every ``stride`` fine steps."""
        if stride < 1:
            raise DomainError("stride must be a positive integer")
        return cls(path.delta * stride, path.times[::stride], path.x[::stride], path.x[0])

    @classmethod
    def read_csv(cls, fh) -> "SampledObservation":
        """Parse ``t,x_1..x_d``; the step is inferred from the first two rows."""
        reader = csv.reader(row for row in fh if row.strip() and not row.lstrip().startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise InputError("empty observation file") from None
        if not header or header[0].strip() != "t" or len(header) < 2:
            raise InputError("observation header must read t,x_1,...,x_d")
        try:
            rows = np.array([[float(v) for v in row[: len(header)]] for row in reader])
        except ValueError as exc:
            raise InputError(f"non-numeric observation value: {exc}") from None
        if rows.ndim != 2 or rows.shape[0] < 2 or rows.shape[1] != len(header):
            raise InputError("observation file needs at least two complete rows")
        return cls(float(rows[1, 0] - rows[0, 0]), rows[:, 0], rows[:, 1:])

    def to_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"x_{i + 1}" for i in range(self.dim)])
        for t, row in zip(self.times, self.x_samples):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


@dataclass
class ReconstructedPath:
    query_times: np.ndarray
    z_values: np.ndarray  # (len(query_times), d)
    k: int
    delta: float

    def to_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        d = self.z_values.shape[1]
        writer.writerow(["t"] + [f"z_{i + 1}" for i in range(d)])
        for t, row in zip(self.query_times, self.z_values):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def _coefficients(t: float, h: float, n: int, p) -> np.ndarray:
    """Weights of X_{jh} - x0, j = 0..J with J h < t, in the closed-form sum."""
    b = 1.0 - p.alpha
    m = round(t / h)
    if m >= 1 and abs(t - m * h) <= 1e-12 * max(1.0, t):
        # grid time up to rounding: stable lag form, lag m - j for j = 0..m-1
        return inversion_weights(p, h, m)[::-1]
    J = math.ceil(t / h) - 1
    while (J + 1) * h < t:
        J += 1
    while J >= 0 and J * h >= t:
        J -= 1
    J = min(J, n)
    if J < 0:
        return np.empty(0)
    left = np.arange(J + 1) * h
    right = cell_right_ends(left, h, t)
    return ((t - left) ** b - (t - right) ** b) / p.gamma_two_minus_alpha


def reconstruct_at(obs: SampledObservation, alpha, times, sampling: str = "left") -> np.ndarray:
    """Z^(h) at arbitrary times in [0, n h]; shape ``(len(times), d)``.

    Each value is an exactly rounded sum (``math.fsum``).  ``sampling="right"``
    holds X_{(j+1)h} on cell j instead of X_{jh}; it looks one step ahead and
    is kept as a diagnostic.
    """
    p = as_params(alpha)
    if sampling not in SAMPLINGS:
        raise DomainError(f"sampling must be one of {SAMPLINGS}")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    h, n = obs.h, obs.n
    horizon = n * h
    if np.any(times < 0) or np.any(times > horizon * (1 + 1e-12)):
        raise DomainError(f"query times must lie in [0, {horizon}]")
    centred = obs.x_samples - obs.x0
    shift = 1 if sampling == "right" else 0
    out = np.zeros((times.size, obs.dim))
    for qi, t in enumerate(times):
        c = _coefficients(min(t, horizon), h, n, p)
        if c.size == 0:
            continue
        block = centred[shift : shift + c.size]
        if block.shape[0] < c.size:
            raise DomainError("right sampling needs one sample beyond the query time")
        for comp in range(obs.dim):
            out[qi, comp] = math.fsum(c * block[:, comp])
    return out


def delta_grid(n: int, k: int, h: float) -> np.ndarray:
    N = n // k
    return np.arange(N + 1) * (k * h)


def invert(obs: SampledObservation, alpha, query_times=None, *, k: int = 1, sampling: str = "left") -> ReconstructedPath:
    """Reconstruct Z^(h) on the block grid ``j * k * h``.

    ``query_times`` defaults to the whole block grid up to ``n h`` and must
    otherwise be a subset of it.
    """
    if int(k) != k or k < 1:
        raise DomainError(f"k must be a positive integer, got {k}")
    k = int(k)
    delta = k * obs.h
    if query_times is None:
        query_times = delta_grid(obs.n, k, obs.h)
    query_times = np.atleast_1d(np.asarray(query_times, dtype=float))
    ratio = query_times / delta
    if np.any(np.abs(ratio - np.round(ratio)) > 1e-9 * np.maximum(1.0, ratio)):
        raise DomainError(f"query times must be multiples of delta = {delta}")
    z = reconstruct_at(obs, alpha, query_times, sampling=sampling)
    return ReconstructedPath(query_times, z, k, delta)


def inversion_matrix(n: int, k: int, h: float, alpha, sampling: str = "left") -> np.ndarray:
    """Matrix M with Z^(h)_{m k h} = sum_j (X_{jh} - x0) M[j, m] for m = 0..n//k."""
    p = as_params(alpha)
    N = n // k
    c = inversion_weights(p, h, max(n, 1))
    M = np.zeros((n + 1, N + 1))
    shift = 1 if sampling == "right" else 0
    for m in range(1, N + 1):
        t_idx = m * k
        # cell j = 0..t_idx-1 has lag t_idx - j
        rows = np.arange(t_idx) + shift
        keep = rows <= n
        M[rows[keep], m] = c[t_idx - 1 :: -1][: t_idx][keep]
    return M


def invert_batch(x: np.ndarray, x0, h: float, alpha, k: int = 1, sampling: str = "left") -> np.ndarray:
    """Block-grid reconstruction for many paths at once.

    ``x`` has shape ``(R, n + 1, d)``; returns ``(R, n // k + 1, d)``.
    """
    x = np.asarray(x, dtype=float)
    R, n1, d = x.shape
    M = inversion_matrix(n1 - 1, k, h, alpha, sampling)
    centred = x - np.asarray(x0, dtype=float)
    return np.einsum("rjd,jm->rmd", centred, M, optimize=True)


def reconstruction_error(recon: ReconstructedPath, oracle: SimulatedPath, p: float = 1.0) -> tuple[float, float]:
    """Sup and empirical L^p gap between Z^(h) and the oracle Z at the query times."""
    idx_f = recon.query_times / oracle.delta
    idx = np.round(idx_f).astype(int)
    if np.any(np.abs(idx_f - idx) > 1e-9 * np.maximum(1.0, idx_f)) or np.any(idx > oracle.n_fine) or np.any(idx < 0):
        raise AlignmentError("query times are not nodes of the oracle fine grid")
    gap = np.linalg.norm(recon.z_values - oracle.z_oracle[idx], axis=1)
    return float(np.max(gap)), float(np.mean(gap**p) ** (1.0 / p))
