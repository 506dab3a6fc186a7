"""Monte Carlo engine: replicate simulate -> invert -> estimate and aggregate.

Random streams are keyed by ``(master_seed, epsilon, replication)`` so a
cell's statistics depend neither on the order of cells nor on how
replications are spread over threads.  Replications run in fixed-size chunks;
chunk results are concatenated in replication order.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CellError, DomainError, InputError, RegressionError, VolterraError
from .invert import inversion_matrix
from .kernel import FractionalKernelParams, GridGeometry, inversion_weights
from .qmle import BlockData, ContrastConfig, EstimationResult, Weight, estimate
from .sim import Model, SimConfig, build_model, draw_increments, replication_rng, simulate_batch

log = logging.getLogger(__name__)

CHUNK = 250
ACCEPT_FRACTION = 0.99


def float_key(x: float) -> int:
    """Stable integer key for a float (its IEEE-754 bit pattern)."""
    return int(np.float64(x).view(np.uint64))


@dataclass
class ExperimentGrid:
    alpha: float = 0.8
    T: float = 1.0
    h: float = 1e-2
    epsilon_list: tuple = (0.1, 0.05, 0.01)
    k_list: tuple = (20, 10, 5, 2, 1)
    n_rep: int = 1000
    master_seed: int = 0
    model: str = "linear-affine"
    theta_star: tuple = (-1.0, 1.0)
    x0: float = 0.0
    weight: str = "identity"
    lam: float = 1e-12
    n_fine_per_h: int = 1
    sampling: str = "left"

    def __post_init__(self):
        FractionalKernelParams(self.alpha)
        self.epsilon_list = tuple(float(e) for e in np.atleast_1d(self.epsilon_list))
        self.k_list = tuple(int(k) for k in np.atleast_1d(self.k_list))
        self.theta_star = tuple(float(v) for v in np.atleast_1d(self.theta_star))
        if self.n_rep < 2:
            raise DomainError("n_rep must be at least 2")
        if self.n_fine_per_h < 1:
            raise DomainError("n_fine_per_h must be at least 1")
        geom = GridGeometry(self.h, self.T)
        if any(k < 1 or k * self.h > self.T * (1 + 1e-12) for k in self.k_list):
            raise DomainError("every k must satisfy 1 <= k and k*h <= T")
        if any(not (0.0 <= e <= 1.0) for e in self.epsilon_list):
            raise DomainError("epsilon values must lie in [0, 1]")
        if self.sampling not in ("left", "right"):
            raise DomainError("sampling must be 'left' or 'right'")
        self.n_obs = geom.n

    def build_model(self) -> Model:
        return build_model(self.model, self.theta_star, self.x0)

    def weight_spec(self) -> Weight:
        return Weight(self.weight, lam=self.lam)

    def resolved(self) -> dict:
        """Configuration plus derived quantities, for logging."""
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["n_obs"] = self.n_obs
        out["n_fine"] = self.n_obs * self.n_fine_per_h
        out["delta_by_k"] = {k: k * self.h for k in self.k_list}
        out["N_by_k"] = {k: self.n_obs // k for k in self.k_list}
        return out


@dataclass
class CellStats:
    alpha: float
    T: float
    h: float
    epsilon: float
    k: int
    delta: float
    mean: np.ndarray
    rescaled_std: np.ndarray
    n_effective: int
    n_rep: int = 0
    accepted: bool = True
    rmse: float = float("nan")


def _as_theta(res) -> np.ndarray:
    if isinstance(res, EstimationResult):
        return np.asarray(res.theta_hat, dtype=float)
    return np.asarray(res, dtype=float)


def _run_chunk(grid: ExperimentGrid, model: Model, eps: float, reps: range, ks: Sequence[int], estimator, matrices):
    n_obs = grid.n_obs
    stride = grid.n_fine_per_h
    n_fine = n_obs * stride
    cfg = SimConfig(eps, grid.alpha, n_obs * grid.h, n_fine)
    rngs = [replication_rng(grid.master_seed, float_key(eps), r) for r in reps]
    dB = draw_increments(rngs, n_fine, model.dim_b, cfg.delta)
    batch = simulate_batch(model, cfg, dB)
    x_obs = batch.x[:, ::stride]
    centred = x_obs - model.x0_array
    out = {}
    for k in ks:
        cc = ContrastConfig(k=k, weight=grid.weight_spec())
        delta = k * grid.h
        zb = np.einsum("rjd,jm->rmd", centred, matrices[k], optimize=True)
        thetas = np.full((len(reps), model.dim_theta), np.nan)
        for i in range(len(reps)):
            if not batch.ok[i]:
                continue
            data = BlockData(delta, zb[i], x_obs[i, ::k][: zb.shape[1]])
            try:
                thetas[i] = _as_theta(estimator(data, model, cc))
            except (VolterraError, np.linalg.LinAlgError) as exc:
                log.debug("replication %d failed: %s", reps[i], exc)
        out[k] = thetas
    return out


def _run_epsilon(grid: ExperimentGrid, eps: float, ks: Sequence[int], estimator=None, threads: int = 1):
    """theta_hat for every replication and every k at one noise level."""
    model = grid.build_model()
    estimator = estimator or estimate
    matrices = {k: inversion_matrix(grid.n_obs, k, grid.h, grid.alpha, grid.sampling) for k in ks}
    chunks = [range(s, min(s + CHUNK, grid.n_rep)) for s in range(0, grid.n_rep, CHUNK)]
    workers = os.cpu_count() or 1 if threads == 0 else max(1, threads)

    def job(reps):
        res = _run_chunk(grid, model, eps, reps, ks, estimator, matrices)
        log.info("epsilon=%g: replications %d-%d done", eps, reps.start, reps.stop - 1)
        return res

    if workers == 1:
        parts = [job(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, chunks))
    return {k: np.concatenate([p[k] for p in parts]) for k in ks}


def _cell(grid: ExperimentGrid, eps: float, k: int, thetas: np.ndarray, theta_star) -> CellStats:
    good = np.all(np.isfinite(thetas), axis=1)
    n_eff = int(good.sum())
    if n_eff == 0:
        raise CellError(f"all {grid.n_rep} replications failed in cell epsilon={eps}, k={k}")
    t = thetas[good]
    mean = np.mean(t, axis=0)
    std = np.std(t, axis=0, ddof=1) if n_eff > 1 else np.zeros(t.shape[1])
    rstd = std / eps if eps > 0 else np.full_like(std, np.nan)
    rmse = float(np.sqrt(np.mean(np.sum((t - theta_star) ** 2, axis=1))))
    return CellStats(
        grid.alpha, grid.T, grid.h, eps, k, k * grid.h, mean, rstd, n_eff, grid.n_rep,
        n_eff >= ACCEPT_FRACTION * grid.n_rep, rmse,
    )


def run_table(grid: ExperimentGrid, threads: int = 1, estimator: Optional[Callable] = None) -> list:
    """Statistics for every (k, epsilon) cell; rows follow ``k_list``, columns ``epsilon_list``."""
    log.info("experiment grid: %s", grid.resolved())
    theta_star = np.asarray(grid.theta_star)
    by_eps = {eps: _run_epsilon(grid, eps, grid.k_list, estimator, threads) for eps in grid.epsilon_list}
    table = []
    for k in grid.k_list:
        table.append([_cell(grid, eps, k, by_eps[eps][k], theta_star) for eps in grid.epsilon_list])
    return table


@dataclass
class RateStudy:
    x: np.ndarray
    errors: np.ndarray
    slope: float
    intercept: float = 0.0

    def to_csv(self, label: str = "h") -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([label, "error", "fitted_slope"])
        for x, e in zip(self.x, self.errors):
            writer.writerow([repr(float(x)), repr(float(e)), repr(float(self.slope))])
        return buf.getvalue()


def loglog_slope(x, y) -> tuple[float, float]:
    """Least-squares slope and intercept of log y against log x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if keep.sum() < 3:
        raise RegressionError(f"need at least 3 positive finite points, have {int(keep.sum())}")
    slope, intercept = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(slope), float(intercept)


def rate_reconstruction(
    alpha: float,
    T: float,
    h_list: Sequence[float],
    epsilon: float,
    n_rep: int,
    seed: int,
    model: Optional[Model] = None,
    n_fine_per_h: int = 1,
    threads: int = 1,
) -> RateStudy:
    """Slope of log mean|Z^(h)_T - Z_T| against log h, with Z from the coupled oracle."""
    h_list = [float(h) for h in h_list]
    if len(h_list) < 5:
        raise DomainError("rate study needs at least 5 step sizes")
    model = model or build_model("linear-affine")
    p = FractionalKernelParams(alpha)
    errors = []
    for h in h_list:
        n = GridGeometry(h, T).n
        cfg = SimConfig(epsilon, alpha, n * h, n * n_fine_per_h)
        c = inversion_weights(p, h, n)[::-1]

        def job(reps, h=h, cfg=cfg, c=c):
            rngs = [replication_rng(seed, float_key(h), r) for r in reps]
            dB = draw_increments(rngs, cfg.n_fine, model.dim_b, cfg.delta) if epsilon > 0 else None
            batch = simulate_batch(model, cfg, dB)
            x = batch.x[:, ::n_fine_per_h]
            zh = np.einsum("rjd,j->rd", x[:, :n] - model.x0_array, c)
            gap = np.linalg.norm(zh - batch.z_oracle[:, -1], axis=1)
            return gap[batch.ok]

        reps_all = range(n_rep) if epsilon > 0 else range(1)
        chunks = [range(s, min(s + CHUNK, reps_all.stop)) for s in range(0, reps_all.stop, CHUNK)]
        workers = os.cpu_count() or 1 if threads == 0 else max(1, threads)
        if workers == 1:
            gaps = [job(c_) for c_ in chunks]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                gaps = list(pool.map(job, chunks))
        gaps = np.concatenate(gaps)
        errors.append(float(np.mean(gaps)) if gaps.size else float("nan"))
        log.info("h=%g: mean |Z^(h)_T - Z_T| = %.6g", h, errors[-1])
    slope, intercept = loglog_slope(h_list, errors)
    return RateStudy(np.array(h_list), np.array(errors), slope, intercept)


def rate_estimator(grid: ExperimentGrid, threads: int = 1, estimator: Optional[Callable] = None) -> RateStudy:
    """Slope of log RMSE(theta_hat) against log epsilon.

    ``grid.epsilon_list`` and ``grid.k_list`` are paired one to one: the k
    used at each noise level.
    """
    if len(grid.epsilon_list) < 3:
        raise RegressionError("rate_estimator needs at least 3 noise levels")
    if len(grid.k_list) != len(grid.epsilon_list):
        raise DomainError("k_list must pair one k with each epsilon")
    log.info("experiment grid: %s", grid.resolved())
    theta_star = np.asarray(grid.theta_star)
    rmse = []
    for eps, k in zip(grid.epsilon_list, grid.k_list):
        thetas = _run_epsilon(grid, eps, [k], estimator, threads)[k]
        rmse.append(_cell(grid, eps, k, thetas, theta_star).rmse)
    slope, intercept = loglog_slope(grid.epsilon_list, rmse)
    return RateStudy(np.array(grid.epsilon_list), np.array(rmse), slope, intercept)


def _fraction_label(x: float) -> str:
    fr = Fraction(x).limit_denominator(100000)
    if abs(float(fr) - x) > 1e-12 * max(1.0, abs(x)):
        return f"{x:g}"
    return f"{fr.numerator}/{fr.denominator}" if fr.denominator != 1 else str(fr.numerator)


def _pair(v, digits=2) -> str:
    return "(" + ", ".join(f"{float(a):.{digits}f}" for a in v) + ")"


def emit_table(cells, fmt: str = "csv") -> str:
    """Render cells as CSV or as a markdown table (rows delta/(k), columns epsilon)."""
    flat = [c for row in cells for c in row] if cells and isinstance(cells[0], list) else list(cells)
    if not flat:
        raise InputError("no cells to emit")
    d = len(flat[0].mean)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["alpha", "T", "h", "epsilon", "k", "delta"]
            + [f"mean_{i + 1}" for i in range(d)]
            + [f"rstd_{i + 1}" for i in range(d)]
            + ["n_effective"]
        )
        for c in flat:
            writer.writerow(
                [repr(float(v)) for v in (c.alpha, c.T, c.h, c.epsilon)]
                + [c.k, repr(float(c.delta))]
                + [repr(float(v)) for v in c.mean]
                + [repr(float(v)) for v in c.rescaled_std]
                + [c.n_effective]
            )
        return buf.getvalue()
    if fmt != "markdown":
        raise DomainError(f"unknown table format {fmt!r}")
    eps_order = list(dict.fromkeys(c.epsilon for c in flat))
    k_order = list(dict.fromkeys(c.k for c in flat))
    lookup = {(c.k, c.epsilon): c for c in flat}
    lines = [
        "| delta (k) | | " + " | ".join(f"eps={_fraction_label(e)}" for e in eps_order) + " |",
        "|---|---|" + "---|" * len(eps_order),
    ]
    for k in k_order:
        any_cell = next(c for c in flat if c.k == k)
        label = f"{_fraction_label(any_cell.delta)} (k={k})"
        means = [(_pair(lookup[(k, e)].mean) if (k, e) in lookup else "") for e in eps_order]
        stds = [(_pair(lookup[(k, e)].rescaled_std) if (k, e) in lookup else "") for e in eps_order]
        lines.append(f"| {label} | mean | " + " | ".join(means) + " |")
        lines.append("| | resc. std. | " + " | ".join(stds) + " |")
    return "\n".join(lines) + "\n"


def read_table_csv(text: str) -> list:
    """Parse the CSV written by :func:`emit_table` back into cells."""
    reader = csv.DictReader(io.StringIO(text))
    cells = []
    for row in reader:
        d = sum(1 for key in row if key.startswith("mean_"))
        cells.append(
            CellStats(
                float(row["alpha"]), float(row["T"]), float(row["h"]), float(row["epsilon"]),
                int(row["k"]), float(row["delta"]),
                np.array([float(row[f"mean_{i + 1}"]) for i in range(d)]),
                np.array([float(row[f"rstd_{i + 1}"]) for i in range(d)]),
                int(row["n_effective"]),
            )
        )
    return cells


# config keys accepted in experiment files and the kind of value each takes
CONFIG_KEYS = {
    "alpha": "real",
    "T": "real",
    "h": "real",
    "epsilon_list": "reals",
    "k_list": "integers",
    "n_rep": "integer",
    "master_seed": "integer",
    "model": "string",
    "theta_star": "reals",
    "x0": "real",
    "weight": "string",
    "lam": "real",
    "n_fine_per_h": "integer",
    "sampling": "string",
    # single-run subcommands
    "epsilon": "real",
    "k": "integer",
    "minimizer": "string",
}


def _parse_number(text: str) -> float:
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment.  Fractions like 1/100 are allowed."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise InputError(f"config line {lineno}: unknown key {key!r}")
        kind = CONFIG_KEYS[key]
        try:
            if kind == "real":
                out[key] = _parse_number(value)
            elif kind == "reals":
                out[key] = tuple(_parse_number(v) for v in value.split(",") if v.strip())
            elif kind == "integer":
                out[key] = int(value)
            elif kind == "integers":
                out[key] = tuple(int(v) for v in value.split(",") if v.strip())
            else:
                out[key] = value
        except (ValueError, ZeroDivisionError):
            raise InputError(f"config line {lineno}: bad value {value!r} for {key}") from None
    return out
