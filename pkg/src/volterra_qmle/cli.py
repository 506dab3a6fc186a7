"""Command-line front end.

Every subcommand writes CSV (or a markdown table for ``mc-table``) to
``--out``, standard output by default.  Settings resolve in the order
built-in default < ``--config`` file < explicit flag.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys

import numpy as np

from . import mc
from .errors import InputError, VolterraError
from .invert import SampledObservation, invert
from .kernel import FractionalKernelParams, GridGeometry, integral_bounds, resolvent_convolution
from .qmle import BlockData, ContrastConfig, Weight, estimate
from .sim import MODELS, SimConfig, build_model, simulate

log = logging.getLogger("volterra_qmle")

DEFAULTS = {
    "alpha": 0.8,
    "T": 1.0,
    "h": 1e-2,
    "epsilon": 0.01,
    "k": 1,
    "epsilon_list": (0.1, 0.05, 0.01),
    "k_list": (20, 10, 5, 2, 1),
    "n_rep": 1000,
    "seed": 0,
    "threads": 1,
    "model": "linear-affine",
    "theta_star": (-1.0, 1.0),
    "x0": 0.0,
    "weight": "identity",
    "lam": 1e-12,
    "n_fine_per_h": 1,
    "sampling": "left",
    "minimizer": "closed-form",
}


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return tuple(mc._parse_number(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _number(text):
    try:
        return mc._parse_number(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--threads", type=int, help="worker threads, 0 = all cores (default 1)")
    common.add_argument("--out", default="-", help="output file (default standard output)")
    common.add_argument("--config", help="key = value experiment file")
    common.add_argument("--quiet", action="store_true", help="log warnings only")

    def model_flags(p):
        p.add_argument("--alpha", type=_number)
        p.add_argument("--T", type=_number, help="horizon")
        p.add_argument("--h", type=_number, help="observation step")
        p.add_argument("--model", choices=sorted(MODELS))
        p.add_argument("--theta-star", dest="theta_star", type=_floats)
        p.add_argument("--x0", type=_number)
        p.add_argument("--n-fine-per-h", dest="n_fine_per_h", type=int)

    def contrast_flags(p):
        p.add_argument("--weight", choices=("identity", "inverse-diffusion"))
        p.add_argument("--lam", type=_number)
        p.add_argument("--sampling", choices=("left", "right"))

    parser = argparse.ArgumentParser(prog="volterra-qmle", description="Rough Volterra SDE simulation, inversion and drift estimation.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("simulate", parents=[common], help="simulate one path; CSV t,x..,z..")
    model_flags(p)
    p.add_argument("--epsilon", type=_number)

    p = sub.add_parser("invert", parents=[common], help="reconstruct Z from observations; CSV t,z..")
    p.add_argument("--input", required=True, help="observation CSV t,x_1..x_d")
    p.add_argument("--alpha", type=_number)
    p.add_argument("--k", type=int)
    p.add_argument("--x0", type=_number, help="initial value (default first sample)")
    p.add_argument("--sampling", choices=("left", "right"))

    p = sub.add_parser("estimate", parents=[common], help="estimate theta; simulates a path when --input is absent")
    p.add_argument("--input", help="observation CSV t,x_1..x_d")
    model_flags(p)
    contrast_flags(p)
    p.add_argument("--epsilon", type=_number)
    p.add_argument("--k", type=int)
    p.add_argument("--minimizer", choices=("closed-form", "nelder-mead"))
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    def grid_flags(p):
        model_flags(p)
        contrast_flags(p)
        p.add_argument("--epsilon-list", dest="epsilon_list", type=_floats)
        p.add_argument("--k-list", dest="k_list", type=_ints)
        p.add_argument("--n-rep", dest="n_rep", type=int)

    p = sub.add_parser("mc-table", parents=[common], help="Monte Carlo table of theta_hat mean and rescaled std")
    grid_flags(p)
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")

    p = sub.add_parser("rate-recon", parents=[common], help="log-log slope of the reconstruction error in h")
    p.add_argument("--alpha", type=_number)
    p.add_argument("--T", type=_number)
    p.add_argument("--epsilon", type=_number)
    p.add_argument("--h-max", dest="h_max", type=_number, default=2.0**-6)
    p.add_argument("--h-min", dest="h_min", type=_number, default=2.0**-11)
    p.add_argument("--n-rep", dest="n_rep", type=int)
    p.add_argument("--model", choices=sorted(MODELS))
    p.add_argument("--theta-star", dest="theta_star", type=_floats)
    p.add_argument("--x0", type=_number)
    p.add_argument("--n-fine-per-h", dest="n_fine_per_h", type=int)

    p = sub.add_parser("rate-est", parents=[common], help="log-log slope of the estimator RMSE in epsilon")
    grid_flags(p)

    p = sub.add_parser("kernel-check", parents=[common], help="L1/L2 norms of g_h - 1 over a halving sweep of h")
    p.add_argument("--alpha", type=_number)
    p.add_argument("--t", type=_number, default=1.0)
    p.add_argument("--h-max", dest="h_max", type=_number, default=2.0**-4)
    p.add_argument("--h-min", dest="h_min", type=_number, default=2.0**-10)
    p.add_argument("--n-quad", dest="n_quad", type=int, default=2**15)
    return parser


def _resolve(args: argparse.Namespace) -> dict:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        try:
            from_file = mc.parse_config(text)
        except InputError as exc:
            raise UsageError(f"malformed config {args.config}: {exc}") from None
        if "master_seed" in from_file:
            from_file["seed"] = from_file.pop("master_seed")
        cfg.update(from_file)
    explicit = set(from_file) if args.config else set()
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config"):
            cfg[key] = value
            explicit.add(key)
    cfg["explicit"] = explicit
    return cfg


@contextlib.contextmanager
def _output(path: str, inputs=()):
    if path == "-":
        yield sys.stdout
        return
    for src in inputs:
        if src and os.path.exists(path) and os.path.samefile(path, src):
            raise InputError(f"refusing to overwrite input file {src}")
    with open(path, "w", newline="") as fh:
        yield fh


def _model(cfg):
    return build_model(cfg["model"], cfg["theta_star"], cfg["x0"])


def _grid(cfg) -> mc.ExperimentGrid:
    return mc.ExperimentGrid(
        alpha=cfg["alpha"], T=cfg["T"], h=cfg["h"], epsilon_list=cfg["epsilon_list"], k_list=cfg["k_list"],
        n_rep=cfg["n_rep"], master_seed=cfg["seed"], model=cfg["model"], theta_star=cfg["theta_star"],
        x0=cfg["x0"], weight=cfg["weight"], lam=cfg["lam"], n_fine_per_h=cfg["n_fine_per_h"],
        sampling=cfg["sampling"],
    )


def _log_config(cfg, **derived):
    shown = {k: v for k, v in cfg.items() if k not in ("quiet", "out", "explicit")}
    shown.update(derived)
    log.info("resolved configuration: %s", shown)


def _sim_config(cfg) -> SimConfig:
    geom = GridGeometry(cfg["h"], cfg["T"])
    n_fine = geom.n * cfg["n_fine_per_h"]
    return SimConfig(cfg["epsilon"], cfg["alpha"], geom.n * cfg["h"], n_fine, cfg["seed"])


def cmd_simulate(cfg):
    sim_cfg = _sim_config(cfg)
    _log_config(cfg, n_fine=sim_cfg.n_fine, fine_step=sim_cfg.delta)
    path = simulate(_model(cfg), sim_cfg)
    with _output(cfg["out"]) as fh:
        path.to_csv(fh)


def cmd_invert(cfg):
    FractionalKernelParams(cfg["alpha"])
    try:
        with open(cfg["input"]) as fh:
            obs = SampledObservation.read_csv(fh)
    except OSError as exc:
        raise InputError(f"cannot read observations: {exc}") from None
    if "x0" in cfg["explicit"]:
        obs.x0 = np.full(obs.dim, float(cfg["x0"]))
    k = cfg["k"]
    _log_config(cfg, h=obs.h, n=obs.n, delta=k * obs.h, N=obs.n // max(k, 1))
    recon = invert(obs, cfg["alpha"], k=k, sampling=cfg["sampling"])
    with _output(cfg["out"], [cfg["input"]]) as fh:
        recon.to_csv(fh)


def cmd_estimate(cfg):
    FractionalKernelParams(cfg["alpha"])
    model = _model(cfg)
    if cfg.get("input"):
        try:
            with open(cfg["input"]) as fh:
                obs = SampledObservation.read_csv(fh)
        except OSError as exc:
            raise InputError(f"cannot read observations: {exc}") from None
        if "x0" in cfg["explicit"]:
            obs.x0 = model.x0_array
    else:
        sim_cfg = _sim_config(cfg)
        path = simulate(model, sim_cfg)
        obs = SampledObservation.from_path(path, cfg["n_fine_per_h"])
    k = cfg["k"]
    _log_config(cfg, n=obs.n, delta=k * obs.h, N=obs.n // max(k, 1))
    recon = invert(obs, cfg["alpha"], k=k, sampling=cfg["sampling"])
    data = BlockData.from_reconstruction(recon, obs)
    result = estimate(data, model, ContrastConfig(k=k, weight=Weight(cfg["weight"], lam=cfg["lam"]), minimizer=cfg["minimizer"]))
    with _output(cfg["out"], [cfg.get("input")]) as fh:
        fh.write(result.to_json() + "\n" if cfg.get("format") == "json" else result.to_csv())


def cmd_mc_table(cfg):
    grid = _grid(cfg)
    _log_config(cfg, **{k: v for k, v in grid.resolved().items() if k in ("n_obs", "n_fine", "delta_by_k", "N_by_k")})
    table = mc.run_table(grid, threads=cfg["threads"])
    rejected = [c for row in table for c in row if not c.accepted]
    for c in rejected:
        log.warning("cell epsilon=%g k=%d: only %d of %d replications usable", c.epsilon, c.k, c.n_effective, c.n_rep)
    with _output(cfg["out"]) as fh:
        fh.write(mc.emit_table(table, cfg.get("format", "markdown")))


def _halving(h_max, h_min):
    if not (0 < h_min <= h_max):
        raise InputError("need 0 < h-min <= h-max")
    out = []
    h = h_max
    while h >= h_min * (1 - 1e-12):
        out.append(h)
        h /= 2.0
    return out


def cmd_rate_recon(cfg):
    FractionalKernelParams(cfg["alpha"])
    h_list = _halving(cfg["h_max"], cfg["h_min"])
    _log_config(cfg, h_list=h_list, n_list=[GridGeometry(h, cfg["T"]).n * cfg["n_fine_per_h"] for h in h_list])
    study = mc.rate_reconstruction(
        cfg["alpha"], cfg["T"], h_list, cfg["epsilon"], cfg["n_rep"], cfg["seed"],
        model=_model(cfg), n_fine_per_h=cfg["n_fine_per_h"], threads=cfg["threads"],
    )
    log.info("fitted slope %.4f", study.slope)
    with _output(cfg["out"]) as fh:
        fh.write(study.to_csv("h"))


def cmd_rate_est(cfg):
    grid = _grid(cfg)
    _log_config(cfg, **{k: v for k, v in grid.resolved().items() if k in ("n_obs", "n_fine", "delta_by_k", "N_by_k")})
    study = mc.rate_estimator(grid, threads=cfg["threads"])
    log.info("fitted slope %.4f", study.slope)
    with _output(cfg["out"]) as fh:
        fh.write(study.to_csv("epsilon"))


def cmd_kernel_check(cfg):
    p = FractionalKernelParams(cfg["alpha"])
    h_list = _halving(cfg["h_max"], cfg["h_min"])
    t = cfg["t"]
    _log_config(cfg, h_list=h_list)
    log.info("(L*K)(%g) = %.12f", t, resolvent_convolution(t, p))
    rows = []
    for h in h_list:
        l1, l2 = integral_bounds(t, GridGeometry(h, t), p, n_quad=cfg["n_quad"])
        rows.append((h, l1, l2, l1 / h**p.alpha, l2 / h))
    with _output(cfg["out"]) as fh:
        fh.write("h,l1,l2,l1/h^alpha,l2/h\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


COMMANDS = {
    "simulate": cmd_simulate,
    "invert": cmd_invert,
    "estimate": cmd_estimate,
    "mc-table": cmd_mc_table,
    "rate-recon": cmd_rate_recon,
    "rate-est": cmd_rate_est,
    "kernel-check": cmd_kernel_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
    try:
        cfg = _resolve(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"volterra-qmle: error: {exc}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](cfg)
    except (VolterraError, ValueError) as exc:
        print(f"volterra-qmle: {type(exc).__name__}: {exc}".splitlines()[0], file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
