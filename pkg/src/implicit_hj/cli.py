"""Command line front end: ``hjsolve train|march|eval|oracle|table``.

Run configs are YAML mappings::

    problem: burgers-d1
    net: {depth: 5, width: 64, beta: 100}   # center: box shifts inputs to the box midpoint
    train: {epochs: 20000, batch_size: 1000, seed: 0}
    march: {dt: 0.1}          # state-dependent problems
    eval: {grid_points: 201, times: 11}
    problem_options: {norm_eps: 1.0e-2}
    out: runs/burgers

Exit codes: 0 success, 2 configuration error, 3 training aborted,
4 oracle not applicable.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .network import (
    CheckpointError,
    CheckpointMeta,
    MlpParams,
    NetworkConfig,
    load_checkpoint,
    network,
    save_checkpoint,
)
from .oracle import GridSpec, UnsupportedOracle, hopf_lax_eval, lax_friedrichs_solve
from .problems import ProblemSpec, UnknownProblem, get_problem
from .timemarch import MarchAborted, MarchConfig, MarchConfigError, load_march, march
from .trainer import EvalSpec, NoOracleError, TrainConfig, TrainingDiverged, evaluate_mse, train

log = logging.getLogger("hjsolve")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_ORACLE = 0, 2, 3, 4
METRIC_KEYS = ("problem", "d", "seed", "epochs", "final_loss", "mse", "rmse", "sec_per_epoch", "param_count")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str
    dim: Optional[int] = None
    net: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    march: Optional[dict] = None
    eval: dict = field(default_factory=dict)
    problem_options: dict = field(default_factory=dict)
    out: str = "runs/out"

    def resolve_problem(self) -> ProblemSpec:
        try:
            spec = get_problem(self.problem, **self.problem_options)
        except UnknownProblem:
            raise ConfigError(f"problem: unknown id {self.problem!r}") from None
        except TypeError as exc:
            raise ConfigError(f"problem_options: {exc}") from None
        if self.dim is not None and self.dim != spec.dim:
            raise ConfigError(f"dim: {self.dim} does not match {self.problem} (d={spec.dim})")
        return spec

    def check_march(self, problem: ProblemSpec) -> None:
        """A march section goes with state-dependent problems, or with ``march.force``."""
        if problem.state_dependent and self.march is None:
            raise ConfigError(f"march: {problem.id} is state dependent and needs a march section")
        if self.march is not None and not problem.state_dependent and not self.march.get("force", False):
            raise ConfigError(f"march: {problem.id} is state independent (set march.force to run anyway)")

    def network_config(self, problem: ProblemSpec) -> NetworkConfig:
        body = {**self.net, "dim": problem.dim}
        if body.get("center") == "box":
            body["center"] = tuple(0.5 * (a + b) for a, b in zip(problem.lower, problem.upper))
        return _build(NetworkConfig, body, "net")

    def train_config(self) -> TrainConfig:
        return _build(TrainConfig, self.train, "train")

    def eval_spec(self) -> EvalSpec:
        return _build(EvalSpec, self.eval, "eval")

    def march_config(self) -> MarchConfig:
        body = dict(self.march or {})
        body.pop("force", None)
        if "dt" not in body:
            raise ConfigError("march.dt is required")
        return _build(MarchConfig, {**body, "train": self.train_config()}, "march")


def _build(cls, body: dict, section: str):
    if not isinstance(body, dict):
        raise ConfigError(f"{section}: expected a mapping")
    known = {f.name for f in fields(cls)}
    for key in body:
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown key")
    if "adam_betas" in body:
        body = {**body, "adam_betas": tuple(body["adam_betas"])}
    try:
        return cls(**body)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def load_config(path, seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if "problem" not in raw:
        raise ConfigError("problem: missing")
    cfg = _build(RunConfig, raw, "config")
    if seed is not None:
        cfg.train = {**cfg.train, "seed": seed}
    if out is not None:
        cfg.out = out
    return cfg


def _metrics(problem: ProblemSpec, seed, epochs, final_loss, mse, rmse, sec, params: MlpParams) -> dict:
    return {
        "problem": problem.id,
        "d": problem.dim,
        "seed": seed,
        "epochs": int(epochs),
        "final_loss": float(final_loss),
        "mse": mse,
        "rmse": rmse,
        "sec_per_epoch": float(sec),
        "param_count": params.config.param_count,
    }


def _try_mse(model, problem, spec):
    try:
        return evaluate_mse(model, problem, spec)
    except NoOracleError:
        log.warning("no exact solution for %s; MSE skipped", problem.id)
        return None, None


def _write_json(path: Path, body: dict) -> None:
    path.write_text(json.dumps(body, indent=2, sort_keys=False) + "\n")


# ------------------------------------------------------------- commands

def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    problem = cfg.resolve_problem()
    cfg.check_march(problem)
    if cfg.march is not None:
        raise ConfigError("march: config has a march section; use the march command")
    net = cfg.network_config(problem)
    tcfg = cfg.train_config()
    spec = cfg.eval_spec()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        report = train(problem, net, tcfg, log_path=out / "train_log.csv")
    except TrainingDiverged as exc:
        meta = CheckpointMeta(exc.epoch - 1, float("nan"), tcfg.seed, problem.id)
        save_checkpoint(exc.report.params, meta, out / "last_good.hjin")
        log.error("%s; last finite parameters in %s", exc, out / "last_good.hjin")
        return EXIT_ABORT
    meta = CheckpointMeta(report.epochs_run, report.final_loss, tcfg.seed, problem.id)
    save_checkpoint(report.params, meta, out / "model.hjin")
    mse, rmse = _try_mse(report.params, problem, spec)
    body = _metrics(problem, tcfg.seed, report.epochs_run, report.final_loss, mse, rmse,
                    report.sec_per_epoch, report.params)
    _write_json(out / "metrics.json", body)
    print(json.dumps(body))
    return EXIT_OK


def cmd_march(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    problem = cfg.resolve_problem()
    if cfg.march is None:
        raise ConfigError("march: section missing")
    cfg.check_march(problem)
    mcfg = cfg.march_config()
    try:
        mcfg.steps(problem.horizon if mcfg.horizon is None else mcfg.horizon)
    except MarchConfigError as exc:
        raise ConfigError(f"march.dt: {exc}") from None
    net = cfg.network_config(problem)
    out = Path(cfg.out)
    try:
        result = march(problem, net, mcfg, out_dir=out, log_dir=out)
    except MarchAborted as exc:
        log.error("%s; %d interval checkpoints kept", exc, len(exc.partial.checkpoints))
        return EXIT_ABORT
    mse, rmse = _try_mse(result.solution, problem, cfg.eval_spec())
    wall = [w for r in result.reports for w in r.wall_ms]
    body = _metrics(problem, mcfg.train.seed, result.epochs, result.reports[-1].final_loss, mse, rmse,
                    float(np.mean(wall)) / 1000.0 if wall else 0.0, result.solution.networks[-1])
    _write_json(out / "metrics.json", body)
    (out / "seams.json").write_text(json.dumps(
        {"seam_gaps": result.seam_gaps, "residual_rms": result.residual_rms}, indent=2) + "\n")
    print(json.dumps(body))
    return EXIT_OK


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse numbers from {text!r}") from None


def write_slices(model, problem: ProblemSpec, times, nodes: int, out: Path) -> list[Path]:
    """One CSV per time over a tensor grid of the box (``x,y,t,u`` in 2-D)."""
    if problem.dim > 2:
        raise ConfigError("slices are available for d <= 2")
    axes = [np.linspace(a, b, nodes) for a, b in zip(problem.lower, problem.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    names = ["x", "y"][: problem.dim]
    paths = []
    for t in times:
        u = model(pts, np.full(pts.shape[0], t))
        path = out / f"slice_t{t:g}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names + ["t", "u"])
            for row, v in zip(pts, u):
                w.writerow([repr(float(c)) for c in row] + [repr(float(t)), repr(float(v))])
        paths.append(path)
    return paths


def zero_level_set(model, problem: ProblemSpec, t: float, nodes: int) -> np.ndarray:
    """Points where a 2-D field changes sign, linearly interpolated along grid edges."""
    if problem.dim != 2:
        raise ConfigError("zero level sets are extracted for d = 2")
    xs = np.linspace(problem.lower[0], problem.upper[0], nodes)
    ys = np.linspace(problem.lower[1], problem.upper[1], nodes)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    u = np.asarray(model(pts, np.full(pts.shape[0], t))).reshape(nodes, nodes)
    found = []
    for axis in (0, 1):
        a = u[:-1, :] if axis == 0 else u[:, :-1]
        b = u[1:, :] if axis == 0 else u[:, 1:]
        i, j = np.nonzero((a == 0) | (a * b < 0))
        w = a[i, j] / np.where(a[i, j] == b[i, j], 1.0, a[i, j] - b[i, j])
        px = gx[i, j] + (w * (xs[1] - xs[0]) if axis == 0 else 0.0)
        py = gy[i, j] + (w * (ys[1] - ys[0]) if axis == 1 else 0.0)
        found.append(np.stack([px, py], axis=1))
    return np.concatenate(found)


def write_zero_level_sets(model, problem: ProblemSpec, times, nodes: int, out: Path) -> list[Path]:
    paths = []
    for t in times:
        path = out / f"zero_level_t{t:g}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "t"])
            for px, py in zero_level_set(model, problem, t, nodes):
                w.writerow([repr(float(px)), repr(float(py)), repr(float(t))])
        paths.append(path)
    return paths


def cmd_eval(args) -> int:
    try:
        problem = get_problem(args.problem)
    except UnknownProblem:
        raise ConfigError(f"problem: unknown id {args.problem!r}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = Path(args.checkpoint)
    try:
        if path.is_dir():
            model = load_march(path, problem)
            first = model.networks[0]
            dims = {n.config.dim for n in model.networks}
        else:
            params, meta = load_checkpoint(path)
            first = params
            dims = {params.config.dim}
            model = lambda x, t: network(params, x, t)  # noqa: E731
    except (CheckpointError, MarchConfigError, OSError) as exc:
        raise ConfigError(f"checkpoint: {exc}") from None
    if dims != {problem.dim}:
        raise ConfigError(f"checkpoint dimension {sorted(dims)} does not match {problem.id} (d={problem.dim})")
    spec = EvalSpec(grid_points=args.eval_grid)
    mse, rmse = _try_mse(model, problem, spec)
    times = _parse_floats(args.times) if args.times else [0.0, problem.horizon]
    if problem.dim <= 2:
        write_slices(model, problem, times, args.grid, out)
    if args.zero_level:
        write_zero_level_sets(model, problem, times, args.grid, out)
    body = {"problem": problem.id, "d": problem.dim, "mse": mse, "rmse": rmse,
            "param_count": first.config.param_count}
    _write_json(out / "eval.json", body)
    print(json.dumps(body))
    return EXIT_OK


def cmd_oracle(args) -> int:
    try:
        problem = get_problem(args.problem)
    except UnknownProblem:
        raise ConfigError(f"problem: unknown id {args.problem!r}") from None
    if args.point is not None:
        x = np.array(_parse_floats(args.point))
        if x.size != problem.dim:
            raise ConfigError(f"point has {x.size} coordinates, {problem.id} needs {problem.dim}")
        value = hopf_lax_eval(problem, x[None, :], np.array([args.time]))[0]
        print(repr(float(value)))
        return EXIT_OK
    if problem.dim > 2:
        raise UnsupportedOracle(f"grid oracle covers d <= 2, {problem.id} has d={problem.dim}")
    times = _parse_floats(args.times) if args.times else [0.0, problem.horizon]
    sol = lax_friedrichs_solve(problem, GridSpec([args.grid] * problem.dim, times))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sol.to_csv(out / "grid.csv")
    print(str(out / "grid.csv"))
    return EXIT_OK


def _table_rows(args) -> list[dict]:
    rows = []
    if args.metrics:
        for p in args.metrics:
            rows.append(json.loads(Path(p).read_text()))
        return rows
    problems = [s for s in args.problems.split(",") if s]
    dims = [int(v) for v in args.dims.split(",") if v]
    out = Path(args.out)
    for pid in problems:
        for d in dims:
            try:
                problem = get_problem(f"{pid}-d{d}")
            except UnknownProblem:
                raise ConfigError(f"problem: unknown id {pid}-d{d}") from None
            tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, seed=args.seed)
            report = train(problem, NetworkConfig(dim=d), tcfg)
            mse, rmse = _try_mse(report.params, problem, EvalSpec())
            row = _metrics(problem, args.seed, report.epochs_run, report.final_loss, mse, rmse,
                           report.sec_per_epoch, report.params)
            row["peak_mb"] = report.peak_bytes / 2 ** 20
            run = out / problem.id
            run.mkdir(parents=True, exist_ok=True)
            _write_json(run / "metrics.json", {k: row[k] for k in METRIC_KEYS})
            rows.append(row)
    return rows


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.3g}" if abs(v) >= 1e-3 else f"{v:.2E}"
    return str(v)


def render_table(rows: list[dict]) -> str:
    """Problems as rows and dimensions as columns, holding MSE; the last two
    rows give the mean seconds per epoch and the peak memory per dimension."""
    dims = sorted({r["d"] for r in rows})
    families = []
    for r in rows:
        fam = r["problem"].rsplit("-d", 1)[0]
        if fam not in families:
            families.append(fam)

    def at(fam, d):
        hit = [r for r in rows if r["problem"].rsplit("-d", 1)[0] == fam and r["d"] == d]
        return hit[0] if hit else {}

    lines = ["| problem | " + " | ".join(f"d={d}" for d in dims) + " |", "|---" * (1 + len(dims)) + "|"]
    for fam in families:
        lines.append(f"| {fam} | " + " | ".join(_fmt(at(fam, d).get("mse")) for d in dims) + " |")
    for label, key, scale in (("time (s) per epoch", "sec_per_epoch", 1.0), ("memory (MB)", "peak_mb", 1.0)):
        cells = []
        for d in dims:
            vals = [r[key] * scale for r in rows if r["d"] == d and r.get(key) is not None]
            cells.append(_fmt(float(np.mean(vals))) if vals else "-")
        lines.append(f"| {label} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def cmd_table(args) -> int:
    rows = _table_rows(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.md").write_text(render_table(rows))
    keys = list(METRIC_KEYS) + sorted({k for r in rows for k in r} - set(METRIC_KEYS))
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow(r)
    print((out / "table.md").read_text(), end="")
    return EXIT_OK


# ----------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hjsolve", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, fn in (("train", cmd_train), ("march", cmd_march)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.set_defaults(func=fn)

    p = sub.add_parser("eval")
    p.add_argument("--checkpoint", required=True, help="checkpoint file or march run directory")
    p.add_argument("--problem", required=True)
    p.add_argument("--times", help="comma-separated slice times")
    p.add_argument("--grid", type=int, default=101, help="slice nodes per axis")
    p.add_argument("--eval-grid", type=int, default=201)
    p.add_argument("--zero-level", action="store_true", help="also export zero level set points (d = 2)")
    p.add_argument("--out", default="eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle")
    p.add_argument("--problem", required=True)
    p.add_argument("--point", help="comma-separated coordinates for a Hopf-Lax value")
    p.add_argument("--time", type=float, default=1.0)
    p.add_argument("--grid", type=int, default=201, help="Lax-Friedrichs nodes per axis")
    p.add_argument("--times")
    p.add_argument("--out", default="oracle")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("table")
    p.add_argument("--problems", default="burgers,concave,collision")
    p.add_argument("--dims", default="1,10")
    p.add_argument("--epochs", type=int, default=20_000)
    p.add_argument("--batch", type=int, default=1_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metrics", nargs="*", help="aggregate existing metrics.json files instead of training")
    p.add_argument("--out", default="table")
    p.set_defaults(func=cmd_table)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnsupportedOracle as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE


if __name__ == "__main__":
    sys.exit(main())
