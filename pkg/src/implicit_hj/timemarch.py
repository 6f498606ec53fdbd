"""Sequential training over short time intervals for state-dependent Hamiltonians.

On interval k the network u^k(x, tau), tau in [0, dt], satisfies

    u^k - tau p.dH(x, p) + tau H(x, p) = u^{k-1}(x - tau dH(x, p), dt),  p = grad u^k,

with u^0 = g. Interval k starts from the parameters of interval k-1.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import NumericalError
from .loss import boundary_loss, implicit_residual, sample_collocation
from .network import (
    CheckpointMeta,
    MlpParams,
    NetworkConfig,
    init_network,
    load_checkpoint,
    network,
    network_jet,
    save_checkpoint,
)
from .problems import ProblemSpec
from .trainer import TrainConfig, TrainingDiverged, optimize

MANIFEST = "manifest.json"


class MarchConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MarchConfig:
    dt: float
    train: TrainConfig = TrainConfig(epochs=2_000)
    horizon: Optional[float] = None  # defaults to the problem horizon
    boundary: bool = True  # apply the boundary penalty on every interval
    seam_points: int = 2_000

    def __post_init__(self):
        if not self.dt > 0:
            raise MarchConfigError("dt must be positive")

    def steps(self, horizon: float) -> int:
        n = int(round(horizon / self.dt))
        if n < 1 or abs(n * self.dt - horizon) > 1e-12:
            raise MarchConfigError(f"dt={self.dt} does not divide the horizon {horizon}")
        return n


def initial_evaluator(problem: ProblemSpec) -> Callable:
    """u^0 = g; ignores the time argument."""
    return lambda y, s: problem.g(y)


def frozen_evaluator(params: MlpParams) -> Callable:
    """Evaluate a fixed network; differentiable with respect to the points only."""
    return lambda y, s: network(params, y, np.full(ad.value_of(y).shape[0], float(s)))


def step_residuals(live: MlpParams, prev: Callable, problem: ProblemSpec, x, tau, dt: float):
    """Batched marching residual on one interval."""
    x = np.asarray(x, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    u, p, _ = network_jet(live, x, tau)
    s = implicit_residual(problem, x, tau, u, p, prev, initial_time=dt)
    v = ad.value_of(s)
    if not np.all(np.isfinite(v)):
        bad = int(np.flatnonzero(~np.isfinite(v))[0])
        raise NumericalError(f"non-finite marching residual at x={x[bad]}, tau={tau[bad]}")
    return s


def residual_step(live: MlpParams, prev: Callable, problem: ProblemSpec, x, tau: float, dt: float) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float(ad.value_of(step_residuals(live, prev, problem, x[None, :], np.array([float(tau)]), dt))[0])


@dataclass
class MarchSolution:
    """Piecewise-in-time field built from the per-interval networks."""

    problem: ProblemSpec
    dt: float
    networks: list  # MlpParams for k = 1..N

    @property
    def steps(self) -> int:
        return len(self.networks)

    def locate(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Global times -> (1-based interval index, local time).

        A time on an interval boundary belongs to the later interval (local
        time 0), except the final horizon which stays in the last interval.
        """
        t = np.asarray(t, dtype=np.float64)
        q = t / self.dt
        r = np.round(q)
        q = np.where(np.abs(q - r) < 1e-9, r, q)
        k = np.clip(np.floor(q).astype(int) + 1, 1, self.steps)
        tau = t - (k - 1) * self.dt
        return k, tau

    def __call__(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        k, tau = self.locate(t)
        out = np.empty(x.shape[0])
        for j in np.unique(k):
            rows = k == j
            out[rows] = network(self.networks[j - 1], x[rows], tau[rows])
        return out


@dataclass
class MarchResult:
    solution: MarchSolution
    reports: list = field(default_factory=list)  # TrainReport per interval
    checkpoints: list = field(default_factory=list)  # paths, when written
    seam_gaps: list = field(default_factory=list)  # max |u^k(., 0) - u^{k-1}(., dt)|
    residual_rms: list = field(default_factory=list)  # on a fresh sample after training

    @property
    def epochs(self) -> int:
        return int(sum(r.epochs_run for r in self.reports))


class MarchAborted(RuntimeError):
    def __init__(self, step: int, partial: MarchResult, cause: Exception):
        super().__init__(f"interval {step} diverged: {cause}")
        self.step = step
        self.partial = partial


def _interval_seed(base: int, k: int) -> int:
    return base * 1_000 + k


def _seam_and_rms(problem, live, prev, dt, n, seed):
    rng = np.random.default_rng(seed)
    lo = np.asarray(problem.lower)
    hi = np.asarray(problem.upper)
    x = lo + (hi - lo) * rng.random((n, problem.dim))
    start = network(live, x, np.zeros(n))
    gap = float(np.max(np.abs(start - ad.value_of(prev(x, dt)))))
    tau = dt * rng.random(n)
    s = step_residuals(live, prev, problem, x, tau, dt)
    return gap, float(np.sqrt(np.mean(s * s)))


def march(
    problem: ProblemSpec,
    net_config: NetworkConfig,
    config: MarchConfig,
    out_dir=None,
    resume_step: int = 0,
    log_dir=None,
) -> MarchResult:
    """Train u^1..u^N in order, one checkpoint per interval.

    With ``resume_step = j > 0`` the run continues from ``out_dir/step_<j>.hjin``
    (and the earlier checkpoints), reproducing an uninterrupted run.
    """
    if net_config.dim != problem.dim:
        raise MarchConfigError(f"network dimension {net_config.dim} does not match {problem.id}")
    horizon = problem.horizon if config.horizon is None else config.horizon
    n = config.steps(horizon)
    dt = config.dt
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result = MarchResult(MarchSolution(problem, dt, []))

    params = init_network(net_config, config.train.seed)
    prev = initial_evaluator(problem)
    if resume_step:
        if out is None:
            raise MarchConfigError("resuming needs the checkpoint directory")
        for k in range(1, resume_step + 1):
            path = out / f"step_{k}.hjin"
            params, _ = load_checkpoint(path, expect=net_config)
            result.solution.networks.append(params)
            result.checkpoints.append(str(path))
        prev = frozen_evaluator(params)

    for k in range(resume_step + 1, n + 1):
        tcfg = replace(config.train, seed=_interval_seed(config.train.seed, k))
        use_boundary = config.boundary and problem.boundary != "none"

        def sample(rng):
            m_b = tcfg.boundary_batch if use_boundary else 0
            return sample_collocation(problem, tcfg.batch_size, m_b, rng, horizon=dt)

        def loss_fn(live, batch, prev=prev, shift=(k - 1) * dt):
            s = step_residuals(live, prev, problem, batch.x, batch.t, dt)
            loss = (s * s).mean()
            if use_boundary and tcfg.boundary_weight > 0 and batch.has_boundary:
                loss = loss + tcfg.boundary_weight * boundary_loss(live, problem, batch, time_shift=shift)
            return loss

        log_path = Path(log_dir) / f"step_{k}.csv" if log_dir is not None else None
        try:
            report = optimize(params, loss_fn, sample, tcfg, log_path=log_path)
        except TrainingDiverged as exc:
            result.reports.append(exc.report)
            raise MarchAborted(k, result, exc) from exc
        params = report.params
        gap, rms = _seam_and_rms(problem, params, prev, dt, config.seam_points, tcfg.seed)
        result.reports.append(report)
        result.seam_gaps.append(gap)
        result.residual_rms.append(rms)
        result.solution.networks.append(params)
        if out is not None:
            path = out / f"step_{k}.hjin"
            meta = CheckpointMeta(report.epochs_run, report.final_loss, tcfg.seed, problem.id)
            save_checkpoint(params, meta, path)
            result.checkpoints.append(str(path))
        prev = frozen_evaluator(params)

    if out is not None:
        write_manifest(out, problem.id, dt, n, result.checkpoints)
    return result


def write_manifest(out: Path, problem_id: str, dt: float, steps: int, checkpoints: list) -> Path:
    path = Path(out) / MANIFEST
    body = {
        "problem": problem_id,
        "dt": dt,
        "steps": steps,
        "horizon": steps * dt,
        "checkpoints": [Path(c).name for c in checkpoints],
    }
    path.write_text(json.dumps(body, indent=2) + "\n")
    return path


def load_march(run_dir, problem: ProblemSpec) -> MarchSolution:
    run = Path(run_dir)
    body = json.loads((run / MANIFEST).read_text())
    if body["problem"] != problem.id:
        raise MarchConfigError(f"manifest is for {body['problem']}, not {problem.id}")
    nets = [load_checkpoint(run / name)[0] for name in body["checkpoints"]]
    if len(nets) != body["steps"]:
        raise MarchConfigError("manifest lists fewer checkpoints than steps")
    return MarchSolution(problem, float(body["dt"]), nets)
