"""Training loop: fresh collocation points every epoch, loss-triggered step decay."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import NumericalError, Tape
from .loss import CollocationBatch, sample_collocation, total_loss
from .network import MlpParams, NetworkConfig, init_network, network
from .problems import ProblemSpec


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20_000
    batch_size: int = 5_000  # interior points M
    boundary_batch: int = 200  # boundary points M_b
    lr: float = 1e-3
    decay: float = 0.99
    boundary_weight: float = 0.1
    seed: int = 0
    optimizer: str = "adam"  # "adam" or "gd"
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    log_every: int = 1
    eval_every: int = 0
    stop_loss: Optional[float] = None  # early stop once the epoch loss drops below

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.boundary_batch < 0:
            raise ValueError("boundary_batch must be non-negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.boundary_weight < 0:
            raise ValueError("boundary_weight must be non-negative")
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.log_every < 1:
            raise ValueError("log_every must be positive")


@dataclass
class TrainReport:
    params: MlpParams
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)  # step size used at each epoch
    wall_ms: list = field(default_factory=list)
    peak_bytes: int = 0  # tape values + optimizer state for one epoch
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.losses)

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")

    @property
    def sec_per_epoch(self) -> float:
        return float(np.mean(self.wall_ms)) / 1000.0 if self.wall_ms else 0.0

    def first_below(self, threshold: float) -> Optional[int]:
        """1-based epoch at which the loss first dropped below ``threshold``."""
        hits = np.flatnonzero(np.asarray(self.losses) < threshold)
        return int(hits[0]) + 1 if hits.size else None


class TrainingDiverged(RuntimeError):
    """Non-finite loss; ``report.params`` holds the last finite parameters."""

    def __init__(self, epoch: int, report: TrainReport, cause: str):
        super().__init__(f"training diverged at epoch {epoch}: {cause}")
        self.epoch = epoch
        self.report = report


class Adam:
    def __init__(self, size: int, betas=(0.9, 0.999), eps: float = 1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.k = 0

    def direction(self, g: np.ndarray) -> np.ndarray:
        self.k += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1 ** self.k)
        vhat = self.v / (1 - self.b2 ** self.k)
        return mhat / (np.sqrt(vhat) + self.eps)


def sampler_rng(seed: int) -> np.random.Generator:
    """Collocation stream, independent of the initialization stream."""
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])


def optimize(
    params: MlpParams,
    loss_fn: Callable[[MlpParams, CollocationBatch], object],
    sample: Callable[[np.random.Generator], CollocationBatch],
    config: TrainConfig,
    log_path=None,
    hook: Optional[Callable[[int, MlpParams], None]] = None,
) -> TrainReport:
    """Generic loop shared by single-shot training and each marching interval.

    ``loss_fn`` receives parameters living on a fresh tape and a batch, and
    returns the scalar loss Var. The step size is multiplied by ``decay``
    each time the epoch loss improves on the best loss seen so far.
    """
    cfg = params.config
    flat = params.flatten()
    rng = sampler_rng(config.seed)
    opt = Adam(flat.size, config.adam_betas, config.adam_eps) if config.optimizer == "adam" else None
    report = TrainReport(params=MlpParams.from_flat(cfg, flat.copy()))
    lr = config.lr
    best = np.inf
    writer = None
    handle = None
    if log_path is not None:
        handle = open(log_path, "w", newline="")
        writer = csv.writer(handle)
        writer.writerow(["epoch", "loss", "alpha", "wall_ms"])
    try:
        for epoch in range(1, config.epochs + 1):
            start = time.perf_counter()
            batch = sample(rng)
            tape = Tape()
            live = MlpParams.from_flat(cfg, flat).on_tape(tape)
            try:
                out = loss_fn(live, batch)
                value = float(ad.value_of(out))
                if not np.isfinite(value):
                    raise NumericalError(f"loss is {value}")
                grads = tape.backward(out)
            except NumericalError as exc:
                report.params = MlpParams.from_flat(cfg, flat.copy())
                raise TrainingDiverged(epoch, report, str(exc)) from exc
            g = np.concatenate([
                np.zeros(a.value.size) if grads[a.index] is None else np.ravel(grads[a.index])
                for a in live.arrays()
            ])
            if epoch == 1:
                state = 3 if opt is not None else 1
                report.peak_bytes = tape.nbytes() + state * flat.nbytes
            step = opt.direction(g) if opt is not None else g
            flat = flat - lr * step
            used = lr
            if value < best:
                best = value
                lr *= config.decay
            ms = 1000.0 * (time.perf_counter() - start)
            report.losses.append(value)
            report.lrs.append(used)
            report.wall_ms.append(ms)
            if writer is not None and (epoch % config.log_every == 0 or epoch == config.epochs):
                writer.writerow([epoch, repr(value), repr(used), f"{ms:.3f}"])
            if hook is not None and config.eval_every and epoch % config.eval_every == 0:
                hook(epoch, MlpParams.from_flat(cfg, flat.copy()))
            if config.stop_loss is not None and value < config.stop_loss:
                report.stopped_early = True
                break
    finally:
        if handle is not None:
            handle.close()
    report.params = MlpParams.from_flat(cfg, flat)
    return report


def train(
    problem: ProblemSpec,
    net_config: NetworkConfig,
    config: TrainConfig,
    init: Optional[MlpParams] = None,
    log_path=None,
    hook=None,
) -> TrainReport:
    """Fit the network to the implicit formula of a state-independent problem."""
    if net_config.dim != problem.dim:
        raise ValueError(f"network dimension {net_config.dim} does not match {problem.id} (d={problem.dim})")
    params = init if init is not None else init_network(net_config, config.seed)

    def sample(rng):
        return sample_collocation(problem, config.batch_size, config.boundary_batch, rng)

    def loss_fn(live, batch):
        return total_loss(live, problem, batch, config.boundary_weight)

    return optimize(params, loss_fn, sample, config, log_path=log_path, hook=hook)


# ------------------------------------------------------------ evaluation

class NoOracleError(LookupError):
    """No exact solution or reference field available for an error measurement."""


@dataclass(frozen=True)
class EvalSpec:
    grid_points: int = 201  # per axis, d <= 2
    times: int = 11
    random_points: int = 100_000  # d > 2
    seed: int = 2024


def eval_points(problem: ProblemSpec, spec: EvalSpec = EvalSpec(), horizon: Optional[float] = None):
    """Tensor grid times uniform time levels for d <= 2, seeded uniform samples otherwise."""
    T = problem.horizon if horizon is None else horizon
    lo = np.asarray(problem.lower)
    hi = np.asarray(problem.upper)
    if problem.dim <= 2:
        axes = [np.linspace(a, b, spec.grid_points) for a, b in zip(lo, hi)]
        mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
        times = np.linspace(0.0, T, spec.times)
        x = np.tile(mesh, (len(times), 1))
        t = np.repeat(times, mesh.shape[0])
        return x, t
    rng = np.random.default_rng(spec.seed)
    x = lo + (hi - lo) * rng.random((spec.random_points, problem.dim))
    t = T * rng.random(spec.random_points)
    return x, t


def predict(model, x, t, chunk: int = 50_000) -> np.ndarray:
    """Evaluate an MlpParams or any ``(x, t) -> u`` callable in chunks."""
    fn = (lambda a, b: network(model, a, b)) if isinstance(model, MlpParams) else model
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    parts = [np.asarray(fn(x[i:i + chunk], t[i:i + chunk])) for i in range(0, x.shape[0], chunk)]
    return np.concatenate(parts) if parts else np.zeros(0)


def evaluate_mse(model, problem: ProblemSpec, spec: EvalSpec = EvalSpec(), reference=None) -> tuple[float, float]:
    """(MSE, relative MSE) against the exact solution or a supplied reference field."""
    ref = reference if reference is not None else problem.exact
    if ref is None:
        raise NoOracleError(f"{problem.id} has no exact solution")
    x, t = eval_points(problem, spec)
    pred = predict(model, x, t)
    exact = predict(ref, x, t)
    mse = float(np.mean((pred - exact) ** 2))
    rmse = mse / max(float(np.mean(exact ** 2)), 1e-12)
    return mse, rmse
