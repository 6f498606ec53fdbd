"""Implicit-formula residual, Monte-Carlo loss and boundary penalties."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import NumericalError
from .network import MlpParams, network, network_jet
from .problems import ProblemSpec


@dataclass(frozen=True)
class CollocationBatch:
    x: np.ndarray  # (M, d)
    t: np.ndarray  # (M,)
    xb: Optional[np.ndarray] = None  # (M_b, d) boundary points
    tb: Optional[np.ndarray] = None  # (M_b,)
    yb: Optional[np.ndarray] = None  # periodic partners of xb

    def __post_init__(self):
        if self.x.ndim != 2 or self.t.shape != (self.x.shape[0],):
            raise ValueError(f"interior batch shapes disagree: x {self.x.shape}, t {self.t.shape}")
        if self.xb is not None and self.tb.shape != (self.xb.shape[0],):
            raise ValueError("boundary batch shapes disagree")

    @property
    def size(self) -> int:
        return self.x.shape[0]

    @property
    def has_boundary(self) -> bool:
        return self.xb is not None and self.xb.shape[0] > 0


def implicit_residual(problem: ProblemSpec, x, t, u, p, initial: Callable, initial_time=None):
    """u - t p.dH + t H - initial(x - t dH) for batched values.

    ``x`` (M, d) and ``t`` (M,) are plain arrays; ``u`` (M,) and ``p`` (M, d) may
    be tape Vars. ``initial`` receives the pulled-back points, plus
    ``initial_time`` when given (the previous network of a marching step).
    """
    t = np.asarray(t, dtype=np.float64)
    tc = t.reshape(-1, 1)
    dh = problem.dH(x, p)
    h = problem.H(x, p)
    back = x - tc * dh
    prev = initial(back) if initial_time is None else initial(back, initial_time)
    return u - t * (p * dh).sum(axis=1) + t * h - prev


def residuals(params: MlpParams, problem: ProblemSpec, x, t):
    """Batched S(u) at interior points."""
    if problem.state_dependent:
        raise ValueError(f"{problem.id} is state dependent; use the time-marching residual")
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    u, p, _ = network_jet(params, x, t)
    s = implicit_residual(problem, x, t, u, p, problem.g)
    v = ad.value_of(s)
    if not np.all(np.isfinite(v)):
        bad = int(np.flatnonzero(~np.isfinite(v))[0])
        raise NumericalError(f"non-finite residual at x={x[bad]}, t={t[bad]}")
    return s


def residual(params: MlpParams, problem: ProblemSpec, x, t) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float(ad.value_of(residuals(params, problem, x[None, :], np.array([float(t)])))[0])


def _mean_square(s):
    return (s * s).mean()


def empirical_loss(params: MlpParams, problem: ProblemSpec, batch: CollocationBatch):
    if batch.size == 0:
        raise ValueError("empty collocation batch")
    return _mean_square(residuals(params, problem, batch.x, batch.t))


def boundary_loss(params: MlpParams, problem: ProblemSpec, batch: CollocationBatch, time_shift: float = 0.0):
    """Dirichlet or periodic penalty on the boundary points of ``batch``.

    ``time_shift`` converts local times to the global clock for Dirichlet data.
    """
    if problem.boundary == "none":
        raise ValueError(f"{problem.id} has no boundary condition")
    if not batch.has_boundary:
        raise ValueError("batch carries no boundary points")
    if problem.boundary == "dirichlet":
        u = network(params, batch.xb, batch.tb)
        return _mean_square(u - problem.dirichlet(batch.xb, batch.tb + time_shift))
    if batch.yb is None:
        raise ValueError("periodic boundary loss needs partner points")
    n = batch.xb.shape[0]
    both = network(params, np.concatenate([batch.xb, batch.yb]), np.concatenate([batch.tb, batch.tb]))
    return _mean_square(both[:n] - both[n:])


def total_loss(params: MlpParams, problem: ProblemSpec, batch: CollocationBatch, weight: float = 0.1):
    if weight < 0:
        raise ValueError("boundary weight must be non-negative")
    loss = empirical_loss(params, problem, batch)
    if problem.boundary != "none" and weight > 0:
        loss = loss + weight * boundary_loss(params, problem, batch)
    return loss


# ------------------------------------------------------------- sampling

def sample_boundary(problem: ProblemSpec, n: int, horizon: float, rng: np.random.Generator):
    """Points on the box faces, faces drawn in proportion to their measure.

    Returns ``(xb, tb, yb)`` where ``yb`` swaps the pinned coordinate to the
    opposite face.
    """
    lo = np.asarray(problem.lower)
    hi = np.asarray(problem.upper)
    d = problem.dim
    lengths = hi - lo
    face_measure = np.array([np.prod(np.delete(lengths, i)) for i in range(d)])
    axis = rng.choice(d, size=n, p=face_measure / face_measure.sum())
    upper_side = rng.random(n) < 0.5
    xb = lo + lengths * rng.random((n, d))
    rows = np.arange(n)
    xb[rows, axis] = np.where(upper_side, hi[axis], lo[axis])
    yb = xb.copy()
    yb[rows, axis] = np.where(upper_side, lo[axis], hi[axis])
    tb = horizon * rng.random(n)
    return xb, tb, yb


def sample_collocation(problem: ProblemSpec, m: int, m_boundary: int, rng: np.random.Generator,
                       horizon: Optional[float] = None) -> CollocationBatch:
    """Uniform interior points on the box times [0, horizon] plus boundary points."""
    if m < 1:
        raise ValueError("need at least one collocation point")
    horizon = problem.horizon if horizon is None else horizon
    lo = np.asarray(problem.lower)
    hi = np.asarray(problem.upper)
    x = lo + (hi - lo) * rng.random((m, problem.dim))
    t = horizon * rng.random(m)
    if problem.boundary == "none" or m_boundary == 0:
        return CollocationBatch(x, t)
    xb, tb, yb = sample_boundary(problem, m_boundary, horizon, rng)
    return CollocationBatch(x, t, xb, tb, yb if problem.boundary == "periodic" else None)
