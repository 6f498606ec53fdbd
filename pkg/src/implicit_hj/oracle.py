"""Reference solvers used to check trained networks; never used in training.

* :func:`hopf_lax_eval` minimizes the Hopf-Lax functional numerically for
  convex (or concave) state-independent Hamiltonians.
* :func:`lax_friedrichs_solve` is a first-order monotone grid scheme in one or
  two dimensions.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .problems import ProblemSpec


class UnsupportedOracle(ValueError):
    """The requested oracle does not apply to this problem."""


class CFLViolation(ValueError):
    pass


# ---------------------------------------------------------------- Hopf-Lax

@dataclass(frozen=True)
class HopfLaxOptions:
    starts: int = 16
    tol: float = 1e-10
    guard: float = 0.5  # added to the search radius
    max_sweeps: int = 10_000


def legendre_numeric(hamiltonian, q: np.ndarray, sign: float = 1.0) -> np.ndarray:
    """sup_z z.q - sign * H(z) row by row, for a convex ``sign * H``."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    d = q.shape[1]
    zero = np.zeros((1, d))
    out = np.empty(q.shape[0])
    for i, qi in enumerate(q):
        def neg(z):
            z = z[None, :]
            return -(float(z[0] @ qi) - sign * float(hamiltonian.value(zero, z)[0]))

        def neg_grad(z):
            return -(qi - sign * np.asarray(hamiltonian.grad_p(zero, z[None, :]))[0])

        res = minimize(neg, qi.copy(), jac=neg_grad, method="BFGS", options={"gtol": 1e-12})
        out[i] = -res.fun
    return out


def _pattern_search(f, y0: np.ndarray, step0: np.ndarray, tol: float, max_sweeps: int, project=None):
    """Vectorized compass search: each row probes +-step along every axis,
    halving its step after a sweep without improvement. ``project`` maps trial
    points back into a feasible set."""
    y = y0.copy()
    fy = f(y)
    step = step0.copy()
    d = y.shape[1]
    for _ in range(max_sweeps):
        active = step > tol
        if not active.any():
            break
        improved = np.zeros(y.shape[0], dtype=bool)
        for i in range(d):
            for s in (1.0, -1.0):
                trial = y.copy()
                trial[:, i] += s * step
                if project is not None:
                    trial = project(trial)
                ft = f(trial)
                better = active & (ft < fy)
                y[better] = trial[better]
                fy = np.where(better, ft, fy)
                improved |= better
        step = np.where(active & ~improved, 0.5 * step, step)
    return y, fy


def hopf_lax_eval(problem: ProblemSpec, x, t, opts: HopfLaxOptions = HopfLaxOptions()) -> np.ndarray:
    """Hopf-Lax value at points ``x`` (M, d) and times ``t`` (M,).

    Convex H: min_y t L((x - y)/t) + g(y). Concave H: the sup form with the
    transform of -H. When the transform is the indicator of the unit ball the
    search runs over y = x - t w with w in the closed unit ball.
    """
    ham = problem.hamiltonian
    if problem.state_dependent or ham.convexity not in ("convex", "concave"):
        raise UnsupportedOracle(f"Hopf-Lax needs a convex or concave state-independent H, not {problem.id}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    m, d = x.shape
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (m,)).copy()
    if np.any(t < 0):
        raise ValueError("Hopf-Lax needs t >= 0")
    sign = 1.0 if ham.convexity == "convex" else -1.0
    g = problem.initial.value
    out = np.empty(m)
    zero_t = t == 0
    out[zero_t] = g(x[zero_t])
    live = ~zero_t
    if not live.any():
        return out
    xs, ts = x[live], t[live]
    n = xs.shape[0]
    k = opts.starts
    halton = qmc.Halton(d=d, scramble=False).random(k + 1)[1:]  # skip the origin corner
    unit = 2.0 * halton - 1.0  # starts in [-1, 1]^d
    xr = np.repeat(xs, k, axis=0)
    tr = np.repeat(ts, k)

    if ham.ball_indicator:
        # y = x - t w over the closed unit ball of w
        def to_ball(w):
            return w / np.maximum(1.0, np.linalg.norm(w, axis=1))[:, None]

        def objective(w):
            return sign * g(xr - tr[:, None] * w)

        w0 = to_ball(np.tile(unit, (n, 1)))
        w0[::k] = 0.0
        _, fw = _pattern_search(objective, w0, np.full(n * k, 0.5), opts.tol, opts.max_sweeps, project=to_ball)
    else:
        lagrangian = ham.legendre if ham.legendre is not None else (
            lambda q: legendre_numeric(ham, q, sign)
        )
        lip = problem.initial.lipschitz if np.isfinite(problem.initial.lipschitz) else 1.0 + np.sqrt(d)
        speed = _max_speed(ham, d, lip)
        radius = tr * speed + opts.guard

        def objective(y):
            q = (xr - y) / tr[:, None]
            return tr * lagrangian(q) + sign * g(y)

        y0 = xr + radius[:, None] * np.tile(unit, (n, 1))
        y0[::k] = xr[::k]  # one start at x itself
        _, fw = _pattern_search(objective, y0, radius * 0.5, opts.tol, opts.max_sweeps)
    best = fw.reshape(n, k).min(axis=1)
    out[live] = sign * best
    return out


def _max_speed(ham, d: int, lip: float) -> float:
    """max |dH/dp| over |p| <= lip, by sampling the sphere and the interior."""
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(512, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    p = np.concatenate([dirs * lip * r for r in (0.25, 0.5, 1.0)])
    grad = np.asarray(ham.grad_p(np.zeros_like(p), p))
    return float(np.max(np.linalg.norm(grad, axis=1)))


# ---------------------------------------------------------- Lax-Friedrichs

@dataclass(frozen=True)
class GridSpec:
    nodes: Sequence[int]  # per axis, including both ends of the box
    times: Sequence[float]  # output times; 0 may be included
    cfl: float = 0.5
    boundary: Optional[str] = None  # "periodic" | "extrapolate"; default from the problem
    dissipation: Optional[Sequence[float]] = None  # fixed per-axis coefficients; adaptive if None

    def __post_init__(self):
        if self.cfl <= 0 or self.cfl > 0.5:
            raise CFLViolation(f"CFL number {self.cfl} outside (0, 0.5]")
        if self.dissipation is not None and (
            len(self.dissipation) != len(self.nodes) or min(self.dissipation) <= 0
        ):
            raise ValueError("dissipation needs one positive coefficient per axis")
        if any(n < 3 for n in self.nodes):
            raise ValueError("need at least 3 nodes per axis")


@dataclass
class GridSolution:
    lower: tuple
    upper: tuple
    axes: list  # node coordinates per axis
    times: np.ndarray
    values: np.ndarray  # (len(times), *nodes)
    cfl: float
    steps: int = 0
    dt_max: float = 0.0

    @property
    def resolution(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def slice_at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-12:
            raise KeyError(f"time {t} not stored")
        return self.values[i]

    def to_csv(self, path) -> None:
        names = ["x", "y"][: len(self.axes)]
        pts = self.points()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names + ["t", "u"])
            for ti, t in enumerate(self.times):
                vals = self.values[ti].ravel()
                for row, v in zip(pts, vals):
                    w.writerow([repr(float(c)) for c in row] + [repr(float(t)), repr(float(v))])


def _shift(u, axis, offset, periodic):
    """u at the neighbour ``offset`` (+1/-1) along ``axis``; linear extrapolation at the ends."""
    if periodic:
        return np.roll(u, -offset, axis=axis)
    n = u.shape[axis]
    idx = np.clip(np.arange(n) + offset, 0, n - 1)
    out = np.take(u, idx, axis=axis)
    # ghost values continue the boundary slope
    sl = [slice(None)] * u.ndim
    if offset > 0:
        sl[axis] = n - 1
        a = np.take(u, n - 1, axis=axis)
        b = np.take(u, n - 2, axis=axis)
    else:
        sl[axis] = 0
        a = np.take(u, 0, axis=axis)
        b = np.take(u, 1, axis=axis)
    out[tuple(sl)] = 2 * a - b
    return out


def _speed_bounds(problem, xs, p_lo, p_hi, d):
    """Per-axis max |dH/dp_i| over nodes and the box of observed slopes."""
    axes = [np.linspace(a, b, 5 if d == 2 else 21) for a, b in zip(p_lo, p_hi)]
    samples = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    if not problem.state_dependent:
        grad = np.asarray(problem.dH(np.zeros_like(samples), samples))
        return np.max(np.abs(grad), axis=0)
    best = np.zeros(d)
    for p in samples:
        grad = np.asarray(problem.dH(xs, np.broadcast_to(p, xs.shape).copy()))
        best = np.maximum(best, np.max(np.abs(np.broadcast_to(grad, xs.shape)), axis=0))
    return best


def lax_friedrichs_solve(problem: ProblemSpec, spec: GridSpec, initial: Optional[np.ndarray] = None) -> GridSolution:
    """Global Lax-Friedrichs scheme with forward Euler steps.

    Numerical Hamiltonian H((p- + p+)/2) - sum_i a_i (p+_i - p-_i)/2 with a_i the
    largest |dH/dp_i| over the current slope range; the time step keeps
    sum_i a_i dt/dx_i at the CFL number. Fixed ``spec.dissipation`` gives a
    fixed step; the scheme is monotone when it bounds |dH/dp_i| over the slopes
    met. ``initial`` overrides g on the grid.
    """
    d = problem.dim
    if d > 2:
        raise UnsupportedOracle("the grid oracle covers one and two dimensions")
    if len(spec.nodes) != d:
        raise ValueError(f"grid needs {d} axis sizes")
    boundary = spec.boundary or ("periodic" if problem.boundary == "periodic" else "extrapolate")
    periodic = boundary == "periodic"
    lo = np.asarray(problem.lower, dtype=np.float64)
    hi = np.asarray(problem.upper, dtype=np.float64)
    axes = [np.linspace(a, b, n) for a, b, n in zip(lo, hi, spec.nodes)]
    dx = np.array([a[1] - a[0] for a in axes])
    shape = tuple(spec.nodes)
    mesh = np.meshgrid(*axes, indexing="ij")
    xs = np.stack([m.ravel() for m in mesh], axis=1)
    u = problem.g(xs).reshape(shape) if initial is None else np.array(initial, dtype=np.float64).reshape(shape)

    # periodic grids carry the duplicated end node; evolve the reduced grid
    core = tuple(slice(0, n - 1) if periodic else slice(None) for n in shape)
    xs_core = np.stack([m[core].ravel() for m in mesh], axis=1)
    w = u[core].copy()

    def full(v):
        if not periodic:
            return v
        return np.pad(v, [(0, 1)] * d, mode="wrap")

    times = np.asarray(sorted(spec.times), dtype=np.float64)
    if np.any(times < 0):
        raise ValueError("output times must be non-negative")
    out = np.empty((len(times),) + shape)
    t = 0.0
    steps = 0
    dt_max = 0.0
    for ti, target in enumerate(times):
        while target - t > 1e-14:
            minus, plus = [], []
            for i in range(d):
                minus.append((w - _shift(w, i, -1, periodic)) / dx[i])
                plus.append((_shift(w, i, 1, periodic) - w) / dx[i])
            p_lo = [min(a.min(), b.min()) for a, b in zip(minus, plus)]
            p_hi = [max(a.max(), b.max()) for a, b in zip(minus, plus)]
            if spec.dissipation is None:
                speeds = _speed_bounds(problem, xs_core, p_lo, p_hi, d)
            else:
                speeds = np.asarray(spec.dissipation, dtype=np.float64)
            rate = float(np.sum(speeds / dx))
            dt = target - t if rate == 0 else min(spec.cfl / rate, target - t)
            if rate * dt > spec.cfl * (1 + 1e-12):
                raise CFLViolation("time step exceeds the CFL bound")
            pc = np.stack([(a + b).ravel() * 0.5 for a, b in zip(minus, plus)], axis=1)
            h = np.asarray(problem.H(xs_core, pc)).reshape(w.shape)
            diss = sum(speeds[i] * (plus[i] - minus[i]) * 0.5 for i in range(d))
            w = w - dt * (h - diss)
            t += dt
            steps += 1
            dt_max = max(dt_max, dt)
        out[ti] = full(w)
    return GridSolution(tuple(lo), tuple(hi), axes, times, out, spec.cfl, steps, dt_max)


def grid_error(sol: GridSolution, reference, t: float, norm: str = "l1") -> float:
    """Discrete L1 / L2 / Linf distance between a stored slice and a reference field."""
    pts = sol.points()
    ref = np.asarray(reference(pts, np.full(pts.shape[0], t))).reshape(sol.resolution)
    diff = np.abs(sol.slice_at(t) - ref)
    cell = float(np.prod([(b - a) / (len(ax) - 1) for a, b, ax in zip(sol.lower, sol.upper, sol.axes)]))
    if norm == "l1":
        return float(diff.sum() * cell)
    if norm == "l2":
        return float(np.sqrt((diff ** 2).sum() * cell))
    if norm == "linf":
        return float(diff.max())
    raise ValueError(f"unknown norm {norm!r}")
