"""Benchmark catalog: Hamiltonians, initial data, domains and closed-form solutions.

Every Hamiltonian and initial function is written once against batched inputs
(``x`` and ``p`` of shape (M, d)) using operations that also run on the
autodiff tape, so the same definitions serve training, evaluation and oracles.
``x`` is always a plain array; ``p`` may be a tape Var.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad


class UnknownProblem(KeyError):
    pass


@dataclass(frozen=True)
class Hamiltonian:
    name: str
    value: Callable  # (x, p) -> (M,)
    grad_p: Callable  # (x, p) -> (M, d)
    state_dependent: bool = False
    # "convex", "concave" or "none"; Hopf-Lax oracle needs one of the first two
    convexity: str = "none"
    # Legendre transform of H (convex) or of -H (concave), q of shape (M, d) -> (M,)
    legendre: Optional[Callable] = None
    # True when the Legendre transform is the indicator of the unit ball
    ball_indicator: bool = False


@dataclass(frozen=True)
class InitialCondition:
    name: str
    value: Callable  # x -> (M,)
    lipschitz: float = np.inf


@dataclass(frozen=True)
class ProblemSpec:
    id: str
    dim: int
    hamiltonian: Hamiltonian
    initial: InitialCondition
    lower: tuple
    upper: tuple
    horizon: float
    boundary: str = "none"  # none | periodic | dirichlet
    dirichlet: Optional[Callable] = None  # (x, t) -> (M,)
    exact: Optional[Callable] = None  # (x, t) -> (M,)
    description: str = ""
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.lower) != self.dim or len(self.upper) != self.dim:
            raise ValueError(f"{self.id}: box does not match dimension {self.dim}")
        if any(a >= b for a, b in zip(self.lower, self.upper)):
            raise ValueError(f"{self.id}: empty box")
        if self.horizon <= 0:
            raise ValueError(f"{self.id}: horizon must be positive")
        if self.boundary not in ("none", "periodic", "dirichlet"):
            raise ValueError(f"{self.id}: unknown boundary kind {self.boundary!r}")
        if self.boundary == "dirichlet" and self.dirichlet is None:
            raise ValueError(f"{self.id}: dirichlet boundary needs a boundary function")

    @property
    def state_dependent(self) -> bool:
        return self.hamiltonian.state_dependent

    @property
    def has_exact(self) -> bool:
        return self.exact is not None

    def H(self, x, p):
        return self.hamiltonian.value(x, p)

    def dH(self, x, p):
        return self.hamiltonian.grad_p(x, p)

    def g(self, x):
        return self.initial.value(x)


# ------------------------------------------------------------ helpers

def _col(a, i):
    return a[:, i]


def _ones_like_rows(v, d):
    """(M,) -> (M, d) by repetition; works on Vars."""
    return v.reshape(-1, 1) * np.ones((1, d))


def _speed(x):
    """1 + 3 exp(-4 |x - (1, 1)|^2)."""
    return 1.0 + 3.0 * np.exp(-4.0 * np.sum((x - 1.0) ** 2, axis=1))


def _smooth_norm(p, eps):
    """sqrt(|p|^2 + eps^2) as a column, with 1 where it vanishes so that p / it is 0 there."""
    n = ad.norm(p, eps)
    return ad.where(ad.value_of(n) > 0, n, 1.0).reshape(-1, 1)


# --------------------------------------------------------- Hamiltonians

def quadratic(c: float) -> Hamiltonian:
    """c |p|^2."""
    return Hamiltonian(
        name=f"quad({c:g})",
        value=lambda x, p: c * (p * p).sum(axis=1),
        grad_p=lambda x, p: (2.0 * c) * p,
        convexity="convex" if c > 0 else "concave",
        legendre=lambda q: (q * q).sum(axis=1) / (4.0 * abs(c)),
    )


def euclidean_norm(eps: float = 0.0) -> Hamiltonian:
    return Hamiltonian(
        name="norm",
        value=lambda x, p: ad.norm(p, eps),
        grad_p=lambda x, p: p / _smooth_norm(p, eps),
        convexity="convex",
        legendre=lambda q: np.where(np.sqrt((q * q).sum(axis=1)) <= 1.0 + 1e-12, 0.0, np.inf),
        ball_indicator=True,
    )


def neg_cos_sum() -> Hamiltonian:
    """-cos(sum p + 1)."""
    def value(x, p):
        return -np.cos(p.sum(axis=1) + 1.0)

    def grad(x, p):
        return _ones_like_rows(np.sin(p.sum(axis=1) + 1.0), p.shape[1])

    return Hamiltonian("negcos", value, grad)


def sin_sum() -> Hamiltonian:
    """sin(p1 + p2)."""
    return Hamiltonian(
        "sin",
        lambda x, p: np.sin(_col(p, 0) + _col(p, 1)),
        lambda x, p: _ones_like_rows(np.cos(_col(p, 0) + _col(p, 1)), 2),
    )


def product() -> Hamiltonian:
    """p1 p2."""
    return Hamiltonian(
        "prod",
        lambda x, p: _col(p, 0) * _col(p, 1),
        lambda x, p: ad.stack([_col(p, 1), _col(p, 0)], axis=1),
    )


def sqrt_sum(sign: float = 1.0, squared_radicand: bool = False) -> Hamiltonian:
    """sign * sqrt(p1 + p2 + 1), radicand clamped at zero.

    With ``squared_radicand`` the radicand is p1^2 + p2^2 + 1 instead.
    """
    def radicand(p):
        if squared_radicand:
            return (p * p).sum(axis=1) + 1.0
        return _col(p, 0) + _col(p, 1) + 1.0

    def value(x, p):
        r = radicand(p)
        pos = ad.value_of(r) > 0
        return sign * ad.where(pos, np.sqrt(ad.where(pos, r, 1.0)), 0.0)

    def grad(x, p):
        r = radicand(p)
        pos = ad.value_of(r) > 0
        half_inv = ad.where(pos, 0.5 / np.sqrt(ad.where(pos, r, 1.0)), 0.0)
        if squared_radicand:
            return (2.0 * sign) * p * half_inv.reshape(-1, 1)
        return sign * _ones_like_rows(half_inv, 2)

    tag = "sq" if squared_radicand else "lin"
    return Hamiltonian(f"sqrt[{tag}]({sign:+g})", value, grad)


def cubic() -> Hamiltonian:
    """p^3 - p in one dimension."""
    return Hamiltonian(
        "cubic",
        lambda x, p: (p * p * p - p)[:, 0],
        lambda x, p: 3.0 * p * p - 1.0,
    )


def advection_sin() -> Hamiltonian:
    """sin(x) p."""
    return Hamiltonian(
        "adv-sin",
        lambda x, p: (np.sin(x) * p)[:, 0],
        lambda x, p: np.sin(x) * np.ones_like(ad.value_of(p)),
        state_dependent=True,
    )


def rotation() -> Hamiltonian:
    """-y p1 + x p2: solid body rotation."""
    return Hamiltonian(
        "rotation",
        lambda x, p: -x[:, 1] * _col(p, 0) + x[:, 0] * _col(p, 1),
        lambda x, p: np.stack([-x[:, 1], x[:, 0]], axis=1),
        state_dependent=True,
    )


def cost_determination() -> Hamiltonian:
    """p1 sin y + (sin y + sign p2) p2 - sin^2(y)/2 - (1 - cos x)."""
    def value(x, p):
        sy = np.sin(x[:, 1])
        p2 = _col(p, 1)
        return _col(p, 0) * sy + sy * p2 + np.abs(p2) - 0.5 * sy * sy - (1.0 - np.cos(x[:, 0]))

    def grad(x, p):
        sy = np.sin(x[:, 1])
        return ad.stack([sy * np.ones(len(sy)), sy + np.sign(_col(p, 1))], axis=1)

    return Hamiltonian("oc-cost", value, grad, state_dependent=True)


def oscillator(sign: float) -> Hamiltonian:
    """sign * (|x|^2 + |p|^2) / 2."""
    return Hamiltonian(
        f"osc({sign:+g})",
        lambda x, p: (0.5 * sign) * ((x * x).sum(axis=1) + (p * p).sum(axis=1)),
        lambda x, p: sign * p,
        state_dependent=True,
    )


def nonconvex_one(eps: float = 0.0) -> Hamiltonian:
    """-c(x) p1 + 2|p2| + |p| - 1 with c = 2 * speed."""
    def value(x, p):
        c = 2.0 * _speed(x)
        return -c * _col(p, 0) + 2.0 * np.abs(_col(p, 1)) + ad.norm(p, eps) - 1.0

    def grad(x, p):
        c = 2.0 * _speed(x)
        n = _smooth_norm(p, eps)[:, 0]
        return ad.stack([-c + _col(p, 0) / n, 2.0 * np.sign(_col(p, 1)) + _col(p, 1) / n], axis=1)

    return Hamiltonian("nc1", value, grad, state_dependent=True)


def nonconvex_two() -> Hamiltonian:
    """-c(x)|p1| - c(-x)|p2|."""
    def value(x, p):
        return -2.0 * _speed(x) * np.abs(_col(p, 0)) - 2.0 * _speed(-x) * np.abs(_col(p, 1))

    def grad(x, p):
        return ad.stack(
            [-2.0 * _speed(x) * np.sign(_col(p, 0)), -2.0 * _speed(-x) * np.sign(_col(p, 1))], axis=1
        )

    return Hamiltonian("nc2", value, grad, state_dependent=True)


def variable_speed(sign: float, eps: float = 0.0) -> Hamiltonian:
    """sign * f(x) |p|."""
    return Hamiltonian(
        f"speed({sign:+g})",
        lambda x, p: sign * _speed(x) * ad.norm(p, eps),
        lambda x, p: (sign * _speed(x)).reshape(-1, 1) * p / _smooth_norm(p, eps),
        state_dependent=True,
    )


OCQUAD_A = (4.0, 6.0)
OCQUAD_B = (3.0, 9.0)


def _ocquad_coeffs(d):
    a = np.array(list(OCQUAD_A[:d]) + [5.0] * max(d - 2, 0))
    b = np.array(list(OCQUAD_B[:d]) + [6.0] * max(d - 2, 0))
    return a, b


def potential_psi(x):
    """Sum of concave piecewise-linear terms: -a_i x_i (x_i >= 0), b_i x_i (x_i < 0)."""
    a, b = _ocquad_coeffs(x.shape[1])
    return np.where(x >= 0, -a * x, b * x).sum(axis=1)


def quadratic_with_potential() -> Hamiltonian:
    return Hamiltonian(
        "ocquad",
        lambda x, p: 0.5 * (p * p).sum(axis=1) + potential_psi(x),
        lambda x, p: p,
        state_dependent=True,
    )


# ---------------------------------------------------- initial conditions

def l1_norm() -> InitialCondition:
    return InitialCondition("l1", lambda x: np.abs(x).sum(axis=1))


SPHERE_RADIUS = 0.2
SPHERE_OFFSET = 0.3


def two_spheres(d: int) -> InitialCondition:
    """Signed distance to two balls of radius 0.2 centred at (-0.3, 0, ...) and (0.3, 0, ...)."""
    c1 = np.zeros(d)
    c1[0] = -SPHERE_OFFSET
    c2 = -c1

    def value(y):
        return np.minimum(ad.norm(y - c1), ad.norm(y - c2)) - SPHERE_RADIUS

    return InitialCondition("two-spheres", value, lipschitz=1.0)


def neg_cos_mean(d: int) -> InitialCondition:
    return InitialCondition("negcos", lambda x: -np.cos((np.pi / d) * x.sum(axis=1)))


def riemann() -> InitialCondition:
    return InitialCondition("riemann", lambda x: np.pi * (np.abs(_col(x, 1)) - np.abs(_col(x, 0))))


def sin_plus_cos() -> InitialCondition:
    return InitialCondition("sin+cos", lambda x: np.sin(_col(x, 0)) + np.cos(_col(x, 1)))


def eikonal_bump() -> InitialCondition:
    def value(x):
        a = np.cos(2 * np.pi * _col(x, 0)) - 1.0
        b = np.cos(2 * np.pi * _col(x, 1)) - 1.0
        return 0.25 * a * b - 1.0

    return InitialCondition("bump", value)


def cos_difference() -> InitialCondition:
    return InitialCondition(
        "cosdiff", lambda x: np.cos(2 * np.pi * _col(x, 0)) - np.cos(2 * np.pi * _col(x, 1))
    )


def cos_five() -> InitialCondition:
    return InitialCondition("cos5", lambda x: -0.1 * np.cos(5.0 * x[:, 0]))


def sine() -> InitialCondition:
    return InitialCondition("sin", lambda x: np.sin(x[:, 0]), lipschitz=1.0)


CONE_CENTER = (0.4, 0.4)


def cone_plateau() -> InitialCondition:
    """0 for r >= 0.3, 0.3 - r between, 0.2 for r <= 0.1 (r from (0.4, 0.4))."""
    def value(x):
        r = ad.norm(x - np.array(CONE_CENTER))
        return np.minimum(np.maximum(0.3 - r, 0.0), 0.2)

    return InitialCondition("cone", value, lipschitz=1.0)


def zero() -> InitialCondition:
    return InitialCondition("zero", lambda x: 0.0 * x[:, 0], lipschitz=0.0)


def ellipse() -> InitialCondition:
    return InitialCondition(
        "ellipse", lambda x: 0.5 * (_col(x, 0) ** 2 / 2.5 ** 2 + _col(x, 1) ** 2 - 1.0)
    )


def ellipse_quadratic_form() -> InitialCondition:
    return InitialCondition(
        "quadform", lambda x: 0.5 * (0.25 * _col(x, 0) ** 2 + _col(x, 1) ** 2 - 1.0)
    )


def shifted_quadratic(d: int) -> InitialCondition:
    return InitialCondition("g1", lambda x: 0.5 * ((x - 1.0) ** 2).sum(axis=1))


def _wells(d: int):
    ys = np.zeros((3, d))
    ys[0, 0] = -2.0
    ys[1, :3] = [2.0, -2.0, -1.0][:d]
    ys[2, 1 if d > 1 else 0] = 2.0
    return ys, np.array([-0.5, 0.0, -1.0])


def three_wells(d: int) -> InitialCondition:
    """min_j |x - y_j|^2 / 2 - alpha_j."""
    if d < 3:
        raise ValueError("the three-well initial function needs d >= 3")
    ys, alphas = _wells(d)

    def value(x):
        parts = [0.5 * ((x - ys[j]) ** 2).sum(axis=1) - alphas[j] for j in range(3)]
        return np.minimum(np.minimum(parts[0], parts[1]), parts[2])

    return InitialCondition("g2", value)


# ------------------------------------------------------- exact solutions

def burgers_exact(x, t):
    """Hopf-Lax solution of u_t + |Du|^2/2 = 0, u(., 0) = |x|_1, coordinate-separable."""
    x = np.asarray(x, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), x.shape[:1]).reshape(-1, 1)
    ax = np.abs(x)
    safe_t = np.where(t > 0, t, 1.0)
    fan = ax * ax / (2.0 * safe_t)
    out = np.where(ax <= t, fan, ax - 0.5 * t)
    return np.where(t[:, 0] > 0, out.sum(axis=1), ax.sum(axis=1))


def concave_exact(x, t):
    """Hopf-Lax (sup form) solution of u_t - |Du|^2/2 = 0, u(., 0) = |x|_1."""
    x = np.asarray(x, dtype=np.float64)
    return np.abs(x).sum(axis=1) + 0.5 * x.shape[1] * np.asarray(t, dtype=np.float64)


def collision_exact(x, t):
    """Viscosity solution of u_t + |Du| = 0 from the two-sphere distance.

    The infimum of the initial function over the ball of radius t around x:
    max(min_i |x - c_i| - t, 0) - r. Equals g - t away from the centres.
    """
    x = np.asarray(x, dtype=np.float64)
    c = np.zeros(x.shape[1])
    c[0] = SPHERE_OFFSET
    dist = np.minimum(np.linalg.norm(x - c, axis=1), np.linalg.norm(x + c, axis=1))
    return np.maximum(dist - np.asarray(t, dtype=np.float64), 0.0) - SPHERE_RADIUS


def advection_exact(x, t):
    """sin(2 arctan(exp(-t) tan(x/2))), written with atan2 to stay finite at x = pi."""
    x = np.asarray(x, dtype=np.float64)[:, 0]
    t = np.asarray(t, dtype=np.float64)
    return np.sin(2.0 * np.arctan2(np.exp(-t) * np.sin(0.5 * x), np.cos(0.5 * x)))


def rotation_exact(x, t):
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    c, s = np.cos(t), np.sin(t)
    back = np.stack([x[:, 0] * c + x[:, 1] * s, -x[:, 0] * s + x[:, 1] * c], axis=1)
    return cone_plateau().value(back)


def zero_exact(x, t):
    return np.zeros(np.asarray(x).shape[0])


# ------------------------------------------------------------- catalog

def _box(d, lo, hi):
    return tuple([float(lo)] * d), tuple([float(hi)] * d)


def _make(pid: str, dim: int, norm_eps: float = 0.0, squared_radicand: bool = False) -> ProblemSpec:
    tau = 2 * np.pi
    family = pid
    if family == "burgers":
        lo, hi = _box(dim, -1, 1)
        return ProblemSpec(pid, dim, quadratic(0.5), replace(l1_norm(), lipschitz=np.sqrt(dim)), lo, hi, 1.0,
                           exact=burgers_exact, description="u_t + |Du|^2/2 = 0, g = |x|_1")
    if family == "concave":
        lo, hi = _box(dim, -1, 1)
        return ProblemSpec(pid, dim, quadratic(-0.5), replace(l1_norm(), lipschitz=np.sqrt(dim)), lo, hi, 1.0,
                           exact=concave_exact, description="u_t - |Du|^2/2 = 0, g = |x|_1")
    if family == "collision":
        lo, hi = _box(dim, -1, 1)
        return ProblemSpec(pid, dim, euclidean_norm(norm_eps), two_spheres(dim), lo, hi, 1.0,
                           exact=collision_exact, description="u_t + |Du| = 0, two-sphere distance",
                           params={"norm_eps": norm_eps})
    if family == "viscosity":
        lo, hi = _box(1, -1, 1)
        return ProblemSpec(pid, 1, quadratic(1.0), zero(), lo, hi, 1.0, exact=zero_exact,
                           description="u_t + u_x^2 = 0, g = 0: viscosity selection")
    if family == "cos":
        lo, hi = _box(dim, 0, 2 * dim)
        return ProblemSpec(pid, dim, neg_cos_sum(), neg_cos_mean(dim), lo, hi, 0.2, boundary="periodic",
                           description="u_t - cos(sum Du + 1) = 0")
    if family == "riemann":
        lo, hi = _box(2, -1, 1)
        return ProblemSpec(pid, 2, sin_sum(), riemann(), lo, hi, 1.0,
                           description="u_t + sin(u_x + u_y) = 0, Riemann data")
    if family == "prod":
        lo, hi = _box(2, 0, tau)
        return ProblemSpec(pid, 2, product(), sin_plus_cos(), lo, hi, 1.5, boundary="periodic",
                           description="u_t + u_x u_y = 0")
    if family == "eikonal":
        lo, hi = _box(2, 0, 1)
        return ProblemSpec(pid, 2, sqrt_sum(1.0, squared_radicand), eikonal_bump(), lo, hi, 0.45,
                           description="u_t + sqrt(u_x + u_y + 1) = 0", params={"squared_radicand": squared_radicand})
    if family == "combustion":
        lo, hi = _box(2, 0, 1)
        return ProblemSpec(pid, 2, sqrt_sum(-1.0, squared_radicand), cos_difference(), lo, hi, 0.27,
                           description="u_t - sqrt(u_x + u_y + 1) = 0", params={"squared_radicand": squared_radicand})
    if family == "cubic":
        lo, hi = _box(1, -np.pi, np.pi)
        return ProblemSpec(pid, 1, cubic(), cos_five(), lo, hi, 0.7, boundary="periodic", description="u_t + u_x^3 - u_x = 0")
    if family == "adv-sin":
        lo, hi = _box(1, 0, tau)
        return ProblemSpec(pid, 1, advection_sin(), sine(), lo, hi, 1.0, boundary="periodic",
                           exact=advection_exact, description="u_t + sin(x) u_x = 0")
    if family == "rotation":
        lo, hi = _box(2, -1, 1)
        return ProblemSpec(pid, 2, rotation(), cone_plateau(), lo, hi, 1.0, boundary="periodic",
                           exact=rotation_exact, description="u_t - y u_x + x u_y = 0")
    if family == "oc-cost":
        lo, hi = _box(2, 0, tau)
        return ProblemSpec(pid, 2, cost_determination(), zero(), lo, hi, 1.0, boundary="periodic",
                           description="cost determination control problem")
    if family in ("osc-plus", "osc-minus"):
        lo, hi = _box(2, -1, 1)
        sign = 1.0 if family == "osc-plus" else -1.0
        return ProblemSpec(pid, 2, oscillator(sign), ellipse(), lo, hi, 0.4, description="harmonic oscillator")
    if family == "nc1":
        lo, hi = _box(2, -1, 1)
        return ProblemSpec(pid, 2, nonconvex_one(norm_eps), ellipse(), lo, hi, 1.0,
                           description="-c(x) p1 + 2|p2| + |p| - 1")
    if family == "nc2":
        lo, hi = _box(2, -1, 1)
        return ProblemSpec(pid, 2, nonconvex_two(), ellipse(), lo, hi, 0.3, description="-c(x)|p1| - c(-x)|p2|")
    if family in ("speed-min", "speed-max"):
        lo, hi = _box(2, -1, 1)
        sign, T = (1.0, 0.2) if family == "speed-min" else (-1.0, 0.5)
        return ProblemSpec(pid, 2, variable_speed(sign, norm_eps), ellipse_quadratic_form(), lo, hi, T,
                           description="u_t +/- f(x)|Du| = 0")
    if family == "ocquad-g1":
        lo, hi = _box(dim, -1, 1)
        return ProblemSpec(pid, dim, quadratic_with_potential(), shifted_quadratic(dim), lo, hi, 0.5,
                           description="u_t + |Du|^2/2 + psi(x) = 0, quadratic g")
    if family == "ocquad-g2":
        lo, hi = _box(dim, -1, 1)
        return ProblemSpec(pid, dim, quadratic_with_potential(), three_wells(dim), lo, hi, 0.5,
                           description="u_t + |Du|^2/2 + psi(x) = 0, three-well g")
    raise UnknownProblem(pid)


# family -> (default dimension, dimension is free)
FAMILIES = {
    "burgers": (1, True),
    "concave": (1, True),
    "collision": (2, True),
    "cos": (1, True),
    "riemann": (2, False),
    "prod": (2, False),
    "eikonal": (2, False),
    "combustion": (2, False),
    "cubic": (1, False),
    "adv-sin": (1, False),
    "rotation": (2, False),
    "oc-cost": (2, False),
    "osc-plus": (2, False),
    "osc-minus": (2, False),
    "nc1": (2, False),
    "nc2": (2, False),
    "speed-min": (2, False),
    "speed-max": (2, False),
    "ocquad-g1": (10, True),
    "ocquad-g2": (10, True),
    "viscosity": (1, False),
}

_ID = re.compile(r"^(?P<family>[a-z0-9-]+?)(?:-d(?P<dim>\d+))?$")


def get_problem(pid: str, **options) -> ProblemSpec:
    """Resolve a catalog id such as ``"burgers-d10"`` or ``"rotation"``.

    Keyword options: ``norm_eps`` (regularization of the |p| gradient),
    ``squared_radicand`` (eikonal/combustion variant).
    """
    m = _ID.match(pid)
    if m is None or m.group("family") not in FAMILIES:
        raise UnknownProblem(pid)
    family = m.group("family")
    default_dim, free = FAMILIES[family]
    dim = int(m.group("dim")) if m.group("dim") else default_dim
    if not free and dim != default_dim:
        raise UnknownProblem(f"{pid}: {family} is only defined for d={default_dim}")
    if dim < 1:
        raise UnknownProblem(pid)
    spec = _make(family, dim, **options)
    return replace(spec, id=pid)


def catalog_ids() -> list[str]:
    return [f"{f}-d{d}" if free else f for f, (d, free) in FAMILIES.items()]


# ----------------------------------------------- pointwise conveniences

def _resolve(problem) -> ProblemSpec:
    return problem if isinstance(problem, ProblemSpec) else get_problem(problem)


def _row(v, d, what):
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if v.shape != (d,):
        raise ValueError(f"{what} must have shape ({d},), got {v.shape}")
    return v[None, :]


def hamiltonian_value(problem, x, p) -> float:
    spec = _resolve(problem)
    return float(spec.H(_row(x, spec.dim, "x"), _row(p, spec.dim, "p"))[0])


def hamiltonian_grad_p(problem, x, p) -> np.ndarray:
    spec = _resolve(problem)
    out = spec.dH(_row(x, spec.dim, "x"), _row(p, spec.dim, "p"))
    return np.broadcast_to(np.asarray(out, dtype=np.float64), (1, spec.dim))[0].copy()


def initial_value(problem, x) -> float:
    spec = _resolve(problem)
    return float(spec.g(_row(x, spec.dim, "x"))[0])


def exact_solution(problem, x, t) -> Optional[float]:
    spec = _resolve(problem)
    if spec.exact is None:
        return None
    return float(spec.exact(_row(x, spec.dim, "x"), np.array([t], dtype=np.float64))[0])
