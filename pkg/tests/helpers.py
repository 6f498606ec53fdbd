"""Shared test utilities."""
import numpy as np

from implicit_hj.loss import CollocationBatch, sample_collocation
from implicit_hj.network import MlpParams, NetworkConfig, network_jet
from implicit_hj.problems import SPHERE_OFFSET


def gradient_rel_error(analytic, fd) -> float:
    """Largest deviation relative to the largest gradient entry."""
    analytic = np.ravel(analytic)
    fd = np.ravel(fd)
    scale = max(float(np.max(np.abs(analytic))), 1e-12) if analytic.size else 1.0
    return float(np.max(np.abs(analytic - fd)) / scale) if analytic.size else 0.0


def fd_param_gradient(loss, params: MlpParams, h: float = 1e-5) -> np.ndarray:
    cfg = params.config
    flat = params.flatten()
    out = np.empty_like(flat)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        up = float(np.sum(loss(MlpParams.from_flat(cfg, flat + e))))
        dn = float(np.sum(loss(MlpParams.from_flat(cfg, flat - e))))
        out[i] = (up - dn) / (2 * h)
    return out


def identity_net(dim: int, width: int, out_weight, out_bias: float) -> MlpParams:
    """One identity hidden layer; width must equal dim + 1."""
    cfg = NetworkConfig(dim=dim, depth=1, width=width, activation="identity")
    return MlpParams(
        cfg,
        [np.eye(width, dim + 1)],
        [np.zeros(width)],
        np.asarray(out_weight, dtype=np.float64).reshape(1, width),
        np.array([float(out_bias)]),
    )


NORM_KINKS = ("norm", "speed(+1)", "speed(-1)")  # H with a |p| term
AXIS_KINKS = ("nc1", "nc2")  # H with |p_i| terms


def kink_free_batch(prob, params: MlpParams, rng, m: int, margin: float, rounds: int = 200) -> CollocationBatch:
    """Collocation points whose pulled-back points stay clear of kinks of g and H."""
    keep_x, keep_t = [], []
    for _ in range(rounds):
        if sum(len(k) for k in keep_t) >= m:
            return CollocationBatch(np.concatenate(keep_x)[:m], np.concatenate(keep_t)[:m])
        b = sample_collocation(prob, 4 * m, 0, rng)
        _, p, _ = network_jet(params, b.x, b.t)
        back = b.x - b.t[:, None] * prob.dH(b.x, p)
        ok = np.ones(len(b.t), dtype=bool)
        if prob.hamiltonian.name in NORM_KINKS:
            ok &= np.linalg.norm(p, axis=1) > margin
        if prob.hamiltonian.name in AXIS_KINKS:
            ok &= np.min(np.abs(p), axis=1) > margin
        if prob.id.startswith("burgers"):
            ok &= np.min(np.abs(back), axis=1) > margin
        if prob.id.startswith("collision"):
            c = np.zeros(prob.dim)
            c[0] = SPHERE_OFFSET
            ok &= np.abs(back[:, 0]) > margin
            ok &= np.linalg.norm(back - c, axis=1) > margin
            ok &= np.linalg.norm(back + c, axis=1) > margin
        keep_x.append(b.x[ok])
        keep_t.append(b.t[ok])
    raise RuntimeError(f"no kink-free batch for {prob.id} after {rounds} rounds")


# criterion number -> list of (passed, detail); printed by the conftest summary hook
ACCEPTANCE: dict = {}


def record(criterion: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))
    return bool(passed)
