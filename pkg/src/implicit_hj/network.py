"""Coordinate MLP u(x, t) with softplus hidden layers and its exact input gradient."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import NumericalError, Tape, Var

ACTIVATIONS = {"softplus": 0, "identity": 1}


@dataclass(frozen=True)
class NetworkConfig:
    dim: int  # spatial dimension d; the network sees d + 1 inputs
    depth: int = 5
    width: int = 64
    activation: str = "softplus"
    beta: float = 100.0
    center: Optional[tuple] = None  # spatial point subtracted from x before the first layer

    def __post_init__(self):
        if self.dim < 1 or self.depth < 1 or self.width < 1:
            raise ValueError(f"invalid network shape: {self}")
        if self.center is not None:
            object.__setattr__(self, "center", tuple(float(c) for c in self.center))
            if len(self.center) != self.dim or not np.all(np.isfinite(self.center)):
                raise ValueError(f"center needs {self.dim} finite coordinates")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.dim + 1

    def shapes(self) -> list[tuple[int, ...]]:
        """Parameter shapes in serialization order (W_0, b_0, ..., W, b)."""
        out = []
        prev = self.input_dim
        for _ in range(self.depth):
            out += [(self.width, prev), (self.width,)]
            prev = self.width
        out += [(1, self.width), (1,)]
        return out

    @property
    def param_count(self) -> int:
        return int(sum(np.prod(s) for s in self.shapes()))


@dataclass
class MlpParams:
    config: NetworkConfig
    weights: list  # hidden W_l, shape (width, prev)
    biases: list  # hidden b_l, shape (width,)
    out_weight: object  # (1, width)
    out_bias: object  # (1,)

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out + [self.out_weight, self.out_bias]

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.ravel(ad.value_of(a)) for a in self.arrays()])

    @classmethod
    def from_arrays(cls, config: NetworkConfig, arrays: list) -> "MlpParams":
        hidden = arrays[:-2]
        return cls(config, list(hidden[0::2]), list(hidden[1::2]), arrays[-2], arrays[-1])

    @classmethod
    def from_flat(cls, config: NetworkConfig, flat: np.ndarray) -> "MlpParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (config.param_count,):
            raise ValueError(f"expected {config.param_count} parameters, got {flat.shape}")
        arrays, pos = [], 0
        for s in config.shapes():
            n = int(np.prod(s))
            arrays.append(flat[pos:pos + n].reshape(s))
            pos += n
        return cls.from_arrays(config, arrays)

    def on_tape(self, tape: Tape) -> "MlpParams":
        """Leaf Vars for every parameter array, registered in serialization order."""
        return MlpParams.from_arrays(self.config, [tape.leaf(a) for a in self.arrays()])

    def copy(self) -> "MlpParams":
        return MlpParams.from_flat(self.config, self.flatten().copy())


def init_network(config: NetworkConfig, seed: int) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    arrays = []
    for s in config.shapes():
        if len(s) == 2:
            bound = 1.0 / np.sqrt(s[1])
            arrays.append(rng.uniform(-bound, bound, size=s))
        else:
            arrays.append(np.zeros(s))
    return MlpParams.from_arrays(config, arrays)


def _check(z, what: str) -> None:
    if not np.all(np.isfinite(ad.value_of(z))):
        raise NumericalError(f"non-finite values in {what}")


def _inputs(x, t, center=None):
    """Stack spatial points (M, d) and times (M,) into network inputs (M, d+1)."""
    if center is not None:
        x = x - np.asarray(center) if isinstance(x, Var) else np.asarray(x, dtype=np.float64) - np.asarray(center)
    if isinstance(x, Var) or isinstance(t, Var):
        tcol = t.reshape(-1, 1) if isinstance(t, Var) else np.reshape(t, (-1, 1))
        return ad.concat([x, tcol], axis=1)
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return np.concatenate([x, np.broadcast_to(t.reshape(-1, 1), (x.shape[0], 1))], axis=1)


def _hidden(params: MlpParams, inp):
    cfg = params.config
    if ad.value_of(inp).shape[-1] != cfg.input_dim:
        raise ValueError(f"network expects {cfg.input_dim} inputs, got {ad.value_of(inp).shape[-1]}")
    a, slopes = inp, []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = ad.affine(a, w, b)
        _check(z, f"hidden layer {i} pre-activation")
        if cfg.activation == "softplus":
            s = ad.softplus_slope(z, cfg.beta)
            a = ad.softplus(z, cfg.beta, slope=s)
        else:
            s = None
            a = z
        slopes.append(s)
    return a, slopes


def _output(params: MlpParams, a):
    u = ad.affine(a, params.out_weight, params.out_bias)[:, 0]
    _check(u, "output layer")
    return u


def network(params: MlpParams, x, t):
    """Batched u(x, t): x of shape (M, d), t of shape (M,) -> (M,)."""
    a, _ = _hidden(params, _inputs(x, t, params.config.center))
    return _output(params, a)


def network_jet(params: MlpParams, x, t):
    """Batched value and input gradient.

    Returns ``(u, grad_x, u_t)`` with shapes (M,), (M, d), (M,). The gradient is
    built from the per-layer chain rule with the same primitives as the value,
    so it can sit on a tape and be differentiated again with respect to the
    parameters.
    """
    cfg = params.config
    inp = _inputs(x, t, cfg.center)
    a, slopes = _hidden(params, inp)
    u = _output(params, a)
    e = None
    for i in range(cfg.depth - 1, -1, -1):
        upstream = params.out_weight if e is None else e @ params.weights[i + 1]
        if slopes[i] is not None:
            e = slopes[i] * upstream
        else:
            e = upstream * np.ones((ad.value_of(inp).shape[0], 1))
    g = e @ params.weights[0]
    d = cfg.dim
    return u, g[:, :d], g[:, d]


def forward(params: MlpParams, x, t) -> float:
    """u(x, t) at a single point."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float(network(params, x[None, :], np.array([t], dtype=np.float64))[0])


@dataclass(frozen=True)
class InputJet:
    value: float
    grad_x: np.ndarray
    grad_t: float


def eval_with_input_grad(params: MlpParams, x, t) -> InputJet:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != (params.config.dim,):
        raise ValueError(f"point has dimension {x.shape}, network expects ({params.config.dim},)")
    u, gx, gt = network_jet(params, x[None, :], np.array([t], dtype=np.float64))
    return InputJet(float(u[0]), np.array(gx[0]), float(gt[0]))


def lipschitz_bound(params: MlpParams) -> float:
    """Product of spectral norms; softplus slope is bounded by 1."""
    bound = 1.0
    for w in params.weights + [params.out_weight]:
        bound *= np.linalg.norm(ad.value_of(w), 2)
    return float(bound)


# ----------------------------------------------------------- checkpoints

MAGIC = b"HJIN"
VERSION = 1  # plain layout
VERSION_CENTERED = 2  # d float64 center coordinates between header and parameters


class CheckpointError(ValueError):
    """Unreadable, truncated or foreign checkpoint file."""


class ShapeMismatchError(CheckpointError):
    """Checkpoint does not match the requested network configuration."""


@dataclass
class CheckpointMeta:
    epoch: int = 0
    loss: float = float("nan")
    seed: int = 0
    problem_id: str = ""
    extra: dict = field(default_factory=dict, compare=False)


def save_checkpoint(params: MlpParams, meta: CheckpointMeta, path) -> None:
    cfg = params.config
    flat = params.flatten()
    pid = meta.problem_id.encode("utf-8")
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION if cfg.center is None else VERSION_CENTERED)
    buf += struct.pack("<IIII", cfg.dim, cfg.depth, cfg.width, ACTIVATIONS[cfg.activation])
    buf += struct.pack("<d", cfg.beta)
    buf += struct.pack("<Q", flat.size)
    if cfg.center is not None:
        buf += np.asarray(cfg.center, dtype="<f8").tobytes()
    buf += flat.astype("<f8").tobytes()
    buf += struct.pack("<QdQI", meta.epoch, meta.loss, meta.seed, len(pid))
    buf += pid
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path, expect: NetworkConfig | None = None) -> tuple[MlpParams, CheckpointMeta]:
    data = Path(path).read_bytes()
    try:
        if data[:4] != MAGIC:
            raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
        (version,) = struct.unpack_from("<I", data, 4)
        if version not in (VERSION, VERSION_CENTERED):
            raise CheckpointError(f"{path}: unsupported version {version}")
        dim, depth, width, act = struct.unpack_from("<IIII", data, 8)
        (beta,) = struct.unpack_from("<d", data, 24)
        (count,) = struct.unpack_from("<Q", data, 32)
        names = {v: k for k, v in ACTIVATIONS.items()}
        if act not in names:
            raise CheckpointError(f"{path}: unknown activation tag {act}")
        pos = 40
        center = None
        if version == VERSION_CENTERED:
            if len(data) < pos + 8 * dim:
                raise CheckpointError(f"{path}: truncated center block")
            center = tuple(np.frombuffer(data[pos:pos + 8 * dim], dtype="<f8"))
            pos += 8 * dim
        cfg = NetworkConfig(dim=dim, depth=depth, width=width, activation=names[act], beta=beta, center=center)
        if count != cfg.param_count:
            raise CheckpointError(f"{path}: parameter count {count} inconsistent with header")
        end = pos + 8 * count
        if len(data) < end:
            raise CheckpointError(f"{path}: truncated parameter block")
        flat = np.frombuffer(data[pos:end], dtype="<f8").astype(np.float64)
        epoch, loss, seed, n = struct.unpack_from("<QdQI", data, end)
        start = end + struct.calcsize("<QdQI")
        if len(data) != start + n:
            raise CheckpointError(f"{path}: truncated metadata block")
        pid = data[start:start + n].decode("utf-8")
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated file ({exc})") from None
    if expect is not None and expect != cfg:
        raise ShapeMismatchError(f"{path}: checkpoint holds {cfg}, requested {expect}")
    return MlpParams.from_flat(cfg, flat), CheckpointMeta(epoch, loss, seed, pid)
