import json

import numpy as np
import pytest

from implicit_hj import timemarch as tm
from implicit_hj.loss import implicit_residual, residual
from implicit_hj.network import NetworkConfig, init_network, load_checkpoint, network
from implicit_hj.problems import get_problem
from implicit_hj.timemarch import (
    MarchAborted,
    MarchConfig,
    MarchConfigError,
    MarchSolution,
    frozen_evaluator,
    initial_evaluator,
    load_march,
    march,
    residual_step,
)
from implicit_hj.trainer import TrainConfig, TrainingDiverged, train

TINY = TrainConfig(epochs=5, batch_size=32, boundary_batch=8)


def test_tau_zero_reduces_to_seam():
    prob = get_problem("adv-sin")
    live = init_network(NetworkConfig(dim=1, depth=2, width=8), 1)
    old = init_network(NetworkConfig(dim=1, depth=2, width=8), 2)
    prev = frozen_evaluator(old)
    for x in (0.3, 1.7, 4.0):
        s = residual_step(live, prev, prob, [x], 0.0, 0.1)
        want = network(live, np.array([[x]]), np.zeros(1))[0] - network(old, np.array([[x]]), np.array([0.1]))[0]
        assert s == pytest.approx(want, abs=1e-15)


def _adv_exact_and_grad(x, t):
    a = np.exp(-t) * np.tan(x / 2)
    theta = 2 * np.arctan(a)
    u = np.sin(theta)
    du = np.cos(theta) * 2 / (1 + a * a) * np.exp(-t) * 0.5 / np.cos(x / 2) ** 2
    return u, du


def _adv_step_residual(x0, t0, tau):
    prob = get_problem("adv-sin")
    x = np.array([[x0]])
    u, du = _adv_exact_and_grad(x[:, 0], t0 + tau)
    prev = lambda y, s: prob.exact(y, np.full(y.shape[0], t0))
    return abs(float(implicit_residual(prob, x, np.array([tau]), u, du[:, None], prev, initial_time=0.1)[0]))


@pytest.mark.parametrize("t0", [0.0, 0.3])
def test_advection_step_error_is_second_order(t0):
    s1, s2, s3 = (_adv_step_residual(1.0, t0, tau) for tau in (0.05, 0.025, 0.0125))
    assert s1 <= 0.05 ** 2
    assert s1 / s2 == pytest.approx(4.0, rel=0.1)
    assert s2 / s3 == pytest.approx(4.0, rel=0.05)


@pytest.mark.parametrize("t0", [0.0, 0.3])
def test_advection_step_error_at_quarter_period(t0):
    # the characteristic has no curvature at pi/2 (sin x cos x = 0), so the
    # quadratic term drops out and halving tau cuts the residual by 8 or more
    s1, s2, s3 = (_adv_step_residual(np.pi / 2, t0, tau) for tau in (0.05, 0.025, 0.0125))
    assert s1 <= 0.05 ** 2
    assert s1 / s2 >= 7.0
    assert s2 / s3 >= 7.0


def test_state_free_step_equals_single_shot_residual():
    prob = get_problem("burgers-d1")
    live = init_network(NetworkConfig(dim=1, depth=2, width=8), 3)
    prev = initial_evaluator(prob)
    for x, t in ((0.4, 0.2), (-0.9, 0.8), (0.05, 1.0)):
        assert residual_step(live, prev, prob, [x], t, dt=0.37) == pytest.approx(residual(live, prob, [x], t), abs=1e-15)


def test_dt_must_divide_horizon():
    with pytest.raises(MarchConfigError):
        MarchConfig(dt=0.3).steps(1.0)
    with pytest.raises(MarchConfigError):
        MarchConfig(dt=0.0)
    assert MarchConfig(dt=0.1).steps(1.0) == 10
    assert MarchConfig(dt=0.25).steps(1.0) == 4


def test_locate_boundaries():
    nets = [None] * 4
    sol = MarchSolution(get_problem("adv-sin"), 0.25, nets)
    k, tau = sol.locate(np.array([0.0, 0.1, 0.25, 0.5, 0.74, 0.75, 1.0]))
    np.testing.assert_array_equal(k, [1, 1, 2, 3, 3, 4, 4])
    np.testing.assert_allclose(tau, [0.0, 0.1, 0.0, 0.0, 0.24, 0.0, 0.25], atol=1e-15)
    sol10 = MarchSolution(get_problem("adv-sin"), 0.1, [None] * 10)
    k, tau = sol10.locate(np.array([0.3, 0.7]))
    np.testing.assert_array_equal(k, [4, 8])
    np.testing.assert_allclose(tau, [0.0, 0.0], atol=1e-12)


def test_march_writes_checkpoints_and_manifest(tmp_path):
    prob = get_problem("adv-sin")
    net = NetworkConfig(dim=1, depth=2, width=8)
    res = march(prob, net, MarchConfig(dt=0.25, train=TINY), out_dir=tmp_path, log_dir=tmp_path)
    assert [p.split("/")[-1] for p in res.checkpoints] == [f"step_{k}.hjin" for k in range(1, 5)]
    body = json.loads((tmp_path / "manifest.json").read_text())
    assert body["steps"] == 4 and body["dt"] == 0.25 and body["problem"] == "adv-sin"
    assert len(res.seam_gaps) == len(res.residual_rms) == 4
    assert res.epochs == 20
    for k in range(1, 5):
        assert (tmp_path / f"step_{k}.csv").exists()
        params, meta = load_checkpoint(tmp_path / f"step_{k}.hjin")
        assert meta.problem_id == "adv-sin" and meta.epoch == 5
        assert params.flatten().tobytes() == res.solution.networks[k - 1].flatten().tobytes()
    loaded = load_march(tmp_path, prob)
    x = np.linspace(0, 2 * np.pi, 50)[:, None]
    t = np.linspace(0, 1, 50)
    np.testing.assert_array_equal(loaded(x, t), res.solution(x, t))


def test_load_march_wrong_problem(tmp_path):
    prob = get_problem("adv-sin")
    march(prob, NetworkConfig(dim=1, depth=1, width=4), MarchConfig(dt=0.5, train=TINY), out_dir=tmp_path)
    with pytest.raises(MarchConfigError):
        load_march(tmp_path, get_problem("cubic"))


def test_warm_start_uses_previous_interval():
    prob = get_problem("adv-sin")
    net = NetworkConfig(dim=1, depth=2, width=8)
    cfg = MarchConfig(dt=0.5, train=TrainConfig(epochs=0, batch_size=16))
    res = march(prob, net, cfg)
    init = init_network(net, 0).flatten()
    assert all(p.flatten().tobytes() == init.tobytes() for p in res.solution.networks)


def test_resume_reproduces_uninterrupted_run(tmp_path):
    prob = get_problem("rotation")
    net = NetworkConfig(dim=2, depth=2, width=8)
    cfg = MarchConfig(dt=0.25, train=TrainConfig(epochs=6, batch_size=32, boundary_batch=8, seed=5))
    full = march(prob, net, cfg, out_dir=tmp_path / "a")
    march(prob, net, MarchConfig(dt=0.25, train=cfg.train, horizon=0.5), out_dir=tmp_path / "b")
    resumed = march(prob, net, cfg, out_dir=tmp_path / "b", resume_step=2)
    for k in range(1, 5):
        a = (tmp_path / "a" / f"step_{k}.hjin").read_bytes()
        b = (tmp_path / "b" / f"step_{k}.hjin").read_bytes()
        assert a == b
    assert resumed.solution.steps == 4


def test_single_interval_equals_single_shot():
    prob = get_problem("burgers-d1")
    net = NetworkConfig(dim=1, depth=2, width=8)
    res = march(prob, net, MarchConfig(dt=1.0, train=TrainConfig(epochs=20, batch_size=64, seed=2)))
    single = train(prob, net, TrainConfig(epochs=20, batch_size=64, seed=2 * 1000 + 1), init=init_network(net, 2))
    assert res.reports[0].losses == single.losses
    assert res.solution.networks[0].flatten().tobytes() == single.params.flatten().tobytes()


def test_abort_keeps_partial(monkeypatch):
    prob = get_problem("adv-sin")
    real = tm.optimize
    calls = {"n": 0}

    def flaky(params, *a, **kw):
        calls["n"] += 1
        if calls["n"] == 3:
            rep = real(params, *a, **{**kw})
            raise TrainingDiverged(4, rep, "injected")
        return real(params, *a, **kw)

    monkeypatch.setattr(tm, "optimize", flaky)
    with pytest.raises(MarchAborted) as info:
        march(prob, NetworkConfig(dim=1, depth=1, width=4), MarchConfig(dt=0.25, train=TINY))
    assert info.value.step == 3
    assert info.value.partial.solution.steps == 2
    assert len(info.value.partial.reports) == 3


def test_dimension_mismatch():
    with pytest.raises(MarchConfigError):
        march(get_problem("rotation"), NetworkConfig(dim=1), MarchConfig(dt=0.5, train=TINY))
