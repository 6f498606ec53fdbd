import numpy as np
import pytest
from hypothesis import given, strategies as st

from implicit_hj import problems as P
from implicit_hj.problems import (
    UnknownProblem,
    catalog_ids,
    exact_solution,
    get_problem,
    hamiltonian_grad_p,
    hamiltonian_value,
    initial_value,
)

from helpers import gradient_rel_error

ALL = catalog_ids()
WITH_EXACT = [pid for pid in ALL if get_problem(pid).has_exact]


# ------------------------------------------------------ pointwise values

def test_quadratic_value_and_grad():
    assert hamiltonian_value("burgers-d2", [0, 0], [3, 4]) == 12.5
    np.testing.assert_array_equal(hamiltonian_grad_p("burgers-d2", [0, 0], [3, 4]), [3, 4])


def test_neg_cos_sum_at_minus_one():
    assert hamiltonian_value("cos-d1", [0.3], [-1.0]) == -1.0
    assert hamiltonian_value("cos-d2", [0.3, 0.1], [-0.25, -0.75]) == -1.0


def test_nonconvex_one_at_bump_centre():
    assert hamiltonian_value("nc1", [1, 1], [0, 0]) == pytest.approx(-1.0, abs=1e-15)


def test_norm_gradient():
    np.testing.assert_allclose(hamiltonian_grad_p("collision-d2", [0, 0], [3, 4]), [0.6, 0.8], rtol=1e-15)
    np.testing.assert_array_equal(hamiltonian_grad_p("collision-d2", [0, 0], [0, 0]), [0, 0])


def test_initial_values():
    assert initial_value("burgers-d2", [1, -2]) == 3.0
    assert initial_value("collision-d2", [0, 0]) == pytest.approx(0.1, abs=1e-15)
    assert initial_value("osc-plus", [2.5, 0]) == pytest.approx(0.0, abs=1e-15)


def test_sqrt_radicand_clamped():
    assert hamiltonian_value("eikonal", [0.5, 0.5], [-2.0, -2.0]) == 0.0
    np.testing.assert_array_equal(hamiltonian_grad_p("eikonal", [0.5, 0.5], [-2.0, -2.0]), [0, 0])
    assert hamiltonian_value("combustion", [0.5, 0.5], [1.0, 2.0]) == -2.0
    sq = get_problem("eikonal", squared_radicand=True)
    assert hamiltonian_value(sq, [0.5, 0.5], [-2.0, -2.0]) == 3.0


def test_state_dependent_values():
    # c(1,1) = 8 with the bump centred at (1,1)
    assert hamiltonian_value("nc1", [1, 1], [1, 0]) == pytest.approx(-8.0 + 1.0 - 1.0)
    assert hamiltonian_value("speed-min", [1, 1], [3, 4]) == pytest.approx(20.0)
    assert hamiltonian_value("speed-max", [1, 1], [3, 4]) == pytest.approx(-20.0)
    assert hamiltonian_value("rotation", [2, 3], [1, 1]) == -3 + 2
    assert hamiltonian_value("osc-minus", [1, 0], [0, 1]) == -1.0


# ------------------------------------------------------------ exact forms

def test_burgers_exact():
    assert exact_solution("burgers-d1", [2.0], 1.0) == 1.5
    assert exact_solution("burgers-d1", [0.5], 1.0) == 0.125
    assert exact_solution("burgers-d3", [2.0, 0.5, -0.5], 1.0) == pytest.approx(1.75)


def test_concave_exact():
    assert exact_solution("concave-d1", [0.0], 1.0) == 0.5


def test_collision_exact_is_ball_infimum():
    # Brute-force infimum of g over the closed ball of radius t.
    prob = get_problem("collision-d2")
    x = np.array([0.0, 0.0])
    t = 0.5
    r = np.linspace(0, t, 401)
    a = np.linspace(0, 2 * np.pi, 721)
    pts = x + np.stack([np.outer(r, np.cos(a)).ravel(), np.outer(r, np.sin(a)).ravel()], axis=1)
    brute = prob.g(pts).min()
    assert exact_solution(prob, x, t) == pytest.approx(brute, abs=1e-12)
    assert exact_solution(prob, x, t) == pytest.approx(-0.2, abs=1e-15)


def test_collision_exact_away_from_centres_is_g_minus_t():
    prob = get_problem("collision-d2")
    x = np.array([0.9, 0.5])
    assert exact_solution(prob, x, 0.3) == pytest.approx(initial_value(prob, x) - 0.3, abs=1e-15)


def test_advection_exact():
    assert exact_solution("adv-sin", [np.pi / 2], 1.0) == pytest.approx(0.648054, abs=1e-6)
    v = np.sin(2 * np.arctan(np.exp(-1.0) * np.tan(np.pi / 4)))
    assert exact_solution("adv-sin", [np.pi / 2], 1.0) == pytest.approx(v, rel=1e-14)


def test_rotation_exact_quarter_turn():
    prob = get_problem("rotation")
    # the cone centred at (0.4,0.4) rotates counter-clockwise
    c = np.array([0.4, 0.4])
    rot = np.array([-0.4, 0.4])
    assert exact_solution(prob, rot, np.pi / 2) == pytest.approx(initial_value(prob, c), abs=1e-12)


def test_no_exact_is_none():
    assert exact_solution("cubic", [0.1], 0.2) is None


@pytest.mark.parametrize("pid", WITH_EXACT)
def test_exact_at_time_zero_equals_initial(pid):
    prob = get_problem(pid)
    rng = np.random.default_rng(0)
    lo, hi = np.array(prob.lower), np.array(prob.upper)
    x = lo + (hi - lo) * rng.random((500, prob.dim))
    np.testing.assert_allclose(prob.exact(x, np.zeros(500)), prob.g(x), rtol=0, atol=1e-14)


# ---------------------------------------------------- gradient vs FD

def _near_kink(p):
    return (
        np.min(np.abs(p)) < 1e-3
        or np.linalg.norm(p) < 1e-3
        or (p.size >= 2 and abs(p[0] + p[1] + 1.0) < 1e-3)
    )


@pytest.mark.parametrize("pid", ALL)
def test_grad_p_matches_fd(pid):
    prob = get_problem(pid)
    rng = np.random.default_rng(1)
    lo, hi = np.array(prob.lower), np.array(prob.upper)
    d = prob.dim
    checked = 0
    while checked < 50:
        x = lo + (hi - lo) * rng.random(d)
        p = rng.uniform(-2, 2, d)
        if _near_kink(p):
            continue
        a = hamiltonian_grad_p(prob, x, p)
        fd = np.array([
            (hamiltonian_value(prob, x, p + e) - hamiltonian_value(prob, x, p - e)) / 2e-6
            for e in np.eye(d) * 1e-6
        ])
        assert gradient_rel_error(a, fd) <= 1e-6, (pid, x, p)
        checked += 1


# ------------------------------------------------------------ catalog

@pytest.mark.parametrize("pid", ALL)
def test_catalog_entry_is_runnable(pid):
    prob = get_problem(pid)
    assert all(a < b for a, b in zip(prob.lower, prob.upper))
    assert prob.horizon > 0
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (7, prob.dim))
    p = rng.uniform(-1, 1, (7, prob.dim))
    for v in (prob.H(x, p), prob.g(x)):
        assert np.shape(v) == (7,) and np.all(np.isfinite(v))
    assert np.all(np.isfinite(np.broadcast_to(prob.dH(x, p), (7, prob.dim))))


@pytest.mark.parametrize("pid", ALL)
def test_state_dependent_flag_matches_behaviour(pid):
    prob = get_problem(pid)
    rng = np.random.default_rng(3)
    p = np.tile(rng.uniform(-1, 1, (1, prob.dim)), (20, 1))
    x = rng.uniform(-1, 1, (20, prob.dim))
    h = prob.H(x, p)
    varies = np.ptp(h) > 1e-12
    assert varies == prob.state_dependent


def test_catalog_has_every_family():
    expected = {
        "burgers", "concave", "collision", "cos", "riemann", "prod", "eikonal", "combustion",
        "cubic", "adv-sin", "rotation", "oc-cost", "osc-plus", "osc-minus", "nc1", "nc2",
        "speed-min", "speed-max", "ocquad-g1", "ocquad-g2", "viscosity",
    }
    assert set(P.FAMILIES) == expected


def test_dimension_suffix():
    assert get_problem("burgers-d10").dim == 10
    assert get_problem("collision-d3").dim == 3
    assert get_problem("ocquad-g2-d3").dim == 3
    assert get_problem("burgers").dim == 1


@pytest.mark.parametrize("bad", ["nope", "riemann-d3", "burgers-d0", "", "Burgers-d1"])
def test_unknown_ids(bad):
    with pytest.raises(UnknownProblem):
        get_problem(bad)


def test_periodic_boxes():
    for pid in ("cos-d1", "prod", "cubic", "adv-sin", "rotation", "oc-cost"):
        assert get_problem(pid).boundary == "periodic"
    assert get_problem("adv-sin").upper == (2 * np.pi,)


def test_initial_conditions_periodic_on_periodic_boxes():
    rng = np.random.default_rng(4)
    for pid in ("cos-d1", "cos-d2", "prod", "cubic", "adv-sin", "oc-cost"):
        prob = get_problem(pid)
        lo, hi = np.array(prob.lower), np.array(prob.upper)
        for axis in range(prob.dim):
            x = lo + (hi - lo) * rng.random((50, prob.dim))
            x[:, axis] = lo[axis]
            y = x.copy()
            y[:, axis] = hi[axis]
            np.testing.assert_allclose(prob.g(x), prob.g(y), atol=1e-12)


def test_signed_distance_unit_gradient():
    prob = get_problem("collision-d2")
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, (200, 2))
    h = 1e-6
    gx = np.stack([(prob.g(x + e) - prob.g(x - e)) / (2 * h) for e in np.eye(2) * h], axis=1)
    mask = (np.abs(x[:, 0]) > 1e-3) & (np.linalg.norm(x - [0.3, 0], axis=1) > 1e-3) & (np.linalg.norm(x + [0.3, 0], axis=1) > 1e-3)
    np.testing.assert_allclose(np.linalg.norm(gx[mask], axis=1), 1.0, atol=1e-6)


def test_ocquad_wells_minimum():
    prob = get_problem("ocquad-g2-d10")
    y1 = np.zeros(10); y1[0] = -2
    assert initial_value(prob, y1) == pytest.approx(0.5)
    y3 = np.zeros(10); y3[1] = 2
    assert initial_value(prob, y3) == pytest.approx(1.0)
    g1 = get_problem("ocquad-g1-d10")
    assert initial_value(g1, np.ones(10)) == 0.0


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.floats(0.0, 2.0))
def test_rotation_preserves_values_along_orbits(x, t):
    prob = get_problem("rotation")
    x = np.array(x)
    c, s = np.cos(t), np.sin(t)
    fwd = np.array([c * x[0] - s * x[1], s * x[0] + c * x[1]])
    assert exact_solution(prob, fwd, t) == pytest.approx(initial_value(prob, x), abs=1e-9)
