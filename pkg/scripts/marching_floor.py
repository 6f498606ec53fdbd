"""Error of a perfectly trained march for linear Hamiltonians.

For H(x, p) = b(x) . p each marching step, trained to zero residual, is the
backward Euler pull-back y -> y - tau b(y). Composing the steps gives the best
MSE any network can reach at a given dt, which separates discretization error
from training error.

    python3 scripts/marching_floor.py --problems adv-sin,rotation --dts 0.1,0.25,0.5
"""
import argparse

import numpy as np

from implicit_hj.problems import get_problem
from implicit_hj.trainer import EvalSpec, eval_points


def perfect_march(prob, x, t, dt):
    n = int(round(prob.horizon / dt))
    q = t / dt
    q = np.where(np.abs(q - np.round(q)) < 1e-9, np.round(q), q)
    k = np.clip(np.floor(q).astype(int) + 1, 1, n)  # interval boundaries go to the later interval
    tau = t - (k - 1) * dt
    ones = np.ones_like(x)

    y = x - tau[:, None] * prob.dH(x, ones)
    for j in range(n):
        live = k - 1 > j
        y[live] = y[live] - dt * prob.dH(y[live], ones[live])
    return prob.g(y)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--problems", default="adv-sin,rotation")
    ap.add_argument("--dts", default="0.1,0.25,0.5")
    ap.add_argument("--grid", type=int, default=201)
    args = ap.parse_args()

    print(f"{'problem':<10} {'dt':>6} {'MSE':>10} {'RMSE':>10}")
    for pid in args.problems.split(","):
        prob = get_problem(pid)
        x, t = eval_points(prob, EvalSpec(grid_points=args.grid))
        exact = prob.exact(x, t)
        for dt in (float(v) for v in args.dts.split(",")):
            err = perfect_march(prob, x, t, dt) - exact
            mse = float(np.mean(err ** 2))
            print(f"{pid:<10} {dt:>6g} {mse:>10.3e} {mse / np.mean(exact ** 2):>10.3e}")


if __name__ == "__main__":
    main()
