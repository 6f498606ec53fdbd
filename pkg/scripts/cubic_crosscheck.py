"""Compare a network trained on the nonconvex cubic problem with the grid reference.

    python3 scripts/cubic_crosscheck.py --epochs 20000 --nodes 801
"""
import argparse

import numpy as np

from implicit_hj.network import NetworkConfig, network
from implicit_hj.oracle import GridSpec, grid_error, lax_friedrichs_solve
from implicit_hj.problems import get_problem
from implicit_hj.trainer import TrainConfig, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=20_000)
    ap.add_argument("--batch", type=int, default=1_000)
    ap.add_argument("--nodes", type=int, default=801)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    prob = get_problem("cubic")
    report = train(prob, NetworkConfig(dim=1), TrainConfig(epochs=args.epochs, batch_size=args.batch, seed=args.seed))
    model = lambda x, t: network(report.params, x, t)  # noqa: E731
    times = np.linspace(0.0, prob.horizon, 8)
    ref = lax_friedrichs_solve(prob, GridSpec([args.nodes], times))
    print(f"final loss {report.final_loss:.3e}, {report.sec_per_epoch * 1e3:.1f} ms/epoch")
    for t in times:
        print(f"t={t:.2f}  L2 {grid_error(ref, model, t, 'l2'):.3e}  Linf {grid_error(ref, model, t, 'linf'):.3e}")


if __name__ == "__main__":
    main()
