"""Train the convex/concave/collision family at d = 1 and 10 and print the error table.

A thin wrapper over ``hjsolve table``; at the default desk budget expect
roughly 6 runs x 5-10 minutes on one core.

    python3 scripts/run_table.py --epochs 20000 --out runs/table
"""
import sys

from implicit_hj.cli import main

if __name__ == "__main__":
    defaults = ["table", "--problems", "burgers,concave,collision", "--dims", "1,10"]
    sys.exit(main(defaults + sys.argv[1:]))
