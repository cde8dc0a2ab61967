"""Map the first- and second-order feasible spaces in the generator-output plane.

Every grid point pins both generator outputs and asks each relaxation whether
the pinned problem is feasible. The character map shows the order-1 region
(``.``), the smaller order-2 region (``#``) and the cheapest order-2 cell
(``*``). The full grid is written as CSV.

    python demos/feasible_space.py --step 10 --out /tmp/space.csv
"""

import argparse

from moment_opf import SweepSpec, case3, run_sweep
from moment_opf.sweep import best_cell, feasible_region_inclusion, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--step", type=float, default=10.0, help="grid spacing in MW")
    ap.add_argument("--jobs", type=int, default=None)
    ap.add_argument("--out", help="write the sweep CSV here")
    args = ap.parse_args()

    spec = SweepSpec((300.0, 1200.0), (0.0, 50.0), step=args.step, jobs=args.jobs)
    cells = run_sweep(case3(), spec)
    best = best_cell(cells, 2)
    grid = {(c.p1, c.p2): c for c in cells}

    p1s, p2s = spec.axis(*spec.p1), spec.axis(*spec.p2)
    print("P_G2 (MW) rows, P_G1 (MW) columns 300 -> 1200")
    for p2 in p2s[::-1]:
        row = []
        for p1 in p1s:
            c = grid[(float(p1), float(p2))]
            row.append("*" if c is best else "#" if c.feasible(2) else "." if c.feasible(1) else " ")
        print(f"{p2:5.1f} |" + "".join(row))
    print(f"{len(cells)} cells; order-2 region inside order-1 region: {feasible_region_inclusion(cells)}")
    if best:
        print(f"cheapest order-2 cell ({best.p1:g}, {best.p2:g}) MW, relaxed cost {best.cost[2]:.1f} $/hr")
    if args.out:
        write_csv(cells, args.out)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
