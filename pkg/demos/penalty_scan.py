"""Scan the reactive-power penalty on the first-order relaxation.

A large enough penalty on total reactive generation pushes the order-1
solution onto a rank-one point, which is a feasible (not necessarily optimal)
operating point. The scan shows where that happens and how far its cost sits
above the order-2 lower bound.

    python demos/penalty_scan.py
"""

from moment_opf import add_reactive_penalty, build_relaxation, case3, solve_relaxation, true_cost
from moment_opf.poly import quadratic_cost


def main():
    net = case3()
    bound = solve_relaxation(build_relaxation(net, 2)).lower_bound
    base = build_relaxation(net, 1)
    print(f"order-2 lower bound {bound:.2f} $/hr")
    print(f"{'eps $/MVAr-hr':>14} {'rank one':>9} {'ratio':>9} {'P_G1':>8} {'P_G2':>7} {'cost':>10} {'gap':>8}")
    for eps in (0, 100, 300, 340, 345, 400, 1000, 33.76e3):
        res = solve_relaxation(add_reactive_penalty(base, eps))
        p = res.p_gen if res.rank_one else res.lifted_p_gen
        cost = true_cost(net, res.voltages) if res.rank_one else quadratic_cost(net, p)
        gap = f"{100 * (cost - bound) / cost:7.2f}%" if res.rank_one else "      -"
        print(f"{eps:14g} {str(res.rank_one):>9} {res.rank_ratio:9.1e} {p[0]:8.2f} {p[1]:7.2f} {cost:10.1f} {gap}")
    print("rows that are not rank one show the cost at the lifted outputs, which is not an operating point")


if __name__ == "__main__":
    main()
