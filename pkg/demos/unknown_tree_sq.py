"""Recover a hidden tree through a statistical-query oracle.

A dataset of m broadcast samples lives on a tree whose leaves were shuffled.
The reconstruction never sees the samples: it asks a VSTAT(m) oracle for
expectations of sibling statistics, groups leaves whose statistic is near
the maximum, and climbs one layer at a time.  An honest oracle lets it
succeed; an adversary with a small m pushes answers to the edge of the
allowed band and breaks the grouping.
"""

import argparse
import math

from treecast import broadcast, chains, phylo
from treecast.errors import GroupingFailure


def run(p, m, mode, policy, seed):
    oracle = phylo.VStatOracle(p, m, mode, policy, seed=seed)
    try:
        res = phylo.run_sq_pipeline(oracle, p.M, p.d, p.depth)
    except GroupingFailure as e:
        return f"grouping failure ({e})", oracle.audit()
    y, tau = oracle.reveal()
    ok = res.matches(p.tree, tau) and res.y_hat == y
    return f"{'recovered' if ok else 'wrong'} tree, label {res.y_hat} vs {y}", oracle.audit()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=8)
    ap.add_argument("--depth", type=int, default=2)
    ap.add_argument("--eps", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    M = chains.example_chain()
    p = broadcast.RepeatedParams(args.d, args.depth, 20_000, args.eps, M)
    gaps = phylo.exact_gaps(M, args.d, args.depth, args.eps)
    print(f"exact sibling gap per layer: {[round(g, 5) for g in gaps]}")
    print(f"default threshold alpha: {phylo.default_alpha(M, args.d, args.depth, args.eps)}")
    print(f"query bound N^2 q^2 = {phylo.query_bound(p.tree.n_leaves, M.q)}")
    for m, mode, policy in [(math.inf, "exact", "random"), (20_000, "honest", "random"),
                            (20_000, "adversarial", "random"), (30, "adversarial", "random")]:
        msg, audit = run(p, m, mode, policy, args.seed)
        print(f"m={m:<8} {mode:<12} {msg}; {audit['queries']} queries, {audit['violations']} band violations")


if __name__ == "__main__":
    main()
