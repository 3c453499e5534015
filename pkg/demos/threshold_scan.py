"""How many leaves does it take to learn anything about the root?

For a chain whose square is rank one (the 3-state example chain), leaves
far apart in the tree are independent of the root until enough of them are
pooled.  This script enumerates every leaf subset of the binary tree at
depth 1..3, prints the largest mutual information per subset size, and
compares it with two candidate thresholds: 2^depth and 2^(depth-1).
"""

import argparse
import itertools

from treecast import chains, exact, trees


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-depth", type=int, default=3)
    args = ap.parse_args()

    M = chains.example_chain()
    k = chains.rank_one_power(M)
    print(f"example chain: M^{k} is rank one")
    for depth in range(1, args.max_depth + 1):
        t = trees.build(2, depth)
        N = t.n_leaves
        print(f"\ndepth {depth}: {N} leaves, "
              f"2^depth = {exact.paper_threshold(k, depth):g}, "
              f"independence threshold = {exact.independence_threshold(k, depth):g}")
        for size in range(1, N + 1):
            best = max(
                (exact.mutual_information_root(exact.leaf_subset_law(t, M, None, S)), S)
                for S in itertools.combinations(range(N), size)
            )
            print(f"  |S|={size}: max I = {best[0]:.6f} nats at S={best[1]}")


if __name__ == "__main__":
    main()
