"""Shared independent oracles for the test suite: exhaustive run enumeration
and exhaustive small-tree generation."""

import itertools

from treegress.trees import Tree


def brute_force_eval(pta, tree, hole_state=None):
    """Sum over every state assignment: initial mass at the root, transition
    factor per inner node, final-pair membership per leaf.  A '?' leaf is
    clamped to hole_state instead of checking finals."""
    nodes = list(tree.walk())
    addrs = [addr for addr, _ in nodes]
    total = 0.0
    for assign in itertools.product(range(pta.n_states), repeat=len(nodes)):
        state_of = dict(zip(addrs, assign))
        p = pta.initial[state_of[()]]
        for addr, node in nodes:
            if p == 0:
                break
            q = state_of[addr]
            if node.symbol.name == "?":
                if q != hole_state:
                    p = 0.0
                continue
            if node.symbol.rank == 0:
                if (q, node.symbol.name) not in pta.finals:
                    p = 0.0
                continue
            rows = pta.transitions.get(((node.symbol.name, node.symbol.rank), q), ())
            tup = tuple(state_of[addr + (i,)] for i in range(1, node.symbol.rank + 1))
            p *= next((pr for t, pr in rows if t == tup), 0.0)
        total += p
    return total


def all_trees(alphabet, max_nodes):
    """Every tree over the alphabet with at most max_nodes nodes."""
    by_size = {1: [Tree(s) for s in alphabet if s.rank == 0]}
    for size in range(2, max_nodes + 1):
        out = []
        for sym in alphabet:
            if sym.rank == 0:
                continue
            for split in _compositions(size - 1, sym.rank):
                for kids in itertools.product(*[by_size.get(k, []) for k in split]):
                    out.append(Tree(sym, kids))
        by_size[size] = out
    return [t for size in range(1, max_nodes + 1) for t in by_size[size]]


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest
