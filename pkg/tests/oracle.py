"""Brute-force response probabilities, written independently of the package.

Everything here loops over explicit profiles and categories with plain
Python arithmetic.  It only reads the raw 0/1 rows and parameter lists, so a
mistake in the vectorised model code cannot leak into the reference values.
"""

import itertools


def profiles(K):
    """All profiles, first attribute varying fastest."""
    return [tuple(reversed(bits)) for bits in itertools.product((0, 1), repeat=K)]


def masters(q_row, a):
    return all(ak >= qk for ak, qk in zip(a, q_row))


def gpdina_item_prob(q_row, plus, minus, r, a):
    theta = plus if masters(q_row, a) else minus
    if r == 0:
        return 1.0 - sum(theta)
    return theta[r - 1]


def seq_item_prob(q_rows, plus, minus, r, a):
    H = len(q_rows)
    pass_prob = []
    blocked = False
    for l in range(H):
        if blocked:
            pass_prob.append(0.0)
            continue
        ok = masters(q_rows[l], a)
        pass_prob.append(plus[l] if ok else minus[l])
        if not ok and minus[l] == 0:
            blocked = True
    pass_prob.append(0.0)
    prob = 1.0
    for l in range(r):
        prob *= pass_prob[l]
    return prob * (1.0 - pass_prob[r])


def distribution(kind, items, plus, minus, p):
    """``items[j]`` lists the category rows of item ``j`` (GPDINA uses only row 0)."""
    K = len(items[0][0])
    profs = profiles(K)
    out = {}
    for r in itertools.product(*(range(len(block) + 1) for block in items)):
        total = 0.0
        for pa, a in zip(p, profs):
            term = pa
            for j, block in enumerate(items):
                if kind == "gpdina":
                    term *= gpdina_item_prob(block[0], plus[j], minus[j], r[j], a)
                else:
                    term *= seq_item_prob(block, plus[j], minus[j], r[j], a)
            total += term
        out[r] = total
    return out
