"""Solve a sparse SDPA file in dual form with cvxpy and print the optimal value.

    max F0 . Y  s.t.  Fi . Y = ci,  Y block-diagonal PSD

Negative block sizes are diagonal (nonnegative) blocks.
"""
import sys

import cvxpy as cp
import numpy as np
import scipy.sparse as sp


def read(path):
    tokens = []
    with open(path) as f:
        for line in f:
            line = line.split("*")[0].split('"')[0]
            tokens.extend(line.replace(",", " ").replace("{", " ").replace("}", " ").replace("(", " ").replace(")", " ").split())
    m = int(tokens[0])
    nblocks = int(tokens[1])
    sizes = [int(t) for t in tokens[2:2 + nblocks]]
    pos = 2 + nblocks
    c = np.array([float(t) for t in tokens[pos:pos + m]])
    pos += m
    entries = []
    while pos + 5 <= len(tokens):
        mat, blk, i, j = (int(t) for t in tokens[pos:pos + 4])
        entries.append((mat, blk - 1, i - 1, j - 1, float(tokens[pos + 4])))
        pos += 5
    return m, sizes, c, entries


def main():
    m, sizes, c, entries = read(sys.argv[1])
    variables = []
    vecs = []
    cons = []
    for s in sizes:
        if s < 0:
            v = cp.Variable(-s, nonneg=True)
            variables.append(v)
            vecs.append(v)
        else:
            v = cp.Variable((s, s), symmetric=True)
            variables.append(v)
            vecs.append(cp.vec(v, order="F"))
            cons.append(v >> 0)
    rows = [[[], [], []] for _ in sizes]
    for mat, blk, i, j, val in entries:
        s = sizes[blk]
        r = rows[blk]
        if s < 0:
            r[0].append(mat)
            r[1].append(i)
            r[2].append(val)
        else:
            r[0].append(mat)
            r[1].append(i + j * s)
            r[2].append(val)
            if i != j:
                r[0].append(mat)
                r[1].append(j + i * s)
                r[2].append(val)
    lhs = 0
    objective = 0
    for blk, s in enumerate(sizes):
        n = -s if s < 0 else s * s
        mat = sp.csr_matrix((rows[blk][2], (rows[blk][0], rows[blk][1])), shape=(m + 1, n))
        expr = mat @ vecs[blk]
        lhs = lhs + expr[1:]
        objective = objective + expr[0]
    cons.append(lhs == c)
    prob = cp.Problem(cp.Maximize(objective), cons)
    prob.solve(solver=cp.CLARABEL)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        print(f"status {prob.status}")
        sys.exit(1)
    print(repr(float(prob.value)))


if __name__ == "__main__":
    main()
