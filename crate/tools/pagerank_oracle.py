"""Dense power-iteration PageRank over a snapshot of a JSON-lines stream.

usage: pagerank_oracle.py STREAM EPOCH:SEQ|EPOCH:* ITERS [DAMPING]
"""
import json
import sys

import numpy as np


def snapshot(path, epoch, seq):
    nodes, edges = set(), set()
    counter = {}
    for line in open(path):
        if not line.strip():
            continue
        rec = json.loads(line)
        e, op = rec["epoch"], rec["op"]
        if op in ("declare", "epoch_close"):
            continue
        s = counter.get(e, 0)
        counter[e] = s + 1
        if (e, s) > (epoch, seq):
            continue
        if op == "add_node":
            nodes.add(rec["id"])
        elif op == "add_edge":
            edges.add((rec["src"], rec["dst"], rec["slot"]))
        elif op == "del_edge":
            edges.discard((rec["src"], rec["dst"], rec["slot"]))
    return sorted(nodes), {(s, d) for s, d, _ in edges if s in nodes and d in nodes}


def pagerank(nodes, edges, iters, damping):
    n = len(nodes)
    idx = {v: i for i, v in enumerate(nodes)}
    a = np.zeros((n, n))
    for s, d in edges:
        a[idx[s], idx[d]] = 1.0
    out = a.sum(axis=1)
    x = np.full(n, 1.0 / n)
    for _ in range(iters):
        dangling = x[out == 0].sum()
        share = np.divide(x, out, out=np.zeros(n), where=out > 0)
        x = (1 - damping) / n + damping * (a.T @ share + dangling / n)
    return dict(zip(nodes, x))


def main():
    path, at, iters = sys.argv[1], sys.argv[2], int(sys.argv[3])
    damping = float(sys.argv[4]) if len(sys.argv) > 4 else 0.85
    e, s = at.split(":")
    seq = float("inf") if s == "*" else int(s)
    nodes, edges = snapshot(path, int(e), seq)
    for v, r in sorted(pagerank(nodes, edges, iters, damping).items()):
        print(json.dumps({"vertex": v, "value": float(r)}))


if __name__ == "__main__":
    main()
