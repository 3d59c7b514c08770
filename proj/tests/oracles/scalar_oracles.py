"""Independent scalar evaluations of hand-sized cases.

Pure Python, no shared code with the C++ library. Writes the values to
tests/unit/oracle_values.hpp; rerun after changing a case and commit both.
"""
import math
import sys
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "unit" / "oracle_values.hpp"


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def softmax(v):
    m = max(v)
    e = [math.exp(x - m) for x in v]
    s = sum(e)
    return [x / s for x in e]


def lse(v):
    m = max(v)
    return m + math.log(sum(math.exp(x - m) for x in v))


def matvec(row, mat):
    return [sum(row[k] * mat[k][j] for k in range(len(row))) for j in range(len(mat[0]))]


# Shared inputs, mirrored in the C++ tests.
DFL_LOGITS = [[0.1, 0.5, -0.3, 1.2, 0.0],
              [1.0, 0.0, 0.0, 0.0, 0.0],
              [-0.5, 0.25, 0.75, 0.5, -1.0],
              [0.3, 0.3, 0.9, 0.1, 0.2]]
CON_SIM = [[0.2, 0.7, -0.1], [0.5, -0.4, 0.9], [0.0, 0.0, 0.0]]
CON_LABELS = [1, 2, None]
DECODE_LOGITS = [0.3, -1.0, 2.0, 0.5]
TEXT = [0.6, -0.8]
QUERY = [[1.0, 0.5], [-0.3, 0.8]]
KEY = [[0.7, -0.2], [0.4, 1.1]]
VALUE = [[0.9, 0.3], [-0.6, 0.5]]
OUTPUT = [[1.2, -0.4], [0.2, 0.7]]
UPDATE_TOKENS = [[0.5, 0.1], [-0.2, 0.4], [0.3, -0.7]]


def dfl(logits, targets):
    total = 0.0
    for row, y in zip(logits, targets):
        left = math.floor(y)
        wl, wr = left + 1 - y, y - left
        total += wl * (lse(row) - row[left])
        if wr > 0:
            total += wr * (lse(row) - row[left + 1])
    return total / 4


def pyramid_value(level, y, x, c):
    return ((7 * y + 3 * x + 5 * c + 11 * level) % 13) / 13.0 - 0.5


def cells(extent, n):
    # n nearly equal runs, the longer ones at the high end
    base, rem = divmod(extent, n)
    sizes = [base] * (n - rem) + [base + 1] * rem
    out, start = [], 0
    for s in sizes:
        out.append(range(start, start + s))
        start += s
    return out


def tokens_for(sizes, dim):
    toks = []
    for level, h in enumerate(sizes):
        for ry in cells(h, 3):
            for rx in cells(h, 3):
                toks.append([max(pyramid_value(level, y, x, c) for y in ry for x in rx) for c in range(dim)])
    return toks


def single_head_update(text, toks):
    q = matvec(text, QUERY)
    ks = [matvec(t, KEY) for t in toks]
    vs = [matvec(t, VALUE) for t in toks]
    logits = [sum(a * b for a, b in zip(q, k)) / math.sqrt(len(q)) for k in ks]
    w = softmax(logits)
    att = [sum(w[i] * vs[i][j] for i in range(len(vs))) for j in range(len(q))]
    upd = matvec(att, OUTPUT)
    return [t + u for t, u in zip(text, upd)]


def simplified_update(text, toks):
    w = softmax([sum(a * b for a, b in zip(text, t)) for t in toks])
    agg = [sum(w[i] * toks[i][j] for i in range(len(toks))) for j in range(len(text))]
    return [t + a * t for t, a in zip(text, agg)]


def main():
    vals = {}
    vals["kSigmoidTwo"] = sigmoid(2.0)
    for i, v in enumerate(softmax([1.0, 2.0, 3.0])):
        vals[f"kSoftmax123_{i}"] = v
    vals["kDflHalfTargets"] = dfl(DFL_LOGITS, [2.5, 2.5, 2.5, 2.5])
    vals["kDflMixedTargets"] = dfl(DFL_LOGITS, [2.5, 0.0, 1.25, 3.75])
    con = [lse(r) - r[l] for r, l in zip(CON_SIM, CON_LABELS) if l is not None]
    vals["kContrastiveTwoPositives"] = sum(con) / len(con)
    p = softmax(DECODE_LOGITS)
    vals["kDecodeMixedOffset"] = sum(b * p[b] for b in range(len(p))) * 16.0
    toks = tokens_for([20, 10, 5], 2)
    assert len(toks) == 27
    upd = single_head_update(TEXT, toks)
    vals["kSingleHeadUpdate0"], vals["kSingleHeadUpdate1"] = upd
    app = simplified_update(TEXT, UPDATE_TOKENS)
    vals["kSimplifiedUpdate0"], vals["kSimplifiedUpdate1"] = app

    lines = ["#pragma once", "", "// Generated by tests/oracles/scalar_oracles.py. Do not edit by hand.", "",
             "namespace ovw::oracle {", ""]
    for k, v in vals.items():
        lines.append(f"inline constexpr double {k} = {v!r};")
    lines += ["", "}  // namespace ovw::oracle", ""]
    text = "\n".join(lines)
    if "--check" in sys.argv:
        if OUT.read_text() != text:
            sys.exit(f"{OUT} is stale; rerun {Path(__file__).name}")
        return
    OUT.write_text(text)
    print(text)


if __name__ == "__main__":
    main()
