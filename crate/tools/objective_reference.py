"""Straight-line evaluation of the episode objective in 40-digit arithmetic.

Prints the instance (so the Rust golden test can embed it verbatim) and the
weighted-entropy loss.

    python3 tools/objective_reference.py
"""
import numpy as np
from mpmath import mp, mpf, erf, sqrt, exp, log

mp.dps = 40

N, K, T, D, H = 4, 2, 2, 3, 1
rng = np.random.default_rng(7)
r4 = lambda *shape: np.round(rng.uniform(-1, 1, size=shape), 4)
inst = {
    "boxes": [[0, 0, 10, 10], [1, 0, 11, 10], [30, 30, 40, 42], [2, 1, 12, 11]],
    "features": r4(N, D),
    "classes": r4(K, D),
    "pool": r4(K, T, D),
    "w_down": r4(D, H),
    "b_down": r4(H),
    "w_up": r4(H, D),
    "b_up": r4(D) * 0.5,
    "delta": r4(D) * 0.5,
}
selections = [[1], [0, 1]]
top_m = [2, 0, 3]
weights = [1.0, 3.0 ** 1.1, 3.0 ** 1.1]
lam, kappa = 0.3, 5.0


def vec(x):
    return [mpf(repr(float(v))) for v in x]


def unit(v):
    n = sqrt(sum(x * x for x in v))
    return [x / n for x in v]


def gelu(x):
    return x * (1 + erf(x / sqrt(2))) / 2


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


wd = [vec(r) for r in inst["w_down"]]
bd = vec(inst["b_down"])
wu = [vec(r) for r in inst["w_up"]]
bu = vec(inst["b_up"])
delta = vec(inst["delta"])
classes = [unit(vec(c)) for c in inst["classes"]]
prompts = [[unit([a + b for a, b in zip(vec(e), delta)]) for e in inst["pool"][k]] for k in range(K)]

num = mpf(0)
den = mpf(0)
for w, i in zip(weights, top_m):
    v = vec(inst["features"][i])
    hidden = [gelu(sum(v[a] * wd[a][h] for a in range(D)) + bd[h]) for h in range(H)]
    adapted = [v[j] + sum(hidden[h] * wu[h][j] for h in range(H)) + bu[j] for j in range(D)]
    u = unit(adapted)
    g = []
    for k in range(K):
        s = dot(u, classes[k])
        zt = sum(dot(u, prompts[k][t]) for t in selections[k]) / len(selections[k])
        g.append(lam * zt + (1 - lam) * s)
    m = max(g)
    ex = [exp(kappa * (x - m)) for x in g]
    tot = sum(ex)
    p = [e / tot for e in ex]
    h = -sum(q * log(q) for q in p)
    num += mpf(repr(float(w))) * h
    den += mpf(repr(float(w)))

np.set_printoptions(precision=17)
for key, val in inst.items():
    print(key, np.asarray(val).tolist())
print("loss", mp.nstr(num / den, 25))
