"""Independent reference computations used as test oracles.

Nothing here imports the code under test.
"""

import itertools
import math

import numpy as np


def pairwise_auc(scores, labels):
    """(#concordant + 0.5 * #tied) / (n_pos * n_neg) over every positive-negative pair."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    credit = 0.0
    for p, q in itertools.product(pos, neg):
        if p > q:
            credit += 1.0
        elif p == q:
            credit += 0.5
    return credit / (len(pos) * len(neg))


def naive_loss(bias, w, x, y, kind="none", lam=0.0, alpha=0.0, anchors=()):
    """Cross-entropy summed term by term with plain math, plus the penalty."""
    total = 0.0
    for xi, yi in zip(x, y):
        z = bias + sum(a * b for a, b in zip(w, xi))
        p = 1.0 / (1.0 + math.exp(-z))
        total -= yi * math.log(p) + (1 - yi) * math.log(1 - p)
    if kind == "l2":
        total += lam * sum(v * v for v in w)
    elif kind == "ni":
        total += alpha * sum(sum((a - b) ** 2 for a, b in zip(w, c)) for c in anchors)
    return total


def central_differences(f, theta, h=1e-6):
    theta = np.asarray(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def brute_force_assignment(x, centroids):
    """Nearest centroid by explicit loops; ties go to the lowest index."""
    out = []
    for row in x:
        best, best_d = 0, math.inf
        for j, c in enumerate(centroids):
            d = sum((a - b) ** 2 for a, b in zip(row, c))
            if d < best_d:
                best, best_d = j, d
        out.append(best)
    return np.array(out)


def random_rotation(d, rng):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))
