"""Reference computations that share no code with the package."""
import itertools

import numpy as np


def simplex_projection_bruteforce(z):
    """Euclidean projection onto the simplex by enumerating every active set.

    For a support S the equality-constrained minimiser is p_S = z_S - (sum z_S - 1)/|S|;
    among the feasible (nonnegative) candidates the one closest to z wins.
    """
    z = np.asarray(z, dtype=float)
    n = z.size
    best, best_val = None, np.inf
    for r in range(1, n + 1):
        for S in itertools.combinations(range(n), r):
            S = list(S)
            p = np.zeros(n)
            p[S] = z[S] - (z[S].sum() - 1.0) / len(S)
            if p.min() < -1e-14:
                continue
            val = np.sum((p - z) ** 2)
            if val < best_val:
                best, best_val = p, val
    return best


def dense_laplacian(n, edges, weights):
    L = np.zeros((n, n))
    for (s, t), w in zip(edges, weights):
        L[s, s] += w
        L[s, t] -= w
    return L
