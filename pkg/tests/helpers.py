"""Shared test utilities: finite-difference gradient checks and independent
brute-force oracles kept deliberately separate from the library code paths."""

from itertools import permutations

import numpy as np


def fd_gradcheck(eval_scalar, params, step=1e-5, max_entries=40):
    """Max relative error between analytic gradients (already accumulated in
    the params' grad buffers) and central finite differences of eval_scalar.

    Relative error uses max(|fd|, |analytic|, 1) as the denominator so
    near-zero gradients are compared absolutely.
    """
    worst = 0.0
    for p in params:
        flat = p.value.ravel()
        gflat = p.grad.ravel()
        idx = np.linspace(0, flat.size - 1, min(flat.size, max_entries)).astype(int)
        for i in np.unique(idx):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = eval_scalar()
            flat[i] = orig - step
            f_minus = eval_scalar()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            rel = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1.0)
            worst = max(worst, rel)
    return worst


def emd_bruteforce_uniform(xs, ys):
    """Exact transport cost between two equal-size uniform clouds by
    enumerating all permutations (valid because some optimal plan of the
    balanced uniform problem is a permutation)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n = xs.shape[0]
    assert ys.shape[0] == n and n <= 8
    cost = np.sqrt(((xs[:, None, :] - ys[None, :, :]) ** 2).sum(axis=2))
    best = np.inf
    for perm in permutations(range(n)):
        total = sum(cost[i, perm[i]] for i in range(n))
        best = min(best, total)
    return best / n


def density_coverage_bruteforce(real, fake, k):
    """Quadratic-scan reimplementation of the k-NN-ball metrics."""
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    n = real.shape[0]
    radii2 = []
    for i in range(n):
        dists = []
        for j in range(n):
            if i == j:
                continue
            diff = real[i] - real[j]
            dists.append(float(np.dot(diff, diff)))
        dists.sort()
        radii2.append(dists[k - 1])
    density_count = 0
    covered = 0
    for i in range(n):
        hit = False
        for g in fake:
            diff = real[i] - g
            d2 = float(np.dot(diff, diff))
            if d2 < radii2[i]:
                density_count += 1
                hit = True
        covered += hit
    return density_count / (k * fake.shape[0]), covered / n, min(radii2) == 0.0


def kde_log_density_highprec(points, bandwidth, x):
    """Naive mixture-density summation at quad-ish precision via mpmath."""
    import mpmath as mp

    with mp.workprec(113):
        h = mp.mpf(bandwidth)
        d = len(x)
        total = mp.mpf(0)
        for p in points:
            sq = mp.mpf(0)
            for a, b in zip(x, p):
                sq += (mp.mpf(a) - mp.mpf(b)) ** 2
            total += mp.e ** (-sq / (2 * h**2))
        norm = (2 * mp.pi * h**2) ** (mp.mpf(d) / 2)
        return float(mp.log(total / (len(points) * norm)))
