"""Independent exact oracles for small instances.

These work directly from the transition rates on the point-mass(1)
offspring law, where every host carries exactly one parasite and the state
reduces to the infected count ``S``.  Nothing here calls into ``bklab``.
"""
import math
from functools import lru_cache


def pointmass1_rates(S, lam, mu, N=None):
    """(death rate, infection rate) at infected count ``S``; ``N=None`` is the branching process."""
    death = mu * S
    infect = lam * S if N is None else lam * S * (N - S) / N
    return death, infect


def skeleton_distribution(S0, m, lam, mu, N=None):
    """Exact law of the first ``m`` jump kinds ('D', 'I', 'P') by enumeration."""
    out = {}

    def walk(S, prefix, prob):
        if len(prefix) == m:
            out[prefix] = out.get(prefix, 0.0) + prob
            return
        if S == 0:
            walk(0, prefix + ("P",), prob)
            return
        d, i = pointmass1_rates(S, lam, mu, N)
        total = d + i
        walk(S - 1, prefix + ("D",), prob * d / total)
        if i > 0:
            walk(S + 1, prefix + ("I",), prob * i / total)

    walk(S0, (), 1.0)
    return out


def final_size_increase_probability(S0, m, lam, mu, N=None):
    """P[S after m jumps > S0] from the enumerated skeleton law."""
    total = 0.0
    for skel, p in skeleton_distribution(S0, m, lam, mu, N).items():
        S = S0 + skel.count("I") - skel.count("D")
        if S > S0:
            total += p
    return total


def divergence_probability(S0, M, lam, mu, N):
    """P[thinning coupling diverges within the first M infection events], point mass(1) offspring.

    Recursion over (S, infections so far): each jump from S >= 1 is a death
    with probability mu/(lam+mu), else an infection that diverges with
    probability S/N.  The zero state only emits pseudoinfections.
    """
    q = lam / (lam + mu)

    @lru_cache(maxsize=None)
    def survive(S, k):
        if k == M or S == 0:
            return 1.0
        stay = (1.0 - S / N) * survive(S + 1, k + 1) if S < N else 0.0
        return (1 - q) * survive(S - 1, k) + q * stay

    return 1.0 - survive(S0, 0)


def poisson_pmf(k, mean):
    return math.exp(-mean) * mean**k / math.factorial(k)


def convolve(p, q):
    out = [0.0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        for j, b in enumerate(q):
            out[i + j] += a * b
    return out
