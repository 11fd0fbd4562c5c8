"""Discrete family on which two-phase MLE (MLE for phi, then MLE for psi) fails.

Truth (phi_1, psi_1): x = z = k with probability 2^-k and y = z. For i >= 2,
phi_i moves the mass of k = i onto k = 1. psi_2 ignores z: P(y=1) = 1/4,
P(y=2) = 1/2, P(y=j) = 2^-j for j >= 3.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from pretrain_lab.errors import ParameterError
from pretrain_lab.rng import as_generator

log = logging.getLogger(__name__)

PSI1, PSI2 = "psi1", "psi2"
SUPPORT_CUTOFF = 60
TV_THRESHOLD = 0.125
# (1/2) (1 - e^-1) e^-1
FAILURE_CONSTANT = 0.5 * (1.0 - math.exp(-1.0)) * math.exp(-1.0)


def phi_mass(i: int, k: int) -> Fraction:
    """P_{phi_i}(x = k, z = k); off-diagonal mass is zero."""
    if i < 1 or k < 1:
        raise ParameterError("indices start at 1")
    if i == 1:
        return Fraction(1, 2 ** k)
    if k == 1:
        return Fraction(1, 2) + Fraction(1, 2 ** i)
    if k == i:
        return Fraction(0)
    return Fraction(1, 2 ** k)


def psi2_mass(j: int) -> Fraction:
    if j == 1:
        return Fraction(1, 4)
    if j == 2:
        return Fraction(1, 2)
    return Fraction(1, 2 ** j)


def psi_mass(variant: str, j: int, z: int) -> Fraction:
    """P_psi(y = j | z)."""
    if variant == PSI1:
        return Fraction(int(j == z))
    if variant == PSI2:
        return psi2_mass(j)
    raise ParameterError(f"unknown psi variant {variant!r}")


def joint_mass(phi_index: int, psi_variant: str, x: int, y: int) -> Fraction:
    return phi_mass(phi_index, x) * psi_mass(psi_variant, y, x)


# -- sampling -------------------------------------------------------------

def sample_counter(m: int, n: int, rng):
    """Unlabeled x's and labeled (x, y) pairs under the truth (phi_1, psi_1)."""
    gen = as_generator(rng)
    unlabeled = gen.geometric(0.5, size=m)
    x_lab = gen.geometric(0.5, size=n)
    labeled = np.column_stack([x_lab, x_lab])
    big = max(unlabeled.max(initial=0), x_lab.max(initial=0))
    if big > SUPPORT_CUTOFF:
        log.warning("sampled x = %d beyond the support cutoff %d", big, SUPPORT_CUTOFF)
    return unlabeled, labeled


# -- two-phase MLE --------------------------------------------------------

def _log(p: Fraction) -> float:
    return math.log(p) if p > 0 else -math.inf


def phi_loglik(i: int, unlabeled) -> float:
    values, counts = np.unique(np.asarray(unlabeled, dtype=int), return_counts=True)
    total = 0.0
    for k, c in zip(values.tolist(), counts.tolist()):
        lp = _log(phi_mass(i, k))
        if lp == -math.inf:
            return -math.inf
        total += c * lp
    return total


def mle_phi(unlabeled) -> int:
    """argmax over phi_1 .. phi_{max(x)+1}; ties go to the smallest index."""
    unlabeled = np.asarray(unlabeled, dtype=int)
    if unlabeled.size == 0:
        raise ParameterError("need at least one unlabeled sample")
    best_i, best_ll = 1, phi_loglik(1, unlabeled)
    for i in range(2, int(unlabeled.max()) + 2):
        ll = phi_loglik(i, unlabeled)
        if ll > best_ll:
            best_i, best_ll = i, ll
    return best_i


def closed_form_phi(unlabeled) -> int:
    """Combinatorial shortcut: if 1 was observed, the smallest unobserved k >= 2."""
    seen = set(np.asarray(unlabeled, dtype=int).tolist())
    if 1 not in seen:
        return 1
    k = 2
    while k in seen:
        k += 1
    return k


def conditional_mass(phi_index: int, psi_variant: str, x: int, y: int) -> Fraction:
    """P_{phi, psi}(y | x).

    In this family z = x almost surely, so y | x follows psi(. | z = x). When
    phi gives x zero mass, x says nothing about z and the prior over z is used.
    """
    if phi_mass(phi_index, x) > 0:
        return psi_mass(psi_variant, y, x)
    if psi_variant == PSI1:
        return phi_mass(phi_index, y)
    return psi2_mass(y)


def psi_loglik(phi_index: int, psi_variant: str, labeled) -> float:
    pairs, counts = np.unique(np.asarray(labeled, dtype=int), axis=0, return_counts=True)
    total = 0.0
    for (x, y), c in zip(pairs.tolist(), counts.tolist()):
        lp = _log(conditional_mass(phi_index, psi_variant, x, y))
        if lp == -math.inf:
            return -math.inf
        total += c * lp
    return total


def mle_psi(phi_index: int, labeled) -> str:
    """Maximum-likelihood psi with phi frozen; ties go to psi_1."""
    labeled = np.atleast_2d(np.asarray(labeled, dtype=int))
    if labeled.size == 0:
        raise ParameterError("need at least one labeled sample")
    ll1 = psi_loglik(phi_index, PSI1, labeled)
    ll2 = psi_loglik(phi_index, PSI2, labeled)
    return PSI2 if ll2 > ll1 else PSI1


def two_phase_mle(unlabeled, labeled) -> tuple[int, str]:
    phi = mle_phi(unlabeled)
    return phi, mle_psi(phi, labeled)


# -- exact total variation ------------------------------------------------

def _tail_rows(same_psi: bool, N: int) -> Fraction:
    # sum_{k > N} sum_j |P(k, j) - Q(k, j)| when both phis put 2^-k on row k
    if same_psi:
        return Fraction(0)
    return 2 * (Fraction(1, 2 ** N) - Fraction(1, 3 * 4 ** N))


@lru_cache(maxsize=None)
def _tv_exact(p: tuple, q: tuple) -> Fraction:
    (ip, sp), (iq, sq) = p, q
    N = max(SUPPORT_CUTOFF, ip, iq)
    total = Fraction(0)
    for k in range(1, N + 1):
        mp, mq = phi_mass(ip, k), phi_mass(iq, k)
        for j in range(1, N + 1):
            total += abs(mp * psi_mass(sp, j, k) - mq * psi_mass(sq, j, k))
        # columns j > N: only psi_2 puts mass there, 2^-N in total per row
        ap = mp if sp == PSI2 else 0
        aq = mq if sq == PSI2 else 0
        total += abs(ap - aq) * Fraction(1, 2 ** N)
    total += _tail_rows(sp == sq, N)
    return total / 2


def tv_counter(phi_index: int, psi_variant: str, ref_phi: int = 1, ref_psi: str = PSI1) -> float:
    """Exact d_TV between the (x, y) laws of (phi_i, psi) and (ref_phi, ref_psi)."""
    psi_mass(psi_variant, 1, 1)
    psi_mass(ref_psi, 1, 1)
    a, b = (int(phi_index), psi_variant), (int(ref_phi), ref_psi)
    return float(_tv_exact(*sorted([a, b])))


def y_marginal(phi_index: int, psi_variant: str, y: int) -> Fraction:
    """P(y) with the x/z sum done to the cutoff plus the exact geometric tail."""
    if psi_variant == PSI2:
        return psi2_mass(y)
    return phi_mass(phi_index, y)


def total_mass(phi_index: int, psi_variant: str) -> Fraction:
    """Total joint mass: finite sum to the cutoff plus the analytic tail (should be exactly 1)."""
    N = max(SUPPORT_CUTOFF, phi_index)
    total = sum((phi_mass(phi_index, k) for k in range(1, N + 1)), Fraction(0))
    total += Fraction(1, 2 ** N)  # rows k > N carry 2^-k each
    if psi_variant == PSI2:
        assert sum((psi2_mass(j) for j in range(1, N + 1)), Fraction(0)) + Fraction(1, 2 ** N) == 1
    return total


# -- failure frequency ----------------------------------------------------

@dataclass
class FailureReport:
    frequency: float
    std_error: float
    threshold_met: bool
    trials: int
    m: int
    n: int
    target: float = FAILURE_CONSTANT


def failure_lower_bound(m: int) -> float:
    """(1 - (1 - 1/m)^m) ((1 - 1/m)^m - 2^-m) with m = n = 2^L."""
    a = (1.0 - 1.0 / m) ** m
    return (1.0 - a) * (a - 2.0 ** -m)


def failure_trial(m: int, n: int, rng) -> tuple[int, str, float]:
    unlabeled, labeled = sample_counter(m, n, rng)
    phi, psi = two_phase_mle(unlabeled, labeled)
    return phi, psi, tv_counter(phi, psi)


def failure_probability_mc(L_exponent: int, trials: int, rng) -> FailureReport:
    """Frequency of d_TV >= 1/8 over ``trials`` runs with m = n = 2^L_exponent."""
    if trials < 100:
        raise ParameterError("failure_probability_mc needs at least 100 trials")
    m = n = 2 ** int(L_exponent)
    gen = as_generator(rng)
    hits = 0
    for _ in range(trials):
        _, _, tv = failure_trial(m, n, gen)
        hits += tv >= TV_THRESHOLD
    freq = hits / trials
    se = math.sqrt(freq * (1.0 - freq) / trials)
    return FailureReport(freq, se, freq >= FAILURE_CONSTANT - 3.0 * se, trials, m, n)
