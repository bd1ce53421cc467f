"""Ideal Bose gas on the torus in the canonical and grand canonical ensembles.

The p = 0 orbital may carry an energy shift lambda.  Canonical quantities come
from the recursion Z(n) = (1/n) sum_k z1(k beta) Z(n - k), run in log space on a
spectrum shifted so that its minimum is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfcx, logsumexp

from .lattice import MomentumLattice, bose_occupation, integral_majorant, lattice_sum

MAX_CANONICAL_N = 100_000
SUTO_CONSTANT = 40.0 / 1.8


# --------------------------------------------------------------------------
# zeta(3/2) and the critical temperature


def zeta_three_halves(terms: int = 2000) -> tuple[float, float]:
    """zeta(3/2) by direct summation plus an Euler-Maclaurin tail.

    Returns (value, error bound); the bound is the first omitted correction.
    """
    s = 1.5
    n = np.arange(terms, 0, -1, dtype=float)  # small terms first
    head = float(np.sum(n**-s))
    K = float(terms)
    # sum_{n > K} n^-s = K^{1-s}/(s-1) - K^-s/2 + s K^{-s-1}/12 - ...
    tail = K ** (1 - s) / (s - 1) - 0.5 * K**-s + s * K ** (-s - 1) / 12
    err = s * (s + 1) * (s + 2) * K ** (-s - 3) / 720
    return head + tail, err


ZETA_3_2 = zeta_three_halves()[0]


def critical_beta(rho: float) -> float:
    """beta_c = (1/4 pi)(rho / zeta(3/2))^(-2/3) for the free gas with m = 1/2."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    return (rho / ZETA_3_2) ** (-2.0 / 3.0) / (4 * math.pi)


# --------------------------------------------------------------------------
# grand canonical ensemble


@dataclass(frozen=True)
class GrandCanonical:
    """Free Bose gas at chemical potential mu with the p = 0 level at lam."""

    beta: float
    L: float
    mu: float
    lam: float = 0.0

    def __post_init__(self):
        if self.beta <= 0 or self.L <= 0:
            raise ValueError("beta and L must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.mu >= self.ground_energy:
            raise ValueError("mu must lie below the lowest one-particle level")

    @property
    def gap(self) -> float:
        return (2 * math.pi / self.L) ** 2

    @property
    def ground_energy(self) -> float:
        return min(self.gap, self.lam)

    @property
    def lattice(self) -> MomentumLattice:
        return MomentumLattice(self.L)

    def condensate_number(self) -> float:
        x = self.beta * (self.lam - self.mu)
        return math.exp(-x) / -math.expm1(-x)  # 1/(e^x - 1) without overflow

    def thermal_number(self, tail_tol: float = 1e-12) -> float:
        # bose_occupation takes the level relative to mu: p^2 - mu
        return lattice_sum(self.lattice, bose_occupation(self.beta, self.mu), 0.0, tail_tol).value

    def mean_number(self, tail_tol: float = 1e-12) -> float:
        return self.condensate_number() + self.thermal_number(tail_tol)

    def level(self, p2: float) -> float:
        """One-particle energy of a mode with |p|^2 = p2 (p2 = 0 is the shifted zero mode)."""
        return self.lam if p2 == 0 else p2

    def occupation(self, p2) -> np.ndarray:
        """Mean occupation of a mode with |p|^2 = p2."""
        x = self.beta * (np.vectorize(self.level)(np.asarray(p2, dtype=float)) - self.mu)
        return 1.0 / np.expm1(x)

    def second_moment(self, p2) -> np.ndarray:
        x = self.beta * (np.vectorize(self.level)(np.asarray(p2, dtype=float)) - self.mu)
        return (1 + np.exp(-x)) / (np.expm1(x) * -np.expm1(-x))

    def tail_probability(self, p2: float, k: int) -> float:
        """P(n_p >= k); occupations are geometric."""
        return math.exp(-k * self.beta * (self.level(p2) - self.mu))


@dataclass(frozen=True)
class GCObservables:
    N0: float
    Nth: float
    free_energy: float
    tail_bound: float

    @property
    def N(self) -> float:
        return self.N0 + self.Nth


def gc_observables(gc: GrandCanonical, tail_tol: float = 1e-12) -> GCObservables:
    """Condensate and thermal numbers and F = mu N + (1/beta) sum_p ln(1 - e^{-beta(e_p - mu)})."""
    lat = gc.lattice
    b, mu = gc.beta, gc.mu
    occ = lattice_sum(lat, bose_occupation(b, mu), 0.0, tail_tol)

    def log_term(p):
        return -np.log1p(-np.exp(-b * (np.asarray(p) ** 2 - mu)))

    logs = lattice_sum(lat, log_term, 0.0, tail_tol)
    N0 = gc.condensate_number()
    zero_log = math.log(-math.expm1(-b * (gc.lam - mu)))
    Nbar = N0 + occ.value
    F = mu * Nbar + (zero_log - logs.value) / b
    return GCObservables(N0, occ.value, F, max(occ.tail_bound, logs.tail_bound))


def chemical_potential_bracket(beta: float, N: float, L: float, lam: float) -> float:
    """Upper end min{(2pi/L)^2, lam} - ln(1 + 1/N)/beta of the bracket for mu."""
    return min((2 * math.pi / L) ** 2, lam) - math.log1p(1.0 / N) / beta


def solve_chemical_potential(
    beta: float, N: float, L: float, lam: float = 0.0, tol: float = 1e-10
) -> GrandCanonical:
    """mu with expected particle number N.

    The root is sought in x = beta(e_min - mu) > 0, where the mean number is
    strictly decreasing; the upper bracket on mu is the one of the chemical
    potential bound, and the lower end is found by doubling.
    """
    if N <= 0:
        raise ValueError("N must be positive")
    if beta <= 0 or L <= 0 or lam < 0:
        raise ValueError("beta and L must be positive, lam nonnegative")
    e_min = min((2 * math.pi / L) ** 2, lam)

    def excess(log_x):
        mu = e_min - math.exp(log_x) / beta
        return GrandCanonical(beta, L, mu, lam).mean_number() - N

    lo = math.log(math.log1p(1.0 / N))  # mu at the upper bracket
    if excess(lo) < 0:
        raise ArithmeticError("expected number below N at the upper bracket")
    hi = lo + 1.0
    while excess(hi) > 0:
        hi += 2.0
    log_x = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    gc = GrandCanonical(beta, L, e_min - math.exp(log_x) / beta, lam)
    if abs(gc.mean_number() - N) > tol * max(1.0, N):
        raise ArithmeticError("chemical potential did not reach the requested tolerance")
    return gc


# --------------------------------------------------------------------------
# canonical ensemble


def gaussian_majorant(t: float, kappa: float, L: float, shift: float = 0.0) -> float:
    """Closed form of the lattice majorant for f(p) = exp(-t (p^2 - shift))."""
    k0 = max(kappa - math.sqrt(3.0) * 2 * math.pi / L, 0.0)
    a, c = 3 * math.pi / L, 6 * math.pi / L**2
    rt = math.sqrt(t)
    # erfc(k0 sqrt t) = erfcx(.) e^{-t k0^2}; the Gaussian factor is pulled out
    g = math.exp(-t * (k0 * k0 - shift))
    i0 = 0.5 * math.sqrt(math.pi / t) * erfcx(k0 * rt)
    i1 = 1.0 / (2 * t)
    i2 = k0 / (2 * t) + i0 / (2 * t)
    return (L / (2 * math.pi)) ** 3 * 4 * math.pi * g * (i2 + a * i1 + c * i0)


def torus_heat_sums(
    ts: np.ndarray, L: float, shift: float = 0.0, tail_tol: float = 1e-14
) -> tuple[np.ndarray, float]:
    """sum_{p != 0} exp(-t (p^2 - shift)) for each t, with a common tail bound."""
    ts = np.asarray(ts, dtype=float)
    lat = MomentumLattice(L)
    tmin = float(ts.min())
    kmax = 16
    while True:
        edge = lat.unit * math.sqrt(kmax + 1)
        tail = gaussian_majorant(tmin, edge, L, shift)
        if tail < tail_tol or kmax >= lat.max_shell:
            break
        kmax *= 2
    if tail >= tail_tol:
        raise ArithmeticError(f"heat-sum tail {tail:.3g} above {tail_tol:.3g}")
    ks, mult = lat.shells(kmax)
    e = lat.unit**2 * ks - shift
    out = np.empty_like(ts)
    for lo in range(0, ts.size, 512):
        blk = ts[lo : lo + 512]
        out[lo : lo + 512] = np.exp(-np.outer(blk, e)) @ mult
    return out, tail


class Spectrum:
    """One-particle spectrum: mode keys, their energies and the heat sums."""

    ground: float

    def energy(self, mode: Hashable) -> float:
        raise NotImplementedError

    def shifted_heat(self, ts: np.ndarray) -> tuple[np.ndarray, float]:
        """sum over all modes of exp(-t (e - ground)), with a tail bound."""
        raise NotImplementedError


@dataclass(frozen=True)
class TorusSpectrum(Spectrum):
    """p^2 on (2pi/L)Z^3 with the p = 0 level moved to lam; modes are integer triples."""

    L: float
    lam: float = 0.0
    tail_tol: float = 1e-14

    @property
    def unit(self) -> float:
        return 2 * math.pi / self.L

    @property
    def ground(self) -> float:
        return min(self.unit**2, self.lam)

    def energy(self, mode) -> float:
        n = tuple(int(c) for c in mode)
        k = n[0] ** 2 + n[1] ** 2 + n[2] ** 2
        return self.lam if k == 0 else self.unit**2 * k

    def shifted_heat(self, ts):
        ts = np.asarray(ts, dtype=float)
        rest, tail = torus_heat_sums(ts, self.L, self.ground, self.tail_tol)
        return np.exp(-ts * (self.lam - self.ground)) + rest, tail


@dataclass(frozen=True)
class FiniteSpectrum(Spectrum):
    """An explicit list of mode energies; modes are indices into it."""

    energies: tuple

    def __post_init__(self):
        object.__setattr__(self, "energies", tuple(float(e) for e in self.energies))
        if not self.energies:
            raise ValueError("need at least one mode")

    @property
    def ground(self) -> float:
        return min(self.energies)

    def energy(self, mode) -> float:
        return self.energies[int(mode)]

    def shifted_heat(self, ts):
        e = np.asarray(self.energies) - self.ground
        return np.exp(-np.outer(np.asarray(ts, dtype=float), e)).sum(axis=1), 0.0


def torus_modes(kmax: int) -> list[tuple[int, int, int]]:
    """Integer triples with |n|^2 <= kmax, ordered by |n|^2."""
    return [tuple(int(c) for c in n) for n in MomentumLattice(1.0).vectors(kmax)]


@dataclass(frozen=True)
class CanonicalEnsemble:
    """Fixed-N free Bose gas; ``log_Z[n]`` is ln Z(n) of the ground-shifted spectrum."""

    beta: float
    N: int
    spectrum: Spectrum
    log_Z: np.ndarray
    tail_bound: float

    @property
    def ground(self) -> float:
        return self.spectrum.ground

    def log_ratio(self) -> np.ndarray:
        """ln Z(N - k)/Z(N) for k = 0..N (all <= 0 on a ground-shifted spectrum)."""
        return self.log_Z[::-1] - self.log_Z[-1]

    def _weights(self, mode) -> np.ndarray:
        # P(n_mode >= k) for k = 1..N
        k = np.arange(1, self.N + 1)
        eps = self.spectrum.energy(mode) - self.ground
        return np.exp(-k * self.beta * eps + self.log_ratio()[1:])

    def occupation(self, mode) -> float:
        return float(self._weights(mode).sum())

    def second_moment(self, mode) -> float:
        k = np.arange(1, self.N + 1)
        return float(((2 * k - 1) * self._weights(mode)).sum())

    def variance(self, mode) -> float:
        return self.second_moment(mode) - self.occupation(mode) ** 2

    def tail_probability(self, mode, k: int) -> float:
        if k <= 0:
            return 1.0
        if k > self.N:
            return 0.0
        return float(self._weights(mode)[k - 1])


def _check_N(N: int) -> int:
    if int(N) != N or N < 0:
        raise ValueError("N must be a nonnegative integer")
    if N > MAX_CANONICAL_N:
        raise ValueError(f"canonical recursion limited to N <= {MAX_CANONICAL_N}")
    return int(N)


def canonical_recursion(log_z1: np.ndarray, N: int) -> np.ndarray:
    """ln Z(0..N) from ln z1(k beta), k = 1..N, via Z(n) = (1/n) sum_k z1(k) Z(n-k)."""
    log_Z = np.empty(N + 1)
    log_Z[0] = 0.0
    for n in range(1, N + 1):
        log_Z[n] = logsumexp(log_z1[:n] + log_Z[n - 1 :: -1]) - math.log(n)
    return log_Z


def canonical_ensemble(beta: float, N: int, spectrum: Spectrum) -> CanonicalEnsemble:
    N = _check_N(N)
    if beta <= 0:
        raise ValueError("beta must be positive")
    if N == 0:
        return CanonicalEnsemble(beta, 0, spectrum, np.zeros(1), 0.0)
    ts = beta * np.arange(1, N + 1)
    z1, tail = spectrum.shifted_heat(ts)
    log_Z = canonical_recursion(np.log(z1), N)
    return CanonicalEnsemble(beta, N, spectrum, log_Z, tail)


def canonical_partition(
    beta: float, N: int, L: float, lam: float = 0.0, tail_tol: float = 1e-14
) -> CanonicalEnsemble:
    """Canonical ideal gas on the torus of side L with the p = 0 level at lam."""
    return canonical_ensemble(beta, N, TorusSpectrum(L, lam, tail_tol))


@dataclass(frozen=True)
class CanonicalObservables:
    free_energy: float
    N0: float
    N0_second_moment: float
    variance_n0: float
    occupation: Callable[[Hashable], float]


def canonical_observables(ce: CanonicalEnsemble, zero_mode: Hashable = None) -> CanonicalObservables:
    """Free energy F = -(1/beta) ln Z(N) + N e_min and the zero-mode statistics."""
    if zero_mode is None:
        zero_mode = (0, 0, 0) if isinstance(ce.spectrum, TorusSpectrum) else 0
    F = -ce.log_Z[-1] / ce.beta + ce.N * ce.ground
    n0 = ce.occupation(zero_mode)
    m2 = ce.second_moment(zero_mode)
    return CanonicalObservables(F, n0, m2, m2 - n0 * n0, ce.occupation)


def joint_occupation(ce: CanonicalEnsemble, p: Hashable, q: Hashable) -> float:
    """<n_p n_q> = sum_{j,k >= 1} e^{-beta(j e_p + k e_q)} Z(N-j-k)/Z(N) for p != q."""
    if p == q:
        raise ValueError("p and q must differ; use second_moment for p = q")
    N = ce.N
    if N < 2:
        return 0.0
    ep = ce.spectrum.energy(p) - ce.ground
    eq = ce.spectrum.energy(q) - ce.ground
    j = np.arange(1, N)
    J, K = np.meshgrid(j, j, indexing="ij")
    ok = J + K <= N
    lr = ce.log_ratio()
    expo = -ce.beta * (J * ep + K * eq) + np.where(ok, lr[np.minimum(J + K, N)], -np.inf)
    return float(np.exp(expo).sum())


def enumerate_canonical(beta: float, N: int, energies: Sequence[float]) -> dict:
    """Brute-force canonical ensemble by listing every occupation vector.

    Returns Z and the arrays of mean occupations, second moments and the joint
    moment matrix <n_p n_q>.
    """
    m = len(energies)
    e = np.asarray(energies, dtype=float)
    states = []

    def rec(prefix, left, slots):
        if slots == 1:
            states.append(prefix + [left])
            return
        for n in range(left + 1):
            rec(prefix + [n], left - n, slots - 1)

    rec([], N, m)
    occ = np.array(states, dtype=float)
    w = np.exp(-beta * (occ @ e))
    Z = w.sum()
    mean = (w @ occ) / Z
    joint = (occ.T * w) @ occ / Z
    return {"Z": Z, "mean": mean, "second": np.diag(joint).copy(), "joint": joint}


# --------------------------------------------------------------------------
# comparison between the ensembles


@dataclass(frozen=True)
class EnsemblePair:
    canonical: CanonicalEnsemble
    grand: GrandCanonical
    F_canonical: float
    F_grand: float

    @property
    def sandwich_slack(self) -> float:
        """(1/beta)(ln(1 + N) + 1)."""
        return (math.log1p(self.canonical.N) + 1) / self.canonical.beta

    def sandwich_holds(self) -> bool:
        return self.F_canonical >= self.F_grand >= self.F_canonical - self.sandwich_slack


def ensemble_pair(beta: float, N: int, L: float, lam: float = 0.0) -> EnsemblePair:
    """Canonical ensemble and the grand canonical one with the same mean number."""
    ce = canonical_partition(beta, N, L, lam)
    gc = solve_chemical_potential(beta, N, L, lam)
    F_c = canonical_observables(ce).free_energy
    F_g = gc_observables(gc).free_energy
    return EnsemblePair(ce, gc, F_c, F_g)


def monotone_ratios(pair: EnsemblePair, modes: Sequence, ks: Sequence[int] = (1, 2, 5)) -> dict:
    """Canonical over grand canonical expectations of f(n_p) for f = x, x^2, 1(x >= k).

    The ratio for each f is maximised over the given modes.
    """
    ce, gc = pair.canonical, pair.grand
    out = {"x": 0.0, "x^2": 0.0}
    for k in ks:
        out[f"1(x>={k})"] = 0.0
    sp = ce.spectrum
    for mode in modes:
        p2 = sp.energy(mode) if any(mode) else 0.0
        out["x"] = max(out["x"], ce.occupation(mode) / float(gc.occupation(p2)))
        out["x^2"] = max(out["x^2"], ce.second_moment(mode) / float(gc.second_moment(p2)))
        for k in ks:
            g = gc.tail_probability(p2, k)
            if g > 0:
                out[f"1(x>={k})"] = max(out[f"1(x>={k})"], ce.tail_probability(mode, k) / g)
    return out


def thermal_occupation_discrepancy(pair: EnsemblePair, tail_tol: float = 1e-10) -> tuple[float, float]:
    """sum_{p != 0} |<n_p>_N - <n_p>_gc| summed shell by shell, with a tail bound.

    Both occupations lie below 1/(e^{beta(p^2 - e_min)} - 1), whose lattice
    majorant bounds the unsummed shells.
    """
    ce, gc = pair.canonical, pair.grand
    sp = ce.spectrum
    unit2 = sp.unit**2
    lr = ce.log_ratio()[1:]
    k = np.arange(1, ce.N + 1)
    lat = MomentumLattice(sp.L)
    envelope = bose_occupation(ce.beta, sp.ground)
    total, start, kmax = 0.0, 1, 64
    while True:
        ks, mult = lat.shells(kmax)
        sel = ks >= start
        eps = unit2 * ks[sel]
        n_c = np.exp(-ce.beta * np.outer(eps - sp.ground, k) + lr).sum(axis=1)
        n_g = gc.occupation(eps)
        total += float(mult[sel] @ np.abs(n_c - n_g))
        tail = integral_majorant(envelope, sp.unit * math.sqrt(kmax + 1), sp.L)
        if tail < tail_tol or kmax >= lat.max_shell:
            return total, tail
        start, kmax = kmax + 1, kmax * 2


def discrepancy_scale(N: int, L: float, beta: float) -> float:
    """(N ln N L^2 / beta)^{1/2} + ln N L^2 / beta."""
    lnN = math.log(N)
    return math.sqrt(N * lnN * L * L / beta) + lnN * L * L / beta


class PreciseCanonical:
    """Canonical ratios Z(N - k)/Z(N) in mpmath arithmetic for covariance signs.

    When a condensate soaks up the fluctuations, <n_p n_q> and <n_p><n_q>
    agree to many digits and double precision cannot resolve their
    difference; the working precision is raised until it can.
    """

    def __init__(self, beta: float, N: int, energies: Sequence[float], dps: int = 50):
        self.beta, self.N, self.energies = beta, _check_N(N), tuple(float(e) for e in energies)
        self.dps = dps
        self._build()

    def _build(self):
        import mpmath

        with mpmath.workdps(self.dps):
            b, e0 = mpmath.mpf(self.beta), min(self.energies)
            x = [mpmath.exp(-b * (mpmath.mpf(e) - e0)) for e in self.energies]
            z1 = [mpmath.fsum(xi**k for xi in x) for k in range(1, self.N + 1)]
            Z = [mpmath.mpf(1)]
            for n in range(1, self.N + 1):
                Z.append(mpmath.fsum(z1[k - 1] * Z[n - k] for k in range(1, n + 1)) / n)
            self._x = x
            self._ratio = [Z[self.N - k] / Z[self.N] for k in range(self.N + 1)]

    def covariance(self, p: int, q: int) -> float:
        import mpmath

        if p == q:
            raise ValueError("p and q must differ")
        N = self.N
        while True:
            with mpmath.workdps(self.dps):
                xp, xq, r = self._x[p], self._x[q], self._ratio
                n_p = mpmath.fsum(xp**j * r[j] for j in range(1, N + 1))
                n_q = mpmath.fsum(xq**k * r[k] for k in range(1, N + 1))
                joint = mpmath.fsum(xp**j * xq**k * r[j + k]
                                    for j in range(1, N) for k in range(1, N - j + 1))
                cov = joint - n_p * n_q
                if joint == 0 or abs(cov) > abs(joint) * mpmath.mpf(10) ** (10 - self.dps) \
                        or self.dps >= 800:
                    return float(cov)
            self.dps *= 2
            self._build()


def number_fluctuation_split(ce: CanonicalEnsemble, modes: Sequence) -> tuple[float, float]:
    """(Var n_0, Var sum_{p != 0} n_p) on a finite mode set, the latter from all pair moments.

    ``modes[0]`` is the zero mode.
    """
    rest = list(modes[1:])
    occ = np.array([ce.occupation(m) for m in rest])
    cov = 0.0
    for i, p in enumerate(rest):
        cov += ce.second_moment(p) - occ[i] ** 2
        for j in range(i + 1, len(rest)):
            cov += 2 * (joint_occupation(ce, p, rest[j]) - occ[i] * occ[j])
    return ce.variance(modes[0]), cov


__all__ = [
    "MAX_CANONICAL_N",
    "SUTO_CONSTANT",
    "ZETA_3_2",
    "CanonicalEnsemble",
    "CanonicalObservables",
    "EnsemblePair",
    "FiniteSpectrum",
    "GCObservables",
    "GrandCanonical",
    "Spectrum",
    "TorusSpectrum",
    "canonical_ensemble",
    "canonical_observables",
    "canonical_partition",
    "canonical_recursion",
    "chemical_potential_bracket",
    "critical_beta",
    "discrepancy_scale",
    "enumerate_canonical",
    "ensemble_pair",
    "gaussian_majorant",
    "gc_observables",
    "joint_occupation",
    "monotone_ratios",
    "number_fluctuation_split",
    "PreciseCanonical",
    "solve_chemical_potential",
    "thermal_occupation_discrepancy",
    "torus_heat_sums",
    "torus_modes",
    "zeta_three_halves",
]
