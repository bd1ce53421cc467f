"""Truncated bosonic Fock space over a finite set of plane-wave modes.

Operators are kept as normal-ordered polynomials {(creations, annihilations):
coefficient} and turned into sparse matrices on demand.  Modes with
|p| < p_c ("low") carry the coherent-state calculus; the remaining ("high")
modes form the second tensor factor.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.laguerre import laggauss
from scipy.special import gammaln, xlogy

from .entropy import von_neumann_entropy
from .potential import JastrowProfile, Potential, jastrow_profile

MAX_DENSE_DIM = 4096

Key = tuple[tuple[int, ...], tuple[int, ...]]


class TruncationError(RuntimeError):
    """A coherent state or quadrature lost more weight than allowed."""


# --------------------------------------------------------------------------
# normal-ordered polynomials


class Poly(dict):
    """sum c a*_{i1}..a*_{im} a_{j1}..a_{jn}, keys ((i1..im), (j1..jn)) sorted."""

    @staticmethod
    def key(cre: Sequence[int], ann: Sequence[int]) -> Key:
        return tuple(sorted(cre)), tuple(sorted(ann))

    def add(self, cre, ann, c) -> "Poly":
        if c != 0:
            k = self.key(cre, ann)
            self[k] = self.get(k, 0.0) + c
        return self

    def __add__(self, other: "Poly") -> "Poly":
        out = Poly(self)
        for k, c in other.items():
            out[k] = out.get(k, 0.0) + c
        return out

    def scaled(self, s) -> "Poly":
        return Poly({k: s * c for k, c in self.items()})

    def adjoint(self) -> "Poly":
        out = Poly()
        for (cre, ann), c in self.items():
            out.add(ann, cre, np.conj(c))
        return out

    def modes(self) -> set[int]:
        return {i for cre, ann in self for i in cre + ann}

    @staticmethod
    def identity(c=1.0) -> "Poly":
        return Poly({((), ()): c})


def number_poly(modes: Sequence[int]) -> Poly:
    out = Poly()
    for i in modes:
        out.add((i,), (i,), 1.0)
    return out


# --------------------------------------------------------------------------
# occupation bases


class FockBasis:
    """Occupation vectors over ``n_modes`` modes with total number <= cap.

    With ``split`` = (m_low, low_cap) the basis is instead the product of
    {sum over the first m_low modes <= low_cap} and {sum over the rest <= cap}.
    """

    def __init__(self, n_modes: int, cap: int, split: tuple[int, int] | None = None):
        if n_modes < 0 or cap < 0:
            raise ValueError("mode count and cap must be nonnegative")
        self.n_modes = n_modes
        self.cap = cap
        self.split = split
        if split is None:
            occ = _occupations(n_modes, cap)
        else:
            m_low, low_cap = split
            lo = _occupations(m_low, low_cap)
            hi = _occupations(n_modes - m_low, cap)
            occ = np.hstack([np.repeat(lo, len(hi), axis=0), np.tile(hi, (len(lo), 1))])
        self.occ = occ
        self.occ.setflags(write=False)
        self._radix = max(cap, split[1] if split else 0) + 8
        codes = self._encode(occ)
        self._order = np.argsort(codes)
        self._sorted = codes[self._order]

    def __len__(self):
        return self.occ.shape[0]

    def _encode(self, occ: np.ndarray) -> np.ndarray:
        w = self._radix ** np.arange(self.n_modes, dtype=np.int64)
        return occ.astype(np.int64) @ w

    def index(self, occ: np.ndarray) -> np.ndarray:
        """Row indices of occupation vectors; -1 for vectors outside the basis."""
        occ = np.atleast_2d(occ)
        bad = np.any(occ < 0, axis=1) | np.any(occ >= self._radix, axis=1)
        codes = self._encode(np.where(bad[:, None], 0, occ))
        pos = np.searchsorted(self._sorted, codes)
        pos = np.minimum(pos, len(self._sorted) - 1)
        found = (self._sorted[pos] == codes) & ~bad
        return np.where(found, self._order[pos], -1)

    def matrix(self, poly: Mapping[Key, complex], modes: Sequence[int] | None = None) -> sp.csr_matrix:
        """Sparse matrix of the compression of ``poly`` to this basis.

        ``modes`` maps the polynomial's mode labels to basis columns (identity
        when omitted).  Terms whose image leaves the basis are dropped.
        """
        col = {m: i for i, m in enumerate(modes)} if modes is not None else None
        dim = len(self)
        rows, cols, vals = [], [], []
        src = np.arange(dim)
        for (cre, ann), c in poly.items():
            if c == 0:
                continue
            d_ann = np.zeros(self.n_modes, dtype=np.int64)
            d_cre = np.zeros(self.n_modes, dtype=np.int64)
            for i in ann:
                d_ann[col[i] if col else i] += 1
            for i in cre:
                d_cre[col[i] if col else i] += 1
            n = self.occ
            mid = n - d_ann
            ok = np.all(mid >= 0, axis=1)
            out = mid + d_cre
            # sqrt(n!/(n-c)!) for the annihilators, sqrt((m+d)!/m!) for the creators
            logamp = 0.5 * (gammaln(n + 1) - gammaln(np.maximum(mid, 0) + 1)).sum(axis=1)
            logamp += 0.5 * (gammaln(out + 1) - gammaln(np.maximum(mid, 0) + 1)).sum(axis=1)
            tgt = self.index(out)
            ok &= tgt >= 0
            rows.append(tgt[ok])
            cols.append(src[ok])
            vals.append(c * np.exp(logamp[ok]))
        if not rows:
            return sp.csr_matrix((dim, dim))
        M = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
        )
        return M.tocsr()


def _occupations(m: int, cap: int) -> np.ndarray:
    if m == 0:
        return np.zeros((1, 0), dtype=np.int64)
    out = []
    for total in range(cap + 1):
        # compositions of total into m parts via stars and bars
        for bars in itertools.combinations(range(total + m - 1), m - 1):
            prev, parts = -1, []
            for b in bars:
                parts.append(b - prev - 1)
                prev = b
            parts.append(total + m - 1 - prev - 1)
            out.append(parts)
    return np.array(out, dtype=np.int64)


# --------------------------------------------------------------------------
# the space


@dataclass
class TruncatedFock:
    """Fock space over ``low_modes`` + ``high_modes`` (integer vectors n, p = 2 pi n / L).

    Without ``low_cap`` the total occupation is capped at ``n_max``.  With it
    the space is the product of the low factor (<= low_cap) and the high
    factor (<= n_max), which is what the coherent-state calculus needs.
    """

    low_modes: Sequence[Sequence[int]]
    high_modes: Sequence[Sequence[int]]
    n_max: int
    L: float = 1.0
    low_cap: int | None = None

    def __post_init__(self):
        self.low_modes = [tuple(int(c) for c in p) for p in self.low_modes]
        self.high_modes = [tuple(int(c) for c in p) for p in self.high_modes]
        modes = self.low_modes + self.high_modes
        if len(set(modes)) != len(modes):
            raise ValueError("modes must be distinct")
        split = None if self.low_cap is None else (self.M, self.low_cap)
        self.basis = FockBasis(len(modes), self.n_max, split)
        self.high = FockBasis(len(self.high_modes), self.n_max)
        self.low = FockBasis(self.M, self.low_cap if self.low_cap is not None else self.n_max)

    @property
    def M(self) -> int:
        return len(self.low_modes)

    @property
    def modes(self) -> list[tuple[int, ...]]:
        return self.low_modes + self.high_modes

    @property
    def dim(self) -> int:
        return len(self.basis)

    @property
    def volume(self) -> float:
        return self.L**3

    def momentum(self, i: int) -> np.ndarray:
        return 2 * math.pi / self.L * np.asarray(self.modes[i], dtype=float)

    def low_indices(self) -> list[int]:
        return list(range(self.M))

    def high_indices(self) -> list[int]:
        return list(range(self.M, len(self.modes)))

    def matrix(self, poly: Poly) -> sp.csr_matrix:
        return self.basis.matrix(poly)

    def high_matrix(self, poly: Mapping[Key, complex]) -> sp.csr_matrix:
        """Matrix on the high factor of a polynomial in high modes only."""
        if any(i < self.M for i in Poly(poly).modes()):
            raise ValueError("polynomial involves low modes")
        return self.high.matrix(poly, self.high_indices())

    def sector(self, N: int) -> np.ndarray:
        """Basis rows with total occupation N."""
        return np.nonzero(self.basis.occ.sum(axis=1) == N)[0]


def dimension_formula(m: int, cap: int) -> int:
    """#{n in N^m : sum n <= cap} = C(cap + m, m)."""
    return math.comb(cap + m, m)


# --------------------------------------------------------------------------
# Hamiltonian


@dataclass(frozen=True)
class FockOperators:
    T: Poly
    V: Poly
    N: Poly

    @property
    def H(self) -> Poly:
        return self.T + self.V


def kinetic_poly(space: TruncatedFock, mu: float, lam: float = 0.0,
                 dispersion: Callable[[np.ndarray], float] | None = None) -> Poly:
    """sum_p (e(p) - mu + lam delta_{p,0}) a*_p a_p with e(p) = p^2 by default."""
    disp = dispersion or (lambda p: float(p @ p))
    out = Poly()
    for i, n in enumerate(space.modes):
        shift = lam if not any(n) else 0.0
        out.add((i,), (i,), disp(space.momentum(i)) + shift - mu)
    return out


def interaction_poly(space: TruncatedFock, vhat: Callable[[np.ndarray], float]) -> Poly:
    """(1/2|Lambda|) sum v(p) a*_{k+p} a*_{l-p} a_k a_l over the modes of the space.

    Scattering processes whose outgoing modes are not in the space are dropped;
    the retained set is closed under adjoints, so the result stays Hermitian.
    """
    modes = space.modes
    where = {n: i for i, n in enumerate(modes)}
    arr = [np.asarray(n) for n in modes]
    pref = 1.0 / (2 * space.volume)
    v0 = vhat(np.zeros(3))
    out = Poly()
    unit = 2 * math.pi / space.L
    for k, l in itertools.product(range(len(modes)), repeat=2):
        for r in range(len(modes)):
            s = tuple(int(c) for c in arr[k] + arr[l] - arr[r])
            t = where.get(s)
            if t is None:
                continue
            p = unit * (arr[r] - arr[k])
            v = vhat(p)
            if abs(v) > abs(v0) * (1 + 1e-12):
                warnings.warn(f"|vhat(p)| exceeds vhat(0) at p = {p}")
            out.add((r, t), (k, l), pref * v)
    return out


def build_operators(space: TruncatedFock, vhat: Callable[[np.ndarray], float],
                    mu: float = 0.0, lam: float = 0.0,
                    dispersion: Callable[[np.ndarray], float] | None = None) -> FockOperators:
    return FockOperators(
        T=kinetic_poly(space, mu, lam, dispersion),
        V=interaction_poly(space, vhat),
        N=number_poly(range(len(space.modes))),
    )


def zero_vhat(p) -> float:
    return 0.0


def commutator_norm(A: sp.spmatrix, B: sp.spmatrix) -> float:
    C = (A @ B - B @ A).tocoo()
    return float(np.abs(C.data).max()) if C.nnz else 0.0


def hermiticity_defect(A: sp.spmatrix) -> float:
    D = (A - A.conj().T).tocoo()
    return float(np.abs(D.data).max()) if D.nnz else 0.0


# --------------------------------------------------------------------------
# Gibbs states


@dataclass(frozen=True)
class GibbsState:
    rho: np.ndarray
    free_energy: float
    entropy: float
    energy: float


def _dense(H) -> np.ndarray:
    H = H.toarray() if sp.issparse(H) else np.asarray(H)
    if H.shape[0] > MAX_DENSE_DIM:
        raise ValueError(f"dense diagonalisation limited to dimension {MAX_DENSE_DIM}")
    return H


def gibbs_state(H, beta: float) -> GibbsState:
    """e^{-beta H}/tr with F = -(1/beta) ln tr e^{-beta H} and S = -tr rho ln rho."""
    H = _dense(H)
    w, U = np.linalg.eigh(H)
    x = -beta * (w - w[0])
    logZ = np.log(np.exp(x).sum())
    p = np.exp(x - logZ)
    rho = (U * p) @ U.conj().T
    S = float(-np.sum(xlogy(p, p)))
    F = float(w[0] - logZ / beta)
    return GibbsState(rho, F, S, float(p @ w))


def free_energy_functional(H, rho: np.ndarray, beta: float) -> float:
    """tr[H rho] - S(rho)/beta."""
    H = _dense(H)
    return float(np.real(np.trace(H @ rho))) - von_neumann_entropy(rho) / beta


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """G G*/tr for a complex Gaussian G of shape (dim, rank)."""
    G = rng.standard_normal((dim, rank or dim)) + 1j * rng.standard_normal((dim, rank or dim))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def sector_gibbs(space: TruncatedFock, H: Poly, beta: float, N: int) -> np.ndarray:
    """Gibbs state of H restricted to the N-particle sector, embedded in the space."""
    rows = space.sector(N)
    if rows.size == 0:
        raise ValueError("empty particle-number sector")
    Hm = space.matrix(H)[rows][:, rows]
    g = gibbs_state(Hm, beta)
    rho = np.zeros((space.dim, space.dim), dtype=complex)
    rho[np.ix_(rows, rows)] = g.rho
    return rho


# --------------------------------------------------------------------------
# coherent states and symbols


def coherent_amplitudes(basis: FockBasis, z: np.ndarray) -> np.ndarray:
    """<n|z> = e^{-|z|^2/2} prod z_p^{n_p}/sqrt(n_p!) on the rows of ``basis``."""
    z = np.asarray(z, dtype=complex).ravel()
    if z.size != basis.n_modes:
        raise ValueError("z has the wrong number of components")
    n = basis.occ
    with np.errstate(divide="ignore"):
        logabs = n @ np.log(np.abs(z)) if np.all(z != 0) else None
    if logabs is None:
        amp = np.prod(np.where(n > 0, z[None, :] ** n, 1.0), axis=1)
        amp = amp / np.exp(0.5 * gammaln(n + 1).sum(axis=1))
    else:
        phase = np.exp(1j * (n @ np.angle(z)))
        amp = phase * np.exp(logabs - 0.5 * gammaln(n + 1).sum(axis=1))
    return np.exp(-0.5 * float(np.vdot(z, z).real)) * amp


@dataclass(frozen=True)
class CoherentState:
    vector: np.ndarray
    norm_deficit: float


def coherent_state(space: TruncatedFock, z, max_deficit: float = 1e-8) -> CoherentState:
    """U(z)|vac> on the low factor; the weight lost to the cap is reported."""
    v = coherent_amplitudes(space.low, z)
    deficit = 1.0 - float(np.vdot(v, v).real)
    if deficit > max_deficit:
        raise TruncationError(f"coherent state loses {deficit:.3g} of its norm to the cap")
    return CoherentState(v, deficit)


def _split_term(cre, ann, M):
    lc = [i for i in cre if i < M]
    la = [i for i in ann if i < M]
    hc = tuple(i for i in cre if i >= M)
    ha = tuple(i for i in ann if i >= M)
    return lc, la, (hc, ha)


def _mode_power(cre: Sequence[int], ann: Sequence[int], j: int) -> tuple[int, int]:
    return sum(1 for i in cre if i == j), sum(1 for i in ann if i == j)


def upper_monomial(m: int, n: int, z: complex) -> complex:
    """Upper symbol of a*^m a^n at z: sum_k (-1)^k k! C(m,k) C(n,k) zbar^{m-k} z^{n-k}."""
    zb = np.conj(z)
    return sum(
        (-1) ** k * math.factorial(k) * math.comb(m, k) * math.comb(n, k) * zb ** (m - k) * z ** (n - k)
        for k in range(min(m, n) + 1)
    )


def lower_symbol(space: TruncatedFock, op: Poly, z) -> Poly:
    """<z|op|z> as a polynomial in the high modes: a_p -> z_p for low p."""
    z = np.asarray(z, dtype=complex)
    out = Poly()
    for (cre, ann), c in op.items():
        lc, la, hkey = _split_term(cre, ann, space.M)
        val = c * np.prod([np.conj(z[i]) for i in lc]) * np.prod([z[i] for i in la])
        out.add(*hkey, val)
    return out


def upper_symbol(space: TruncatedFock, op: Poly, z) -> Poly:
    """Upper symbol: each low factor a*^m a^n becomes its anti-normal symbol."""
    z = np.asarray(z, dtype=complex)
    out = Poly()
    for (cre, ann), c in op.items():
        lc, la, hkey = _split_term(cre, ann, space.M)
        val = c
        for j in set(lc) | set(la):
            m, n = _mode_power(lc, la, j)
            val = val * upper_monomial(m, n, z[j])
        out.add(*hkey, val)
    return out


@dataclass(frozen=True)
class Symbols:
    lower: Poly
    upper: Poly


def symbols(space: TruncatedFock, op: Poly, z) -> Symbols:
    return Symbols(lower_symbol(space, op, z), upper_symbol(space, op, z))


def lower_symbol_direct(space: TruncatedFock, op: Poly, z, max_deficit: float = 1e-13) -> np.ndarray:
    """<z|op|z> on the high factor from the full matrix and a truncated |z>."""
    if space.low_cap is None:
        raise ValueError("direct symbols need the product space (low_cap)")
    cs = coherent_state(space, z, max_deficit)
    dh = len(space.high)
    Z = sp.kron(sp.csr_matrix(cs.vector.reshape(-1, 1)), sp.identity(dh, format="csr"))
    A = space.matrix(op)
    return (Z.conj().T @ (A @ Z)).toarray()


def symbol_difference_formula(space: TruncatedFock, z, vhat: Callable[[np.ndarray], float],
                              mu: float, lam: float = 0.0) -> np.ndarray:
    """Closed form of lower minus upper symbol of T^lam + V as a high-factor matrix.

    sum_{low p}(p^2 + lam delta - mu) + (1/2|Lambda|)[v(0)(2 M N_s - M^2)
    + 2 sum_{low l, high k} v(l - k) n_k + sum_{low l, k} v(l - k)(2|z_k|^2 - 1)].
    """
    z = np.asarray(z, dtype=complex)
    M = space.M
    dh = len(space.high)
    low, high = space.low_indices(), space.high_indices()
    kin = sum(float(space.momentum(i) @ space.momentum(i)) + (lam if not any(space.modes[i]) else 0.0) - mu
              for i in low)
    Nhigh = space.high_matrix(number_poly(high)).toarray()
    z2 = np.abs(z) ** 2
    Ns = z2.sum() * np.eye(dh) + Nhigh
    v0 = vhat(np.zeros(3))
    bracket = v0 * (2 * M * Ns - M * M * np.eye(dh))
    for l in low:
        for k in high:
            nk = space.high_matrix(number_poly([k])).toarray()
            bracket += 2 * vhat(space.momentum(l) - space.momentum(k)) * nk
        for k in low:
            bracket += vhat(space.momentum(l) - space.momentum(k)) * (2 * z2[k] - 1) * np.eye(dh)
    return kin * np.eye(dh) + bracket / (2 * space.volume)


@dataclass(frozen=True)
class Z1Check:
    delta_H: np.ndarray
    bound: np.ndarray
    max_excess: float

    @property
    def holds(self) -> bool:
        return self.max_excess <= 1e-10


def z1_bound_check(space: TruncatedFock, z, vhat: Callable[[np.ndarray], float], *, mu: float,
                   lam: float, p_c: float, phi: float, N: float) -> Z1Check:
    """Delta H(z) <= M(p_c^2 - mu) + lam + (16 pi phi L/(|Lambda| N)) M N_s(z) as operators.

    Requires |vhat| <= 8 pi phi L / N on the momenta that occur.
    """
    cap = 8 * math.pi * phi * space.L / N
    for i in range(len(space.modes)):
        for j in range(len(space.modes)):
            if abs(vhat(space.momentum(i) - space.momentum(j))) > cap * (1 + 1e-12):
                raise ValueError("vhat exceeds 8 pi phi L / N")
    if any(float(space.momentum(i) @ space.momentum(i)) >= p_c**2 for i in space.low_indices()):
        raise ValueError("a low mode lies outside |p| < p_c")
    op = build_operators(space, vhat, mu, lam).H
    sym = symbols(space, op, z)
    D = (space.high_matrix(sym.lower) - space.high_matrix(sym.upper)).toarray()
    dh = len(space.high)
    Ns = float(np.sum(np.abs(np.asarray(z)) ** 2)) * np.eye(dh) + space.high_matrix(
        number_poly(space.high_indices())).toarray()
    M = space.M
    B = (M * (p_c**2 - mu) + lam) * np.eye(dh) + 16 * math.pi * phi * space.L / (space.volume * N) * M * Ns
    excess = float(np.linalg.eigvalsh((D - B + (D - B).conj().T) / 2).max())
    return Z1Check(D, B, excess)


# --------------------------------------------------------------------------
# quadrature over C (one low mode)


@dataclass(frozen=True)
class PlaneQuadrature:
    """Nodes z and weights for int g(z) dz with dz = dx dy / pi."""

    z: np.ndarray
    w: np.ndarray


def plane_quadrature(radial: int = 40, angular: int = 32) -> PlaneQuadrature:
    """Gauss-Laguerre in t = |z|^2 times a uniform phase rule.

    dz = dt dtheta / (2 pi); the Laguerre weight e^{-t} is divided out so the
    rule integrates g directly and is exact for e^{-t} times polynomials.
    """
    t, wt = laggauss(radial)
    th = 2 * math.pi * np.arange(angular) / angular
    z = (np.sqrt(t)[:, None] * np.exp(1j * th)[None, :]).ravel()
    w = (np.exp(np.log(wt) + t)[:, None] / angular * np.ones(angular)[None, :]).ravel()
    return PlaneQuadrature(z, w)


def coherent_resolution(n_check: int, quad: PlaneQuadrature | None = None) -> float:
    """max |int <n|z><z|n'> dz - delta_{nn'}| over n, n' <= n_check (one mode)."""
    quad = quad or plane_quadrature()
    basis = FockBasis(1, n_check)
    acc = np.zeros((len(basis), len(basis)), dtype=complex)
    for z, w in zip(quad.z, quad.w):
        v = coherent_amplitudes(basis, [z])
        acc += w * np.outer(v, v.conj())
    return float(np.abs(acc - np.eye(len(basis))).max())


def upper_symbol_reconstruction(m: int, n: int, cap: int, quad: PlaneQuadrature | None = None) -> float:
    """max |int upper(z)|z><z| dz - a*^m a^n| on one mode, matrix elements n <= cap."""
    quad = quad or plane_quadrature()
    basis = FockBasis(1, cap)
    target = basis.matrix(Poly().add([0] * m, [0] * n, 1.0)).toarray()
    acc = np.zeros_like(target, dtype=complex)
    for z, w in zip(quad.z, quad.w):
        v = coherent_amplitudes(basis, [z])
        acc += w * upper_monomial(m, n, z) * np.outer(v, v.conj())
    return float(np.abs(acc - target).max())


@dataclass(frozen=True)
class HusimiSlice:
    z: complex
    quad_weight: float
    weight: float
    conditional: np.ndarray


@dataclass(frozen=True)
class HusimiDecomposition:
    slices: list
    mass: float
    entropy_zeta: float

    def mean_conditional_entropy(self) -> float:
        return float(sum(s.quad_weight * s.weight * von_neumann_entropy(s.conditional)
                         for s in self.slices if s.weight > 0))


def husimi_decompose(space: TruncatedFock, Gamma: np.ndarray, quad: PlaneQuadrature | None = None,
                     mass_tol: float = 1e-8) -> HusimiDecomposition:
    """zeta(z) = tr_> <z|Gamma|z> and Gamma_z = <z|Gamma|z>/zeta(z) on quadrature nodes.

    Only one low mode is supported.  S(zeta) = -int zeta ln zeta dz.
    """
    if space.M != 1:
        raise ValueError("Husimi quadrature is implemented for one low mode")
    if space.low_cap is None:
        raise ValueError("Husimi decomposition needs the product space (low_cap)")
    quad = quad or plane_quadrature()
    dl, dh = len(space.low), len(space.high)
    G = np.asarray(Gamma).reshape(dl, dh, dl, dh)
    slices, mass, ent = [], 0.0, 0.0
    for z, w in zip(quad.z, quad.w):
        v = coherent_amplitudes(space.low, [z])
        Gt = np.einsum("i,iajb,j->ab", v.conj(), G, v)
        zeta = float(np.trace(Gt).real)
        cond = Gt / zeta if zeta > 0 else np.zeros_like(Gt)
        slices.append(HusimiSlice(z, float(w), zeta, cond))
        mass += w * zeta
        ent -= w * xlogy(zeta, zeta) if zeta > 0 else 0.0
    if abs(mass - 1) > mass_tol:
        raise TruncationError(f"Husimi mass {mass:.12g} differs from 1")
    return HusimiDecomposition(slices, float(mass), float(ent))


@dataclass(frozen=True)
class EntropySplit:
    S: float
    conditional: float
    classical: float

    @property
    def margin(self) -> float:
        return self.conditional + self.classical - self.S


def entropy_decomposition(space: TruncatedFock, Gamma: np.ndarray,
                          quad: PlaneQuadrature | None = None) -> EntropySplit:
    """S(Gamma) against int S(Gamma_z) zeta dz + S(zeta)."""
    h = husimi_decompose(space, Gamma, quad)
    return EntropySplit(von_neumann_entropy(Gamma), h.mean_conditional_entropy(), h.entropy_zeta)


# --------------------------------------------------------------------------
# reduced densities


def _multisets(m: int, k: int):
    return list(itertools.combinations_with_replacement(range(m), k))


def _orderings(ms: tuple[int, ...]) -> int:
    out = math.factorial(len(ms))
    for _, g in itertools.groupby(ms):
        out //= math.factorial(len(list(g)))
    return out


def _k_body_sup(space: TruncatedFock, Gamma: np.ndarray, k: int) -> tuple[float, bool]:
    """Upper bound on sup rho^(k) = (1/k!) <psi*^k psi^k>; exact when all moments are >= 0.

    rho^(k) is a trigonometric polynomial whose coefficients are the moments
    <a*_P a_Q>; the sum of their absolute values bounds the supremum and equals
    the value at coincident points when every moment is real and nonnegative.
    """
    m = len(space.modes)
    sets = _multisets(m, k)
    ops = [space.matrix(Poly().add((), Q, 1.0)) for Q in sets]
    G = np.asarray(Gamma)
    total, exact = 0.0, True
    for j, Q in enumerate(sets):
        BQ = ops[j] @ G
        for i, P in enumerate(sets):
            val = complex(ops[i].conj().multiply(BQ).sum())  # tr[(a_P)^* a_Q Gamma]
            if abs(val) < 1e-15:
                continue
            if abs(val.imag) > 1e-12 or val.real < -1e-12:
                exact = False
            total += _orderings(P) * _orderings(Q) * abs(val)
    return total / (math.factorial(k) * space.volume**k), exact


@dataclass(frozen=True)
class ReducedDensities:
    one_pdm: np.ndarray
    rho2_max: float
    rho3_max: float
    sup_exact: bool
    fixed_N_identity: float
    N: int
    n0: float

    def rho2_bound(self, volume: float) -> float:
        """(|Lambda|^{-2}/2)(2 N^2 - <n_0>^2)."""
        return (2 * self.N**2 - self.n0**2) / (2 * volume**2)


def reduced_densities(space: TruncatedFock, Gamma: np.ndarray, zero_mode: int | None = None) -> ReducedDensities:
    """1-pdm, suprema of the 2- and 3-particle densities and the fixed-N identity."""
    G = np.asarray(Gamma)
    occ = space.basis.occ
    tot = occ.sum(axis=1)
    support = np.nonzero(np.abs(G).sum(axis=0) + np.abs(G).sum(axis=1) > 1e-14)[0]
    Ns = set(tot[support].tolist())
    if len(Ns) != 1:
        raise ValueError("Gamma must live in a single particle-number sector")
    N = Ns.pop()
    m = len(space.modes)
    one = np.zeros((m, m), dtype=complex)
    for p in range(m):
        for q in range(m):
            A = space.matrix(Poly().add((q,), (p,), 1.0))
            one[p, q] = complex(A.multiply(G.T).sum())
    nops = [space.matrix(number_poly([p])) for p in range(m)]
    s = 0.0
    for p in range(m):
        for q in range(m):
            s += float(np.real(np.trace((nops[p] @ nops[q]) @ G)))
    if zero_mode is None:
        zero_mode = next(i for i, n in enumerate(space.modes) if not any(n))
    n0 = float(np.real(one[zero_mode, zero_mode]))
    r2, e2 = _k_body_sup(space, G, 2)
    r3, e3 = _k_body_sup(space, G, 3)
    return ReducedDensities(one, r2, r3, e2 and e3, abs(s - N * N), N, n0)


# --------------------------------------------------------------------------
# two-particle Jastrow norm


def _sphere_in_cube_area(r: np.ndarray, L: float) -> np.ndarray:
    """Area of the sphere |x| = r inside the cube [-L/2, L/2]^3, r <= L/sqrt(2)."""
    r = np.asarray(r, dtype=float)
    caps = 6 * 2 * np.pi * r * np.clip(r - L / 2, 0.0, None)
    return 4 * np.pi * r * r - caps


@dataclass(frozen=True)
class JastrowNorm:
    norm_sq: float
    lower_bound: float

    @property
    def holds(self) -> bool:
        return self.norm_sq >= self.lower_bound


def jastrow_norm_check_n2(pot: Potential, b: float, L: float, nodes: int = 400) -> JastrowNorm:
    """||F Psi||^2 for two particles in p = 0 against 1 - (4 pi/3)|Lambda| rho^2 a b^2.

    The torus integral of f_b(d(x, 0))^2 is done over the minimum-image cell,
    radially with the exact sphere-in-cube area, by composite Gauss-Legendre.
    """
    if b > L / math.sqrt(2):
        raise ValueError("b must not exceed L/sqrt(2)")
    jp: JastrowProfile = jastrow_profile(pot, b)
    a = jp.solution.a if jp.solution is not None else 0.0
    vol = L**3
    breaks = sorted({0.0, min(pot.core_radius, b), b, min(L / 2, b)}
                    | {float(x) for x in pot.breakpoints(0.0, b)})
    x, w = np.polynomial.legendre.leggauss(nodes)
    deficit = 0.0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        if hi <= lo:
            continue
        r = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        eta = 1.0 - np.asarray(jp.f(r)) ** 2
        deficit += 0.5 * (hi - lo) * float(np.sum(w * eta * _sphere_in_cube_area(r, L)))
    rho = 2.0 / vol
    return JastrowNorm(1.0 - deficit / vol, 1.0 - (4 * math.pi / 3) * vol * rho**2 * a * b * b)
