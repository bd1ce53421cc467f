"""Bosonic entropy functionals on occupation spectra and von Neumann entropies.

sigma(x) = x ln x - (1 + x) ln(1 + x) generates both the bosonic entropy
S(a) = -tr sigma(a) and the Bregman-type relative entropy built from
f(x, y) = sigma(x) - sigma(y) - sigma'(y)(x - y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import xlogy

# series order for f(x, y) when |x - y| < y / 2; 0.5^64 is below double precision
_SERIES_TERMS = 64


@dataclass(frozen=True)
class OccupationSpectrum:
    """Eigenvalues of a 1-pdm, listed in a fixed orthonormal basis."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("occupations must be finite and nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    @property
    def trace(self) -> float:
        return float(self.values.sum())


def _as_array(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("argument must be nonnegative")
    return x


def sigma(x):
    """x ln x - (1 + x) ln(1 + x), with sigma(0) = 0."""
    x = _as_array(x)
    out = xlogy(x, x) - (1 + x) * np.log1p(x)
    return out if out.ndim else float(out)


def sigma_prime(y):
    """ln(y / (1 + y))."""
    y = _as_array(y)
    with np.errstate(divide="ignore"):
        out = -np.log1p(1 / y)
    return out if out.ndim else float(out)


def _f_series(d, y):
    # f = sum_{n>=2} (-d)^n / (n(n-1)) [y^{1-n} - (1+y)^{1-n}]
    q = np.log1p(1 / y)
    total = np.zeros_like(d)
    for n in range(_SERIES_TERMS, 1, -1):  # smallest terms first
        k = n - 1
        bracket = -np.expm1(-k * q)  # 1 - (y/(1+y))^k
        total += (-d / y) ** n * y * bracket / (n * k)
    return total


def pointwise_f(x, y):
    """sigma(x) - sigma(y) - sigma'(y)(x - y) for x >= 0, y > 0.

    Equal to x ln(x/y) - (1 + x) ln((1 + x)/(1 + y)); near x = y a power series
    in (x - y)/y avoids the cancellation between the two terms.
    """
    x, y = np.broadcast_arrays(_as_array(x), _as_array(y))
    if np.any(y <= 0):
        raise ValueError("y must be positive")
    d = x - y
    near = np.abs(d) < 0.5 * y
    out = np.empty(d.shape)
    out[near] = _f_series(d[near], y[near])
    xf, yf, df = x[~near], y[~near], d[~near]
    out[~near] = xlogy(xf, xf) - xf * np.log(yf) - (1 + xf) * np.log1p(df / (1 + yf))
    out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


def bosonic_entropy(a: OccupationSpectrum) -> float:
    """S(a) = -sum_i sigma(gamma_i)."""
    return float(-np.sum(sigma(a.values)))


def overlap_matrix(U: np.ndarray) -> np.ndarray:
    """|<psi_i, phi_j>|^2 for the columns psi_i = U e_i written in the phi basis."""
    U = np.asarray(U)
    return (np.abs(U) ** 2).T


def bosonic_relative_entropy(
    a: OccupationSpectrum, b: OccupationSpectrum, overlap: np.ndarray | None = None
) -> float:
    """S(a, b) = sum_{ij} |<psi_i, phi_j>|^2 f(gamma_i, eta_j).

    ``overlap[i, j]`` pairs the eigenvector i of a with the eigenvector j of
    b; the identity is used when the bases coincide.  A positive weight on
    eta_j = 0 with gamma_i > 0 gives +inf.
    """
    g, e = a.values, b.values
    W = np.eye(len(g), len(e)) if overlap is None else np.asarray(overlap, dtype=float)
    if W.shape != (g.size, e.size):
        raise ValueError("overlap shape does not match the spectra")
    I, J = np.nonzero(W > 0)
    if I.size == 0:
        return 0.0
    gi, ej, w = g[I], e[J], W[I, J]
    zero = ej == 0
    if np.any(zero & (gi > 0)):
        return math.inf
    live = ~zero
    total = float(np.sum(w[live] * pointwise_f(gi[live], ej[live])))
    return total


def coercivity_ratio(x, y):
    """f(x, y)(1 + y)(x + y)/(x - y)^2, the pointwise coercivity quotient."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return pointwise_f(x, y) * (1 + y) * (x + y) / (x - y) ** 2


def best_coercivity_constant(lo: float = 1e-6, hi: float = 1e6, points: int = 241) -> dict:
    """Minimum of the coercivity quotient over [lo, hi]^2, x != y.

    A log grid locates the basin and a bounded local search in (ln x, ln y)
    refines it; the quotient decreases towards large occupations, so the
    minimiser sits on the upper edge of the box.
    """
    g = np.geomspace(lo, hi, points)
    X, Y = np.meshgrid(g, g, indexing="ij")
    off = X != Y
    ratio = coercivity_ratio(X[off], Y[off])
    k = int(np.argmin(ratio))
    x0 = np.log([X[off][k], Y[off][k]])
    bounds = [(math.log(lo), math.log(hi))] * 2
    res = minimize(lambda z: float(coercivity_ratio(*np.exp(z))), x0,
                   method="L-BFGS-B", bounds=bounds, options={"ftol": 1e-15, "gtol": 1e-12})
    C = min(float(ratio[k]), float(res.fun))
    x, y = np.exp(res.x) if res.fun < ratio[k] else (X[off][k], Y[off][k])
    return {"C": C, "x": float(x), "y": float(y), "grid_C": float(ratio[k]),
            "grid": (lo, hi, points)}


@dataclass(frozen=True)
class CoercivityGap:
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs


def _operators(a: OccupationSpectrum, b: OccupationSpectrum, U: np.ndarray | None):
    if U is None:
        return np.diag(a.values), np.diag(b.values)
    U = np.asarray(U)
    return U @ np.diag(a.values) @ U.conj().T, np.diag(b.values)


def coercivity_gap(
    a: OccupationSpectrum, b: OccupationSpectrum, C: float, U: np.ndarray | None = None
) -> CoercivityGap:
    """S(a, b) against C ||a - b||_1^2 / (||1 + b|| tr[a + b]).

    ``U`` maps the eigenbasis of a into that of b (identity when omitted, the
    commuting case).  Trace norms are evaluated in the eigenbasis of a - b.
    """
    if len(a) != len(b):
        raise ValueError("spectra must have equal length")
    tr = a.trace + b.trace
    if tr == 0:
        return CoercivityGap(0.0, 0.0)
    overlap = None if U is None else overlap_matrix(U)
    lhs = bosonic_relative_entropy(a, b, overlap)
    if U is None:
        diff = float(np.abs(a.values - b.values).sum())
    else:
        A, B = _operators(a, b, U)
        diff = float(np.abs(np.linalg.eigvalsh(A - B)).sum())
    rhs = C * diff**2 / ((1 + float(b.values.max())) * tr)
    return CoercivityGap(lhs, rhs)


def trace_norm_chain(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """(||a - b||_1, ||sqrt a - sqrt b||_2 (||a||_1^{1/2} + ||b||_1^{1/2})) for commuting a, b."""
    a = _as_array(a)
    b = _as_array(b)
    lhs = float(np.abs(a - b).sum())
    hs = float(np.sqrt(np.sum((np.sqrt(a) - np.sqrt(b)) ** 2)))
    return lhs, hs * (math.sqrt(a.sum()) + math.sqrt(b.sum()))


def von_neumann_entropy(rho: np.ndarray) -> float:
    """-tr rho ln rho for a density matrix."""
    w = np.linalg.eigvalsh(np.asarray(rho))
    w = np.clip(w, 0.0, None)
    return float(-np.sum(xlogy(w, w)))


@dataclass(frozen=True)
class ProjectionEntropy:
    S_hat: float
    S: float
    log_norm: float

    @property
    def margin(self) -> float:
        return self.S_hat - (self.S - self.log_norm)


def entropy_projection_check(weights, directions) -> ProjectionEntropy:
    """Entropies of Gamma = sum w_a |e_a><e_a| and Gamma_hat = sum w_a P_a.

    ``directions`` holds one unit vector per row; P_a projects onto it.  The
    inequality under test is S(Gamma_hat) >= S(Gamma) - ln ||sum_a P_a||.
    """
    w = np.asarray(weights, dtype=float)
    V = np.atleast_2d(np.asarray(directions))
    if V.shape[0] != w.size:
        raise ValueError("one direction per weight is required")
    if np.any(w < 0) or abs(w.sum() - 1) > 1e-10:
        raise ValueError("weights must form a probability vector")
    if not np.allclose(np.linalg.norm(V, axis=1), 1.0, atol=1e-10):
        raise ValueError("directions must be unit vectors")
    P = np.einsum("ai,aj->aij", V, V.conj())
    G_hat = np.einsum("a,aij->ij", w, P)
    S_hat = von_neumann_entropy(G_hat)
    S = float(-np.sum(xlogy(w, w)))
    norm = float(np.linalg.eigvalsh(P.sum(axis=0)).max())
    return ProjectionEntropy(S_hat, S, math.log(norm))


def random_unitary(n: int, rng: np.random.Generator, real: bool = False) -> np.ndarray:
    """Haar-distributed orthogonal/unitary matrix via QR with sign fix."""
    Z = rng.standard_normal((n, n))
    if not real:
        Z = Z + 1j * rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    d = np.diag(R)
    return Q * (d / np.abs(d))
