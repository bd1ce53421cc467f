"""Radial interaction potentials, zero-energy scattering and Jastrow profiles.

Units follow hbar = k_B = 1 and m = 1/2, so the radial zero-energy equation
for u(r) = r f(r) reads u'' = v u / 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import quad, solve_ivp

DEFAULT_TOL = 1e-10


class ScatteringError(RuntimeError):
    """Raised when the radial integration or a quadrature does not converge."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Potential:
    """Radial potential: hard core of radius ``core_radius`` plus a
    piecewise-linear tail sampled at ``nodes`` (increasing; a node listed
    twice marks a jump, and the tail is right-continuous there).

    The tail vanishes beyond the last node, which is the range R0.  A node
    list may start inside the core; samples there are ignored.
    """

    core_radius: float = 0.0
    nodes: np.ndarray = field(default_factory=lambda: _frozen([]))
    values: np.ndarray = field(default_factory=lambda: _frozen([]))

    def __post_init__(self):
        nodes = _frozen(self.nodes)
        values = _frozen(self.values)
        if nodes.shape != values.shape or nodes.ndim != 1:
            raise ValueError("nodes and values must be 1-d arrays of equal length")
        if self.core_radius < 0:
            raise ValueError("core_radius must be nonnegative")
        if nodes.size and (np.any(np.diff(nodes) < 0) or np.any(
                (np.diff(nodes)[:-1] == 0) & (np.diff(nodes)[1:] == 0))):
            raise ValueError("nodes must be increasing; a repeated node marks a jump")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("tail values must be finite and nonnegative")
        if nodes.size and nodes[0] < 0:
            raise ValueError("nodes must be nonnegative")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    @property
    def range(self) -> float:
        """Radius beyond which v vanishes identically."""
        if self.nodes.size == 0 or not np.any(self.values > 0):
            return float(self.core_radius)
        last = self.nodes[np.nonzero(self.values)[0][-1]]
        # the linear piece after the last positive sample still carries weight
        idx = np.searchsorted(self.nodes, last)
        if idx + 1 < self.nodes.size:
            last = self.nodes[idx + 1]
        return float(max(self.core_radius, last))

    @property
    def has_core(self) -> bool:
        return self.core_radius > 0

    def tail(self, r):
        """Tail value at radius r (0 outside the sampled interval)."""
        r = np.asarray(r, dtype=float)
        if self.nodes.size == 0:
            return np.zeros_like(r)
        nodes, values = self.nodes, self.values
        idx = np.clip(np.searchsorted(nodes, r, side="right") - 1, 0, max(nodes.size - 2, 0))
        if nodes.size == 1:
            out = np.where(r == nodes[0], values[0], 0.0)
        else:
            r0, r1 = nodes[idx], nodes[idx + 1]
            width = np.where(r1 > r0, r1 - r0, 1.0)
            t = np.clip((r - r0) / width, 0.0, 1.0)
            out = values[idx] + t * (values[idx + 1] - values[idx])
        return np.where((r < nodes[0]) | (r > nodes[-1]), 0.0, out)

    def __call__(self, r):
        """v(r), with +inf inside the hard core."""
        r = np.asarray(r, dtype=float)
        return np.where(r < self.core_radius, np.inf, self.tail(r))

    def breakpoints(self, start: float, stop: float) -> np.ndarray:
        """Radii in [start, stop] where the tail may fail to be smooth."""
        inner = np.unique(self.nodes[(self.nodes > start) & (self.nodes < stop)])
        return np.concatenate(([start], inner, [stop]))

    def integral_r2(self) -> float:
        """Exact value of int_core^inf v(r) r^2 dr for the tail (core excluded)."""
        total = 0.0
        for r0, r1, v0, v1 in _segments(self):
            total += _linear_r2_integral(r0, r1, v0, v1)
        return total


def _segments(pot: Potential):
    """Linear tail pieces (r0, r1, v(r0), v(r1)) restricted to r >= core."""
    nodes, values = pot.nodes, pot.values
    for i in range(nodes.size - 1):
        r0, r1 = nodes[i], nodes[i + 1]
        v0, v1 = values[i], values[i + 1]
        if r1 <= pot.core_radius or r1 == r0:
            continue
        if r0 < pot.core_radius:
            t = (pot.core_radius - r0) / (r1 - r0)
            v0 = v0 + t * (v1 - v0)
            r0 = pot.core_radius
        yield float(r0), float(r1), float(v0), float(v1)


def _linear_r2_integral(r0, r1, v0, v1) -> float:
    slope = (v1 - v0) / (r1 - r0)
    c = v0 - slope * r0
    return c * (r1**3 - r0**3) / 3 + slope * (r1**4 - r0**4) / 4


def hard_sphere(radius: float) -> Potential:
    return Potential(core_radius=float(radius))


def square_well(radius: float, height: float) -> Potential:
    """v = height on [0, radius], 0 beyond (repulsive for height > 0)."""
    return Potential(0.0, [0.0, float(radius)], [float(height), float(height)])


def zero_potential() -> Potential:
    return Potential()


def scale_potential(pot: Potential, N: float, L: float) -> Potential:
    """v_N(r) = (N/L)^2 v(N r / L); lengths shrink by L/N."""
    if N < 1 or L <= 0:
        raise ValueError("need N >= 1 and L > 0")
    s = L / N
    return Potential(pot.core_radius * s, pot.nodes * s, pot.values / s**2)


def read_potential(path: str | Path) -> Potential:
    """Parse the text format: ``core <radius>`` then ``r value`` lines."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("core"):
        raise ValueError("first line must be 'core <radius>'")
    core = float(lines[0].split()[1])
    pairs = [tuple(map(float, ln.split())) for ln in lines[1:] if ln.strip()]
    if any(len(p) != 2 for p in pairs):
        raise ValueError("expected 'r value' pairs")
    nodes = [p[0] for p in pairs]
    values = [p[1] for p in pairs]
    return Potential(core, nodes, values)


def write_potential(pot: Potential, path: str | Path) -> None:
    rows = [f"core {pot.core_radius!r}"]
    rows += [f"{r!r} {v!r}" for r, v in zip(pot.nodes.tolist(), pot.values.tolist())]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8", newline="\n")


@dataclass(frozen=True)
class ScatteringSolution:
    """Zero-energy solution u(r) = r f0(r), normalised so f0 = 1 - a/r
    beyond the range."""

    a: float
    match_radius: float
    start: float
    pieces: tuple  # (r0, r1, dense solution, log scale)
    slope_at_match: float  # u'(match) in the scale of the last piece
    log_scale_match: float

    def _raw(self, r: float) -> tuple[float, float]:
        """(u, u') at r relative to u'(match) = 1."""
        for r0, r1, sol, logs in self.pieces:
            if r <= r1:
                u, du = sol(max(r, r0))
                w = math.exp(logs - self.log_scale_match) / self.slope_at_match
                return u * w, du * w
        # beyond the last piece the solution is the free line u = r - a
        return r - self.a, 1.0

    def u(self, r: float) -> float:
        if r <= self.start:
            return 0.0
        return self._raw(r)[0]

    def f0(self, r):
        """f0(r) = u(r)/r, with f0 = 0 inside the hard core."""
        rs = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty_like(rs)
        for i, x in enumerate(rs):
            if x <= self.start:
                out[i] = 0.0 if self.start > 0 else self._raw(0.0)[1]
            elif x >= self.match_radius:
                out[i] = 1.0 - self.a / x
            else:
                out[i] = self._raw(x)[0] / x
        return out if np.ndim(r) else float(out[0])

    def df0(self, r: float) -> float:
        """Radial derivative of f0."""
        if r <= self.start:
            return 0.0
        if r >= self.match_radius:
            return self.a / r**2
        u, du = self._raw(r)
        return (du * r - u) / r**2


def solve_zero_energy(
    pot: Potential, match_radius: float | None = None, tol: float = DEFAULT_TOL
) -> ScatteringSolution:
    """Integrate u'' = v u / 2 from the core outwards with u = 0, u' = 1.

    Returns the scattering length a = R - u(R)/u'(R) at the matching radius.
    """
    rng = pot.range
    if match_radius is None:
        match_radius = 4 * rng if rng > 0 else 1.0
    if match_radius <= rng:
        raise ValueError("match_radius must exceed the potential range")
    if tol <= 0:
        raise ValueError("tol must be positive")

    start = pot.core_radius
    y = np.array([0.0, 1.0])
    log_scale = 0.0
    pieces = []
    edges = pot.breakpoints(start, match_radius)
    for r0, r1 in zip(edges[:-1], edges[1:]):
        if r1 - r0 <= 0:
            continue

        def rhs(r, yy):
            return [yy[1], 0.5 * float(pot.tail(r)) * yy[0]]

        sol = solve_ivp(
            rhs, (r0, r1), y, method="DOP853", rtol=tol, atol=tol * 1e-6, dense_output=True
        )
        if sol.status != 0:
            raise ScatteringError(f"radial integration failed on [{r0}, {r1}]: {sol.message}")
        pieces.append((float(r0), float(r1), sol.sol, log_scale))
        y = sol.y[:, -1]
        norm = max(abs(y[0]), abs(y[1]))
        y = y / norm
        log_scale += math.log(norm)

    u_end, du_end = y
    a = match_radius - u_end / du_end
    return ScatteringSolution(
        a=float(a),
        match_radius=float(match_radius),
        start=float(start),
        pieces=tuple(pieces),
        slope_at_match=float(du_end),
        log_scale_match=log_scale,
    )


def scattering_length(pot: Potential) -> float:
    rng = pot.range
    if rng == pot.core_radius:  # pure hard core: f0 = 1 - R/r exactly
        return float(pot.core_radius)
    return solve_zero_energy(pot, 4 * rng, DEFAULT_TOL).a


def square_well_scattering_length(radius: float, height: float) -> float:
    """Closed form for a repulsive well: a = R (1 - tanh(kR)/(kR)), k = sqrt(v0/2)."""
    kr = math.sqrt(height / 2) * radius
    if kr == 0:
        return 0.0
    return radius * (1 - math.tanh(kr) / kr)


@dataclass(frozen=True)
class JastrowProfile:
    """f_b(r) = f0(r)/f0(b) for r < b and 1 beyond."""

    b: float
    source: Potential
    solution: ScatteringSolution | None
    norm: float  # f0(b)

    def f(self, r):
        rs = np.asarray(r, dtype=float)
        if self.solution is None:
            return np.ones_like(rs) if rs.ndim else 1.0
        vals = np.where(rs >= self.b, 1.0, self.solution.f0(np.minimum(rs, self.b)) / self.norm)
        return vals if rs.ndim else float(vals)

    def df(self, r: float) -> float:
        if self.solution is None or r >= self.b:
            return 0.0
        return self.solution.df0(r) / self.norm

    def eta(self, r):
        """1 - f_b^2."""
        return 1.0 - np.asarray(self.f(r)) ** 2

    def xi(self, r: float) -> float:
        """(f_b')^2 + v f_b^2 / 2, with v f_b^2 = 0 inside the hard core."""
        if r < self.source.core_radius or r >= self.b:
            return 0.0
        fb = float(self.f(r))
        return self.df(r) ** 2 + 0.5 * float(self.source.tail(r)) * fb**2


def jastrow_profile(pot: Potential, b: float) -> JastrowProfile:
    if pot.range == 0:
        return JastrowProfile(float(b), pot, None, 1.0)
    match = max(4 * pot.range, 2 * b)
    sol = solve_zero_energy(pot, match)
    if b <= sol.a:
        raise ValueError(f"cutoff b={b} must exceed the scattering length {sol.a}")
    return JastrowProfile(float(b), pot, sol, float(sol.f0(b)))


@dataclass(frozen=True)
class JastrowIntegrals:
    eta_int: float
    xi_int: float
    gradf_int: float
    eta_err: float
    xi_err: float
    gradf_err: float


def _radial(fn: Callable[[float], float], edges, tol) -> tuple[float, float]:
    total, err = 0.0, 0.0
    for r0, r1 in zip(edges[:-1], edges[1:]):
        if r1 <= r0:
            continue
        val, e = quad(lambda r: 4 * math.pi * r * r * fn(r), r0, r1,
                      epsabs=0.0, epsrel=tol, limit=200)
        total += val
        err += e
    if not math.isfinite(total):
        raise ScatteringError("radial quadrature did not converge")
    return total, err


def jastrow_integrals(jp: JastrowProfile, tol: float = DEFAULT_TOL) -> JastrowIntegrals:
    """Three-dimensional integrals of eta_b, xi and |f_b'| over R^3."""
    if jp.solution is None:
        return JastrowIntegrals(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    core = jp.source.core_radius
    core_vol = 4 * math.pi * core**3 / 3
    edges = jp.source.breakpoints(core, jp.b) if jp.b > core else np.array([core, core])
    eta, eta_e = _radial(lambda r: 1.0 - float(jp.f(r)) ** 2, edges, tol)
    xi, xi_e = _radial(jp.xi, edges, tol)
    grad, grad_e = _radial(lambda r: abs(jp.df(r)), edges, tol)
    return JastrowIntegrals(eta + core_vol, xi, grad, eta_e, xi_e, grad_e)


@dataclass(frozen=True)
class CappedPotential:
    potential: Potential
    height: float
    a_tilde: float
    a_original: float
    integral_r2: float

    def lemma_lower_bound(self, phi: float, eps: float) -> float:
        """a (1 - sqrt(a/phi)) (1 - eps)."""
        a = self.a_original
        return a * (1 - math.sqrt(a / phi)) * (1 - eps)


def _capped(pot: Potential, h: float) -> Potential:
    """min(v, h) as a piecewise-linear profile, with the core filled at height h."""
    pieces = [(0.0, pot.core_radius, h, h)] if pot.has_core else []
    for r0, r1, v0, v1 in _segments(pot):
        if (v0 - h) * (v1 - h) < 0:
            rc = r0 + (h - v0) / (v1 - v0) * (r1 - r0)
            pieces += [(r0, rc, min(v0, h), h), (rc, r1, h, min(v1, h))]
        else:
            pieces.append((r0, r1, min(v0, h), min(v1, h)))
    nodes: list[float] = []
    vals: list[float] = []
    for r0, r1, v0, v1 in pieces:
        for x, y in ((r0, v0), (r1, v1)):
            if nodes and nodes[-1] == x and vals[-1] == y:
                continue
            nodes.append(x)
            vals.append(y)
    return Potential(0.0, nodes, vals)


def cap_to_integrable(pot: Potential, phi: float, eps: float) -> CappedPotential:
    """Cap v at a height h chosen by bisection so that int v~ r^2 dr <= 2 phi."""
    if phi <= 0 or not 0 < eps < 1:
        raise ValueError("need phi > 0 and 0 < eps < 1")
    a = scattering_length(pot)
    if not pot.has_core and pot.integral_r2() <= 2 * phi:
        return CappedPotential(pot, float(pot.values.max(initial=0.0)), a, a, pot.integral_r2())

    def integral(h: float) -> float:
        return _capped(pot, h).integral_r2()

    lo, hi = 0.0, 1.0
    while integral(hi) < 2 * phi:
        hi *= 2
        if not pot.has_core and hi > pot.values.max():
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if integral(mid) <= 2 * phi:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    capped = _capped(pot, lo)
    return CappedPotential(capped, lo, scattering_length(capped), a, capped.integral_r2())
