"""Free-energy formula, error budgets and exact exponent bookkeeping.

Every size that enters an error estimate is a monomial in the atoms

    N   particle number        B   beta rho^{2/3}
    L   box side               a   a_v (unscaled scattering length)
    r0  range of v

with exact rational exponents that may carry a term linear in a small slack
delta, and an optional power of ln N.  With a_N = a L/N, rho = N/L^3 and
beta = B N^{-2/3} L^2 the same monomial gives both a number (plug the atoms
in) and an asymptotic rate (read off the exponent of N at fixed B, or at
B = N^r).  Unnamed constants are set to one and only exponents are reported.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache, total_ordering
from itertools import product
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import roots_legendre

from .ideal_gas import (
    canonical_observables,
    canonical_partition,
    discrepancy_scale,
    gc_observables,
    solve_chemical_potential,
)
from .lattice import MomentumLattice, integral_majorant, lattice_sum, bose_occupation

ATOMS = ("N", "B", "L", "a", "r0")
DEFAULT_DELTA = Fraction(1, 100)


class SideConditionError(ArithmeticError):
    """An asymptotic side condition or a precondition fails; ``name`` says which."""

    def __init__(self, name: str, detail: str = ""):
        super().__init__(f"{name}: {detail}" if detail else name)
        self.name = name


# --------------------------------------------------------------------------
# exact exponents


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


@total_ordering
@dataclass(frozen=True)
class Rate:
    """value + delta_coef * delta, ordered as delta -> 0+ (lexicographically)."""

    value: Fraction
    delta_coef: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "value", _frac(self.value))
        object.__setattr__(self, "delta_coef", _frac(self.delta_coef))

    @classmethod
    def of(cls, x) -> Rate:
        return x if isinstance(x, Rate) else cls(_frac(x))

    def __add__(self, o):
        o = Rate.of(o)
        return Rate(self.value + o.value, self.delta_coef + o.delta_coef)

    __radd__ = __add__

    def __neg__(self):
        return Rate(-self.value, -self.delta_coef)

    def __sub__(self, o):
        return self + (-Rate.of(o))

    def __rsub__(self, o):
        return Rate.of(o) - self

    def __mul__(self, q):
        q = _frac(q)
        return Rate(self.value * q, self.delta_coef * q)

    __rmul__ = __mul__

    def __truediv__(self, q):
        return self * (1 / _frac(q))

    def _key(self):
        return (self.value, self.delta_coef)

    def __eq__(self, o):
        if isinstance(o, (int, Fraction)):
            o = Rate(o)
        return isinstance(o, Rate) and self._key() == o._key()

    def __hash__(self):
        return hash(self._key())

    def __lt__(self, o):
        return self._key() < Rate.of(o)._key()

    def sign(self) -> int:
        return (self > 0) - (self < 0)

    def at(self, delta) -> float:
        return float(self.value) + float(self.delta_coef) * float(delta)

    def to_json(self) -> dict:
        return {"value": str(self.value), "delta": str(self.delta_coef)}

    def __str__(self):
        if self.delta_coef == 0:
            return str(self.value)
        return f"{self.value} + {self.delta_coef}*delta"


ZERO = Rate(0)


@dataclass(frozen=True)
class Monomial:
    """prod atom^exp * (ln N)^log_pow * exp(-decay)."""

    exps: tuple = ()  # sorted (atom, Rate) pairs with nonzero exponent
    log_pow: Fraction = Fraction(0)
    decay: Monomial | None = None

    @classmethod
    def make(cls, log_pow=0, decay=None, **exps) -> Monomial:
        for k in exps:
            if k not in ATOMS:
                raise KeyError(f"unknown atom {k!r}")
        items = tuple(sorted((k, Rate.of(v)) for k, v in exps.items() if Rate.of(v) != ZERO))
        return cls(items, _frac(log_pow), decay)

    def exp(self, atom: str) -> Rate:
        return dict(self.exps).get(atom, ZERO)

    @property
    def n_exp(self) -> Rate:
        return self.exp("N")

    @property
    def b_exp(self) -> Rate:
        return self.exp("B")

    def __mul__(self, o: Monomial) -> Monomial:
        return _mono_mul(self, o)

    def _mul(self, o: Monomial) -> Monomial:
        if self.decay is not None and o.decay is not None:
            raise ValueError("a product of two decaying factors is not represented")
        d = dict(self.exps)
        for k, v in o.exps:
            d[k] = d.get(k, ZERO) + v
        return Monomial.make(self.log_pow + o.log_pow, self.decay or o.decay, **d)

    def __pow__(self, q) -> Monomial:
        return _mono_pow(self, q)

    def _pow(self, q) -> Monomial:
        if isinstance(q, Rate):
            if q.delta_coef == 0:
                q = q.value
            elif self.log_pow or any(v.delta_coef for _, v in self.exps):
                raise ValueError("a delta-dependent power needs delta-free exponents")
            else:
                return Monomial.make(0, self.decay, **{
                    k: Rate(v.value * q.value, v.value * q.delta_coef) for k, v in self.exps})
        q = _frac(q)
        return Monomial.make(self.log_pow * q, self.decay, **{k: v * q for k, v in self.exps})

    def __truediv__(self, o: Monomial) -> Monomial:
        if o.decay is not None:
            raise ValueError("cannot divide by a decaying factor")
        return self * o ** -1

    def n_rate(self, r=None) -> Rate:
        """Exponent of N at fixed B (r None) or with B = N^r substituted."""
        return self.n_exp if r is None else self.n_exp + self.b_exp * _frac(r)

    def superpolynomial(self, r=None) -> bool:
        return self.decay is not None and self.decay.n_rate(r) > 0

    def sort_key(self, r=None):
        # documented total order: superpolynomially small terms first, then by
        # the N exponent, then the power of ln N, then the B exponent
        return (0 if self.superpolynomial(r) else 1, self.n_rate(r), self.log_pow, self.b_exp)

    def evaluate(self, env: Mapping[str, float], delta: float) -> float:
        v = 1.0
        for k, e in self.exps:
            v *= env[k] ** e.at(delta)
        if self.log_pow:
            v *= math.log(env["N"]) ** float(self.log_pow)
        if self.decay is not None:
            v *= math.exp(-self.decay.evaluate(env, delta))
        return v


ONE = Monomial()


# budgets rebuild the same products many times during a search
@lru_cache(maxsize=1 << 16)
def _mono_mul(x: Monomial, y: Monomial) -> Monomial:
    return x._mul(y)


@lru_cache(maxsize=1 << 16)
def _mono_pow(x: Monomial, q) -> Monomial:
    return x._pow(q)


@dataclass(frozen=True)
class Posynomial:
    """Sum of monomials with unit coefficients; the empty sum is zero."""

    terms: tuple = ()

    @classmethod
    def of(cls, x) -> Posynomial:
        if isinstance(x, Posynomial):
            return x
        if isinstance(x, Monomial):
            return cls((x,))
        raise TypeError(type(x))

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def __add__(self, o):
        o = Posynomial.of(o)
        seen = list(self.terms)
        for t in o.terms:
            if t not in seen:
                seen.append(t)
        return Posynomial(tuple(seen))

    __radd__ = __add__

    def __mul__(self, o):
        o = Posynomial.of(o)
        out = Posynomial()
        for s in self.terms:
            for t in o.terms:
                out = out + (s * t)
        return out

    __rmul__ = __mul__

    def __truediv__(self, o):
        return self * Posynomial.of(o).power(-1)

    def dominant(self, r=None) -> Monomial:
        if self.is_zero:
            raise ValueError("zero has no dominant term")
        return max(self.terms, key=lambda t: t.sort_key(r))

    def power(self, q, r=None) -> Posynomial:
        """(sum)^q: termwise for q > 0 (equal up to constants), the dominant term otherwise."""
        q = q if isinstance(q, Rate) else _frac(q)
        if self.is_zero:
            if q <= 0:
                raise ZeroDivisionError("negative power of zero")
            return self
        if q > 0:
            return Posynomial(tuple(dict.fromkeys(t**q for t in self.terms)))
        return Posynomial((self.dominant(r) ** q,))

    __pow__ = power

    def evaluate(self, env: Mapping[str, float], delta: float) -> float:
        return float(sum(t.evaluate(env, delta) for t in self.terms))


def mono(log_pow=0, **exps) -> Posynomial:
    return Posynomial.of(Monomial.make(log_pow, **exps))


def decaying(prefactor: Posynomial, argument: Posynomial) -> Posynomial:
    """prefactor * exp(-argument) with argument a single monomial."""
    arg = Posynomial.of(argument)
    if len(arg.terms) != 1:
        raise ValueError("the decay argument must be a monomial")
    return Posynomial(tuple(Monomial(t.exps, t.log_pow, arg.terms[0]) for t in prefactor.terms))


# --------------------------------------------------------------------------
# system parameters and their symbolic counterparts

a_atom = mono(a=1)
LOG_N = mono(log_pow=1)
UNIT = Posynomial.of(ONE)


@dataclass(frozen=True)
class SystemParams:
    """N particles on the torus of side L at inverse temperature beta, a_N = a_v L/N."""

    N: int
    L: float
    a_v: float
    beta: float

    def __post_init__(self):
        if self.N < 1 or self.L <= 0 or self.a_v <= 0 or self.beta <= 0:
            raise ValueError("N, L, a_v and beta must be positive")

    @classmethod
    def from_B(cls, N: int, L: float, a_v: float, B: float) -> SystemParams:
        rho = N / L**3
        return cls(N, L, a_v, B / rho ** (2 / 3))

    @property
    def a_N(self) -> float:
        return self.a_v * self.L / self.N

    @property
    def rho(self) -> float:
        return self.N / self.L**3

    @property
    def volume(self) -> float:
        return self.L**3

    @property
    def B(self) -> float:
        return self.beta * self.rho ** (2 / 3)

    def env(self, r0: float | None = None) -> dict:
        return {"N": float(self.N), "B": self.B, "L": self.L, "a": self.a_v,
                "r0": self.a_v if r0 is None else r0}


class Sym:
    """Symbolic versions of the basic quantities."""

    N = mono(N=1)
    L = mono(L=1)
    B = mono(B=1)
    a_N = mono(a=1, L=1, N=-1)
    rho = mono(N=1, L=-3)
    beta = mono(B=1, N=Fraction(-2, 3), L=2)
    volume = mono(L=3)
    r0_N = mono(r0=1, L=1, N=-1)  # range of the scaled potential
    X = a_N * rho**2 * beta ** Fraction(5, 2)  # a_N rho^2 beta^{5/2}
    reference = N / L**2  # the scale L^-2 N that errors are measured against
    interaction = a_N * volume * rho**2


# --------------------------------------------------------------------------
# main formula


@dataclass(frozen=True)
class MainFormula:
    F0: float
    interaction: float
    total: float
    rho0: float
    ensemble: str


def main_formula(params: SystemParams, ensemble: str = "canonical") -> MainFormula:
    """F0 + 4 pi a_N |Lambda| (2 rho^2 - rho_0^2) with rho_0 from the ideal gas."""
    p = params
    if ensemble == "canonical":
        obs = canonical_observables(canonical_partition(p.beta, p.N, p.L))
        F0, N0 = obs.free_energy, obs.N0
    elif ensemble == "grand":
        obs = gc_observables(solve_chemical_potential(p.beta, p.N, p.L))
        F0, N0 = obs.free_energy, obs.N0
    else:
        raise ValueError("ensemble must be 'canonical' or 'grand'")
    rho0 = N0 / p.volume
    inter = 4 * math.pi * p.a_N * p.volume * (2 * p.rho**2 - rho0**2)
    return MainFormula(F0, inter, F0 + inter, rho0, ensemble)


def ensemble_tolerance(params: SystemParams) -> float:
    """Sandwich slack plus 4 pi a_N |Lambda| times the bound on |rho_0^2 - (rho_0^gc)^2|."""
    p = params
    slack = (math.log1p(p.N) + 1) / p.beta
    drho0 = discrepancy_scale(p.N, p.L, p.beta) / p.volume
    return slack + 4 * math.pi * p.a_N * p.volume * 2 * p.rho * drho0


# --------------------------------------------------------------------------
# upper bound


@dataclass(frozen=True)
class UpperBudget:
    b_opt: float
    terms: dict  # absolute sizes of the four remainder terms
    relative_error: dict  # the two relative corrections at b_opt
    scaling: dict  # label -> Posynomial, relative to the interaction energy
    exponent: Rate  # N exponent of the dominant relative correction at fixed B
    dominant: str
    preconditions: dict  # name -> (value, bound)


def optimal_b(params: SystemParams) -> float:
    p = params
    return (p.a_N / (p.N * p.a_N * p.rho + 1 / p.beta)) ** (1 / 3)


def upper_bound_budget(params: SystemParams, eta: float = 0.5, check: bool = True) -> UpperBudget:
    """Remainders of the trial-state bound at b = (a_N/(N a_N rho + 1/beta))^{1/3}.

    ``eta`` in (0, 1) is the fraction in a_N < b eta.  With ``check`` a
    violated precondition raises SideConditionError.
    """
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    p = params
    b = optimal_b(p)
    vol, rho, a = p.volume, p.rho, p.a_N
    pre = {
        "jastrow_volume": ((4 * math.pi / 3) * vol * rho**2 * a * b * b, 1.0),
        "core_inside_b": (a, b * eta),
    }
    if check:
        for name, (val, bound) in pre.items():
            if not val < bound:
                raise SideConditionError(name, f"{val:.6g} >= {bound:.6g}")
    terms = {
        "a^2/b": vol * rho**2 * a * a / b,
        "volume^2 b^2": vol**2 * rho**4 * a * a * b * b,
        "(a b)^2 rho^3": vol * (a * b) ** 2 * rho**3,
        "b^2/beta": vol * rho**2 * a * b * b / p.beta,
    }
    rel = {
        "a_N (N rho)^1/3": a * (p.N * rho) ** (1 / 3),
        "B term": (a * rho ** (1 / 3)) ** (2 / 3) / p.B ** (1 / 3),
    }
    S = Sym
    rel_sym = {
        "a_N (N rho)^1/3": S.a_N * (S.N * S.rho) ** Fraction(1, 3),
        "B term": (S.a_N * S.rho ** Fraction(1, 3)) ** Fraction(2, 3) * S.B ** Fraction(-1, 3),
    }
    label = max(rel_sym, key=lambda k: rel_sym[k].dominant().sort_key())
    return UpperBudget(b, terms, rel, rel_sym, rel_sym[label].dominant().n_exp, label, pre)


def upper_relative_scaling() -> dict:
    """The four remainders at the symbolic optimal b, divided by a_N |Lambda| rho^2."""
    S = Sym
    b = (S.a_N / (S.N * S.a_N * S.rho + S.beta ** -1)) ** Fraction(1, 3)
    return {
        "a^2/b": S.a_N / b,
        "volume^2 b^2": S.volume * S.rho**2 * S.a_N * b**2,
        "(a b)^2 rho^3": S.a_N * b**2 * S.rho,
        "b^2/beta": b**2 / S.beta,
    }


# --------------------------------------------------------------------------
# lower bound parameters


@dataclass(frozen=True)
class Ansatz:
    """Exponents of X = a_N rho^2 beta^{5/2} for the parameters left open.

    kappa = X^kappa, s = rho^{-1/3} X^s, b = rho^{-1/3} X^b, phi = X^phi.
    """

    kappa: Rate
    s: Rate
    b: Rate
    phi: Rate

    def to_json(self) -> dict:
        return {k: getattr(self, k).to_json() for k in ("kappa", "s", "b", "phi")}


# the first minimiser of search_ansatz on default_search_grid (N = 10^4, B = 1)
DEFAULT_ANSATZ = Ansatz(
    kappa=Rate(Fraction(2, 403), -1),
    s=Rate(Fraction(1, 403)),
    b=Rate(Fraction(-121, 403)),
    phi=Rate(Fraction(-8, 403)),
)


@dataclass(frozen=True)
class Parameter:
    name: str
    scaling: Posynomial
    value: float
    source: str  # "prescribed", "ansatz" or "default"


@dataclass(frozen=True)
class SideCondition:
    name: str
    ratio: Posynomial  # must tend to zero ("small") or stay bounded ("bounded")
    kind: str = "small"

    def holds(self, r=None) -> bool:
        if self.ratio.is_zero:
            return True
        t = self.ratio.dominant(r)
        if t.superpolynomial(r):
            return True
        n = t.n_rate(r)
        if self.kind == "bounded":
            return n < 0 or (n == 0 and t.log_pow <= 0)
        return n < 0 or (n == 0 and t.log_pow < 0)


@dataclass(frozen=True)
class ParameterSet:
    regime: str
    params: SystemParams
    delta: Fraction
    entries: dict
    side_conditions: tuple
    mu0: float
    r0: float
    D: float | None
    ansatz: Ansatz | None

    def __getitem__(self, name: str) -> Parameter:
        return self.entries[name]

    def value(self, name: str) -> float:
        return self.entries[name].value

    def sym(self, name: str) -> Posynomial:
        return self.entries[name].scaling

    def failed(self, r=None) -> list[str]:
        return [c.name for c in self.side_conditions if not c.holds(r)]


def pc_is_zero(params: SystemParams, mu0: float) -> bool:
    """beta |mu_0| > X^{162/403} selects p_c = 0."""
    X = params.a_N * params.rho**2 * params.beta**2.5
    return params.beta * abs(mu0) > X ** (162 / 403)


def _chemical_potential(params: SystemParams, lam: float) -> float:
    return solve_chemical_potential(params.beta, params.N, params.L, lam).mu


def lower_bound_parameters(
    params: SystemParams,
    regime: str = "moderate",
    *,
    ansatz: Ansatz | None = None,
    delta=DEFAULT_DELTA,
    r0: float | None = None,
    D: float | None = None,
    lam: float = 0.0,
    mu0: float | None = None,
    check: bool = True,
) -> ParameterSet:
    """Cutoffs and auxiliary parameters of the lower bound with their rates.

    moderate: p_c and R are fixed; kappa, s, b, phi come from ``ansatz``
    (default DEFAULT_ANSATZ); eps = (a_N N/(phi L))^{1/2}.  cold: kappa =
    (a_N^3 rho)^{1/17}, R = a_N (a_N^3 rho)^{-5/17}, s^2 = min(L^2, beta)
    (a_N^3 rho)^{1/17 + delta}, eps^2 = 1/(R s^2 rho); the symbolic s uses
    beta, i.e. B < N^{2/3}.  ``r0`` is the range of v (default a_v), ``D``
    enables the tau-dependent terms.
    """
    delta = _frac(delta)
    p, S = params, Sym
    env = p.env(r0)
    r0 = env["r0"]
    d = float(delta)
    if mu0 is None:
        mu0 = _chemical_potential(p, lam)
    entries: dict[str, Parameter] = {}

    def put(name, sym, source, value=None):
        val = sym.evaluate(env, d) if value is None else value
        entries[name] = Parameter(name, sym, float(val), source)

    conds = []
    cube_root = S.rho ** Fraction(-1, 3)
    if regime == "moderate":
        an = DEFAULT_ANSATZ if ansatz is None else ansatz
        X = S.X
        if pc_is_zero(p, mu0):
            put("p_c", Posynomial(), "prescribed", 0.0)
        else:
            put("p_c", S.beta ** Fraction(-1, 2) * X ** Fraction(81, 403), "prescribed")
        put("R", cube_root * X ** Fraction(3, 403), "prescribed")
        put("kappa", _xpow(an.kappa), "ansatz")
        put("s", cube_root * _xpow(an.s), "ansatz")
        put("b", cube_root * _xpow(an.b), "ansatz")
        put("phi", _xpow(an.phi), "ansatz")
        put("eps", (S.a_N * S.N / (entries["phi"].scaling * S.L)) ** Fraction(1, 2), "prescribed")
        pc = entries["p_c"].scaling
        put("M", S.volume * pc**3, "prescribed", 4 * math.pi / 3 * (entries["p_c"].value * p.L / (2 * math.pi)) ** 3)
        put("P", entries["M"].scaling, "default", entries["M"].value)
    elif regime == "cold":
        an = None
        small = S.a_N**3 * S.rho
        put("kappa", small ** Fraction(1, 17), "prescribed")
        put("R", S.a_N * small ** Fraction(-5, 17), "prescribed")
        s2 = S.beta * small ** Rate(Fraction(1, 17), 1)
        s2_val = min(p.L**2, p.beta) * (p.a_N**3 * p.rho) ** (1 / 17 + d)
        put("s", s2 ** Fraction(1, 2), "prescribed", math.sqrt(s2_val))
        R = entries["R"]
        eps2 = (R.scaling * s2 * S.rho) ** -1
        put("eps", eps2 ** Fraction(1, 2), "prescribed", (R.value * s2_val * p.rho) ** -0.5)
        put("p_c", Posynomial(), "prescribed", 0.0)
    else:
        raise ValueError("regime must be 'moderate' or 'cold'")

    kap, R = entries["kappa"], entries["R"]
    shift = S.a_N * S.r0_N**2 / R.scaling**3  # kappa - kappa' up to a constant
    a_tilde = p.a_N
    kp_val = kap.value - 24 * a_tilde / math.pi**2 * (4 * r0 * p.L / p.N) ** 2 / R.value**3
    put("kappa_prime", kap.scaling, "prescribed", kp_val)
    s = entries["s"].scaling
    conds += [
        SideCondition("kappa_small", kap.scaling),
        SideCondition("kappa_prime_positive", shift / kap.scaling),
        SideCondition("s2_over_beta_kappa", s**2 / (S.beta * kap.scaling)),
        SideCondition("s2_over_L2_kappa", s**2 / (S.L**2 * kap.scaling)),
        SideCondition("R_rho_third", R.scaling * S.rho ** Fraction(1, 3)),
        SideCondition("core_inside_R", S.r0_N / R.scaling),
    ]
    if regime == "moderate":
        b, pc = entries["b"].scaling, entries["p_c"].scaling
        conds += [
            SideCondition("R_over_s", R.scaling / s),
            SideCondition("s_below_L", s / S.L, "bounded"),
            SideCondition("b_below_L", b / S.L),
            SideCondition("beta_over_b2", S.beta / b**2),
            SideCondition("a_N_over_phi_L_N", S.a_N * S.N / (entries["phi"].scaling * S.L)),
            SideCondition("pc_below_rho_third", pc / S.rho ** Fraction(1, 3), "bounded"),
        ]
        if not pc.is_zero:
            conds.append(SideCondition("b_pc_large", (b * pc) ** -1))
    if kp_val <= 0:
        if check:
            raise SideConditionError("kappa_prime_positive", f"kappa' = {kp_val:.6g}")
    ps = ParameterSet(regime, p, delta, entries, tuple(conds), mu0, r0, D, an)
    if check:
        bad = ps.failed()
        if bad:
            raise SideConditionError(bad[0], "fails asymptotically at fixed B")
    return ps


def _xpow(e: Rate) -> Posynomial:
    return Sym.X.power(e)


# --------------------------------------------------------------------------
# error budgets


@dataclass(frozen=True)
class ScalingTerm:
    label: str
    group: str
    coefficient: str
    n_exp: Rate | None
    b_exp: Rate | None
    log_pow: Fraction
    superpolynomial: bool = False
    vanishes: bool = False

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "group": self.group,
            "coefficient": self.coefficient,
            "n_exp": None if self.n_exp is None else self.n_exp.to_json(),
            "b_exp": None if self.b_exp is None else self.b_exp.to_json(),
            "log_pow": str(self.log_pow),
            "superpolynomial": self.superpolynomial,
            "vanishes": self.vanishes,
        }


@dataclass(frozen=True)
class BudgetTerm:
    label: str
    group: str
    scaling: Posynomial  # relative to L^-2 N
    value: float
    coefficient: str = "const"

    def reduce(self, r=None) -> ScalingTerm:
        if self.scaling.is_zero:
            return ScalingTerm(self.label, self.group, self.coefficient, None, None, Fraction(0), vanishes=True)
        t = self.scaling.dominant(r)
        return ScalingTerm(self.label, self.group, self.coefficient, t.n_rate(r), t.b_exp,
                           t.log_pow, t.superpolynomial(r))


@dataclass(frozen=True)
class ErrorBudget:
    regime: str
    terms: tuple
    parameters: ParameterSet
    reference: Posynomial = field(default_factory=lambda: Sym.reference)

    def scaling_terms(self, r=None) -> list[ScalingTerm]:
        return [t.reduce(r) for t in self.terms]

    def dominant(self, r=None) -> tuple[BudgetTerm, Monomial]:
        live = [t for t in self.terms if not t.scaling.is_zero]
        best = max(live, key=lambda t: t.scaling.dominant(r).sort_key(r))
        return best, best.scaling.dominant(r)

    def dominant_rate(self, r=None) -> Rate:
        return self.dominant(r)[1].n_rate(r)

    def verdict(self, r=None) -> bool:
        """All terms o(1) relative to L^-2 N and every side condition satisfied."""
        _, m = self.dominant(r)
        small = m.superpolynomial(r) or m.n_rate(r) < 0 or (m.n_rate(r) == 0 and m.log_pow < 0)
        return small and not self.parameters.failed(r)

    def pieces(self) -> list[tuple[Rate, Rate]]:
        """(n_exp, b_exp) of every non-decaying monomial, for B = N^r analysis."""
        out = []
        for t in self.terms:
            for m in t.scaling.terms:
                if m.decay is None:
                    out.append((m.n_exp, m.b_exp))
        return out

    def report(self, r=None) -> dict:
        ps = self.parameters
        plist = []
        for e in ps.entries.values():
            item = {"name": e.name, "value": e.value, "source": e.source}
            if not e.scaling.is_zero:
                d = e.scaling.dominant(r)
                item["exponent"] = {"N": d.n_exp.to_json(), "B": d.b_exp.to_json()}
            plist.append(item)
        best, m = self.dominant(r)
        return {
            "regime": self.regime,
            "params": plist,
            "terms": [t.to_json() for t in self.scaling_terms(r)],
            "dominant": {"label": best.label, "group": best.group, "n_exp": m.n_rate(r).to_json(),
                         "b_exp": m.b_exp.to_json()},
            "side_conditions": {c.name: c.holds(r) for c in ps.side_conditions},
            "verdict": self.verdict(r),
        }

    def to_json(self, r=None) -> str:
        return json.dumps(self.report(r), indent=2, sort_keys=True)


def error_budget(ps: ParameterSet) -> ErrorBudget:
    """Every remainder of the lower bound relative to L^-2 N."""
    if ps.regime == "moderate":
        terms = _moderate_terms(ps)
    else:
        terms = _cold_terms(ps)
    p = ps.params
    env, d = p.env(ps.r0), float(ps.delta)
    built = tuple(BudgetTerm(lab, grp, sc, sc.evaluate(env, d), coef) for lab, grp, sc, coef in terms)
    return ErrorBudget(ps.regime, built, ps)


def _moderate_terms(ps: ParameterSet) -> list:
    S = Sym
    ref = S.reference
    g = ps.sym
    pc, R, kap, s, b, phi, M, P = (g(k) for k in ("p_c", "R", "kappa", "s", "b", "phi", "M", "P"))
    vol, beta, rho, aN, L, N = S.volume, S.beta, S.rho, S.a_N, S.L, S.N
    lam = L**-2  # lambda <= (2 pi/L)^2 eta
    mu_scale = (beta * N) ** -1  # |mu_0| ~ 1/(beta N_0) below the critical temperature
    z1_abs = M * pc**2 + M * mu_scale + lam + phi * L * M * (M + N) / (vol * N)
    z2_abs = phi * L / (vol * N) * (P**2 + P * (N + M))
    t = []
    t += [
        ("M p_c^2", "Z1", M * pc**2 / ref, "const"),
        ("M |mu_0|", "Z1", M * mu_scale / ref, "const"),
        ("lambda", "Z1", lam / ref, "const"),
        ("phi M (M + N)", "Z1", phi * L * M * (M + N) / (vol * N) / ref, "phi"),
        ("phi (P^2 + 2P(N + M))", "Z2", z2_abs / ref, "phi"),
    ]
    inter = S.interaction / ref  # a_N |Lambda| rho^2 relative to L^-2 N
    tau = None if ps.D is None or pc.is_zero else beta * pc**2
    # no capping is needed without an interaction (phi = 0)
    cap = Posynomial() if phi.is_zero else (aN * N / (phi * L)) ** Fraction(1, 2)
    z3 = [
        ("(R^3 rho)^1/3", inter * (R**3 * rho) ** Fraction(1, 3)),
        ("R/s", inter * R / s),
        ("R p_c", inter * R * pc),
        ("kappa", inter * kap),
        ("(r0/R)^3", inter * (S.r0_N / R) ** 3),
        ("(a_N N/(phi L))^1/2", inter * cap),
        ("m tail", decaying(inter * (rho * R**2 * s) ** -1, b / s)),
        ("(b^3 a_N beta rho^2)^1/2/(rho^2 R^6)", inter * (b**3 * aN * beta * rho**2) ** Fraction(1, 2) / (rho**2 * R**6)),
        ("relative entropy", aN / R**6 * (b**3 * vol) ** Fraction(1, 2) * (beta * z1_abs + LOG_N) ** Fraction(1, 2) / ref),
        ("(a_N/R)^3 p_c^3/beta", (aN / R) ** 3 * pc**3 * vol / beta / ref),
    ]
    if tau is not None:
        z3 += [
            ("tau cutoff", inter * (beta ** Fraction(1, 2) * (tau ** Fraction(-1, 2) + beta * L**-2 * tau ** Fraction(-3, 2)) / b) ** Fraction(1, 2) / (rho**2 * R**6)),
            ("tau entropy", aN / R**6 * (b**3 * vol) ** Fraction(1, 2) * (beta**2 / (tau**2 * b**4)) ** Fraction(1, 2) / ref),
        ]
    t += [(lab, "Z3", sc, "const") for lab, sc in z3]
    # interaction and particle-number remainders
    tau_A = UNIT if pc.is_zero else beta * pc**2
    A = vol * beta ** Fraction(-3, 2) * (tau_A ** Fraction(-1, 2) + beta * L**-2 * tau_A ** Fraction(-3, 2))
    if pc.is_zero:
        A = A + UNIT  # 2/(beta mu_0)^2 with beta |mu_0| of order one
    per_rho = aN * vol * rho / ref
    t += [
        ("(a_N/R^3) p_c^3", "interaction", aN / R**3 * vol * pc**3 / ref, "const"),
        ("(a_N/R^3) (entropy A)^1/2", "interaction",
         aN / R**3 * (vol * beta * aN * rho**2 + beta * z1_abs + LOG_N) ** Fraction(1, 2) * A ** Fraction(1, 2) / ref, "const"),
        ("(R/b)^2", "interaction", inter * (R / b) ** 2, "const"),
        ("p_c/beta", "interaction", per_rho * pc / beta, "const"),
        ("R^2/beta^5/2", "interaction", per_rho * R**2 * beta ** Fraction(-5, 2) * (UNIT + beta / L**2), "const"),
        ("1/(beta L)", "interaction", per_rho / (beta * L), "const"),
        ("(rho ln N/(beta L))^1/2", "interaction", per_rho * (rho * LOG_N / (beta * L)) ** Fraction(1, 2), "const"),
        ("ln N/(beta L)", "interaction", per_rho * LOG_N / (beta * L), "const"),
    ]
    kp = g("kappa_prime")
    t += [
        ("a_N r0^2/R^3", "free energy", aN * S.r0_N**2 / R**3 * (beta**-1 + vol * beta ** Fraction(-5, 2)) / ref, "const"),
        ("ln N/beta", "free energy", LOG_N / beta / ref, "const"),
        ("high-momentum exp", "free energy",
         decaying(vol * beta ** Fraction(-5, 2) * kp ** Fraction(-3, 2) / ref, (beta * kp / s**2) ** Fraction(1, 2)), "const"),
    ]
    return t


def _cold_terms(ps: ParameterSet) -> list:
    S = Sym
    ref = S.reference
    g = ps.sym
    kap, R, s, eps = g("kappa"), g("R"), g("s"), g("eps")
    vol, beta, rho, L = S.volume, S.beta, S.rho, S.L
    inter = S.interaction / ref
    small = S.a_N**3 * S.rho
    return [
        ("kappa N/L^2", "cold", kap * S.N / L**2 / ref, "const"),
        ("kappa L/beta^3/2", "cold", kap * L * beta ** Fraction(-3, 2) / ref, "const"),
        ("kappa volume/beta^5/2", "cold", kap * vol * beta ** Fraction(-5, 2) / ref, "const"),
        ("ln N/beta", "cold", LOG_N / beta / ref, "const"),
        ("eps", "cold", inter * eps, "const"),
        ("(a_N^3 rho)^1/17", "cold", inter * small ** Fraction(1, 17), "const"),
        ("1/(eps R s^2 rho)", "cold", inter * (eps * R * s**2 * rho) ** -1, "const"),
        ("1/(beta^3/2 rho)", "cold", inter * (beta ** Fraction(3, 2) * rho) ** -1, "const"),
        ("low-temperature exp", "cold",
         decaying(vol * beta ** Fraction(-5, 2) * kap ** Fraction(-3, 2) / ref, (beta * kap / s**2) ** Fraction(1, 2)), "const"),
    ]


# --------------------------------------------------------------------------
# ansatz search


@dataclass(frozen=True)
class SearchResult:
    ansatz: Ansatz
    rate: Rate
    evaluated: int
    feasible: int


def _grid_point(args):
    params, an, delta, mu0 = args
    try:
        ps = lower_bound_parameters(params, "moderate", ansatz=an, delta=delta, mu0=mu0, check=False)
    except SideConditionError:
        return None
    if ps.failed():
        return None
    bud = error_budget(ps)
    if not bud.verdict():
        return None
    return bud.dominant_rate()


def default_search_grid() -> dict:
    """Exponent candidates in units of 1/403, with delta slack on kappa and s."""
    u = Fraction(1, 403)
    return {
        "kappa": [Rate(k * u, c) for k in range(0, 5) for c in (-1, 0)],
        "s": [Rate(k * u, c) for k in range(0, 4) for c in (0, 1)],
        "b": [Rate(k * u) for k in (-125, -121, -117)],
        "phi": [Rate(k * u) for k in (-8, -4, 0)],
    }


def search_ansatz(params: SystemParams, grid: dict | None = None, delta=DEFAULT_DELTA,
                  workers: int = 1) -> SearchResult:
    """Grid search for the ansatz with the smallest dominant budget exponent.

    Ties are broken by grid order, so the result does not depend on ``workers``.
    """
    grid = default_search_grid() if grid is None else grid
    mu0 = _chemical_potential(params, 0.0)
    cands = [Ansatz(*c) for c in product(grid["kappa"], grid["s"], grid["b"], grid["phi"])]
    jobs = [(params, an, delta, mu0) for an in cands]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            rates = list(ex.map(_grid_point, jobs, chunksize=64))
    else:
        rates = [_grid_point(j) for j in jobs]
    best, best_rate, feasible = None, None, 0
    for an, r in zip(cands, rates):
        if r is None:
            continue
        feasible += 1
        if best_rate is None or r < best_rate:
            best, best_rate = an, r
    if best is None:
        raise SideConditionError("search", "no feasible ansatz on the grid")
    return SearchResult(best, best_rate, len(cands), feasible)


# --------------------------------------------------------------------------
# combining the two temperature regimes


def _max_affine(pieces: Iterable[tuple[Rate, Rate]], r: Fraction) -> Rate:
    return max(n + b * r for n, b in pieces)


def crossover(rising: Sequence[tuple[Rate, Rate]], falling: Sequence[tuple[Rate, Rate]]) -> Fraction:
    """The r where max of the rising pieces equals max of the falling pieces.

    Pieces are (n, b) with value n + b r; the search runs over all pairwise
    intersections using the delta-free parts and is exact.
    """
    cands = set()
    for n1, b1 in rising:
        for n2, b2 in falling:
            if b1.value != b2.value:
                cands.add((n2.value - n1.value) / (b1.value - b2.value))
    flat_r = [(Rate(n.value), Rate(b.value)) for n, b in rising]
    flat_f = [(Rate(n.value), Rate(b.value)) for n, b in falling]
    hits = sorted(r for r in cands if r >= 0 and _max_affine(flat_r, r) == _max_affine(flat_f, r))
    if not hits:
        raise ArithmeticError("the regimes do not cross")
    return hits[0]


@dataclass(frozen=True)
class Combined:
    free_energy_crossover: Fraction
    alpha: Rate
    one_pdm_crossover: Fraction
    sigma: Rate
    moderate_at_crossover: Rate
    cold_at_crossover: Rate

    def to_json(self) -> dict:
        return {
            "free_energy_crossover": str(self.free_energy_crossover),
            "alpha": self.alpha.to_json(),
            "one_pdm_crossover": str(self.one_pdm_crossover),
            "sigma": self.sigma.to_json(),
        }


PRINTED_FREE_ENERGY_CROSSOVER = Fraction(7568, 103275)


def combine_regimes(moderate: ErrorBudget, cold: ErrorBudget) -> Combined:
    """Rates uniform in B = beta rho^{2/3} >= 1 from the two lower bounds.

    Free energy: the moderate bound is used for B <= N^r* and the cold one
    above; r* balances the two and alpha is minus their common exponent.
    One-particle density matrix: the moderate error N c~^{1/8} against the
    B^{-3/4} term of the high-B bound, with the c^{1/4} term setting sigma.
    """
    mod = [p for p in moderate.pieces()]
    cold_p = cold.pieces()
    r1 = crossover(mod, cold_p)
    m_val = _max_affine(mod, r1)
    c_val = _max_affine(cold_p, r1)
    alpha = -m_val
    # 1-pdm: moderate c~^{1/8} rises with r, B^{-3/4} falls
    rising = [(n / 8, b / 8) for n, b in mod]
    falling = [(ZERO, Rate(Fraction(-3, 4)))]
    r2 = crossover(rising, falling)
    c_ell = -alpha  # exponent of c_ell(N)
    one_pdm = [
        c_ell / 4,
        _max_affine(rising, r2),
        c_ell / 2,
        Rate(Fraction(-3, 4)) * r2,
        Rate(Fraction(-1, 6)) + Rate(Fraction(-1, 2)) * r2,
    ]
    sigma = -max(one_pdm)
    return Combined(r1, alpha, r2, sigma, m_val, c_val)


def regime_budgets(params: SystemParams | None = None, ansatz: Ansatz | None = None,
                   delta=DEFAULT_DELTA) -> tuple[ErrorBudget, ErrorBudget]:
    """Moderate and cold budgets at a representative condensed point (N = 10^4, B = 1)."""
    if params is None:
        params = SystemParams.from_B(10_000, 1.0, 1.0, 1.0)
    mu0 = _chemical_potential(params, 0.0)
    mod = error_budget(lower_bound_parameters(params, "moderate", ansatz=ansatz, delta=delta, mu0=mu0))
    cold = error_budget(lower_bound_parameters(params, "cold", delta=delta, mu0=mu0, check=False))
    return mod, cold


# --------------------------------------------------------------------------
# Dyson quantities


def j_profile(t):
    """j(t) = 12 (t + 2) [1 - t]_+^2."""
    t = np.asarray(t, dtype=float)
    out = 12.0 * (t + 2.0) * np.clip(1.0 - t, 0.0, None) ** 2
    return out if out.ndim else float(out)


def smoothstep_nu(q):
    """0 for |q| <= 1, 1 for |q| >= 2, cubic smoothstep in between."""
    x = np.clip(np.abs(np.asarray(q, dtype=float)) - 1.0, 0.0, 1.0)
    out = x * x * (3.0 - 2.0 * x)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class DysonQuantities:
    a_prime: float
    kappa_prime: float
    mu: float
    eps_p: Callable  # |p| array -> epsilon(p); p = 0 carries lambda
    j_values: dict


def reduced_scattering_length(a_tilde: float, eps: float, kappa: float, r0_N: float, R: float) -> float:
    """a~ (1 - eps)(1 - kappa)(1 - 18 (4 - pi)/(pi/4)^3 r0^3/((R/10)^3 - r0^3)/j(1/10))."""
    if not R > 10 * r0_N:
        raise SideConditionError("R_above_10_r0", f"R = {R:.6g}, 10 r0 = {10 * r0_N:.6g}")
    hole = 18.0 / (math.pi / 4) ** 3 * (4 - math.pi) * r0_N**3 / ((R / 10) ** 3 - r0_N**3) / j_profile(0.1)
    return a_tilde * (1 - eps) * (1 - kappa) * (1 - hole)


def dyson_quantities(
    ps: ParameterSet,
    *,
    a_tilde: float | None = None,
    dyson_eps: float | None = None,
    lam: float = 0.0,
    mu: float | None = None,
    nu: Callable = smoothstep_nu,
) -> DysonQuantities:
    """a'_N, kappa' and the dispersion eps(p) after the Dyson step.

    ``a_tilde`` defaults to a_N and ``dyson_eps`` to the parameter set's eps.
    """
    p = ps.params
    a_t = p.a_N if a_tilde is None else a_tilde
    e = ps.value("eps") if dyson_eps is None else dyson_eps
    kappa, R, s = ps.value("kappa"), ps.value("R"), ps.value("s")
    r0_N = ps.r0 * p.L / p.N
    kp = kappa - 24 * a_t / math.pi**2 * (4 * r0_N) ** 2 / R**3
    if kp <= 0:
        raise SideConditionError("kappa_prime_positive", f"kappa' = {kp:.6g}")
    a_prime = reduced_scattering_length(a_t, e, kappa, r0_N, R)
    mu_val = _chemical_potential(p, lam) if mu is None else mu

    def eps_p(q):
        q = np.asarray(q, dtype=float)
        p2 = q * q
        out = kp * p2 + (1 - kappa) * p2 * (1 - nu(s * q) ** 2) - mu_val
        out = np.where(q == 0, lam - mu_val, out)
        return out if out.ndim else float(out)

    jv = {t: j_profile(t) for t in (0.0, 0.1, 0.5, 1.0)}
    return DysonQuantities(a_prime, kp, mu_val, eps_p, jv)


# --------------------------------------------------------------------------
# gamma_b and rho_omega


def _smooth_bump(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 0.5
    u = (2 * x[inside]) ** 2
    out[inside] = np.exp(-1.0 / (1.0 - u))
    return out


@lru_cache(maxsize=1)
def _bump_table(points: int = 801):
    # 3D self-convolution of a radial bump g supported in |x| <= 1/2:
    # (g*g)(r) = (2 pi / r) int s g(s) [G(min(r + s, 1/2)) - G(|r - s|)] ds, G(t) = int_0^t u g(u) du
    u = np.linspace(0.0, 0.5, 4001)
    ug = u * _smooth_bump(u)
    G = np.concatenate([[0.0], np.cumsum((ug[1:] + ug[:-1]) / 2 * np.diff(u))])

    def Gf(t):
        return np.interp(np.clip(t, 0.0, 0.5), u, G)

    s, w = roots_legendre(200)
    s = 0.25 * (s + 1)
    w = 0.25 * w
    gs = s * _smooth_bump(s)
    r = np.linspace(0.0, 1.0, points)
    conv = np.empty_like(r)
    conv[0] = 4 * math.pi * np.sum(w * s * s * _smooth_bump(s) ** 2)
    for i, ri in enumerate(r[1:], 1):
        conv[i] = 2 * math.pi / ri * np.sum(w * gs * (Gf(np.minimum(ri + s, 0.5)) - Gf(np.abs(ri - s))))
    eta = np.clip(conv / conv[0], 0.0, None)
    eta[-1] = 0.0
    return CubicSpline(r, eta)


def bump_cutoff(r):
    """eta(r): normalized self-convolution of a smooth bump; eta(0) = 1, eta = 0 for r >= 1.

    Its Fourier transform is the square of the bump's transform, hence nonnegative.
    """
    r = np.abs(np.asarray(r, dtype=float))
    spl = _bump_table()
    out = np.where(r < 1.0, np.clip(spl(np.minimum(r, 1.0)), 0.0, 1.0), 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class GammaB:
    rho_omega: float
    gamma_b: float
    rho: float
    rho_th_gc: float
    fitted_constant: float  # smallest c with rho_omega >= rho_th - c (p_c/beta + 1/(beta L))
    tail_bound: float


def gamma_b(
    params: SystemParams,
    R: float,
    b: float,
    pi_spec: Callable | None = None,
    *,
    p_c: float = 0.0,
    mu0: float | None = None,
    eta: Callable | None = bump_cutoff,
    nodes: int = 200,
    tail_tol: float = 1e-12,
) -> GammaB:
    """rho_omega = omega(x, x) and gamma_b = (1/4 pi R^3) int omega_b(x, 0) j(|x|/R) dx.

    omega has occupation 1/(e^{beta(p^2 - mu0)} - 1) for |p| >= p_c and
    ``pi_spec(|p|)`` below p_c.  The default pi_spec is the same Bose
    occupation, with the zero mode given its first-shell value so that the
    low modes carry O(1) particles each.  For p_c = 0 every mode, p = 0
    included, has the Bose occupation and rho_omega = rho.
    omega_b(x, 0) = omega(x, 0) eta(|x|/b); ``eta=None`` means eta = 1.
    The angular average of e^{i p x} over |x| = r is sin(pr)/(pr), so one
    radial Gauss-Legendre rule on [0, R] suffices for R <= L/2.
    """
    p = params
    if not 0 < R <= p.L / 2:
        raise ValueError("need 0 < R <= L/2")
    if not 0 < b:
        raise ValueError("b must be positive")
    if eta is not None and b > p.L / 2:
        raise ValueError("need b <= L/2 for a cutoff profile")
    mu = _chemical_potential(p, 0.0) if mu0 is None else mu0
    beta, L = p.beta, p.L
    lat = MomentumLattice(L)
    occ_hi = bose_occupation(beta, mu)
    if pi_spec is None:
        def pi_spec(q):
            return occ_hi(np.maximum(q, lat.unit))

    # shells up to the point where the Bose tail is below tail_tol (relative to N)
    kmax = 64
    while True:
        tail = integral_majorant(occ_hi, lat.unit * math.sqrt(kmax + 1), L)
        if tail < tail_tol * p.N or kmax >= lat.max_shell:
            break
        kmax *= 2
    ks, mult = lat.shells(kmax)
    q = np.concatenate([[0.0], lat.unit * np.sqrt(ks)])
    mult = np.concatenate([[1.0], mult])
    occ = np.where(q < p_c, pi_spec(q), occ_hi(q))
    weights = mult * occ / p.volume
    rho_omega = float(weights.sum())

    x, w = roots_legendre(nodes)
    r = 0.5 * R * (x + 1)
    w = 0.5 * R * w
    kern = np.sinc(np.outer(r, q) / math.pi) @ weights  # omega(x, 0) averaged over |x| = r
    cut = np.ones_like(r) if eta is None else eta(r / b)
    gb = float(np.sum(w * kern * cut * j_profile(r / R) * r * r) / R**3)
    if not np.isfinite(gb):
        raise ArithmeticError("gamma_b quadrature failed")

    th = lattice_sum(lat, occ_hi, 0.0, tail_tol).value / p.volume
    scale = p_c / beta + 1 / (beta * L)
    const = max(0.0, (th - rho_omega) / scale)
    return GammaB(rho_omega, gb, p.rho, th, const, tail / p.volume)


__all__ = [
    "ATOMS",
    "Ansatz",
    "BudgetTerm",
    "Combined",
    "DEFAULT_ANSATZ",
    "DEFAULT_DELTA",
    "DysonQuantities",
    "ErrorBudget",
    "GammaB",
    "MainFormula",
    "Monomial",
    "PRINTED_FREE_ENERGY_CROSSOVER",
    "Parameter",
    "ParameterSet",
    "Posynomial",
    "Rate",
    "ScalingTerm",
    "SearchResult",
    "SideCondition",
    "SideConditionError",
    "Sym",
    "SystemParams",
    "UpperBudget",
    "bump_cutoff",
    "combine_regimes",
    "crossover",
    "default_search_grid",
    "dyson_quantities",
    "ensemble_tolerance",
    "error_budget",
    "gamma_b",
    "j_profile",
    "lower_bound_parameters",
    "main_formula",
    "mono",
    "optimal_b",
    "pc_is_zero",
    "reduced_scattering_length",
    "regime_budgets",
    "search_ansatz",
    "smoothstep_nu",
    "upper_bound_budget",
    "upper_relative_scaling",
]
