"""Command-line front end: single evaluations, parameter sweeps and verification suites.

Units: hbar = k_B = 1 and particle mass m = 1/2, so the one-particle energy
is p^2 and lattice momenta are p in (2 pi/L) Z^3.

Reports are JSON objects {command, params, results, failures, version} or
CSV tables.  Exit status: 0 when every asserted property holds, 1 on the
first property failure (serialized in ``failures``), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from functools import partial
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from . import asymptotics as asy
from . import entropy as ent
from . import fock
from . import ideal_gas as ig
from . import lattice as lat
from . import potential as pot


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# parameter tables

def _fraction(text: str) -> Fraction:
    try:
        return Fraction(str(text).strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"not a rational number: {text!r}") from exc


def _int(text) -> int:
    x = float(text)
    if x != int(x):
        raise UsageError(f"not an integer: {text!r}")
    return int(x)


SYSTEM = {"N": _int, "L": float, "a_v": float, "beta": float, "beta_ratio": float}

PARAMS: dict[str, dict[str, Callable]] = {
    "scatter": {"builtin": str, "file": str, "N": _int, "L": float},
    "ideal-gas": {"N": _int, "L": float, "beta": float, "beta_ratio": float, "lam": float},
    "free-energy": {**SYSTEM, "ensemble": str},
    "trial-energy": {**SYSTEM, "eta": float},
    "budget": {"regime": str, "B": float, "N": _int, "L": float, "a_v": float,
               "delta": _fraction, "r": _fraction, "D": float},
    "verify": {"suite": str, "samples": _int},
    "sweep": {"command": str, "var": str, "from": float, "to": float, "steps": _int},
}

DEFAULTS = {
    "N": 1000, "L": 1.0, "a_v": 1.0, "beta_ratio": 2.0, "lam": 0.0, "ensemble": "canonical",
    "eta": 0.5, "regime": "moderate", "B": 1.0, "delta": Fraction(1, 100), "samples": 100,
}

SWEEPABLE = ("ideal-gas", "free-energy", "trial-energy")

HELP = {
    "builtin": "hard-sphere:R, square-well:R:v0 or zero",
    "file": "potential file: 'core <radius>' then 'r value' lines",
    "N": f"particle number (at most {ig.MAX_CANONICAL_N})",
    "L": "box side",
    "a_v": "scattering length of the unscaled potential",
    "beta": "inverse temperature",
    "beta_ratio": "beta in units of the critical beta_c (used when --beta is absent; default 2)",
    "lam": "energy of the p = 0 level",
    "ensemble": "canonical, grand or both",
    "eta": "fraction in the condition a_N < b eta",
    "regime": "moderate, cold or combined",
    "B": "beta rho^(2/3)",
    "delta": "exponent slack (rational)",
    "r": "evaluate rates along B = N^r (rational)",
    "D": "enable the cutoff terms that depend on D",
    "suite": "lattice-lemma, sandwich, suto, coercivity, gibbs, gamma-b or rates",
    "samples": "number of randomized cases",
    "command": "command to sweep: " + ", ".join(SWEEPABLE),
    "var": "swept parameter",
    "from": "first grid value",
    "to": "last grid value (inclusive)",
    "steps": "number of grid points",
}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gpbose",
        description="Dilute Bose gas on the torus (units hbar = k_B = 1, m = 1/2: energy p^2).",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    for cmd, table in PARAMS.items():
        sp = sub.add_parser(cmd, help=f"{cmd} report")
        names = dict(table)
        if cmd == "sweep":
            for other in SWEEPABLE:
                names.update(PARAMS[other])
        for name in names:
            sp.add_argument(_flag(name), dest=name, default=None, help=HELP.get(name))
        sp.add_argument("--config", help="file of 'key = value' lines; flags win on conflict")
        sp.add_argument("--seed", default=None, help="64-bit master seed for randomized suites")
        sp.add_argument("--workers", default=None, help="worker processes (results keep input order)")
        sp.add_argument("--format", dest="fmt", choices=("json", "csv"), default=None)
        sp.add_argument("--output", default=None, help="write the report here instead of stdout")
    return ap


def read_config(path: str | Path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


OPTIONS = {"seed", "workers", "format", "output"}


def resolve(ns: argparse.Namespace) -> tuple[str, dict, dict]:
    """Merge flags over the config file; returns (command, params, options)."""
    cmd = ns.cmd
    table = dict(PARAMS[cmd])
    if cmd == "sweep":
        for other in SWEEPABLE:
            table.update(PARAMS[other])
    raw = {k: getattr(ns, k) for k in table if getattr(ns, k) is not None}
    opts = {"seed": ns.seed, "workers": ns.workers, "format": ns.fmt, "output": ns.output}
    if ns.config:
        try:
            cfg = read_config(ns.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        for key, value in cfg.items():
            if key in OPTIONS:
                if opts[key] is None:
                    opts[key] = value
            elif key in table:
                raw.setdefault(key, value)
            else:
                raise UsageError(f"unknown config key {key!r} for {cmd}")
    params = {}
    for key, value in raw.items():
        try:
            params[key] = table[key](value)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {key}: {value!r}") from exc
    try:
        opts["seed"] = 0 if opts["seed"] is None else _int(opts["seed"])
        opts["workers"] = 1 if opts["workers"] is None else _int(opts["workers"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not 0 <= opts["seed"] < 2**64:
        raise UsageError("seed must be a 64-bit unsigned integer")
    if opts["workers"] < 1:
        raise UsageError("workers must be at least 1")
    opts["format"] = opts["format"] or ("csv" if cmd == "sweep" else "json")
    if opts["format"] not in ("json", "csv"):
        raise UsageError("format must be json or csv")
    return cmd, params, opts


def _with_defaults(cmd: str, params: dict) -> dict:
    out = {k: v for k, v in DEFAULTS.items() if k in PARAMS[cmd] and cmd != "scatter"}
    out.update(params)
    if "N" in out and not 1 <= out["N"] <= ig.MAX_CANONICAL_N:
        raise UsageError(f"N must lie in [1, {ig.MAX_CANONICAL_N}]")
    for key in ("L", "a_v", "beta", "beta_ratio", "B"):
        if key in out and out[key] is not None and not out[key] > 0:
            raise UsageError(f"{key} must be positive")
    return out


def _beta(p: dict) -> float:
    if p.get("beta") is not None:
        return p["beta"]
    return p["beta_ratio"] * ig.critical_beta(p["N"] / p["L"] ** 3)


# --------------------------------------------------------------------------
# single evaluations; each returns (results, failures)

def parse_builtin(spec: str) -> pot.Potential:
    name, *args = spec.split(":")
    try:
        vals = [float(a) for a in args]
    except ValueError as exc:
        raise UsageError(f"bad builtin potential {spec!r}") from exc
    if name == "hard-sphere" and len(vals) == 1:
        return pot.hard_sphere(vals[0])
    if name == "square-well" and len(vals) == 2:
        return pot.square_well(*vals)
    if name == "zero" and not vals:
        return pot.zero_potential()
    raise UsageError(f"unknown builtin potential {spec!r}")


def run_scatter(p: dict):
    if ("builtin" in p) == ("file" in p):
        raise UsageError("give exactly one of --builtin and --file")
    if "builtin" in p:
        v = parse_builtin(p["builtin"])
    else:
        try:
            v = pot.read_potential(p["file"])
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read potential: {exc}") from exc
    res = {"a_v": pot.scattering_length(v)}
    if "N" in p or "L" in p:
        N, L = p.get("N", 1), p.get("L", 1.0)
        aN = pot.scattering_length(pot.scale_potential(v, N, L))
        res["a_N"] = aN
        res["a_N N/L"] = aN * N / L
    return res, []


def run_ideal_gas(p: dict):
    N, L, lam = p["N"], p["L"], p["lam"]
    beta = _beta(p)
    bc = ig.critical_beta(N / L**3)
    pair = ig.ensemble_pair(beta, N, L, lam)
    obs = ig.canonical_observables(pair.canonical)
    gco = ig.gc_observables(pair.grand)
    res = {
        "N": N, "L": L, "beta": beta, "lam": lam,
        "beta_over_beta_c": beta / bc,
        "mu": pair.grand.mu,
        "F_canonical": pair.F_canonical,
        "F_grand": pair.F_grand,
        "sandwich_slack": pair.sandwich_slack,
        "condensate_fraction": obs.N0 / N,
        "condensate_fraction_gc": gco.N0 / N,
        "condensate_fraction_limit": max(0.0, 1 - (bc / beta) ** 1.5),
        "variance_n0": obs.variance_n0,
    }
    fails = []
    if not pair.sandwich_holds():
        fails.append({"property": "ensemble sandwich", "F_canonical": pair.F_canonical,
                      "F_grand": pair.F_grand, "slack": pair.sandwich_slack})
    return res, fails


def _system(p: dict) -> asy.SystemParams:
    return asy.SystemParams(p["N"], p["L"], p["a_v"], _beta(p))


def run_free_energy(p: dict):
    sp = _system(p)
    ens = p["ensemble"]
    if ens not in ("canonical", "grand", "both"):
        raise UsageError("ensemble must be canonical, grand or both")
    first = asy.main_formula(sp, "grand" if ens == "grand" else "canonical")
    res = {"N": sp.N, "L": sp.L, "a_v": sp.a_v, "beta": sp.beta, "F0": first.F0,
           "interaction": first.interaction, "total": first.total, "rho0": first.rho0}
    fails = []
    if ens == "both":
        other = asy.main_formula(sp, "grand")
        tol = asy.ensemble_tolerance(sp)
        diff = first.total - other.total
        res.update({"total_grand": other.total, "difference": diff, "tolerance": tol})
        if not abs(diff) <= tol:
            fails.append({"property": "ensemble difference", "difference": diff, "tolerance": tol})
    return res, fails


def run_trial_energy(p: dict):
    sp = _system(p)
    ub = asy.upper_bound_budget(sp, p["eta"], check=False)
    res = {"N": sp.N, "L": sp.L, "a_v": sp.a_v, "beta": sp.beta, "b_opt": ub.b_opt}
    res.update({f"term {k}": v for k, v in ub.terms.items()})
    res.update({f"relative {k}": v for k, v in ub.relative_error.items()})
    res["dominant"] = ub.dominant
    res["exponent"] = str(ub.exponent)
    fails = []
    for name, (val, bound) in ub.preconditions.items():
        res[f"precondition {name}"] = val < bound
        if not val < bound:
            fails.append({"property": name, "value": val, "bound": bound})
    return res, fails


def run_budget(p: dict):
    regime = p["regime"]
    sp = asy.SystemParams.from_B(p["N"], p["L"], p["a_v"], p["B"])
    r = p.get("r")
    if regime == "combined":
        mod, cold = asy.regime_budgets(sp, delta=p["delta"])
        return asy.combine_regimes(mod, cold).to_json(), []
    if regime not in ("moderate", "cold"):
        raise UsageError("regime must be moderate, cold or combined")
    ps = asy.lower_bound_parameters(sp, regime, delta=p["delta"], D=p.get("D"), check=False)
    return asy.error_budget(ps).report(r), []


# --------------------------------------------------------------------------
# verification suites: one pure function per case, seeded by (seed, index)

def _case_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng([seed, i])


def _log_uniform(rng, lo, hi) -> float:
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def lattice_case(seed: int, i: int) -> dict:
    rng = _case_rng(seed, i)
    L = _log_uniform(rng, 0.5, 8.0)
    unit = 2 * math.pi / L
    kind = ("gaussian", "bose", "power")[i % 3]
    if kind == "gaussian":
        t = _log_uniform(rng, 0.02, 5.0) / unit**2
        f, par = (lambda q: np.exp(-t * np.asarray(q) ** 2)), {"t": t}
    elif kind == "bose":
        beta = _log_uniform(rng, 0.02, 5.0) / unit**2
        mu = -_log_uniform(rng, 0.01, 5.0) / beta
        f, par = lat.bose_occupation(beta, mu), {"beta": beta, "mu": mu}
    else:
        p0 = _log_uniform(rng, 0.5, 5.0) * unit
        f, par = (lambda q: (1 + (np.asarray(q) / p0) ** 2) ** -3), {"p0": p0}
    kappa = float(rng.uniform(0, 4)) * unit
    m = lat.MomentumLattice(L)
    maj = lat.integral_majorant(f, kappa, L)
    try:
        s = lat.lattice_sum(m, f, kappa, tail_tol=1e-10 * max(maj, 1e-300))
        value = s.value
    except lat.LatticeTailError as exc:
        value = exc.partial
    return {"ok": value <= maj, "f": kind, **par, "kappa": kappa, "L": L,
            "lattice_sum": value, "majorant": maj}


def sandwich_case(seed: int, i: int) -> dict:
    rng = _case_rng(seed, i)
    N = int(rng.integers(10, 1001))
    L = 1.0
    ratio = _log_uniform(rng, 0.5, 4.0)
    lam = float(rng.choice([0.0, 0.5 * (2 * math.pi / L) ** 2]))
    beta = ratio * ig.critical_beta(N / L**3)
    pair = ig.ensemble_pair(beta, N, L, lam)
    return {"ok": pair.sandwich_holds(), "N": N, "beta": beta, "lam": lam,
            "F_canonical": pair.F_canonical, "F_grand": pair.F_grand, "slack": pair.sandwich_slack}


SUTO_MODES = ig.torus_modes(4)  # 33 modes: |n|^2 <= 4


def suto_case(seed: int, i: int) -> dict:
    rng = _case_rng(seed, i)
    N = int(rng.integers(2, 51))
    L = 1.0
    beta = _log_uniform(rng, 0.25, 4.0) * ig.critical_beta(N / L**3)
    unit2 = (2 * math.pi / L) ** 2
    spec = ig.FiniteSpectrum(tuple(unit2 * sum(c * c for c in n) for n in SUTO_MODES))
    ce = ig.canonical_ensemble(beta, N, spec)
    occ = [ce.occupation(k) for k in range(len(SUTO_MODES))]
    precise = None
    seen = {}  # the covariance depends on the two energies only
    worst = -math.inf
    for p in range(len(SUTO_MODES)):
        for q in range(p + 1, len(SUTO_MODES)):
            key = (spec.energies[p], spec.energies[q])
            if key not in seen:
                joint = ig.joint_occupation(ce, p, q)
                cov = joint - occ[p] * occ[q]
                if cov > -1e-12 * joint:  # below the rounding level: redo in high precision
                    precise = precise or ig.PreciseCanonical(beta, N, spec.energies)
                    cov = precise.covariance(p, q)
                seen[key] = cov
            cov = seen[key]
            if cov >= 0:
                return {"ok": False, "N": N, "beta": beta, "p": list(SUTO_MODES[p]),
                        "q": list(SUTO_MODES[q]), "covariance": cov}
            worst = max(worst, cov)
    return {"ok": True, "N": N, "beta": beta, "max_covariance": worst}


_COERCIVITY_C = None


def coercivity_constant() -> float:
    global _COERCIVITY_C
    if _COERCIVITY_C is None:
        _COERCIVITY_C = ent.best_coercivity_constant()["C"]
    return _COERCIVITY_C


def coercivity_case(seed: int, i: int, C: float | None = None) -> dict:
    rng = _case_rng(seed, i)
    C = coercivity_constant() if C is None else C
    n = int(rng.integers(1, 9))
    a = np.exp(rng.uniform(math.log(1e-6), math.log(1e6), n))
    b = np.exp(rng.uniform(math.log(1e-6), math.log(1e6), n))
    if rng.random() < 0.5:  # nearby pairs probe the x ~ y end of the quotient
        a = b * np.exp(rng.normal(0, 0.1, n))
        a = np.clip(a, 1e-6, 1e6)
    g = ent.coercivity_gap(ent.OccupationSpectrum(a), ent.OccupationSpectrum(b), C)
    tol = 1e-12 * max(g.rhs, 1e-300)
    return {"ok": g.margin >= -tol, "a": a.tolist(), "b": b.tolist(), "lhs": g.lhs, "rhs": g.rhs}


def gibbs_space() -> fock.TruncatedFock:
    """Three modes with total occupation at most 9: dimension C(12, 3) = 220."""
    return fock.TruncatedFock([(0, 0, 0)], [(1, 0, 0), (-1, 0, 0)], n_max=9)


def gibbs_hamiltonian(g: float = 50.0, mu: float = 5.0):
    space = gibbs_space()
    ops = fock.build_operators(space, lambda p: g, mu=mu)
    return space.matrix(ops.H).toarray()


def gibbs_case(seed: int, i: int, beta: float = 0.05) -> dict:
    rng = _case_rng(seed, i)
    H = gibbs_hamiltonian()
    G = fock.gibbs_state(H, beta)
    dim = H.shape[0]
    rank = int(rng.integers(1, dim + 1))
    rho = fock.random_density_matrix(dim, rng, rank)
    t = float(rng.choice([1.0, 0.1, 1e-3]))
    rho = (1 - t) * G.rho + t * rho  # small t stays close to the minimiser
    F = fock.free_energy_functional(H, rho, beta)
    return {"ok": G.free_energy <= F + 1e-10 * abs(F), "dim": dim, "rank": rank, "mix": t,
            "F_gibbs": G.free_energy, "F_competitor": F}


def gamma_b_case(seed: int, i: int) -> dict:
    rng = _case_rng(seed, i)
    N, L = 1000, 1.0
    sp = asy.SystemParams(N, L, 1.0, float(rng.choice([0.5, 1.0, 2.0, 4.0])) * ig.critical_beta(N))
    mu0 = ig.solve_chemical_potential(sp.beta, N, L).mu
    R = float(rng.uniform(0.02, 0.5))
    b = float(rng.uniform(0.05, 0.5))
    p_c = float(rng.choice([0.0, 2 * math.pi * 0.9, 2 * math.pi * 1.5]))
    g = asy.gamma_b(sp, R, b, p_c=p_c, mu0=mu0)
    ok = g.gamma_b <= g.rho_omega * (1 + 1e-12) and g.rho_omega <= g.rho * (1 + 1e-12)
    return {"ok": bool(ok), "beta": sp.beta, "R": R, "b": b, "p_c": p_c,
            "gamma_b": g.gamma_b, "rho_omega": g.rho_omega, "rho": g.rho}


def rates_case(seed: int, i: int) -> dict:
    """Monomial algebra against Fraction arithmetic and the order against numerics."""
    rng = _case_rng(seed, i)

    def rand_frac():
        return Fraction(int(rng.integers(-30, 31)), int(rng.integers(1, 13)))

    e1 = {"N": rand_frac(), "B": rand_frac()}
    e2 = {"N": rand_frac(), "B": rand_frac()}
    m1, m2 = asy.Monomial.make(**e1), asy.Monomial.make(**e2)
    prod = m1 * m2
    ok = prod.n_exp == asy.Rate(e1["N"] + e2["N"]) and prod.b_exp == asy.Rate(e1["B"] + e2["B"])
    B = float(rng.uniform(0.5, 2.0))
    # compare at N = 10^6 and 10^12 only when the N exponents differ enough to dominate B
    gap = e1["N"] - e2["N"]
    if abs(gap) >= Fraction(1, 12) and abs(e1["B"] - e2["B"]) <= 10:
        for N in (1e6, 1e12):
            env = {"N": N, "B": B, "L": 1.0, "a": 1.0, "r0": 1.0}
            v1, v2 = m1.evaluate(env, 0.0), m2.evaluate(env, 0.0)
            if N == 1e12 and (v1 < v2) != (m1.sort_key() < m2.sort_key()):
                ok = False
    return {"ok": bool(ok), "m1": {k: str(v) for k, v in e1.items()},
            "m2": {k: str(v) for k, v in e2.items()}}


SUITES: dict[str, Callable[[int, int], dict]] = {
    "lattice-lemma": lattice_case,
    "sandwich": sandwich_case,
    "suto": suto_case,
    "coercivity": coercivity_case,
    "gibbs": gibbs_case,
    "gamma-b": gamma_b_case,
    "rates": rates_case,
}


def published_rates() -> dict:
    """Engine rates next to the printed values, with match flags."""
    out = {}
    ub = asy.upper_bound_budget(asy.SystemParams.from_B(1000, 1.0, 1.0, 1.0), check=False)
    out["upper_bound_exponent"] = (ub.exponent, Fraction(-1, 3))
    mod, cold = asy.regime_budgets()
    out["moderate_dominant"] = (mod.dominant_rate().value, Fraction(-4, 1209))
    comb = asy.combine_regimes(mod, cold)
    out["alpha"] = (comb.alpha.value, Fraction(4, 6885))
    out["sigma"] = (comb.sigma.value, Fraction(1, 6885))
    out["one_pdm_crossover"] = (comb.one_pdm_crossover, Fraction(4, 7269))
    out["free_energy_crossover"] = (comb.free_energy_crossover, asy.PRINTED_FREE_ENERGY_CROSSOVER)
    return {k: {"engine": str(a.value if isinstance(a, asy.Rate) else a), "printed": str(b),
                "match": (a.value if isinstance(a, asy.Rate) else a) == b} for k, (a, b) in out.items()}


def map_ordered(fn: Callable, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def _suite_case(suite: str, seed: int, i: int) -> dict:
    return SUITES[suite](seed, i)


def run_verify(p: dict, seed: int, workers: int):
    suite = p.get("suite")
    if suite not in SUITES:
        raise UsageError(f"suite must be one of {', '.join(SUITES)}")
    n = p["samples"]
    if n < 1:
        raise UsageError("samples must be at least 1")
    if suite == "coercivity":
        fn = partial(coercivity_case, seed, C=coercivity_constant())
        cases = map_ordered(fn, list(range(n)), workers)
    else:
        cases = map_ordered(partial(_suite_case, suite, seed), list(range(n)), workers)
    bad = [dict(c, case=i) for i, c in enumerate(cases) if not c["ok"]]
    res = {"suite": suite, "samples": n, "seed": seed, "passed": n - len(bad), "violations": len(bad)}
    if suite == "coercivity":
        res["C"] = coercivity_constant()
    if suite == "rates":
        res["published"] = published_rates()
    return res, bad[:1]


# --------------------------------------------------------------------------
# sweeps

COLUMNS = {
    "ideal-gas": ["N", "L", "beta", "lam", "beta_over_beta_c", "mu", "F_canonical", "F_grand",
                  "sandwich_slack", "condensate_fraction", "condensate_fraction_gc",
                  "condensate_fraction_limit", "variance_n0"],
    "free-energy": ["N", "L", "a_v", "beta", "F0", "interaction", "total", "rho0"],
    "trial-energy": ["N", "L", "a_v", "beta", "b_opt", "relative a_N (N rho)^1/3",
                     "relative B term", "precondition jastrow_volume", "precondition core_inside_b"],
}

RUNNERS = {
    "scatter": run_scatter,
    "ideal-gas": run_ideal_gas,
    "free-energy": run_free_energy,
    "trial-energy": run_trial_energy,
    "budget": run_budget,
}


def _sweep_row(target: str, params: dict) -> tuple[dict, list]:
    return RUNNERS[target](params)


def sweep_grid(p: dict) -> tuple[str, str, list[dict]]:
    """Validate a sweep request and return (target, var, per-point parameter dicts)."""
    target, var = p.get("command"), p.get("var")
    if target not in SWEEPABLE:
        raise UsageError(f"--command must be one of {', '.join(SWEEPABLE)}")
    for key in ("from", "to", "steps"):
        if key not in p:
            raise UsageError(f"sweep needs --{key}")
    table = PARAMS[target]
    if var not in table or table[var] is str:
        raise UsageError(f"--var must be a numeric parameter of {target}")
    steps = p["steps"]
    if steps < 1 or (steps > 1 and p["from"] == p["to"]):
        raise UsageError("empty sweep range")
    base = {k: v for k, v in p.items() if k not in PARAMS["sweep"]}
    stray = set(base) - set(table)
    if stray:
        raise UsageError(f"parameters not used by {target}: {', '.join(sorted(stray))}")
    if var in base:
        raise UsageError(f"{var} is both swept and fixed")
    points = []
    for x in np.linspace(p["from"], p["to"], steps):
        q = dict(base)
        q[var] = table[var](float(x)) if table[var] is not _int else int(round(float(x)))
        points.append(_with_defaults(target, q))
    return target, var, points


def run_sweep(p: dict, workers: int):
    target, var, points = sweep_grid(p)
    out = map_ordered(partial(_sweep_row, target), points, workers)
    rows, fails = [], []
    for i, (res, f) in enumerate(out):
        rows.append({c: res.get(c) for c in COLUMNS[target]})
        if f and not fails:
            fails = [dict(f[0], row=i)]
    return {"command": target, "var": var, "columns": COLUMNS[target], "rows": rows}, fails


# --------------------------------------------------------------------------
# serialization

def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (Fraction, asy.Rate)):
        return str(x)
    return x


def cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return "" if x is None else str(x)


def to_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([cell(x) for x in row])
    return buf.getvalue()


def _flatten(d: dict, prefix: str = "") -> list[tuple[str, object]]:
    out = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out += _flatten(v, key + ".")
        elif isinstance(v, (list, tuple)):
            out.append((key, json.dumps(_plain(v), sort_keys=True)))
        else:
            out.append((key, v))
    return out


def render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(_plain(report), indent=2, sort_keys=True) + "\n"
    res = report["results"]
    if report["command"] == "sweep":
        cols = res["columns"]
        return to_csv(cols, [[r[c] for c in cols] for r in res["rows"]])
    return to_csv(["key", "value"], [[k, v] for k, v in _flatten(res)])


# --------------------------------------------------------------------------
# entry point

def execute(cmd: str, params: dict, opts: dict) -> dict:
    """Run one command; returns the report dictionary."""
    if cmd == "verify":
        p = _with_defaults(cmd, params)
        res, fails = run_verify(p, opts["seed"], opts["workers"])
    elif cmd == "sweep":
        p = dict(params)
        res, fails = run_sweep(p, opts["workers"])
    else:
        p = _with_defaults(cmd, params)
        res, fails = RUNNERS[cmd](p)
    # only the first counterexample is serialized
    return {"command": cmd, "params": p, "results": res, "failures": fails[:1], "version": __version__}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cmd, params, opts = resolve(ns)
        report = execute(cmd, params, opts)
    except UsageError as exc:
        print(f"gpbose: error: {exc}", file=sys.stderr)
        return 2
    text = render(report, opts["format"])
    if opts["output"]:
        Path(opts["output"]).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)
    return 1 if report["failures"] else 0


if __name__ == "__main__":
    raise SystemExit(main())
