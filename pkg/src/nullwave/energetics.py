"""Ghost weight, energy functionals, the dissipation term, the discrete
energy-identity residual, and the lemma verification suite.

All integrals share one evaluation sweep per sample: for each multi-index a
the four fields d_lambda Gamma^a u are produced from the jet, and the
weighted energy, the good-derivative flux, the cubic correction of the
modified energy and the identity right-hand side are accumulated from them.
Reductions run in a fixed index order so results do not depend on the
thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .grid import FieldSnapshot, GridSpec, gradient_values, integrate_values
from .nullform import NullFormTensor, is_null
from .vectorfields import (MultiIndex, SpacetimeJet, apply_generator, compose,
                           GENERATORS, commuted_tensor, enumerate_multiindices,
                           multi_operator, multi_operator_after, operator_keys)

ETA_DIAG = np.array([1.0, -1.0, -1.0, -1.0])


class SupportError(ValueError):
    """Field support violates a lemma's hypothesis."""


def ghost_q(sigma):
    """Ghost weight q(sigma) = arctan(sigma) and q'(sigma) = 1/(1+sigma^2).

    arctan is the unique antiderivative of 1/(1+sigma^2) with q(0) = 0; it is
    bounded by pi/2, so exp(-q) is pinched between exp(-pi/2) and exp(pi/2).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    q = np.arctan(sigma)
    qprime = 1.0 / (1.0 + sigma * sigma)
    if q.ndim == 0:
        return float(q), float(qprime)
    return q, qprime


@dataclass(frozen=True)
class GhostWeightFields:
    """exp(-q(t-r)) and q'(t-r) sampled on the grid at one time."""

    t: float
    exp_neg_q: np.ndarray
    qprime: np.ndarray


def ghost_weight_fields(grid: GridSpec, t: float) -> GhostWeightFields:
    sigma = t - grid.r
    q, qp = ghost_q(sigma)
    return GhostWeightFields(t=t, exp_neg_q=np.exp(-q), qprime=qp)


@dataclass
class EnergyReport:
    """Per-sample diagnostics; the CSV schema is the first seven fields."""

    t: float
    Es: float
    EsTilde: float
    G: float
    Hs: float
    residual: float = math.nan
    min_denom: float = 1.0
    per_index: dict | None = None
    rhs: float = math.nan          # sum_a <box Gamma^a u, dt Gamma^a u e^-q>
    boundary_clear: bool = True

    def __post_init__(self):
        for name in ("Es", "G", "Hs"):
            val = getattr(self, name)
            if val < 0:
                raise ValueError(f"{name} must be nonnegative, got {val}")


CSV_COLUMNS = ("t", "Es", "EsTilde", "G", "Hs", "residual", "min_denom")


def _nonzero_entries(B: NullFormTensor | None):
    if B is None:
        return []
    out = []
    for lam in range(4):
        for mu in range(4):
            for nu in range(4):
                b = B.entries[lam, mu, nu]
                if b != 0.0:
                    out.append((lam, mu, nu, float(b)))
    return out


def _first_derivs(jet: SpacetimeJet):
    """d_lambda u for lambda = 0..3 straight from the jet."""
    return (jet.mixed((1, 0, 0, 0)), jet.mixed((0, 1, 0, 0)),
            jet.mixed((0, 0, 1, 0)), jet.mixed((0, 0, 0, 1)))


def _index_fields(jet: SpacetimeJet, a: MultiIndex):
    """(dt Gamma^a u, d1 Gamma^a u, d2 Gamma^a u, d3 Gamma^a u)."""
    return tuple(jet.evaluate(multi_operator_after(a.exponents, post))
                 for post in ("t", "1", "2", "3"))


def survey(jet: SpacetimeJet, s: int, B: NullFormTensor | None = None, *,
           with_rhs: bool = False, per_index: bool = False,
           threads: int = 1, unweighted: bool = False) -> dict:
    """One sweep over all |a| <= s-1 computing Es, per-index E1, G, the
    modified-energy correction, Hs, and optionally the identity RHS."""
    if s < 1:
        raise ValueError("s must be >= 1")
    g = jet.grid
    t = jet.t_center
    wf = ghost_weight_fields(g, t)
    w = np.ones_like(wf.exp_neg_q) if unweighted else wf.exp_neg_q
    qp = wf.qprime
    xr = g.unit_radial
    flux_mask = ~g.origin_mask
    h3 = g.h ** 3

    indices = enumerate_multiindices(s - 1)
    top_order = s - 1
    entries = _nonzero_entries(B)

    # Fill the derivative caches serially so per-index evaluation can run on
    # threads against read-only caches.
    needed = set()
    for a in indices:
        for post in ("t", "1", "2", "3"):
            needed.update(operator_keys(a, post))
        if with_rhs:
            needed.update(operator_keys(a, "box"))
    for m in enumerate_spatial(s - 1):
        needed.add((1,) + m)
        for ax in range(3):
            e = [0, 0, 0]
            e[ax] = 1
            needed.add((0,) + tuple(p + q for p, q in zip(m, e)))
    jet.prefill(needed)
    base = _first_derivs(jet) if entries else None

    def work(a: MultiIndex):
        ft, f1, f2, f3 = _index_fields(jet, a)
        fs = (ft, f1, f2, f3)
        e1 = 0.5 * integrate_values(g, (ft * ft + f1 * f1 + f2 * f2 + f3 * f3) * w)
        good = ((ft * xr[0] + f1) ** 2 + (ft * xr[1] + f2) ** 2 + (ft * xr[2] + f3) ** 2)
        g_a = 0.5 * integrate_values(g, np.where(flux_mask, good * w * qp, 0.0))
        corr = 0.0
        if entries and a.order == top_order:
            for lam, mu, nu, b in entries:
                corr += 0.5 * b * ETA_DIAG[nu] * integrate_values(
                    g, base[lam] * fs[mu] * fs[nu] * w)
        rhs_a = math.nan
        if with_rhs:
            box_vals = jet.evaluate(multi_operator_after(a.exponents, "box"))
            rhs_a = integrate_values(g, box_vals * ft * w)
        return e1, g_a, corr, rhs_a

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, indices))
    else:
        results = [work(a) for a in indices]

    per = {a: r[0] for a, r in zip(indices, results)} if per_index else None
    Es = math.fsum(r[0] for r in results)
    G = math.fsum(r[1] for r in results)
    correction = math.fsum(r[2] for r in results)
    rhs = math.fsum(r[3] for r in results) if with_rhs else math.nan

    return {
        "Es": Es,
        "G": G,
        "EsTilde": Es - correction,
        "correction": correction,
        "rhs": rhs,
        "Hs": _hs_from_jet(jet, s),
        "per_index": per,
        "t": t,
    }


def enumerate_spatial(max_order: int) -> list[tuple[int, int, int]]:
    out = []
    for m1 in range(max_order + 1):
        for m2 in range(max_order + 1 - m1):
            for m3 in range(max_order + 1 - m1 - m2):
                out.append((m1, m2, m3))
    return out


def _hs_from_jet(jet: SpacetimeJet, s: int) -> float:
    """||dt u||^2_{H^{s-1}} + ||grad u||^2_{H^{s-1}} at the sample time."""
    g = jet.grid
    total = []
    for m in enumerate_spatial(s - 1):
        dtu = jet.mixed((1,) + m)
        total.append(integrate_values(g, dtu * dtu))
        for ax in range(3):
            e = [0, 0, 0]
            e[ax] = 1
            mm = tuple(a + b for a, b in zip(m, e))
            gi = jet.mixed((0,) + mm)
            total.append(integrate_values(g, gi * gi))
    return math.fsum(total)


def energy_E1(jet: SpacetimeJet, unweighted: bool = False) -> float:
    """Weighted first-order energy of the jet's field itself."""
    g = jet.grid
    wf = ghost_weight_fields(g, jet.t_center)
    w = np.ones_like(wf.exp_neg_q) if unweighted else wf.exp_neg_q
    ft = jet.mixed((1, 0, 0, 0))
    f1, f2, f3 = (jet.mixed((0, 1, 0, 0)), jet.mixed((0, 0, 1, 0)), jet.mixed((0, 0, 0, 1)))
    return 0.5 * integrate_values(g, (ft * ft + f1 * f1 + f2 * f2 + f3 * f3) * w)


def energy_Es(jet: SpacetimeJet, s: int, threads: int = 1,
              unweighted: bool = False) -> tuple[float, dict]:
    res = survey(jet, s, None, per_index=True, threads=threads, unweighted=unweighted)
    return res["Es"], res["per_index"]


def dissipation_G(jet: SpacetimeJet, s: int, threads: int = 1) -> float:
    return survey(jet, s, None, threads=threads)["G"]


def modified_energy(jet: SpacetimeJet, s: int, B: NullFormTensor, threads: int = 1) -> float:
    return survey(jet, s, B, threads=threads)["EsTilde"]


def hs_energy(jet: SpacetimeJet, s: int) -> float:
    return _hs_from_jet(jet, s)


def sample_diagnostics(jet: SpacetimeJet, s: int, B: NullFormTensor | None, *,
                       threads: int = 1, with_rhs: bool = True,
                       per_index: bool = False, min_denom: float = 1.0,
                       boundary_clear: bool = True) -> EnergyReport:
    res = survey(jet, s, B, with_rhs=with_rhs, per_index=per_index, threads=threads)
    return EnergyReport(t=res["t"], Es=res["Es"], EsTilde=res["EsTilde"], G=res["G"],
                        Hs=res["Hs"], min_denom=min_denom, per_index=res["per_index"],
                        rhs=res["rhs"], boundary_clear=boundary_clear)


def energy_identity_residual(reports, idx: int | None = None) -> float:
    """|dEs/dt + G - RHS| at sample `idx` from a uniformly spaced report series.

    Uses the 4th-order centered difference of the Es series when five samples
    surround idx, else the 2nd-order one.  Requires at least 3 reports.
    """
    n = len(reports)
    if n < 3:
        raise ValueError("need at least 3 consecutive reports")
    ts = np.array([r.t for r in reports])
    dts = np.diff(ts)
    if not np.allclose(dts, dts[0], rtol=1e-9, atol=1e-12):
        raise ValueError("reports are not uniformly spaced")
    delta = float(dts[0])
    if idx is None:
        idx = n // 2
    E = [r.Es for r in reports]
    if n >= 5 and 2 <= idx <= n - 3:
        dEdt = (E[idx - 2] - 8 * E[idx - 1] + 8 * E[idx + 1] - E[idx + 2]) / (12 * delta)
    elif 1 <= idx <= n - 2:
        dEdt = (E[idx + 1] - E[idx - 1]) / (2 * delta)
    else:
        raise ValueError(f"sample {idx} has no interior neighbors")
    rhs = reports[idx].rhs
    if math.isnan(rhs):
        rhs = 0.0
    return abs(dEdt + reports[idx].G - rhs)


def residual_series(reports) -> list[float]:
    """Residuals for every sample with interior neighbors."""
    out = []
    for i in range(1, len(reports) - 1):
        out.append(energy_identity_residual(reports, i))
    return out


# ---------------------------------------------------------------------------
# Lemma verification suite
# ---------------------------------------------------------------------------

def _l2_norm(grid: GridSpec, values: np.ndarray) -> float:
    return math.sqrt(max(0.0, integrate_values(grid, values * values)))


def verify_weighted_sobolev(u: FieldSnapshot) -> float:
    """sup_{r >= 2h} r^(1/2) |u| divided by sum_{|b|<=1} ||grad Omega^b u||_L2."""
    g = u.grid
    fields = [u.values]
    grad = gradient_values(u.values, g.h)
    x = [np.broadcast_to(g.coord(ax), u.values.shape) for ax in (1, 2, 3)]
    fields.append(x[1] * grad[2] - x[2] * grad[1])
    fields.append(x[2] * grad[0] - x[0] * grad[2])
    fields.append(x[0] * grad[1] - x[1] * grad[0])
    denom = math.fsum(_l2_norm(g, d) for f in fields for d in gradient_values(f, g.h))
    mask = g.r >= 2 * g.h
    numer = float(np.max(np.where(mask, np.sqrt(g.r) * np.abs(u.values), 0.0)))
    if denom == 0.0:
        return 0.0
    return numer / denom


def verify_hardy(u: FieldSnapshot, t: float, R: float) -> float:
    """||u / <t-r>||_L2 / ||grad u||_L2 for fields supported in |x| <= t + R."""
    g = u.grid
    outside = g.r > t + R
    if np.any(u.values[outside] != 0.0):
        raise SupportError(f"field is nonzero outside |x| <= t + R = {t + R}")
    weight = 1.0 / np.sqrt(1.0 + (t - g.r) ** 2)
    numer = _l2_norm(g, u.values * weight)
    denom = math.fsum(_l2_norm(g, d) for d in gradient_values(u.values, g.h))
    if denom == 0.0:
        return 0.0
    return numer / denom


def _abs_sum(arrays) -> np.ndarray:
    out = None
    for a in arrays:
        out = np.abs(a) if out is None else out + np.abs(a)
    return out


def nullform_quadratic(B_entries: np.ndarray, first, second) -> np.ndarray:
    """B_{lmn} (d_l f) (d_m d_n g) from precomputed fields.

    first[lam] = d_lam f; second[(mu, nu)] = d_mu d_nu g (symmetric keys)."""
    out = None
    for lam in range(4):
        for mu in range(4):
            for nu in range(4):
                b = B_entries[lam, mu, nu]
                if b == 0.0:
                    continue
                key = (mu, nu) if mu <= nu else (nu, mu)
                term = b * first[lam] * second[key]
                out = term if out is None else out + term
    if out is None:
        out = np.zeros_like(first[0])
    return out


def _second_derivs(jet: SpacetimeJet):
    """d_mu d_nu u fields keyed by sorted (mu, nu)."""
    out = {}
    for mu in range(4):
        for nu in range(mu, 4):
            key = [0, 0, 0, 0]
            for idx in (mu, nu):
                if idx == 0:
                    key[0] += 1
                else:
                    key[idx] += 1
            out[(mu, nu)] = jet.mixed(tuple(key))
    return out


def verify_nullform_pointwise(jet: SpacetimeJet, B: NullFormTensor,
                              den_floor: float = 1e-9) -> float:
    """Empirical constant in the pointwise null-form bound, over r >= (t+1)/2.

    max over valid nodes of |N(u,u)| / [(1+t)^-1 (|Gu||d2u| + |du||dGu| +
    <t-r>|du||d2u|)].  Nodes where the bracket is below den_floor times its
    max are skipped.
    """
    if not is_null(B, 1e-12):
        raise ValueError("tensor does not satisfy the null condition")
    g = jet.grid
    t = jet.t_center
    first = _first_derivs(jet)
    second = _second_derivs(jet)
    numer = np.abs(nullform_quadratic(B.entries, first, second))

    abs_du = _abs_sum(first)
    abs_d2u = _abs_sum(second.values())
    abs_gu = _abs_sum(apply_generator(k, jet).values for k in range(11))
    dgamma = []
    for k in range(11):
        exps = MultiIndex.unit(k).exponents
        for post in ("t", "1", "2", "3"):
            dgamma.append(jet.evaluate(multi_operator_after(exps, post)))
    abs_dgu = _abs_sum(dgamma)

    bracket = (abs_gu * abs_d2u + abs_du * abs_dgu
               + np.sqrt(1.0 + (t - g.r) ** 2) * abs_du * abs_d2u) / (1.0 + t)
    region = g.r >= 0.5 * (t + 1.0)
    valid = region & (bracket > den_floor * max(float(bracket.max()), 1e-300))
    if not np.any(valid):
        return 0.0
    return float(np.max(numer[valid] / bracket[valid]))


def verify_commutation(jet: SpacetimeJet, B: NullFormTensor, a: MultiIndex) -> float:
    """L2 residual of box Gamma u = N(Gamma u, u) + N(u, Gamma u) + N_d(u, u)
    for a single generator (|a| = 1)."""
    if a.order != 1:
        raise ValueError("commutation check supports |a| = 1 only")
    gen = next(i for i, e in enumerate(a.exponents) if e == 1)
    g = jet.grid

    box_gamma = jet.evaluate(multi_operator_after(a.exponents, "box"))

    first_u = _first_derivs(jet)
    second_u = _second_derivs(jet)
    first_gu = tuple(jet.evaluate(multi_operator_after(a.exponents, post))
                     for post in ("t", "1", "2", "3"))
    base_op = dict(multi_operator(a.exponents))
    second_gu = {}
    for mu in range(4):
        for nu in range(mu, 4):
            op = compose(GENERATORS[mu], compose(GENERATORS[nu], base_op))
            second_gu[(mu, nu)] = jet.evaluate(tuple(op.items()))

    total = nullform_quadratic(B.entries, first_gu, second_u)
    total = total + nullform_quadratic(B.entries, first_u, second_gu)
    Bd, _ = commuted_tensor(B.entries, gen)
    if np.any(Bd != 0.0):
        total = total + nullform_quadratic(Bd, first_u, second_u)

    return _l2_norm(g, box_gamma - total)


def verify_lemma24(jet: SpacetimeJet) -> float:
    """Max error of (dt + dr) u = [S u + (x_i/r) L_i u] / (t + r) on the
    region r >= max(2h, (t+1)/2)."""
    g = jet.grid
    t = jet.t_center
    first = _first_derivs(jet)
    xr = g.unit_radial
    lhs = first[0] + xr[0] * first[1] + xr[1] * first[2] + xr[2] * first[3]
    s_field = apply_generator(10, jet).values
    rhs = s_field.copy()
    for i in range(3):
        rhs += xr[i] * apply_generator(7 + i, jet).values
    rhs = rhs / (t + g.r + np.where(g.origin_mask, 1.0, 0.0))
    mask = (g.r >= max(2 * g.h, 0.5 * (t + 1.0)))
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(lhs - rhs)[mask]))


def lemma21_ratio_stats(jet: SpacetimeJet, N: int, den_floor: float = 1e-9):
    """(max, median) over valid nodes of
    sum_{|alpha|=N} |d^alpha u| / [(1+|t-r|)^-N sum_{|beta|<=N} |Gamma^beta u|]."""
    if N < 0:
        raise ValueError("N must be nonnegative")
    g = jet.grid
    t = jet.t_center
    numer_fields = []
    for k in range(N + 1):
        for m in enumerate_spatial(N - k):
            if k + sum(m) == N:
                numer_fields.append(jet.mixed((k,) + m))
    numer = _abs_sum(numer_fields) if numer_fields else np.abs(jet.mixed((0, 0, 0, 0)))
    gamma_fields = [jet.evaluate(multi_operator(b.exponents))
                    for b in enumerate_multiindices(N)]
    denom = _abs_sum(gamma_fields) * (1.0 + np.abs(t - g.r)) ** (-N)
    valid = denom > den_floor * max(float(denom.max()), 1e-300)
    if not np.any(valid):
        return 0.0, 0.0
    ratios = numer[valid] / denom[valid]
    return float(np.max(ratios)), float(np.median(ratios))


def klainerman_ratio(jet: SpacetimeJet, orders: int = 2) -> float:
    """Optional diagnostic: the p = 2, N = 0 instance of the weighted sup bound.

    max over nodes of |u| (1+t+r) <t-r>^(1/2) divided by
    sum_{|a| <= orders} ||Gamma^a u||_L2.  Reported, never asserted.
    """
    g = jet.grid
    t = jet.t_center
    u = jet.mixed((0, 0, 0, 0))
    weight = (1.0 + t + g.r) * (1.0 + (t - g.r) ** 2) ** 0.25
    numer = float(np.max(np.abs(u) * weight))
    denom = math.fsum(_l2_norm(g, jet.evaluate(multi_operator(a.exponents)))
                      for a in enumerate_multiindices(orders))
    if denom == 0.0:
        return 0.0
    return numer / denom
