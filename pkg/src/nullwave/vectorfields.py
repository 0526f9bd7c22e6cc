"""The eleven commuting vector fields and their ordered compositions on
discrete space-time data.

A composition Gamma^a is expanded symbolically (product rule, no commutator
reordering) into a sum of mixed derivatives dt^k dx^m with polynomial
coefficients in (t, x).  Each mixed derivative is then evaluated once from a
window of snapshots: spatial stencils per snapshot, a single centered
finite-difference stencil of order k across the window for time.  This keeps
every composition fourth-order accurate in dt regardless of depth, at the
cost of a warm-up delay while the window fills.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import sympy as sp

from .grid import FieldSnapshot, GridSpec, diff1_values, diff2_values

T_SYM, X1_SYM, X2_SYM, X3_SYM = sp.symbols("t x1 x2 x3")
_COORD_SYMS = (T_SYM, X1_SYM, X2_SYM, X3_SYM)

GENERATOR_NAMES = ("dt", "dx1", "dx2", "dx3",
                   "rot1", "rot2", "rot3",
                   "boost1", "boost2", "boost3",
                   "scaling")

# Derivative keys are (k, m1, m2, m3): k time derivatives, m_i along x_i.
DerivKey = tuple[int, int, int, int]
Operator = dict[DerivKey, sp.Expr]

_DT_KEY: DerivKey = (1, 0, 0, 0)
_DX_KEYS: tuple[DerivKey, ...] = ((0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1))


def _make_generators() -> tuple[Operator, ...]:
    one = sp.Integer(1)
    gens: list[Operator] = [
        {_DT_KEY: one},
        {_DX_KEYS[0]: one},
        {_DX_KEYS[1]: one},
        {_DX_KEYS[2]: one},
        # rotations x ^ grad
        {_DX_KEYS[2]: X2_SYM, _DX_KEYS[1]: -X3_SYM},
        {_DX_KEYS[0]: X3_SYM, _DX_KEYS[2]: -X1_SYM},
        {_DX_KEYS[1]: X1_SYM, _DX_KEYS[0]: -X2_SYM},
        # boosts t d_i + x_i d_t
        {_DX_KEYS[0]: T_SYM, _DT_KEY: X1_SYM},
        {_DX_KEYS[1]: T_SYM, _DT_KEY: X2_SYM},
        {_DX_KEYS[2]: T_SYM, _DT_KEY: X3_SYM},
        # scaling t d_t + r d_r
        {_DT_KEY: T_SYM, _DX_KEYS[0]: X1_SYM, _DX_KEYS[1]: X2_SYM, _DX_KEYS[2]: X3_SYM},
    ]
    return tuple(gens)


GENERATORS: tuple[Operator, ...] = _make_generators()

# [Gamma, d_alpha] = -A[alpha][beta] d_beta with constant A; kappa is the
# coefficient in [box, Gamma] = kappa * box (2 for scaling, else 0).
_A_ZERO = np.zeros((4, 4))


def _rotation_A(i: int) -> np.ndarray:
    j, k = ((2, 3), (3, 1), (1, 2))[i - 1]
    A = np.zeros((4, 4))
    A[j][k] = 1.0
    A[k][j] = -1.0
    return A


def _boost_A(i: int) -> np.ndarray:
    A = np.zeros((4, 4))
    A[0][i] = 1.0
    A[i][0] = 1.0
    return A


COMMUTATOR_A: tuple[np.ndarray, ...] = (
    _A_ZERO, _A_ZERO, _A_ZERO, _A_ZERO,
    _rotation_A(1), _rotation_A(2), _rotation_A(3),
    _boost_A(1), _boost_A(2), _boost_A(3),
    np.eye(4),
)

BOX_COMMUTATOR_KAPPA: tuple[float, ...] = (0.0,) * 10 + (2.0,)


class JetBudgetError(ValueError):
    """Requested derivative order exceeds what the snapshot window supports."""


@dataclass(frozen=True)
class MultiIndex:
    """Exponent vector over the generator order (dt, dx, rotations, boosts, scaling)."""

    exponents: tuple[int, ...]

    def __post_init__(self):
        if len(self.exponents) != 11 or any(e < 0 for e in self.exponents):
            raise ValueError(f"need 11 nonnegative exponents, got {self.exponents}")

    @property
    def order(self) -> int:
        return sum(self.exponents)

    @classmethod
    def zero(cls) -> "MultiIndex":
        return cls((0,) * 11)

    @classmethod
    def unit(cls, k: int) -> "MultiIndex":
        e = [0] * 11
        e[k] = 1
        return cls(tuple(e))

    def __str__(self):
        if self.order == 0:
            return "1"
        parts = []
        for name, e in zip(GENERATOR_NAMES, self.exponents):
            if e == 1:
                parts.append(name)
            elif e > 1:
                parts.append(f"{name}^{e}")
        return "*".join(parts)


def enumerate_multiindices(max_order: int) -> list[MultiIndex]:
    """All multi-indices with |a| <= max_order in lexicographic order."""
    if max_order < 0:
        raise ValueError("max_order must be nonnegative")
    out: list[MultiIndex] = []

    def rec(prefix: tuple[int, ...], slots: int, budget: int):
        if slots == 0:
            out.append(MultiIndex(prefix))
            return
        for v in range(budget + 1):
            rec(prefix + (v,), slots - 1, budget - v)

    rec((), 11, max_order)
    return out


def _add_term(op: Operator, key: DerivKey, coeff: sp.Expr) -> None:
    cur = op.get(key)
    new = coeff if cur is None else cur + coeff
    new = sp.expand(new)
    if new == 0:
        op.pop(key, None)
    else:
        op[key] = new


def compose(gen: Operator, op: Operator) -> Operator:
    """Operator product gen o op for a first-order gen with polynomial coefficients."""
    out: Operator = {}
    for gkey, gcoef in gen.items():
        ax = gkey.index(1)
        var = _COORD_SYMS[ax]
        for okey, ocoef in op.items():
            d = sp.diff(ocoef, var)
            if d != 0:
                _add_term(out, okey, gcoef * d)
            nkey = tuple(a + b for a, b in zip(gkey, okey))
            _add_term(out, nkey, gcoef * ocoef)
    return out


def op_add(a: Operator, b: Operator, sign: float = 1.0) -> Operator:
    out = dict(a)
    for key, coeff in b.items():
        _add_term(out, key, sign * coeff)
    return out


IDENTITY_OP: Operator = {(0, 0, 0, 0): sp.Integer(1)}


@lru_cache(maxsize=None)
def multi_operator(exponents: tuple[int, ...]) -> tuple[tuple[DerivKey, sp.Expr], ...]:
    """Canonical expansion of Gamma^a = G0^a0 ... G10^a10 (rightmost acts first)."""
    op: Operator = dict(IDENTITY_OP)
    for k in range(10, -1, -1):
        for _ in range(exponents[k]):
            op = compose(GENERATORS[k], op)
    return tuple(sorted(op.items(), key=lambda kv: kv[0]))


def _as_op(items) -> Operator:
    return dict(items)


@lru_cache(maxsize=None)
def multi_operator_after(exponents: tuple[int, ...], post: str) -> tuple[tuple[DerivKey, sp.Expr], ...]:
    """Gamma^a composed on the left with dt ('t'), dx_i ('1','2','3'), or the
    wave operator ('box')."""
    base = _as_op(multi_operator(exponents))
    if post == "box":
        tt = compose(GENERATORS[0], compose(GENERATORS[0], base))
        out = tt
        for i in (1, 2, 3):
            out = op_add(out, compose(GENERATORS[i], compose(GENERATORS[i], base)), sign=-1.0)
        op = out
    elif post == "t":
        op = compose(GENERATORS[0], base)
    elif post in ("1", "2", "3"):
        op = compose(GENERATORS[int(post)], base)
    else:
        raise ValueError(f"unknown post operator {post!r}")
    return tuple(sorted(op.items(), key=lambda kv: kv[0]))


@lru_cache(maxsize=None)
def _coeff_fn(expr: sp.Expr):
    if expr.is_number:
        val = float(expr)
        return lambda t, x1, x2, x3: val
    return sp.lambdify((T_SYM, X1_SYM, X2_SYM, X3_SYM), expr, modules="numpy")


@lru_cache(maxsize=None)
def fd_weights(offsets: tuple[int, ...], k: int) -> tuple[float, ...]:
    """Finite-difference weights for the k-th derivative on integer offsets
    (in units of the step), by moment matching."""
    p = len(offsets)
    if k >= p:
        raise ValueError("not enough points for the requested derivative")
    A = np.array([[float(o) ** m for o in offsets] for m in range(p)])
    A[0, :] = 1.0
    b = np.zeros(p)
    b[k] = float(math.factorial(k))
    return tuple(np.linalg.solve(A, b))


def temporal_radius(k: int) -> int:
    """Half-width of the centered 4th-order stencil for the k-th time derivative."""
    return (k + 1) // 2 + 1


def min_window(jet_order: int) -> int:
    return 2 * ((jet_order + 1) // 2) + 5


@dataclass
class SpacetimeJet:
    """A window of uniformly spaced snapshots with mixed-derivative accessors.

    Accessors cache aggressively: each spatial multi-derivative is computed
    once per snapshot and each (k, m) mixed derivative once per jet.  prefill()
    makes the caches read-only for subsequent threaded evaluation.
    """

    snapshots: tuple[FieldSnapshot, ...]
    center: int
    dt: float
    jet_order: int
    _spatial_cache: dict = field(default_factory=dict, repr=False)
    _mixed_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        W = len(self.snapshots)
        if W < min_window(self.jet_order):
            raise JetBudgetError(
                f"window of {W} snapshots cannot support jet order {self.jet_order}"
            )
        side = min(self.center, W - 1 - self.center)
        if side < temporal_radius(self.jet_order):
            raise JetBudgetError("window is not centered well enough for the jet order")
        t0 = self.snapshots[0].t
        for j, snap in enumerate(self.snapshots):
            if abs(snap.t - (t0 + j * self.dt)) > 1e-9 * max(1.0, abs(snap.t)):
                raise ValueError("snapshots are not uniformly spaced by dt")
            if snap.grid != self.snapshots[0].grid:
                raise ValueError("snapshots live on different grids")

    @property
    def grid(self) -> GridSpec:
        return self.snapshots[0].grid

    @property
    def t_center(self) -> float:
        return self.snapshots[self.center].t

    def _spatial(self, idx: int, m: tuple[int, int, int]) -> np.ndarray:
        key = (idx, m)
        cached = self._spatial_cache.get(key)
        if cached is not None:
            return cached
        m1, m2, m3 = m
        h = self.grid.h
        if m == (0, 0, 0):
            vals = self.snapshots[idx].values
        elif m1 % 2 == 1:
            vals = diff1_values(self._spatial(idx, (m1 - 1, m2, m3)), 1, h)
        elif m1 >= 2:
            vals = diff2_values(self._spatial(idx, (m1 - 2, m2, m3)), 1, h)
        elif m2 % 2 == 1:
            vals = diff1_values(self._spatial(idx, (m1, m2 - 1, m3)), 2, h)
        elif m2 >= 2:
            vals = diff2_values(self._spatial(idx, (m1, m2 - 2, m3)), 2, h)
        elif m3 % 2 == 1:
            vals = diff1_values(self._spatial(idx, (m1, m2, m3 - 1)), 3, h)
        else:
            vals = diff2_values(self._spatial(idx, (m1, m2, m3 - 2)), 3, h)
        self._spatial_cache[key] = vals
        return vals

    def mixed(self, key: DerivKey) -> np.ndarray:
        """dt^k dx^m u at the center time."""
        cached = self._mixed_cache.get(key)
        if cached is not None:
            return cached
        k, m1, m2, m3 = key
        if k + m1 + m2 + m3 > self.jet_order:
            raise JetBudgetError(f"derivative {key} exceeds jet order {self.jet_order}")
        m = (m1, m2, m3)
        if k == 0:
            vals = self._spatial(self.center, m)
        else:
            rad = temporal_radius(k)
            offsets = tuple(range(-rad, rad + 1))
            weights = fd_weights(offsets, k)
            scale = self.dt ** k
            vals = np.zeros_like(self.snapshots[self.center].values)
            for off, wgt in zip(offsets, weights):
                if wgt == 0.0:
                    continue
                vals += wgt * self._spatial(self.center + off, m)
            vals = vals / scale
        self._mixed_cache[key] = vals
        return vals

    def prefill(self, keys) -> None:
        """Populate the mixed-derivative cache serially (for threaded callers)."""
        for key in sorted(set(keys)):
            self.mixed(key)

    def evaluate(self, op_items) -> np.ndarray:
        """Evaluate a canonical operator (iterable of (key, coeff)) at the center."""
        g = self.grid
        t = self.t_center
        out = np.zeros((g.n, g.n, g.n))
        for key, coeff in sorted(op_items, key=lambda kv: kv[0]):
            c = _coeff_fn(coeff)(t, g.coord(1), g.coord(2), g.coord(3))
            out += c * self.mixed(key)
        return out


def jet_from_function(fn, grid: GridSpec, t_center: float, dt: float,
                      window: int, jet_order: int) -> SpacetimeJet:
    """Sample u(t, x1, x2, x3) onto a window of snapshots (tests and lemma families)."""
    center = window // 2
    x1, x2, x3 = grid.coord(1), grid.coord(2), grid.coord(3)
    snaps = []
    for j in range(window):
        t = t_center + (j - center) * dt
        vals = np.asarray(fn(t, x1, x2, x3), dtype=np.float64)
        vals = np.broadcast_to(vals, (grid.n,) * 3).copy()
        snaps.append(FieldSnapshot(grid, t, vals))
    return SpacetimeJet(tuple(snaps), center, dt, jet_order)


def apply_generator(k: int, jet: SpacetimeJet) -> FieldSnapshot:
    """Apply one generator (index 0..10) at the jet's center time."""
    if not 0 <= k <= 10:
        raise ValueError(f"generator id must be 0..10, got {k}")
    vals = jet.evaluate(tuple(GENERATORS[k].items()))
    return FieldSnapshot(jet.grid, jet.t_center, vals)


def apply_multi(a: MultiIndex, jet: SpacetimeJet) -> FieldSnapshot:
    """Apply the ordered composition Gamma^a at the jet's center time."""
    vals = jet.evaluate(multi_operator(a.exponents))
    return FieldSnapshot(jet.grid, jet.t_center, vals)


def operator_keys(a: MultiIndex, post: str | None = None) -> list[DerivKey]:
    items = multi_operator(a.exponents) if post is None else multi_operator_after(a.exponents, post)
    return [key for key, _ in items]


def commuted_tensor(B_entries: np.ndarray, gen: int) -> tuple[np.ndarray, float]:
    """Data for the commutation identity with a single generator.

    box Gamma u = N(Gamma u, u) + N(u, Gamma u) + N_d(u, u) where N_d has the
    returned tensor: the commutator action on each slot plus kappa copies of B
    from [box, Gamma].  Zero for translations.
    """
    A = COMMUTATOR_A[gen]
    kappa = BOX_COMMUTATOR_KAPPA[gen]
    Bc = -(np.einsum("la,lbc->abc", A, B_entries)
           + np.einsum("mb,amc->abc", A, B_entries)
           + np.einsum("nc,abn->abc", A, B_entries))
    return Bc + kappa * B_entries, kappa
