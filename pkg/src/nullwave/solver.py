"""Method-of-lines evolution of the quasilinear Cauchy problem with a
hyperbolicity guard, plus the exact linear radial solution used as a
convergence oracle.

The second-order equation is reduced to (u, v = u_t).  The only u_tt
occurrences on the right-hand side carry the coefficient B_{l00} d_l u, so
the update solves for u_tt explicitly and the scalar margin
min |1 - B_{l00} d_l u| is watched every stage; dropping below delta_hyp
terminates the run with a typed error instead of integrating garbage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np
import sympy as sp
from scipy.integrate import quad

from .energetics import EnergyReport, sample_diagnostics
from .grid import (DEFAULT_PAD, FieldSnapshot, GridSpec, diff1_values,
                   gradient_values, laplacian_values, mixed_second)
from .nullform import NullFormTensor, resolve_tensor
from .vectorfields import SpacetimeJet, min_window


class ConfigurationError(ValueError):
    """Invalid run configuration."""


class HyperbolicityLossError(RuntimeError):
    """The quasilinear denominator margin fell below delta_hyp."""

    def __init__(self, t: float, location, min_denom: float):
        self.t = t
        self.location = tuple(int(i) for i in location)
        self.min_denom = float(min_denom)
        super().__init__(f"hyperbolicity margin {min_denom:.4f} at t={t:.4f}, node {self.location}")


class BlowupError(RuntimeError):
    """Non-finite values appeared in the state."""

    def __init__(self, t: float):
        self.t = t
        super().__init__(f"non-finite state at t={t:.4f}")


# --------------------------------------------------------------------------
# Initial data profiles
# --------------------------------------------------------------------------

_S = sp.Symbol("s")
_PROFILE_EXPRS = {
    "poly_bump": (1 - _S ** 2) ** 4,
    "gauss_truncated": sp.exp(-1 / (1 - _S ** 2)),
}


def _profile_fns(name: str):
    expr = _PROFILE_EXPRS[name]
    fns = []
    for k in range(4):
        fns.append(sp.lambdify(_S, sp.diff(expr, _S, k), modules="numpy"))
    return tuple(fns)


_PROFILE_CACHE = {name: _profile_fns(name) for name in _PROFILE_EXPRS}
PROFILES = tuple(_PROFILE_EXPRS)


@dataclass(frozen=True)
class CauchyData:
    """Radial compactly supported data u(0) = phi, u_t(0) = psi (= 0 here).

    phi(x) = eps * P(|x| / R) inside the ball of radius R, with P the profile
    shape; both shipped profiles are at least C^3 at the support edge.
    """

    R: float
    eps: float
    profile: str

    def phi_deriv(self, rho, k: int = 0):
        """k-th radial derivative of phi, vectorized, zero outside the support."""
        rho = np.asarray(rho, dtype=np.float64)
        s = np.abs(rho) / self.R
        inside = s < 1.0
        s_safe = np.where(inside, s, 0.0)
        with np.errstate(over="ignore", under="ignore"):
            raw = _PROFILE_CACHE[self.profile][k](s_safe)
        vals = self.eps * np.asarray(raw, dtype=np.float64) / self.R ** k
        out = np.where(inside, vals, 0.0)
        return out if out.ndim else float(out)

    def phi(self, rho):
        return self.phi_deriv(rho, 0)

    def psi(self, rho):
        rho = np.asarray(rho, dtype=np.float64)
        out = np.zeros_like(rho)
        return out if out.ndim else 0.0

    psi_is_zero = True


def make_cauchy_data(R: float, eps: float, profile: str = "poly_bump") -> CauchyData:
    if R <= 0:
        raise ConfigurationError(f"support radius must be positive, got {R}")
    if eps < 0:
        raise ConfigurationError(f"amplitude must be nonnegative, got {eps}")
    if profile not in _PROFILE_EXPRS:
        raise ConfigurationError(f"unknown profile {profile!r} (have {PROFILES})")
    return CauchyData(R=float(R), eps=float(eps), profile=profile)


# --------------------------------------------------------------------------
# Quasilinear right-hand side
# --------------------------------------------------------------------------

def _rhs_arrays(u_vals: np.ndarray, v_vals: np.ndarray, B: NullFormTensor | None,
                grid: GridSpec):
    """dv/dt array and the nodal hyperbolicity margin (du/dt is v itself)."""
    h = grid.h
    num = laplacian_values(u_vals, h)
    if B is None or B.max_abs == 0.0:
        return num, 1.0, None

    du = gradient_values(u_vals, h)
    dv_cache: dict[int, np.ndarray] = {}
    d2_cache: dict[tuple[int, int], np.ndarray] = {}

    def first(lam):
        return v_vals if lam == 0 else du[lam - 1]

    def dv_of(i):
        if i not in dv_cache:
            dv_cache[i] = diff1_values(v_vals, i, h)
        return dv_cache[i]

    def second(mu, nu):
        key = (min(mu, nu), max(mu, nu))
        if key not in d2_cache:
            snap = FieldSnapshot(grid, 0.0, u_vals)
            d2_cache[key] = mixed_second(snap, key[0], key[1]).values
        return d2_cache[key]

    den = np.ones_like(u_vals)
    for lam in range(4):
        b = B.entries[lam, 0, 0]
        if b != 0.0:
            den = den - b * first(lam)

    for lam in range(4):
        for mu in range(4):
            for nu in range(4):
                if mu == 0 and nu == 0:
                    continue
                b = B.entries[lam, mu, nu]
                if b == 0.0:
                    continue
                if mu == 0:
                    sec = dv_of(nu)
                elif nu == 0:
                    sec = dv_of(mu)
                else:
                    sec = second(mu, nu)
                num += b * first(lam) * sec

    abs_den = np.abs(den)
    flat = int(np.argmin(abs_den))
    loc = np.unravel_index(flat, abs_den.shape)
    min_denom = float(abs_den[loc])
    return num / den, min_denom, loc


def quasilinear_rhs(u: FieldSnapshot, v: FieldSnapshot, B: NullFormTensor | None,
                    delta_hyp: float = 0.5):
    """(du_dt, dv_dt, min_denom); raises HyperbolicityLossError below delta_hyp."""
    if u.grid != v.grid:
        raise ValueError("u and v live on different grids")
    dv_vals, min_denom, loc = _rhs_arrays(u.values, v.values, B, u.grid)
    if min_denom < delta_hyp:
        raise HyperbolicityLossError(u.t, loc, min_denom)
    du = FieldSnapshot(u.grid, u.t, v.values.copy())
    dv = FieldSnapshot(u.grid, u.t, dv_vals)
    return du, dv, min_denom


# --------------------------------------------------------------------------
# State and time stepping
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SimState:
    """Current (u, v) pair plus the ring of recent u snapshots for temporal stencils."""

    u: FieldSnapshot
    v: FieldSnapshot
    t: float
    dt: float
    window: int
    history: tuple[FieldSnapshot, ...]
    min_denom: float = 1.0        # running minimum over the whole run
    step_min_denom: float = 1.0   # minimum over the stages of the last step

    @property
    def ring_full(self) -> bool:
        return len(self.history) == self.window

    def jet(self, jet_order: int) -> SpacetimeJet:
        if not self.ring_full:
            raise ValueError("history ring is not full yet (diagnostics warm-up)")
        return SpacetimeJet(self.history, len(self.history) // 2, self.dt, jet_order)


def initial_state(data: CauchyData, grid: GridSpec, dt: float, window: int,
                  pad: int = DEFAULT_PAD) -> SimState:
    if data.R >= grid.L - pad * grid.h:
        raise ConfigurationError(
            f"support radius {data.R} too close to the boundary (L={grid.L}, pad={pad})")
    u0 = FieldSnapshot(grid, 0.0, data.phi(grid.r))
    v0 = FieldSnapshot(grid, 0.0, data.psi(grid.r) * np.ones_like(grid.r))
    return SimState(u=u0, v=v0, t=0.0, dt=dt, window=window, history=(u0,))


def step_rk4(state: SimState, B: NullFormTensor | None, delta_hyp: float = 0.5) -> SimState:
    """One classical RK4 step; history ring advanced, margin taken over stages."""
    g = state.u.grid
    dt = state.dt
    u0, v0 = state.u.values, state.v.values

    margins = []

    def f(u_vals, v_vals, t_stage):
        dv, md, loc = _rhs_arrays(u_vals, v_vals, B, g)
        if md < delta_hyp:
            raise HyperbolicityLossError(t_stage, loc, md)
        margins.append(md)
        return v_vals, dv

    k1u, k1v = f(u0, v0, state.t)
    k2u, k2v = f(u0 + 0.5 * dt * k1u, v0 + 0.5 * dt * k1v, state.t + 0.5 * dt)
    k3u, k3v = f(u0 + 0.5 * dt * k2u, v0 + 0.5 * dt * k2v, state.t + 0.5 * dt)
    k4u, k4v = f(u0 + dt * k3u, v0 + dt * k3v, state.t + dt)

    u1 = u0 + dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
    v1 = v0 + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    t1 = state.t + dt
    if not (np.isfinite(u1).all() and np.isfinite(v1).all()):
        raise BlowupError(t1)

    u_snap = FieldSnapshot(g, t1, u1)
    v_snap = FieldSnapshot(g, t1, v1)
    history = (state.history + (u_snap,))[-state.window:]
    step_md = min(margins)
    return SimState(u=u_snap, v=v_snap, t=t1, dt=dt, window=state.window,
                    history=history, min_denom=min(state.min_denom, step_md),
                    step_min_denom=step_md)


# --------------------------------------------------------------------------
# Exact linear radial solution
# --------------------------------------------------------------------------

_SMALL_R = 1e-4


def linear_radial_oracle(data: CauchyData, t: float, r):
    """u(t, r) for the linear wave equation with the given radial data.

    With w0(s) = s phi(|s|) (odd) and w1(s) = s psi(|s|),
    u = [w0(r+t) + w0(r-t)] / (2r) + (1/(2r)) int_{r-t}^{r+t} w1.
    Near r = 0 the analytic limit w0'(t) + w1(t) is used with the quadratic
    Taylor correction, avoiding catastrophic cancellation.
    """
    r = np.asarray(r, dtype=np.float64)
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")

    def w0(s):
        return s * data.phi(np.abs(s))

    small = r < _SMALL_R
    r_safe = np.where(small, 1.0, r)
    out = (w0(r_safe + t) + w0(r_safe - t)) / (2.0 * r_safe)

    # r -> 0: u = w0'(t) + (r^2/6) w0'''(t) + O(r^4)
    w0p = data.phi(t) + abs(t) * data.phi_deriv(t, 1)
    w0ppp = 3.0 * data.phi_deriv(t, 2) + abs(t) * data.phi_deriv(t, 3)
    out = np.where(small, w0p + (r * r / 6.0) * w0ppp, out)

    if not data.psi_is_zero:
        def w1(s):
            return s * data.psi(np.abs(s))

        psi_term = np.empty_like(out)
        for i, ri in enumerate(r):
            if ri < _SMALL_R:
                psi_term[i] = float(w1(np.float64(t)))
            else:
                val, _ = quad(w1, ri - t, ri + t, limit=200)
                psi_term[i] = val / (2.0 * ri)
        out = out + psi_term

    return float(out[0]) if scalar else out


# --------------------------------------------------------------------------
# Run driver
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    n: int = 48
    L: float = 4.0
    cfl: float = 0.4
    T_final: float = 1.5
    s_max: int = 3
    eps: float = 0.1
    R: float = 1.0
    profile: str = "poly_bump"
    tensor: str = "zero"
    sample_every: int = 5
    pad: int = DEFAULT_PAD
    delta_hyp: float = 0.5
    threads: int = 1
    output_dir: str = "."
    seed: int = 0
    window: int = 0          # 0 = derived from s_max
    per_index: bool = False
    with_rhs: bool = True

    def resolved_window(self) -> int:
        if self.window:
            return self.window
        return max(9, min_window(self.jet_order()))

    def jet_order(self) -> int:
        # Es needs s-1 compositions plus one derivative; the identity RHS
        # needs box Gamma^a, i.e. up to s+1 total.
        return self.s_max + 1 if self.with_rhs else self.s_max

    def grid(self) -> GridSpec:
        return GridSpec.cube(self.n, self.L)

    def timestep(self) -> tuple[float, int]:
        g = self.grid()
        n_steps = max(1, math.ceil(self.T_final / (self.cfl * g.h)))
        return self.T_final / n_steps, n_steps

    def validate(self) -> None:
        if self.T_final <= 0:
            raise ConfigurationError("T_final must be positive")
        if not 0 < self.cfl <= 1.0:
            raise ConfigurationError("cfl must be in (0, 1]")
        if self.s_max < 1:
            raise ConfigurationError("s_max must be >= 1")
        if self.sample_every < 1:
            raise ConfigurationError("sample_every must be >= 1")
        g = self.grid()
        if self.T_final + self.R + self.pad * g.h > self.L + 1e-12:
            raise ConfigurationError(
                f"support may reach the boundary: T_final + R + pad*h = "
                f"{self.T_final + self.R + self.pad * g.h:.3f} > L = {self.L}")


@dataclass(frozen=True)
class FailureRecord:
    kind: str                 # "hyperbolicity_loss" | "blowup"
    t: float
    message: str
    location: tuple | None = None


@dataclass
class RunResult:
    config: SolverConfig
    reports: list[EnergyReport]
    failure: FailureRecord | None
    final_state: SimState | None

    @property
    def completed(self) -> bool:
        return self.failure is None


def run(config: SolverConfig) -> Iterator[tuple[SimState, EnergyReport]]:
    """Evolve from t = 0 to T_final, yielding diagnostics every sample_every
    steps once the history ring is full.  Raises the typed solver errors on
    hyperbolicity loss or blowup; run_collect() turns those into records."""
    config.validate()
    g = config.grid()
    B = resolve_tensor(config.tensor)
    data = make_cauchy_data(config.R, config.eps, config.profile)
    dt, n_steps = config.timestep()
    W = config.resolved_window()
    state = initial_state(data, g, dt, W, config.pad)
    jet_order = config.jet_order()

    for step in range(1, n_steps + 1):
        state = step_rk4(state, B, config.delta_hyp)
        if state.ring_full and step % config.sample_every == 0:
            jet = state.jet(jet_order)
            report = sample_diagnostics(
                jet, config.s_max, B,
                threads=config.threads, with_rhs=config.with_rhs,
                per_index=config.per_index, min_denom=state.step_min_denom,
                boundary_clear=state.u.support_margin_ok(config.pad))
            yield state, report


def run_collect(config: SolverConfig) -> RunResult:
    """Drive run() to completion, catching the typed failures."""
    reports: list[EnergyReport] = []
    final_state = None
    failure = None
    try:
        for state, report in run(config):
            reports.append(report)
            final_state = state
    except HyperbolicityLossError as exc:
        failure = FailureRecord("hyperbolicity_loss", exc.t, str(exc), exc.location)
    except BlowupError as exc:
        failure = FailureRecord("blowup", exc.t, str(exc))
    _fill_residuals(reports)
    return RunResult(config=config, reports=reports, failure=failure, final_state=final_state)


def _fill_residuals(reports: list[EnergyReport]) -> None:
    from .energetics import energy_identity_residual
    for i in range(1, len(reports) - 1):
        reports[i].residual = energy_identity_residual(reports, i)


def final_snapshot(config: SolverConfig) -> FieldSnapshot:
    """Evolve without diagnostics and return u(T_final); used by convergence studies."""
    config.validate()
    g = config.grid()
    B = resolve_tensor(config.tensor)
    data = make_cauchy_data(config.R, config.eps, config.profile)
    dt, n_steps = config.timestep()
    state = initial_state(data, g, dt, config.resolved_window(), config.pad)
    for _ in range(n_steps):
        state = step_rk4(state, B, config.delta_hyp)
    return state.u
