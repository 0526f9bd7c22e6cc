"""Experiment orchestration: CLI, config files, the null/non-null contrast,
convergence studies, the lemma suite, growth fitting, and CSV persistence.

Exit codes: 0 success (including a "not null" verdict), 1 usage or
configuration error, 2 hyperbolicity loss or blowup in a simulate run.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, fields as dc_fields, replace
from pathlib import Path

import numpy as np

from . import energetics, nullform, solver, vectorfields
from .energetics import CSV_COLUMNS, EnergyReport
from .grid import FieldSnapshot, GridSpec
from .solver import ConfigurationError, RunResult, SolverConfig
from .vectorfields import MultiIndex, SpacetimeJet, jet_from_function


# --------------------------------------------------------------------------
# Config files:  key = value  lines, # comments
# --------------------------------------------------------------------------

def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigurationError(f"line {lineno}: empty key or value")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_config_file(path) -> dict[str, str]:
    with open(path) as fh:
        return parse_config_text(fh.read())


_SOLVER_FIELDS = {f.name: f.type for f in dc_fields(SolverConfig)}
_BOOL_KEYS = {"per_index", "with_rhs"}
_INT_KEYS = {"n", "s_max", "sample_every", "pad", "threads", "seed", "window"}
_HARNESS_KEYS = {"ladder", "eps_list", "tensor_null", "tensor_nonnull", "scenario"}


def build_solver_config(raw: dict[str, str], **overrides) -> SolverConfig:
    kwargs = {}
    for key, value in raw.items():
        if key in _HARNESS_KEYS:
            continue
        if key not in _SOLVER_FIELDS:
            raise ConfigurationError(f"unknown config key {key!r}")
        if key in _BOOL_KEYS:
            kwargs[key] = value.lower() in ("1", "true", "yes", "on")
        elif key in _INT_KEYS:
            kwargs[key] = int(value)
        elif key in ("profile", "tensor", "output_dir"):
            kwargs[key] = value
        else:
            kwargs[key] = float(value)
    kwargs.update(overrides)
    return SolverConfig(**kwargs)


def parse_ladder(raw: dict[str, str], default=(48, 64, 96)) -> tuple[int, ...]:
    if "ladder" not in raw:
        return tuple(default)
    return tuple(int(tok) for tok in raw["ladder"].replace(",", " ").split())


# --------------------------------------------------------------------------
# Report CSV (schema pinned: one header line, 17 significant digits)
# --------------------------------------------------------------------------

def format_report_csv(reports: list[EnergyReport]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in reports:
        lines.append(",".join(f"{getattr(r, col):.16e}" for col in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def write_report_csv(path, reports: list[EnergyReport]) -> None:
    Path(path).write_text(format_report_csv(reports))


def write_manifest(path, config: SolverConfig, extra: dict | None = None) -> None:
    lines = []
    for f in dc_fields(SolverConfig):
        lines.append(f"{f.name} = {getattr(config, f.name)}")
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def plot_energy_series(path, labeled_reports: dict[str, list[EnergyReport]]) -> None:
    """Optional single-file SVG line chart of the Es series."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, reports in labeled_reports.items():
        ax.plot([r.t for r in reports], [r.Es for r in reports], label=label)
    ax.set_xlabel("t")
    ax.set_ylabel("E_s")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


# --------------------------------------------------------------------------
# Growth fitting
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthFit:
    """Least-squares slope of log Es against log(1+t) over the sampled window."""

    slope: float
    fit_residual: float
    max_ratio: float
    n_samples: int


def fit_growth(reports: list[EnergyReport], min_samples: int = 8) -> GrowthFit | None:
    pts = [(r.t, r.Es) for r in reports if r.Es > 0.0]
    if len(pts) < min_samples:
        return None
    x = np.log1p([t for t, _ in pts])
    y = np.log([e for _, e in pts])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    fit_res = float(res[0]) if len(res) else 0.0
    ratio = max(e for _, e in pts) / pts[0][1]
    return GrowthFit(slope=float(coef[0]), fit_residual=fit_res,
                     max_ratio=float(ratio), n_samples=len(pts))


def observed_order(hs, errors) -> float:
    """Least-squares slope of log error against log h."""
    lh = np.log(np.asarray(hs, dtype=float))
    le = np.log(np.asarray(errors, dtype=float))
    A = np.vstack([lh, np.ones_like(lh)]).T
    return float(np.linalg.lstsq(A, le, rcond=None)[0][0])


# --------------------------------------------------------------------------
# Experiments
# --------------------------------------------------------------------------

@dataclass
class ContrastResult:
    null_run: RunResult
    nonnull_run: RunResult
    null_fit: GrowthFit | None
    nonnull_fit: GrowthFit | None

    def summary_lines(self) -> list[str]:
        out = []
        for label, run_, fit in (("null", self.null_run, self.null_fit),
                                 ("nonnull", self.nonnull_run, self.nonnull_fit)):
            if run_.failure is None:
                status = "completed"
            else:
                status = f"terminated early: {run_.failure.kind} at t={run_.failure.t:.3f}"
            out.append(f"{label}: tensor={run_.config.tensor} {status}, samples={len(run_.reports)}")
            if fit is not None:
                out.append(f"{label}: growth slope={fit.slope:+.4f} max_ratio={fit.max_ratio:.4f}"
                           f" samples={fit.n_samples}")
            else:
                out.append(f"{label}: growth fit unavailable (<8 positive samples)")
        return out


def contrast_experiment(base: SolverConfig, tensor_null: str = "q0_quasilinear",
                        tensor_nonnull: str = "john_nonnull") -> ContrastResult:
    """Run the same grid/data/eps with a null and a non-null tensor."""
    null_run = solver.run_collect(replace(base, tensor=tensor_null))
    nonnull_run = solver.run_collect(replace(base, tensor=tensor_nonnull))
    return ContrastResult(
        null_run=null_run, nonnull_run=nonnull_run,
        null_fit=fit_growth(null_run.reports),
        nonnull_fit=fit_growth(nonnull_run.reports),
    )


@dataclass
class ConvergenceResult:
    ns: tuple[int, ...]
    hs: list[float]
    errors: list[float]
    order: float | str
    residual_orders: dict[int, float] | None = None
    residuals: dict[int, float] | None = None

    def summary_lines(self) -> list[str]:
        out = []
        for n, h, e in zip(self.ns, self.hs, self.errors):
            out.append(f"n={n} h={h:.6f} max_node_error={e:.6e}")
        out.append(f"observed order (max-node error vs radial oracle): {self.order}")
        if self.residuals:
            for n, r in self.residuals.items():
                out.append(f"n={n} ghost identity residual={r:.6e}")
        if self.residual_orders:
            for s, o in self.residual_orders.items():
                out.append(f"energy-identity residual order (s={s}): {o:.3f}")
        return out


def convergence_study(base: SolverConfig, ladder: tuple[int, ...],
                      with_residual: bool = True) -> ConvergenceResult:
    if len(set(ladder)) < 3:
        raise ConfigurationError("convergence ladder needs >= 3 distinct grids")
    hs, errors, residuals = [], [], {}
    for n in ladder:
        cfg = replace(base, n=n)
        snap = solver.final_snapshot(cfg)
        data = solver.make_cauchy_data(cfg.R, cfg.eps, cfg.profile)
        oracle = solver.linear_radial_oracle(data, snap.t, snap.grid.r.ravel())
        err = float(np.max(np.abs(snap.values.ravel() - oracle)))
        hs.append(snap.grid.h)
        errors.append(err)
        if with_residual:
            res = solver.run_collect(replace(cfg, s_max=1))
            series = energetics.residual_series(res.reports)
            residuals[n] = max(series) if series else math.nan
    if max(errors) < 1e-14:
        order: float | str = "exact"
    else:
        order = observed_order(hs, errors)
    res_orders = None
    if with_residual and all(math.isfinite(v) for v in residuals.values()):
        res_orders = {1: observed_order(hs, [residuals[n] for n in ladder])}
    return ConvergenceResult(ns=tuple(ladder), hs=hs, errors=errors, order=order,
                             residual_orders=res_orders, residuals=residuals or None)


# --------------------------------------------------------------------------
# Seeded lemma families
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BumpCluster:
    """Superposition of <= 5 traveling poly bumps with seeded parameters."""

    amps: tuple[float, ...]
    centers: tuple[tuple[float, float, float], ...]
    velocities: tuple[tuple[float, float, float], ...]
    radii: tuple[float, ...]

    def __call__(self, t, x1, x2, x3):
        out = 0.0
        for A, c, w, R in zip(self.amps, self.centers, self.velocities, self.radii):
            y1 = x1 - c[0] - w[0] * t
            y2 = x2 - c[1] - w[1] * t
            y3 = x3 - c[2] - w[2] * t
            q = 1.0 - (y1 * y1 + y2 * y2 + y3 * y3) / (R * R)
            out = out + A * np.where(q > 0.0, q, 0.0) ** 4
        return out

    def max_extent(self, t: float) -> float:
        """Radius of a ball certainly containing the support at time |t'| <= t."""
        out = 0.0
        for c, w, R in zip(self.centers, self.velocities, self.radii):
            speed = math.sqrt(sum(wi * wi for wi in w))
            out = max(out, math.sqrt(sum(ci * ci for ci in c)) + speed * t + R)
        return out


def bump_cluster(rng: np.random.Generator, center_radius: float,
                 max_bumps: int = 5, max_speed: float = 0.9) -> BumpCluster:
    k = int(rng.integers(1, max_bumps + 1))
    amps, centers, vels, radii = [], [], [], []
    for _ in range(k):
        amps.append(float(rng.uniform(0.3, 1.0) * rng.choice((-1.0, 1.0))))
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        rho = center_radius * rng.uniform(0.4, 1.0)
        centers.append(tuple(float(x) for x in rho * direction))
        vdir = rng.normal(size=3)
        vdir /= np.linalg.norm(vdir)
        speed = max_speed * rng.uniform(0.2, 1.0)
        vels.append(tuple(float(x) for x in speed * vdir))
        radii.append(float(rng.uniform(0.6, 1.3)))
    return BumpCluster(tuple(amps), tuple(centers), tuple(vels), tuple(radii))


def analytic_jet(cluster: BumpCluster, n: int, L: float, t_center: float,
                 jet_order: int = 3, window: int | None = None) -> SpacetimeJet:
    g = GridSpec.cube(n, L)
    W = window or vectorfields.min_window(jet_order)
    dt = 0.4 * g.h
    return jet_from_function(cluster, g, t_center, dt, W, jet_order)


@dataclass
class LemmaSuiteResult:
    seed: int
    entries: list[tuple[str, str, float, float]]   # (lemma, family, max, median)
    passed: bool
    notes: list[str]

    def summary_lines(self) -> list[str]:
        out = [f"lemma suite (seed={self.seed}): {'PASS' if self.passed else 'FAIL'}"]
        for lemma, family, mx, med in self.entries:
            out.append(f"{lemma:28s} {family:18s} max={mx:.6e} median={med:.6e}")
        out.extend(self.notes)
        return out


def lemma_suite(seed: int, n_pair: tuple[int, int] = (48, 96), members: int = 3,
                t_center: float = 1.5, sim_config: SolverConfig | None = None) -> LemmaSuiteResult:
    """Run every lemma check over a seeded analytic family (both grids of
    n_pair) and, optionally, over snapshots of a small-amplitude simulation."""
    entries: list[tuple[str, str, float, float]] = []
    notes: list[str] = []
    passed = True
    B = nullform.canonical_tensor("q0_quasilinear")

    # analytic traveling-bump families on two resolutions
    for n in n_pair:
        rng = np.random.default_rng(seed)
        l21 = {1: [], 2: []}
        l25 = []
        l24 = []
        kl = []
        for _ in range(members):
            cluster = bump_cluster(rng, center_radius=2.0)
            L = cluster.max_extent(t_center + 1.0) + 1.5
            jet = analytic_jet(cluster, n, L, t_center)
            for N in (1, 2):
                l21[N].append(energetics.lemma21_ratio_stats(jet, N))
            l25.append(energetics.verify_nullform_pointwise(jet, B))
            l24.append(energetics.verify_lemma24(jet))
            kl.append(energetics.klainerman_ratio(jet))
        for N in (1, 2):
            maxes = [m for m, _ in l21[N]]
            meds = [d for _, d in l21[N]]
            entries.append((f"lemma2.1 N={N}", f"analytic n={n}",
                            max(maxes), float(np.median(meds))))
        entries.append(("lemma2.5 nullform", f"analytic n={n}",
                        max(l25), float(np.median(l25))))
        entries.append(("lemma2.4 identity err", f"analytic n={n}",
                        max(l24), float(np.median(l24))))
        notes.append(f"klainerman p=2 ratio (diagnostic, n={n}): max={max(kl):.4e}")

        # spatial-only families for the weighted Sobolev and Hardy bounds
        rng2 = np.random.default_rng(seed + 1)
        l22, l26 = [], []
        for rho_or_t in (2.0, 4.0, 8.0):
            cluster = bump_cluster(rng2, center_radius=rho_or_t, max_speed=0.0)
            L = cluster.max_extent(0.0) + 1.5
            g = GridSpec.cube(n, L)
            vals = np.asarray(cluster(0.0, g.coord(1), g.coord(2), g.coord(3)))
            snap = FieldSnapshot(g, rho_or_t, np.broadcast_to(vals, (g.n,) * 3).copy())
            l22.append(energetics.verify_weighted_sobolev(snap))
            R_h = max(0.5, cluster.max_extent(0.0) - rho_or_t + 0.5)
            l26.append(energetics.verify_hardy(snap, rho_or_t, R_h + rho_or_t))
        entries.append(("lemma2.2 weighted sobolev", f"analytic n={n}",
                        max(l22), float(np.median(l22))))
        entries.append(("lemma2.6 hardy", f"analytic n={n}",
                        max(l26), float(np.median(l26))))

    # stability across the resolution doubling: max <= 10 * median at fine
    # grid, and the max must not move by more than 2x between the grids
    fine = {(lem, fam): (mx, med) for lem, fam, mx, med in entries
            if fam == f"analytic n={n_pair[1]}"}
    coarse = {lem: mx for lem, fam, mx, med in entries
              if fam == f"analytic n={n_pair[0]}"}
    for (lem, _), (mx, med) in fine.items():
        if lem.startswith("lemma2.4"):
            continue
        if med > 0 and mx > 10.0 * med:
            passed = False
            notes.append(f"FAIL {lem}: max {mx:.3e} > 10x median {med:.3e}")
        cmx = coarse.get(lem)
        if cmx and cmx > 0 and not (0.5 <= mx / cmx <= 2.0):
            passed = False
            notes.append(f"FAIL {lem}: max changed {cmx:.3e} -> {mx:.3e} under doubling")

    if sim_config is not None:
        result = solver.run_collect(sim_config)
        if result.final_state is not None:
            jet = result.final_state.jet(3)
            Bsim = nullform.resolve_tensor(sim_config.tensor)
            for N in (1, 2):
                mx, med = energetics.lemma21_ratio_stats(jet, N)
                entries.append((f"lemma2.1 N={N}", "simulation", mx, med))
            if nullform.is_null(Bsim, 1e-12):
                mx = energetics.verify_nullform_pointwise(jet, Bsim)
                entries.append(("lemma2.5 nullform", "simulation", mx, mx))
            entries.append(("lemma2.4 identity err", "simulation",
                            energetics.verify_lemma24(jet), 0.0))

    for lem, fam, mx, med in entries:
        if not (math.isfinite(mx) and math.isfinite(med)):
            passed = False
            notes.append(f"FAIL {lem} ({fam}): non-finite ratio")
    return LemmaSuiteResult(seed=seed, entries=entries, passed=passed, notes=notes)


# --------------------------------------------------------------------------
# CLI
# --------------------------------------------------------------------------

def _out_dir(args, config: SolverConfig | None = None) -> Path:
    path = Path(args.output_dir or (config.output_dir if config else "."))
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_check_null(args) -> int:
    try:
        B = nullform.resolve_tensor(args.tensor)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sym_defect = float(np.max(np.abs(B.entries - np.swapaxes(B.entries, 1, 2))))
    exact = nullform.null_defect(B, "exact")
    sampled = nullform.null_defect(B, "sampled", n_dirs=args.n_dirs)
    verdict = "yes" if exact <= 1e-12 else "no"
    print(f"tensor: {args.tensor}")
    print(f"symmetry defect: {sym_defect:.3e}")
    print(f"null: {verdict}, defect {exact:.6e} (exact), {sampled:.6e} (sampled n={args.n_dirs})")
    return 0


def cmd_simulate(args) -> int:
    raw = parse_config_file(args.config) if args.config else {}
    config = build_solver_config(raw, **_cli_overrides(args))
    out = _out_dir(args, config)
    result = solver.run_collect(config)
    write_report_csv(out / "energy.csv", result.reports)
    extra = {"status": "completed" if result.completed else result.failure.kind,
             "samples": len(result.reports)}
    write_manifest(out / "manifest.txt", config, extra)
    lines = [f"simulate: {extra['status']}, {len(result.reports)} samples"]
    if result.failure:
        lines.append(f"failure: {result.failure.message}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if args.plot and result.reports:
        plot_energy_series(out / "energy.svg", {config.tensor: result.reports})
    return 0 if result.completed else 2


def cmd_contrast(args) -> int:
    raw = parse_config_file(args.config) if args.config else {}
    config = build_solver_config(raw, **_cli_overrides(args))
    tensor_null = raw.get("tensor_null", "q0_quasilinear")
    tensor_nonnull = raw.get("tensor_nonnull", "john_nonnull")
    out = _out_dir(args, config)
    result = contrast_experiment(config, tensor_null, tensor_nonnull)
    write_report_csv(out / "energy_null.csv", result.null_run.reports)
    write_report_csv(out / "energy_nonnull.csv", result.nonnull_run.reports)
    write_manifest(out / "manifest.txt", config,
                   {"tensor_null": tensor_null, "tensor_nonnull": tensor_nonnull})
    lines = result.summary_lines()
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if args.plot:
        plot_energy_series(out / "energy.svg", {
            "null": result.null_run.reports, "nonnull": result.nonnull_run.reports})
    return 0


def cmd_convergence(args) -> int:
    raw = parse_config_file(args.config) if args.config else {}
    config = build_solver_config(raw, **_cli_overrides(args))
    ladder = parse_ladder(raw)
    out = _out_dir(args, config)
    result = convergence_study(config, ladder)
    lines = result.summary_lines()
    write_manifest(out / "manifest.txt", config, {"ladder": " ".join(map(str, ladder))})
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_lemmas(args) -> int:
    raw = parse_config_file(args.config) if args.config else {}
    seed = int(args.seed if args.seed is not None else raw.get("seed", 0))
    threads = int(args.threads or raw.get("threads", 1))
    out = Path(args.output_dir or raw.get("output_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    result = lemma_suite(seed)
    lines = result.summary_lines()
    lines.append(f"threads = {threads} (reductions are thread-count independent)")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0 if result.passed else 1


def _cli_overrides(args) -> dict:
    out = {}
    if args.output_dir:
        out["output_dir"] = args.output_dir
    if args.threads:
        out["threads"] = int(args.threads)
    if args.seed is not None:
        out["seed"] = int(args.seed)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nullwave",
        description="Finite-difference laboratory for 3D quasilinear waves "
                    "with null-condition nonlinearities")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--output-dir", default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--plot", action="store_true", help="write an SVG of the energy series")

    p = sub.add_parser("check-null", help="decide the null condition for a tensor")
    p.add_argument("tensor", help="canonical name or tensor literal file")
    p.add_argument("--n-dirs", type=int, default=512)
    p.set_defaults(func=cmd_check_null)

    for name, fn in (("simulate", cmd_simulate), ("contrast", cmd_contrast),
                     ("convergence", cmd_convergence), ("lemmas", cmd_lemmas)):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigurationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except solver.HyperbolicityLossError as exc:
        print(f"hyperbolicity loss: {exc}", file=sys.stderr)
        return 2
    except solver.BlowupError as exc:
        print(f"blowup: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
