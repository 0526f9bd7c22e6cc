"""Constant coefficient tensors B_{lmn} for quadratic wave nonlinearities and
an exact decision procedure for the null condition.

The contraction B_{lmn} X_l X_m X_n with X = (-1, w), |w| = 1 is a cubic
polynomial in w.  Reducing it modulo w1^2 + w2^2 + w3^2 = 1 (eliminating
every w1 power >= 2) yields a canonical normal form; the tensor is null
exactly when all remaining coefficients vanish.  A quasi-uniform direction
sample provides an independent numeric cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class TensorFormatError(ValueError):
    """Malformed tensor literal file."""


@dataclass(frozen=True)
class NullFormTensor:
    """Symmetric (in the last two slots) 4x4x4 coefficient array, index 0 = time."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.shape != (4, 4, 4):
            raise ValueError(f"entries must be 4x4x4, got {e.shape}")
        if not np.isfinite(e).all():
            raise ValueError("non-finite tensor entry")
        if not np.array_equal(e, np.swapaxes(e, 1, 2)):
            raise ValueError("tensor is not symmetric in its last two indices; use symmetrize()")
        e = e.copy()
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    def scaled(self, c: float) -> "NullFormTensor":
        return NullFormTensor(c * self.entries)

    def __add__(self, other: "NullFormTensor") -> "NullFormTensor":
        return NullFormTensor(self.entries + other.entries)

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.entries)))


def symmetrize(raw) -> NullFormTensor:
    """Average the last two index slots: B_{lmn} <- (raw_{lmn} + raw_{lnm}) / 2."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (4, 4, 4):
        raise ValueError(f"raw array must be 4x4x4, got {raw.shape}")
    if not np.isfinite(raw).all():
        raise ValueError("non-finite entry in raw tensor")
    return NullFormTensor(0.5 * (raw + np.swapaxes(raw, 1, 2)))


def _contraction_monomials(entries: np.ndarray) -> dict[tuple[int, int, int], float]:
    """Expand B_{lmn} X_l X_m X_n with X = (-1, w1, w2, w3) into monomials of w."""
    coeffs: dict[tuple[int, int, int], float] = {}
    for lam in range(4):
        for mu in range(4):
            for nu in range(4):
                b = entries[lam, mu, nu]
                if b == 0.0:
                    continue
                sign = 1.0
                e = [0, 0, 0]
                for idx in (lam, mu, nu):
                    if idx == 0:
                        sign = -sign
                    else:
                        e[idx - 1] += 1
                key = (e[0], e[1], e[2])
                coeffs[key] = coeffs.get(key, 0.0) + sign * b
    return coeffs


def _reduce_mod_sphere(coeffs: dict[tuple[int, int, int], float]) -> dict[tuple[int, int, int], float]:
    """Normal form modulo w1^2 = 1 - w2^2 - w3^2 (unique: no monomial keeps w1^k, k >= 2)."""
    out: dict[tuple[int, int, int], float] = {}
    work = sorted(coeffs.items())
    while work:
        (e1, e2, e3), c = work.pop()
        if c == 0.0:
            continue
        if e1 >= 2:
            work.append(((e1 - 2, e2, e3), c))
            work.append(((e1 - 2, e2 + 2, e3), -c))
            work.append(((e1 - 2, e2, e3 + 2), -c))
        else:
            key = (e1, e2, e3)
            out[key] = out.get(key, 0.0) + c
    return {k: v for k, v in out.items() if v != 0.0}


def fibonacci_directions(n_dirs: int) -> np.ndarray:
    """Quasi-uniform unit directions on the sphere (golden-angle spiral), shape (n, 3)."""
    i = np.arange(n_dirs, dtype=np.float64) + 0.5
    golden = np.pi * (3.0 - np.sqrt(5.0))
    z = 1.0 - 2.0 * i / n_dirs
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = golden * i
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def null_defect(B: NullFormTensor, method: str = "exact", n_dirs: int = 512) -> float:
    """Deviation of B from the null condition.

    exact:   max-norm of the coefficients of the contraction polynomial in
             normal form modulo |w|^2 = 1 (zero iff B is null).
    sampled: max |contraction| over n_dirs quasi-uniform unit directions.
    """
    if method == "exact":
        reduced = _reduce_mod_sphere(_contraction_monomials(B.entries))
        if not reduced:
            return 0.0
        return max(abs(c) for c in reduced.values())
    if method == "sampled":
        w = fibonacci_directions(n_dirs)
        X = np.concatenate([np.full((n_dirs, 1), -1.0), w], axis=1)
        vals = np.einsum("lmn,il,im,in->i", B.entries, X, X, X)
        return float(np.max(np.abs(vals)))
    raise ValueError(f"unknown method {method!r} (use 'exact' or 'sampled')")


def is_null(B: NullFormTensor, tol: float = 1e-12) -> bool:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return null_defect(B, "exact") <= tol


def canonical_tensor(kind: str) -> NullFormTensor:
    """Library of test nonlinearities.

    zero           -> B = 0 (linear wave equation)
    q0_quasilinear -> B_000 = 1, B_i0i = B_ii0 = -1/2: the null form
                      u_t u_tt - sum_i u_i u_it = d_t(u_t^2 - |grad u|^2)/2
    john_nonnull   -> B_000 = 1 only: u_t u_tt, the classic non-null model
    """
    e = np.zeros((4, 4, 4))
    if kind == "zero":
        pass
    elif kind == "q0_quasilinear":
        e[0, 0, 0] = 1.0
        for i in (1, 2, 3):
            e[i, 0, i] = -0.5
            e[i, i, 0] = -0.5
    elif kind == "john_nonnull":
        e[0, 0, 0] = 1.0
    else:
        raise ValueError(f"unknown canonical tensor kind {kind!r}")
    return NullFormTensor(e)


CANONICAL_KINDS = ("zero", "q0_quasilinear", "john_nonnull")


def parse_tensor_text(text: str) -> NullFormTensor:
    """Parse the tensor literal format: lines 'lambda mu nu value', indices 0..3;
    unlisted entries are zero; symmetrization is applied after reading."""
    raw = np.zeros((4, 4, 4))
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        parts = stripped.split()
        if len(parts) != 4:
            raise TensorFormatError(f"line {lineno}: expected 'lambda mu nu value', got {line!r}")
        try:
            lam, mu, nu = (int(p) for p in parts[:3])
            value = float(parts[3])
        except ValueError as exc:
            raise TensorFormatError(f"line {lineno}: {exc}") from exc
        if not all(0 <= k <= 3 for k in (lam, mu, nu)):
            raise TensorFormatError(f"line {lineno}: indices must be in 0..3")
        if not np.isfinite(value):
            raise TensorFormatError(f"line {lineno}: non-finite value")
        if (lam, mu, nu) in seen:
            raise TensorFormatError(f"line {lineno}: duplicate entry ({lam},{mu},{nu})")
        seen.add((lam, mu, nu))
        raw[lam, mu, nu] = value
    return symmetrize(raw)


def load_tensor(path) -> NullFormTensor:
    with open(path) as fh:
        return parse_tensor_text(fh.read())


def format_tensor(B: NullFormTensor) -> str:
    lines = []
    for lam in range(4):
        for mu in range(4):
            for nu in range(4):
                v = B.entries[lam, mu, nu]
                if v != 0.0:
                    lines.append(f"{lam} {mu} {nu} {v!r}")
    return "\n".join(lines) + ("\n" if lines else "")


def resolve_tensor(spec: str) -> NullFormTensor:
    """Canonical name or path to a tensor literal file."""
    if spec in CANONICAL_KINDS:
        return canonical_tensor(spec)
    return load_tensor(spec)
