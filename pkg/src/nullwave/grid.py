"""Uniform Cartesian grid, scalar snapshots, high-order stencils, quadrature.

The domain is the cube [-L, L]^3 sampled at n nodes per axis.  All stencil
operators treat the field as identically zero outside the cube, which is
exact for compactly supported data as long as the support keeps a margin
of `pad` layers away from the faces (the solver is configured so that it
does).  Reductions use a fixed pairwise tree so results are bitwise
reproducible regardless of thread count.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

# 8th-order central difference coefficients on offsets -4..+4.
D1_COEFFS = np.array([3.0, -32.0, 168.0, -672.0, 0.0, 672.0, -168.0, 32.0, -3.0]) / 840.0
D2_COEFFS = np.array([-9.0, 128.0, -1008.0, 8064.0, -14350.0,
                      8064.0, -1008.0, 128.0, -9.0]) / 5040.0
STENCIL_HALO = 4

DEFAULT_PAD = 4


class SupportTouchesBoundaryWarning(UserWarning):
    """Raised by integrate() when the field is nonzero in the outer pad layers."""


@dataclass(frozen=True)
class GridSpec:
    """Cubic grid [-L, L]^3 with n nodes per axis and spacing h = 2L/(n-1)."""

    n: int
    h: float
    L: float

    def __post_init__(self):
        if self.n < 17:
            raise ValueError(f"grid too small: n={self.n} < 17")
        if self.h <= 0 or self.L <= 0:
            raise ValueError("h and L must be positive")
        if abs((self.n - 1) * self.h - 2 * self.L) > 1e-12 * 2 * self.L:
            raise ValueError(f"inconsistent grid: (n-1)*h = {(self.n - 1) * self.h} != 2L = {2 * self.L}")

    @classmethod
    def cube(cls, n: int, L: float) -> "GridSpec":
        return cls(n=int(n), h=2.0 * float(L) / (int(n) - 1), L=float(L))

    @cached_property
    def axis_coords(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.n)

    def coord(self, axis: int) -> np.ndarray:
        """Node coordinate along axis 1..3 as a broadcastable (n,1,1)-style array."""
        shape = [1, 1, 1]
        shape[axis - 1] = self.n
        return self.axis_coords.reshape(shape)

    @cached_property
    def r(self) -> np.ndarray:
        """Node radius |x|, full (n,n,n) array."""
        x1, x2, x3 = self.coord(1), self.coord(2), self.coord(3)
        return np.sqrt(x1 * x1 + x2 * x2 + x3 * x3)

    @cached_property
    def origin_mask(self) -> np.ndarray:
        """Nodes with r < h/2 (at most the single origin node); excluded from x/r integrands."""
        return self.r < 0.5 * self.h

    @cached_property
    def unit_radial(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """x_i / r per axis, set to 0 where r < h/2."""
        r_safe = np.where(self.origin_mask, 1.0, self.r)
        out = []
        for ax in range(1, 4):
            xi = np.broadcast_to(self.coord(ax), self.r.shape)
            out.append(np.where(self.origin_mask, 0.0, xi / r_safe))
        return tuple(out)

    def zeros(self) -> np.ndarray:
        return np.zeros((self.n, self.n, self.n))


@dataclass(frozen=True)
class FieldSnapshot:
    """One scalar field on a grid at simulation time t."""

    grid: GridSpec
    t: float
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.grid.n,) * 3:
            raise ValueError(f"values shape {self.values.shape} does not match grid n={self.grid.n}")
        if not np.isfinite(self.values).all():
            raise ValueError("non-finite values in snapshot")

    def support_margin_ok(self, pad: int = DEFAULT_PAD) -> bool:
        """True if the outermost `pad` node layers are exactly zero."""
        v = self.values
        n = self.grid.n
        inner = slice(pad, n - pad)
        core = np.zeros_like(v, dtype=bool)
        core[inner, inner, inner] = True
        return not np.any(v[~core])

    def boundary_magnitude(self, pad: int = DEFAULT_PAD) -> float:
        """Max |values| over the outermost `pad` layers."""
        v = self.values
        n = self.grid.n
        inner = slice(pad, n - pad)
        core = np.zeros_like(v, dtype=bool)
        core[inner, inner, inner] = True
        return float(np.max(np.abs(v[~core]))) if np.any(~core) else 0.0


def _apply_stencil(values: np.ndarray, axis0: int, coeffs: np.ndarray, scale: float) -> np.ndarray:
    """One stencil pass along numpy axis `axis0` with zero extension outside the cube."""
    halo = len(coeffs) // 2
    pads = [(0, 0)] * 3
    pads[axis0] = (halo, halo)
    padded = np.pad(values, pads)
    out = np.zeros_like(values)
    m = values.shape[axis0]
    for j, c in enumerate(coeffs):
        if c == 0.0:
            continue
        sl = [slice(None)] * 3
        sl[axis0] = slice(j, j + m)
        out += c * padded[tuple(sl)]
    out /= scale
    return out


def diff1_values(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """8th-order first derivative along axis 1..3 (zero extension)."""
    return _apply_stencil(values, axis - 1, D1_COEFFS, h)


def diff2_values(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """8th-order second derivative along axis 1..3 (zero extension)."""
    return _apply_stencil(values, axis - 1, D2_COEFFS, h * h)


def spatial_derivative(f: FieldSnapshot, axis: int, order: int) -> FieldSnapshot:
    """Central-difference spatial derivative of a snapshot.

    axis is 1..3, order is 1 or 2.  Mixed second derivatives are obtained by
    composing two order-1 calls; see mixed_second for the canonical order.
    """
    if axis not in (1, 2, 3):
        raise ValueError(f"axis must be 1..3, got {axis}")
    if order == 1:
        vals = diff1_values(f.values, axis, f.grid.h)
    elif order == 2:
        vals = diff2_values(f.values, axis, f.grid.h)
    else:
        raise ValueError(f"order must be 1 or 2, got {order}")
    return FieldSnapshot(f.grid, f.t, vals)


def mixed_second(f: FieldSnapshot, i: int, j: int) -> FieldSnapshot:
    """d_i d_j f via two first-derivative passes in a canonical (higher-axis-first)
    order, so mixed_second(f, i, j) and mixed_second(f, j, i) are bitwise identical."""
    if i == j:
        return spatial_derivative(f, i, 2)
    lo, hi = min(i, j), max(i, j)
    inner = diff1_values(f.values, hi, f.grid.h)
    vals = diff1_values(inner, lo, f.grid.h)
    return FieldSnapshot(f.grid, f.t, vals)


def spatial_multi_values(values: np.ndarray, orders: tuple[int, int, int], h: float) -> np.ndarray:
    """Apply d1^m1 d2^m2 d3^m3 with a fixed composition: axes 3 -> 2 -> 1, and
    within an axis the narrow second-derivative stencil for pairs then one
    first-derivative pass for an odd remainder."""
    out = values
    for axis in (3, 2, 1):
        m = orders[axis - 1]
        for _ in range(m // 2):
            out = diff2_values(out, axis, h)
        if m % 2:
            out = diff1_values(out, axis, h)
    return out


def gradient_values(values: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return tuple(diff1_values(values, ax, h) for ax in (1, 2, 3))


def laplacian_values(values: np.ndarray, h: float) -> np.ndarray:
    """Sum of narrow 8th-order second derivatives; this is the solver's Laplacian."""
    out = diff2_values(values, 1, h)
    out += diff2_values(values, 2, h)
    out += diff2_values(values, 3, h)
    return out


def pairwise_sum(values: np.ndarray) -> float:
    """Deterministic pairwise tree reduction of a flat array.

    Adjacent pairs are combined level by level (odd tail carried through), so
    the result is independent of threading and chunking decisions elsewhere.
    """
    a = np.ascontiguousarray(values, dtype=np.float64).ravel()
    n = a.size
    if n == 0:
        return 0.0
    while n > 1:
        m = n // 2
        b = a[0:2 * m:2] + a[1:2 * m:2]
        if n % 2:
            b = np.concatenate([b, a[2 * m:]])
        a = b
        n = a.size
    return float(a[0])


def integrate(f: FieldSnapshot, weight: np.ndarray | Callable | None = None,
              pad: int = DEFAULT_PAD) -> float:
    """Midpoint-type quadrature: sum of weight*f over nodes times h^3.

    weight may be None, an (n,n,n) array, or a callable of the broadcastable
    coordinates (x1, x2, x3).  Emits SupportTouchesBoundaryWarning when the
    integrand is nonzero in the outer pad layers.
    """
    g = f.grid
    vals = f.values
    if callable(weight):
        weight = weight(g.coord(1), g.coord(2), g.coord(3))
    if weight is not None:
        vals = vals * weight
    if not f.support_margin_ok(pad):
        warnings.warn("field support touches the outer pad layers; quadrature may see the boundary",
                      SupportTouchesBoundaryWarning, stacklevel=2)
    return pairwise_sum(vals) * g.h ** 3


def integrate_values(grid: GridSpec, values: np.ndarray) -> float:
    """Quadrature for a bare array (no support check); used by inner loops."""
    return pairwise_sum(values) * grid.h ** 3


def radial_angular_decompose(f: FieldSnapshot):
    """Split the stencil gradient into radial and angular parts.

    Returns (radial, angular, origin_mask) where radial is the scalar d_r f,
    angular is the 3-tuple -(x/r^2) ^ (Omega f), and origin_mask marks nodes
    with r < h/2 where both parts are zeroed.  At every other node
    (x_i/r) * radial + angular_i reproduces the stencil gradient.
    """
    g = f.grid
    grad = gradient_values(f.values, g.h)
    x = [np.broadcast_to(g.coord(ax), grad[0].shape) for ax in (1, 2, 3)]
    mask = g.origin_mask
    r_safe = np.where(mask, 1.0, g.r)

    radial_vals = (x[0] * grad[0] + x[1] * grad[1] + x[2] * grad[2]) / r_safe
    radial_vals = np.where(mask, 0.0, radial_vals)

    # Omega f = x ^ grad f, then angular = -(x/r^2) ^ Omega f.
    om = (x[1] * grad[2] - x[2] * grad[1],
          x[2] * grad[0] - x[0] * grad[2],
          x[0] * grad[1] - x[1] * grad[0])
    inv_r2 = 1.0 / (r_safe * r_safe)
    ang = (-(x[1] * om[2] - x[2] * om[1]) * inv_r2,
           -(x[2] * om[0] - x[0] * om[2]) * inv_r2,
           -(x[0] * om[1] - x[1] * om[0]) * inv_r2)
    ang = tuple(np.where(mask, 0.0, a) for a in ang)

    radial = FieldSnapshot(g, f.t, radial_vals)
    angular = tuple(FieldSnapshot(g, f.t, a) for a in ang)
    return radial, angular, mask


def dump_snapshot(f: FieldSnapshot, path, binary: bool = False) -> None:
    """Write a snapshot: header line 'n h L t', then node values in x-major
    order, as text (one value per line) or little-endian float64."""
    g = f.grid
    header = f"{g.n} {g.h!r} {g.L!r} {f.t!r}\n"
    if binary:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(f.values.astype("<f8").tobytes(order="C"))
    else:
        with open(path, "w") as fh:
            fh.write(header)
            for v in f.values.ravel(order="C"):
                fh.write(f"{v!r}\n")


def load_snapshot(path) -> FieldSnapshot:
    """Read a snapshot written by dump_snapshot (format auto-detected)."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii")
        rest = fh.read()
    parts = header.split()
    if len(parts) != 4:
        raise ValueError(f"malformed snapshot header: {header!r}")
    n, h, L, t = int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])
    grid = GridSpec(n=n, h=h, L=L)
    nbytes = n ** 3 * 8
    if len(rest) == nbytes:
        values = np.frombuffer(rest, dtype="<f8").reshape(n, n, n).copy()
    else:
        values = np.array([float(x) for x in rest.decode("ascii").split()], dtype=np.float64)
        if values.size != n ** 3:
            raise ValueError(f"snapshot has {values.size} values, expected {n ** 3}")
        values = values.reshape(n, n, n)
    return FieldSnapshot(grid, t, values)
