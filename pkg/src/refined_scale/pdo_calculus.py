"""
Classical symbols and square systems of them on the torus.

A symbol is a finite sum of homogeneous terms

    c(x) * sigma(xi / |xi|) * |xi|^d * chi_cut(|xi|),

where ``c`` is a trigonometric polynomial and ``sigma`` an angular profile.
Operators act by toroidal quantization,
``(Au)(x) = sum_xi exp(i x.xi) a(x, xi) u_hat(xi)``, so a coefficient mode
``eta`` moves frequency ``xi`` to ``xi + eta``.  The value at ``xi = 0`` is not
given by homogeneity and is fixed per symbol by a zero-mode rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .refined_spaces import FourierField, ManifoldSpec, SpecMismatch, lattice


def smooth_step(r, r0: float, r1: float):
    """C-infinity step: 0 for ``r <= r0``, 1 for ``r >= r1``."""
    r = np.asarray(r, dtype=float)
    t = np.clip((r - r0) / (r1 - r0), 0.0, 1.0)

    def bump(z):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(z > 0.0, np.exp(-1.0 / np.where(z > 0.0, z, 1.0)), 0.0)

    a, b = bump(t), bump(1.0 - t)
    return a / (a + b)


@dataclass(frozen=True, eq=False)
class HomogeneousTerm:
    """``c(x) sigma(omega) |xi|^degree`` away from the origin.

    ``coeff_modes`` maps ``eta`` (an ``n``-tuple) to the Fourier coefficient of
    ``c``.  ``angular`` is ``(sigma(+1), sigma(-1))`` on the circle ``n = 1``
    and a map ``m -> a_m`` with ``sigma(theta) = sum_m a_m exp(i m theta)`` for
    ``n = 2``.
    """

    degree: float
    coeff_modes: Mapping[tuple[int, ...], complex]
    angular: tuple[complex, complex] | Mapping[int, complex]
    cutoff_radius: float = 1.0

    def __post_init__(self):
        modes = {tuple(int(k) for k in eta): complex(v) for eta, v in dict(self.coeff_modes).items()}
        if not modes:
            raise ValueError("a term needs at least one coefficient mode")
        dims = {len(eta) for eta in modes}
        if len(dims) != 1:
            raise ValueError("coefficient modes of mixed dimension")
        object.__setattr__(self, "coeff_modes", modes)
        n = dims.pop()
        if n == 1:
            plus, minus = self.angular
            object.__setattr__(self, "angular", (complex(plus), complex(minus)))
        elif n == 2:
            object.__setattr__(self, "angular", {int(m): complex(a) for m, a in dict(self.angular).items()})
        else:
            raise ValueError("only n = 1 or n = 2 is supported")
        if self.cutoff_radius <= 0:
            raise ValueError("cutoff radius must be positive")

    @property
    def n(self) -> int:
        return len(next(iter(self.coeff_modes)))

    @property
    def bandwidth(self) -> int:
        return max(max(abs(k) for k in eta) for eta in self.coeff_modes)

    def angular_value(self, omega) -> np.ndarray:
        """``sigma`` at unit directions ``omega`` of shape ``(..., n)``."""
        omega = np.asarray(omega, dtype=float)
        if self.n == 1:
            plus, minus = self.angular
            return np.where(omega[..., 0] >= 0.0, plus, minus)
        theta = np.arctan2(omega[..., 1], omega[..., 0])
        out = np.zeros(theta.shape, dtype=complex)
        for m, a in self.angular.items():
            out = out + a * np.exp(1j * m * theta)
        return out

    def is_angular_zero(self) -> bool:
        if self.n == 1:
            return all(v == 0 for v in self.angular)
        return all(v == 0 for v in self.angular.values())

    def coefficient_value(self, x) -> np.ndarray:
        """``c(x)`` at points ``x`` of shape ``(..., n)``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1], dtype=complex)
        for eta, v in self.coeff_modes.items():
            out = out + v * np.exp(1j * (x @ np.asarray(eta, dtype=float)))
        return out

    def multiplier(self, xi: Sequence[np.ndarray]) -> np.ndarray:
        """``sigma(xi/|xi|) |xi|^d chi_cut(|xi|)`` on lattice arrays; 0 at the origin."""
        xi = np.stack([np.asarray(c, dtype=float) for c in xi], axis=-1)
        r = np.linalg.norm(xi, axis=-1)
        nz = r > 0
        safe_r = np.where(nz, r, 1.0)
        omega = xi / safe_r[..., None]
        val = self.angular_value(omega) * safe_r**self.degree
        val = val * smooth_step(r, 0.5 * self.cutoff_radius, self.cutoff_radius)
        return np.where(nz, val, 0.0)

    def value(self, x, xi) -> np.ndarray:
        """Full term value at ``x`` and ``xi`` (arrays of shape ``(..., n)``)."""
        xi = np.asarray(xi, dtype=float)
        return self.coefficient_value(x) * self.multiplier(np.moveaxis(xi, -1, 0))


@dataclass(frozen=True, eq=False)
class ClassicalSymbol:
    """Finite polyhomogeneous expansion, terms ordered by non-increasing degree.

    ``zero_mode`` fixes the action on ``u_hat(0)``: ``"default"`` (alias
    ``"positive"``) evaluates the degree-0 terms at ``omega = e_1``,
    ``"negative"`` at ``-e_1`` (for ``n = 1``), ``"zero"`` drops the mode, and a
    mapping ``eta -> value`` gives the output coefficients explicitly.
    Positive-degree terms vanish at the origin and negative-degree terms are
    set to zero there.
    """

    terms: tuple[HomogeneousTerm, ...]
    zero_mode: str | Mapping = "default"

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("a symbol needs at least one term (use None for the zero operator)")
        object.__setattr__(self, "terms", terms)
        if len({t.n for t in terms}) != 1:
            raise ValueError("terms of mixed dimension")
        degrees = [t.degree for t in terms]
        if any(b > a for a, b in zip(degrees, degrees[1:])):
            raise ValueError("term degrees must be non-increasing")
        if all(t.is_angular_zero() for t in self.top_terms):
            raise ValueError("principal symbol is identically zero")
        if isinstance(self.zero_mode, str):
            if self.zero_mode not in ("default", "positive", "negative", "zero"):
                raise ValueError(f"unknown zero-mode rule {self.zero_mode!r}")
        else:
            object.__setattr__(
                self,
                "zero_mode",
                {tuple(int(k) for k in eta): complex(v) for eta, v in dict(self.zero_mode).items()},
            )

    @property
    def n(self) -> int:
        return self.terms[0].n

    @property
    def order(self) -> float:
        return self.terms[0].degree

    @property
    def top_terms(self) -> tuple[HomogeneousTerm, ...]:
        return tuple(t for t in self.terms if t.degree == self.order)

    @property
    def bandwidth(self) -> int:
        b = max(t.bandwidth for t in self.terms)
        return max(b, max((max(abs(k) for k in eta) for eta in self.zero_modes()), default=0))

    def zero_modes(self) -> dict[tuple[int, ...], complex]:
        """Output coefficients produced from a unit ``u_hat(0)``."""
        if isinstance(self.zero_mode, dict):
            return dict(self.zero_mode)
        out: dict[tuple[int, ...], complex] = {}
        if self.zero_mode == "zero":
            return out
        direction = np.zeros(self.n)
        direction[0] = -1.0 if self.zero_mode == "negative" else 1.0
        for t in self.terms:
            if t.degree != 0:
                continue
            sigma = complex(t.angular_value(direction))
            for eta, c in t.coeff_modes.items():
                out[eta] = out.get(eta, 0j) + c * sigma
        return out

    def value(self, x, xi) -> np.ndarray:
        """Full symbol at ``x`` and ``xi`` (arrays of shape ``(..., n)``), ``xi != 0``."""
        return sum(t.value(x, xi) for t in self.terms)

    def principal_value(self, x, omega) -> np.ndarray:
        return sum(t.coefficient_value(x) * t.angular_value(omega) for t in self.top_terms)

    def is_constant_coefficient(self) -> bool:
        zero = (0,) * self.n
        if any(set(t.coeff_modes) != {zero} for t in self.terms):
            return False
        return set(self.zero_modes()) <= {zero}


@dataclass(frozen=True, eq=False)
class PdoSystem:
    """``p x p`` array of classical symbols; ``None`` entries are zero operators."""

    entries: tuple[tuple[ClassicalSymbol | None, ...], ...]
    n: int = 1
    name: str = ""
    column_orders: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.entries)
        p = len(rows)
        if p == 0 or any(len(r) != p for r in rows):
            raise ValueError("system must be a nonempty square array")
        for r in rows:
            for a in r:
                if a is not None and a.n != self.n:
                    raise SpecMismatch(f"entry on T^{a.n} in a system on T^{self.n}")
        object.__setattr__(self, "entries", rows)
        orders = []
        for k in range(p):
            col = [rows[j][k].order for j in range(p) if rows[j][k] is not None]
            # an all-zero column carries no order; use 0 for the weights
            orders.append(max(col) if col else 0.0)
        object.__setattr__(self, "column_orders", tuple(orders))

    @property
    def p(self) -> int:
        return len(self.entries)

    @property
    def spec(self) -> ManifoldSpec:
        return ManifoldSpec(self.n)

    @property
    def bandwidth(self) -> int:
        return max((a.bandwidth for r in self.entries for a in r if a is not None), default=0)

    def order_matrix(self) -> list[list[float | None]]:
        return [[None if a is None else a.order for a in r] for r in self.entries]

    def is_constant_coefficient(self) -> bool:
        return all(a.is_constant_coefficient() for r in self.entries for a in r if a is not None)


def scalar_system(symbol: ClassicalSymbol, name: str = "") -> PdoSystem:
    return PdoSystem(((symbol,),), n=symbol.n, name=name)


# -- action and matrices -----------------------------------------------------


def _shift_add(out: np.ndarray, block: np.ndarray, offset: Sequence[int]):
    """``out[offset + i] += block[i]`` for an n-dimensional block."""
    sl = tuple(slice(o, o + s) for o, s in zip(offset, block.shape))
    out[sl] += block


def apply(a: ClassicalSymbol | None, u: FourierField, out_K: int | None = None) -> FourierField:
    """``a(x, D) u``; the output band is ``u.K + bandwidth`` unless ``out_K`` is larger."""
    if a is None:
        return FourierField.zeros(u.spec, u.K if out_K is None else out_K)
    if a.n != u.spec.n:
        raise SpecMismatch(f"symbol on T^{a.n} applied to a field on T^{u.spec.n}")
    B = a.bandwidth
    K_out = u.K + B if out_K is None else max(out_K, u.K + B)
    n = u.spec.n
    out = np.zeros((2 * K_out + 1,) * n, dtype=complex)
    xs = lattice(u.spec, u.K)
    for t in a.terms:
        moved = t.multiplier(xs) * u.coeffs
        for eta, c in t.coeff_modes.items():
            _shift_add(out, c * moved, [K_out - u.K + e for e in eta])
    u0 = u.coeffs[(u.K,) * n]
    if u0 != 0:
        for eta, z in a.zero_modes().items():
            out[tuple(K_out + e for e in eta)] += z * u0
    return FourierField(u.spec, K_out, out)


def apply_system(A: PdoSystem, u: Sequence[FourierField]) -> list[FourierField]:
    """``f_j = sum_k A_jk u_k``, all outputs on band ``max K_u + bandwidth``."""
    if len(u) != A.p:
        raise ValueError(f"system of size {A.p} applied to {len(u)} components")
    for uk in u:
        if uk.spec.n != A.n:
            raise SpecMismatch("component on a different torus")
    K_in = max(uk.K for uk in u)
    K_out = K_in + A.bandwidth
    u = [uk.resized(K_in) for uk in u]
    out = []
    for j in range(A.p):
        acc = np.zeros((2 * K_out + 1,) * A.n, dtype=complex)
        for k in range(A.p):
            acc += apply(A.entries[j][k], u[k], out_K=K_out).coeffs
        out.append(FourierField(A.spec, K_out, acc))
    return out


def mode_index(spec: ManifoldSpec, K: int, xi) -> int:
    """Flat position of mode ``xi`` in band-``K`` coefficient vectors."""
    return int(np.ravel_multi_index(tuple(int(k) + K for k in np.atleast_1d(xi)), (2 * K + 1,) * spec.n))


def flatten(fields: Sequence[FourierField], K: int) -> np.ndarray:
    """Stack components (component-major) into one coefficient vector."""
    return np.concatenate([f.resized(K).coeffs.ravel() for f in fields])


def unflatten(vec: np.ndarray, spec: ManifoldSpec, K: int, p: int) -> list[FourierField]:
    N = (2 * K + 1) ** spec.n
    shape = (2 * K + 1,) * spec.n
    return [FourierField(spec, K, vec[k * N : (k + 1) * N].reshape(shape)) for k in range(p)]


def _symbol_block(a: ClassicalSymbol, spec: ManifoldSpec, K: int) -> sp.coo_matrix:
    n = spec.n
    dims = (2 * K + 1,) * n
    N = int(np.prod(dims))
    xs = lattice(spec, K)
    col_flat = np.arange(N)
    rows, cols, data = [], [], []
    for t in a.terms:
        mult = t.multiplier(xs).ravel()
        for eta, c in t.coeff_modes.items():
            target = [x.ravel() + e for x, e in zip(xs, eta)]
            inside = np.all([np.abs(tg) <= K for tg in target], axis=0) & (mult != 0)
            r = np.ravel_multi_index(tuple(tg[inside] + K for tg in target), dims)
            rows.append(r)
            cols.append(col_flat[inside])
            data.append(c * mult[inside])
    zero_col = mode_index(spec, K, (0,) * n)
    for eta, z in a.zero_modes().items():
        if max(abs(e) for e in eta) <= K:
            rows.append(np.array([mode_index(spec, K, eta)]))
            cols.append(np.array([zero_col]))
            data.append(np.array([z]))
    if not rows:
        return sp.coo_matrix((N, N), dtype=complex)
    return sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N), dtype=complex
    )


def galerkin_matrix(A: PdoSystem, K: int) -> sp.csr_matrix:
    """Finite section of ``A`` on band ``K`` in ``L_2`` coefficient coordinates.

    Rows are ``(j, xi')`` and columns ``(k, xi)``, component-major.  Output
    modes leaving the band are discarded.
    """
    spec = A.spec
    N = (2 * K + 1) ** spec.n
    blocks = [
        [None if a is None else _symbol_block(a, spec, K) for a in row] for row in A.entries
    ]
    for j in range(A.p):
        if all(b is None for b in blocks[j]):
            blocks[j][j] = sp.coo_matrix((N, N), dtype=complex)
    for k in range(A.p):
        if all(blocks[j][k] is None for j in range(A.p)):
            blocks[k][k] = sp.coo_matrix((N, N), dtype=complex)
    return sp.bmat(blocks, format="csr", dtype=complex)


def formal_adjoint_galerkin(M):
    """Conjugate transpose; the finite section of the formal adjoint."""
    return M.conj().T


def mode_blocks(A: PdoSystem, K: int) -> np.ndarray:
    """Per-mode ``p x p`` symbol matrices, shape ``(N, p, p)``, for constant coefficients."""
    if not A.is_constant_coefficient():
        raise ValueError("mode blocks exist only for constant-coefficient systems")
    N = (2 * K + 1) ** A.n
    M = galerkin_matrix(A, K)
    out = np.empty((N, A.p, A.p), dtype=complex)
    for j in range(A.p):
        for k in range(A.p):
            out[:, j, k] = M[j * N : (j + 1) * N, k * N : (k + 1) * N].diagonal()
    return out


# -- principal symbol and ellipticity ----------------------------------------


def principal_symbol(A: PdoSystem, x, omega) -> np.ndarray:
    """Principal matrix at one point; entries below their column order are 0."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (A.n,):
        raise ValueError(f"direction must have {A.n} components")
    if abs(np.linalg.norm(omega) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    x = np.asarray(x, dtype=float).reshape(A.n)
    return _principal_grid(A, x[None, :], omega[None, :])[0, 0]


def _principal_grid(A: PdoSystem, xs: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    p = A.p
    out = np.zeros((len(xs), len(omegas), p, p), dtype=complex)
    X = xs[:, None, :]
    W = omegas[None, :, :]
    for j in range(p):
        for k in range(p):
            a = A.entries[j][k]
            if a is None or a.order < A.column_orders[k]:
                continue
            out[:, :, j, k] = a.principal_value(X, W)
    return out


def default_directions(n: int, n_angles: int = 256) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    theta = 2.0 * math.pi * np.arange(n_angles) / n_angles
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def default_points(n: int, per_axis: int) -> np.ndarray:
    g = 2.0 * math.pi * np.arange(per_axis) / per_axis
    return np.stack([c.ravel() for c in np.meshgrid(*([g] * n), indexing="ij")], axis=-1)


@dataclass(frozen=True)
class EllipticityReport:
    min_abs_det: float
    elliptic: bool
    argmin_x: tuple[float, ...]
    argmin_omega: tuple[float, ...]
    delta: float
    column_orders: tuple[float, ...]


def petrovskii_check(
    A: PdoSystem,
    x_grid=None,
    omega_grid=None,
    delta: float = 1e-8,
    n_angles: int = 256,
) -> EllipticityReport:
    """Sampled certificate that the principal determinant stays away from 0."""
    xs = default_points(A.n, max(8, 4 * A.bandwidth + 1)) if x_grid is None else np.atleast_2d(x_grid)
    ws = default_directions(A.n, n_angles) if omega_grid is None else np.atleast_2d(omega_grid)
    if len(xs) == 0 or len(ws) == 0:
        raise ValueError("grids must be nonempty")
    dets = np.abs(np.linalg.det(_principal_grid(A, xs, ws)))
    i, j = np.unravel_index(int(np.argmin(dets)), dets.shape)
    mn = float(dets[i, j])
    return EllipticityReport(
        min_abs_det=mn,
        elliptic=mn >= delta,
        argmin_x=tuple(float(v) for v in xs[i]),
        argmin_omega=tuple(float(v) for v in ws[j]),
        delta=delta,
        column_orders=A.column_orders,
    )
