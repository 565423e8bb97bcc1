"""
Refined Sobolev spaces ``H^{s,phi}`` on the flat torus.

Fields are band-limited: Fourier coefficients on ``Z^n ∩ [-K, K]^n``, stored
densely with the zero mode at index ``K`` along each axis.  Coefficients are
normalised by ``(2 pi)^-n``, so ``u(x) = sum_xi u_hat(xi) exp(i xi.x)`` and the
``L_2(dx)`` pairing carries an explicit ``(2 pi)^n``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .slowly_varying import (
    CONSTANT_ONE,
    SlowlyVaryingFunction,
    eval_phi,
    parse_phi,
    phi_s,
)


class AliasingError(ValueError):
    """Sampling grid too coarse for the band of a field."""


class SpecMismatch(ValueError):
    """Fields or operators living on different tori."""


@dataclass(frozen=True)
class ManifoldSpec:
    """The torus ``[0, 2 pi)^n`` with Lebesgue measure."""

    n: int = 1

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("only n = 1 or n = 2 is supported")

    period: float = field(default=2.0 * math.pi, init=False)

    @property
    def pairing_factor(self) -> float:
        """``(e_xi, e_xi)_Gamma``; the exponentials are orthogonal with this norm squared."""
        return (2.0 * math.pi) ** self.n


@dataclass(frozen=True)
class RefinedIndex:
    s: float
    phi: SlowlyVaryingFunction = CONSTANT_ONE

    def shifted(self, ds: float) -> RefinedIndex:
        return RefinedIndex(self.s + ds, self.phi)

    def __str__(self):
        exps = ", ".join(repr(float(r)) for r in self.phi.to_list())
        return f"s: {float(self.s)!r}, phi: [{exps}]"

    @classmethod
    def parse(cls, text: str) -> RefinedIndex:
        data = yaml.safe_load("{" + text + "}")
        return cls(float(data["s"]), parse_phi(data.get("phi")))


def lattice(spec: ManifoldSpec, K: int) -> tuple[np.ndarray, ...]:
    """Mode arrays ``(xi_1, ..., xi_n)`` of shape ``(2K+1,)*n``."""
    axis = np.arange(-K, K + 1)
    return tuple(np.meshgrid(*([axis] * spec.n), indexing="ij"))


def bracket(spec: ManifoldSpec, K: int) -> np.ndarray:
    """``<xi> = (1 + |xi|^2)^(1/2)`` on the band."""
    xs = lattice(spec, K)
    return np.sqrt(1.0 + sum(x.astype(float) ** 2 for x in xs))


@dataclass(frozen=True, eq=False)
class FourierField:
    spec: ManifoldSpec
    K: int
    coeffs: np.ndarray
    real: bool = False

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        shape = (2 * self.K + 1,) * self.spec.n
        if c.shape != shape:
            raise ValueError(f"coefficient array shape {c.shape} does not match band {shape}")
        object.__setattr__(self, "coeffs", c)
        if self.real:
            flipped = np.conj(c[(slice(None, None, -1),) * self.spec.n])
            if not np.allclose(c, flipped, rtol=0.0, atol=1e-12 * max(1.0, np.abs(c).max())):
                raise ValueError("coefficients flagged real-valued lack conjugate symmetry")

    @classmethod
    def zeros(cls, spec: ManifoldSpec, K: int) -> FourierField:
        return cls(spec, K, np.zeros((2 * K + 1,) * spec.n, dtype=complex))

    @classmethod
    def basis(cls, spec: ManifoldSpec, K: int, xi, amplitude: complex = 1.0) -> FourierField:
        """``amplitude * e_xi``."""
        xi = _as_mode(xi, spec.n)
        if max(abs(k) for k in xi) > K:
            raise ValueError(f"mode {xi} outside band {K}")
        c = np.zeros((2 * K + 1,) * spec.n, dtype=complex)
        c[tuple(k + K for k in xi)] = amplitude
        return cls(spec, K, c)

    @classmethod
    def from_modes(cls, spec: ManifoldSpec, modes: dict, K: int | None = None) -> FourierField:
        keys = {_as_mode(k, spec.n): v for k, v in modes.items()}
        band = max((max(abs(c) for c in k) for k in keys), default=0)
        K = band if K is None else K
        out = np.zeros((2 * K + 1,) * spec.n, dtype=complex)
        for k, v in keys.items():
            out[tuple(c + K for c in k)] = v
        return cls(spec, K, out)

    @classmethod
    def from_symbol(cls, spec: ManifoldSpec, K: int, func) -> FourierField:
        """Coefficients ``func(xi_1, ..., xi_n)`` evaluated on the band."""
        return cls(spec, K, np.asarray(func(*lattice(spec, K)), dtype=complex))

    def __getitem__(self, xi) -> complex:
        xi = _as_mode(xi, self.spec.n)
        if max(abs(k) for k in xi) > self.K:
            return 0j
        return complex(self.coeffs[tuple(k + self.K for k in xi)])

    def resized(self, K: int) -> FourierField:
        """Zero-pad or truncate to band ``K``."""
        if K == self.K:
            return self
        out = np.zeros((2 * K + 1,) * self.spec.n, dtype=complex)
        m = min(K, self.K)
        src = tuple(slice(self.K - m, self.K + m + 1) for _ in range(self.spec.n))
        dst = tuple(slice(K - m, K + m + 1) for _ in range(self.spec.n))
        out[dst] = self.coeffs[src]
        return FourierField(self.spec, K, out)

    def __add__(self, other: FourierField) -> FourierField:
        _same_spec(self, other)
        K = max(self.K, other.K)
        return FourierField(self.spec, K, self.resized(K).coeffs + other.resized(K).coeffs)

    def __sub__(self, other: FourierField) -> FourierField:
        return self + other.scaled(-1.0)

    def scaled(self, lam: complex) -> FourierField:
        return FourierField(self.spec, self.K, lam * self.coeffs)

    def __mul__(self, lam):
        return self.scaled(lam)

    __rmul__ = __mul__

    def allclose(self, other: FourierField, atol: float = 1e-12) -> bool:
        _same_spec(self, other)
        K = max(self.K, other.K)
        return bool(np.allclose(self.resized(K).coeffs, other.resized(K).coeffs, rtol=0.0, atol=atol))


def _as_mode(xi, n: int) -> tuple[int, ...]:
    if np.ndim(xi) == 0:
        xi = (int(xi),)
    xi = tuple(int(k) for k in xi)
    if len(xi) != n:
        raise ValueError(f"mode {xi} has wrong dimension for n = {n}")
    return xi


def _same_spec(u: FourierField, v: FourierField):
    if u.spec != v.spec:
        raise SpecMismatch(f"fields on T^{u.spec.n} and T^{v.spec.n}")


def weight(xi, idx: RefinedIndex) -> float:
    """``<xi>^s phi(<xi>)`` for a single lattice point."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    b = math.sqrt(1.0 + float(np.sum(xi**2)))
    return b**idx.s * eval_phi(idx.phi, b)


def weights(spec: ManifoldSpec, K: int, idx: RefinedIndex) -> np.ndarray:
    b = bracket(spec, K)
    return b**idx.s * eval_phi(idx.phi, b)


def norm(u: FourierField, idx: RefinedIndex) -> float:
    w = weights(u.spec, u.K, idx)
    return float(np.sqrt(np.sum((w * np.abs(u.coeffs)) ** 2)))


def inner_product(u: FourierField, v: FourierField, idx: RefinedIndex) -> complex:
    _same_spec(u, v)
    K = max(u.K, v.K)
    w = weights(u.spec, K, idx)
    return complex(np.sum(w**2 * u.resized(K).coeffs * np.conj(v.resized(K).coeffs)))


def gamma_pairing(u: FourierField, v: FourierField) -> complex:
    """``(u, v)_Gamma = int u conj(v) dx`` over the torus."""
    return u.spec.pairing_factor * inner_product(u, v, RefinedIndex(0.0))


def multiplier_norm(u: FourierField, idx: RefinedIndex) -> float:
    """``L_2``-coefficient norm of ``phi_s(1 - Laplacian) u``."""
    xs = lattice(u.spec, u.K)
    eig = 1.0 + sum(x.astype(float) ** 2 for x in xs)
    mult = phi_s(idx.phi, idx.s)(eig)
    return float(np.linalg.norm((mult * u.coeffs).ravel()))


def random_field(spec: ManifoldSpec, K: int, rng: np.random.Generator) -> FourierField:
    shape = (2 * K + 1,) * spec.n
    return FourierField(spec, K, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def grid_points(spec: ManifoldSpec, grid_size: int) -> tuple[np.ndarray, ...]:
    x = 2.0 * math.pi * np.arange(grid_size) / grid_size
    return tuple(np.meshgrid(*([x] * spec.n), indexing="ij"))


def synthesize(u: FourierField, grid_size: int) -> np.ndarray:
    """Samples of ``u`` on the uniform grid ``x_j = 2 pi j / grid_size``."""
    if grid_size < 2 * u.K + 1:
        raise AliasingError(f"grid of {grid_size} points aliases band K = {u.K}")
    n = u.spec.n
    buf = np.zeros((grid_size,) * n, dtype=complex)
    idx = np.arange(-u.K, u.K + 1) % grid_size
    buf[np.ix_(*([idx] * n))] = u.coeffs
    return np.fft.ifftn(buf) * grid_size**n


def analyze(samples: np.ndarray, K: int, spec: ManifoldSpec | None = None) -> FourierField:
    """Band-``K`` Fourier coefficients from uniform grid samples."""
    samples = np.asarray(samples)
    spec = ManifoldSpec(samples.ndim) if spec is None else spec
    N = samples.shape[0]
    if any(d != N for d in samples.shape):
        raise ValueError("sample grid must be uniform across axes")
    if N < 2 * K + 1:
        raise AliasingError(f"grid of {N} points aliases band K = {K}")
    spectrum = np.fft.fftn(samples) / N**spec.n
    idx = np.arange(-K, K + 1) % N
    return FourierField(spec, K, spectrum[np.ix_(*([idx] * spec.n))])


@dataclass(frozen=True)
class EmbeddingRatioResult:
    rho: int
    phi: SlowlyVaryingFunction
    K: tuple[int, ...]
    ratios: np.ndarray
    sup_norms: np.ndarray
    norms: np.ndarray

    def octave_growth(self) -> np.ndarray:
        """Relative growth ``r_{2K}/r_K - 1`` between consecutive entries."""
        return self.ratios[1:] / self.ratios[:-1] - 1.0

    def squared_increments(self) -> np.ndarray:
        return np.diff(self.ratios**2)

    def unbounded(self, evenness: float = 0.8) -> bool:
        """``r_K^2`` gains a non-decaying amount per step: every increment is
        positive and at least ``evenness`` times the largest one."""
        inc = self.squared_increments()
        return bool(inc.size and np.all(inc > 0) and inc.min() >= evenness * inc.max())


def extremal_field(spec: ManifoldSpec, K: int, rho: int, phi: SlowlyVaryingFunction) -> FourierField:
    """Maximiser of ``|d^rho u/dx_1^rho (0)|`` under unit ``H^{rho+n/2,phi}`` norm
    (up to scaling): ``u_hat = conj((i xi_1)^rho) / weight^2``."""
    idx = RefinedIndex(rho + spec.n / 2.0, phi)
    xi1 = lattice(spec, K)[0].astype(float)
    symbol = (1j * xi1) ** rho
    return FourierField(spec, K, np.conj(symbol) / weights(spec, K, idx) ** 2)


def derivative(u: FourierField, rho: int, axis: int = 0) -> FourierField:
    xi = lattice(u.spec, u.K)[axis].astype(float)
    return FourierField(u.spec, u.K, (1j * xi) ** rho * u.coeffs)


def sup_norm(u: FourierField, oversample: int = 1) -> float:
    """Maximum modulus of ``u`` over a uniform grid containing ``x = 0``."""
    N = max(2, oversample * (2 * u.K + 1))
    return float(np.abs(synthesize(u, N)).max())


def embedding_ratio_experiment(
    rho: int,
    phi: SlowlyVaryingFunction,
    K_list: Sequence[int],
    spec: ManifoldSpec = ManifoldSpec(1),
) -> EmbeddingRatioResult:
    """``r_K = sup|d^rho u_K| / ||u_K||_{rho+n/2,phi}`` for the extremal fields.

    ``r_K`` stays bounded in ``K`` exactly when the integral criterion for
    ``phi`` converges.
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    idx = RefinedIndex(rho + spec.n / 2.0, phi)
    ratios, sups, norms = [], [], []
    for K in K_list:
        u = extremal_field(spec, K, rho, phi)
        sup = sup_norm(derivative(u, rho))
        nrm = norm(u, idx)
        sups.append(sup)
        norms.append(nrm)
        ratios.append(sup / nrm)
    return EmbeddingRatioResult(
        rho, phi, tuple(int(k) for k in K_list), np.array(ratios), np.array(sups), np.array(norms)
    )


# -- CSV interchange ---------------------------------------------------------


def field_to_csv(u: FourierField, dest=None, skip_zeros: bool = True) -> str:
    """Write ``xi_1[, xi_2], re, im`` rows; returns the text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"xi_{i + 1}" for i in range(u.spec.n)] + ["re", "im"])
    xs = [x.ravel() for x in lattice(u.spec, u.K)]
    vals = u.coeffs.ravel()
    for i, v in enumerate(vals):
        if skip_zeros and v == 0:
            continue
        writer.writerow([int(x[i]) for x in xs] + [repr(float(v.real)), repr(float(v.imag))])
    text = buf.getvalue()
    if dest is not None:
        Path(dest).write_text(text)
    return text


def field_from_csv(source, K: int | None = None) -> FourierField:
    """Read a field written by :func:`field_to_csv` (path or text)."""
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    header = [h.strip() for h in rows[0]]
    n = sum(1 for h in header if h.startswith("xi_"))
    if header != [f"xi_{i + 1}" for i in range(n)] + ["re", "im"]:
        raise ValueError(f"unexpected CSV header {header}")
    modes = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            xi = tuple(int(v) for v in row[:n])
            modes[xi] = complex(float(row[n]), float(row[n + 1]))
        except (ValueError, IndexError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    return FourierField.from_modes(ManifoldSpec(n), modes, K)
