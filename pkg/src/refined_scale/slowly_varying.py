"""
Functional parameters of the refined scale.

A parameter ``phi`` is a positive function on ``[1, inf)`` that is bounded
together with ``1/phi`` on compacts and slowly varying at infinity.  The
supported family is the iterated-logarithm one

    phi(t) = L_1(t)**r_1 * L_2(t)**r_2 * ... * L_q(t)**r_q,

with the shifted logarithms ``L_1(t) = ln(e - 1 + t)`` and
``L_{j+1}(t) = ln(e - 1 + L_j(t))``.  The shift makes every ``L_j(1) = 1``,
so ``phi(1) = 1`` and no factor vanishes or blows up on ``[1, b]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

E_SHIFT = math.e - 1.0


class DomainError(ValueError):
    """Argument outside the domain of a function."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach its tolerance on a subinterval."""

    def __init__(self, message: str, interval: tuple[float, float]):
        super().__init__(f"{message} on [{interval[0]:.6g}, {interval[1]:.6g}]")
        self.interval = interval


class EmbeddingVerdict(str, enum.Enum):
    CONVERGES = "converges"
    DIVERGES = "diverges"
    UNDECIDABLE = "undecidable analytically"


@dataclass(frozen=True)
class SlowlyVaryingFunction:
    """An element of the parameter class.

    ``kind`` is one of ``"constant_one"``, ``"standard"`` or ``"scaled"``.
    A scaled function is ``base ** power``.
    """

    kind: str
    exponents: tuple[float, ...] = ()
    base: SlowlyVaryingFunction | None = None
    power: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant_one", "standard", "scaled"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == "scaled" and self.base is None:
            raise ValueError("scaled kind needs a base function")
        if not all(math.isfinite(r) for r in self.exponents):
            raise ValueError("exponents must be finite reals")

    def __call__(self, t):
        return eval_phi(self, t)

    @property
    def effective_exponents(self) -> tuple[float, ...]:
        """Exponent tuple of the equivalent standard function."""
        if self.kind == "scaled":
            return tuple(self.power * r for r in self.base.effective_exponents)
        return self.exponents

    def to_list(self) -> list[float]:
        return [float(r) for r in self.effective_exponents]

    def __str__(self):
        if self.kind == "constant_one":
            return "1"
        if self.kind == "scaled":
            return f"({self.base})^{self.power:g}"
        return "standard(" + ", ".join(f"{r:g}" for r in self.exponents) + ")"


CONSTANT_ONE = SlowlyVaryingFunction("constant_one")


def make_standard_phi(exponents: Sequence[float] = ()) -> SlowlyVaryingFunction:
    """Iterated-log function with the given exponents; ``()`` is the constant one."""
    exps = tuple(float(r) for r in exponents)
    if not exps:
        return CONSTANT_ONE
    return SlowlyVaryingFunction("standard", exps)


def scaled_phi(base: SlowlyVaryingFunction, power: float) -> SlowlyVaryingFunction:
    return SlowlyVaryingFunction("scaled", base=base, power=float(power))


def parse_phi(value) -> SlowlyVaryingFunction:
    """Accept an exponent list, ``1``/``None`` for the constant one, or a
    text form such as ``"[0.5, 0.7]"`` or ``"0.5,0.7"``."""
    if isinstance(value, SlowlyVaryingFunction):
        return value
    if value is None or (isinstance(value, (int, float)) and value == 1):
        return CONSTANT_ONE
    if isinstance(value, str):
        text = value.strip().strip("[]() ")
        if text in ("", "1", "one"):
            return CONSTANT_ONE
        return make_standard_phi(float(tok) for tok in text.split(","))
    return make_standard_phi(value)


def iterated_logs(t, depth: int) -> list[np.ndarray]:
    """``[L_1(t), ..., L_depth(t)]`` for ``t >= 1``."""
    out = []
    cur = np.asarray(t, dtype=float)
    for _ in range(depth):
        cur = np.log(E_SHIFT + cur)
        out.append(cur)
    return out


def _check_domain(t):
    arr = np.asarray(t, dtype=float)
    if arr.size == 0:
        return arr
    if np.any(np.isnan(arr)) or np.any(arr < 1.0):
        raise DomainError("phi is defined on [1, inf)")
    return arr


def eval_phi(phi: SlowlyVaryingFunction, t):
    """Evaluate ``phi`` at ``t >= 1`` (scalar or array)."""
    arr = _check_domain(t)
    exps = phi.effective_exponents
    if not exps:
        val = np.ones_like(arr)
    else:
        val = np.ones_like(arr)
        for r, L in zip(exps, iterated_logs(arr, len(exps))):
            if r != 0.0:
                val = val * L**r
    return float(val) if np.ndim(val) == 0 else val


def log_phi_from_log_t(phi: SlowlyVaryingFunction, x):
    """``ln phi(e**x)`` for ``x >= 0`` without forming ``e**x``."""
    x = np.asarray(x, dtype=float)
    exps = phi.effective_exponents
    if not exps:
        return np.zeros_like(x)
    # L_1(e^x) = x + log1p((e-1) e^{-x})
    L = x + np.log1p(E_SHIFT * np.exp(-x))
    out = exps[0] * np.log(L) if exps[0] != 0.0 else np.zeros_like(x)
    for r in exps[1:]:
        L = np.log(E_SHIFT + L)
        if r != 0.0:
            out = out + r * np.log(L)
    return out


def phi_s(phi: SlowlyVaryingFunction, s: float) -> Callable:
    """The function ``t -> t**(s/2) * phi(t**0.5)`` (``phi(1)`` on ``(0, 1)``).

    Evaluated at ``1 + |xi|**2`` it reproduces the Fourier weight
    ``<xi>**s * phi(<xi>)``.
    """
    phi_at_one = eval_phi(phi, 1.0)

    def func(t):
        arr = np.asarray(t, dtype=float)
        if np.any(~(arr > 0.0)):
            raise DomainError("phi_s is defined on (0, inf)")
        big = arr >= 1.0
        safe = np.where(big, arr, 1.0)
        root = np.sqrt(safe)
        val = np.where(big, safe ** (0.5 * s) * eval_phi(phi, root), phi_at_one)
        return float(val) if np.ndim(val) == 0 else val

    return func


@dataclass(frozen=True)
class SlowVariationReport:
    lambdas: tuple[float, ...]
    t_top: float
    max_deviation: dict[float, float]
    octave_deviations: dict[float, tuple[float, ...]]
    tol: float
    passed: bool


def default_t_grid(t_max: float = 1e6, per_octave: int = 1) -> np.ndarray:
    n = int(math.ceil(math.log2(t_max) * per_octave))
    return np.geomspace(1.0, t_max, n + 1)


def check_slow_variation(
    phi,
    lambdas: Sequence[float] = (0.5, 2.0),
    t_grid: Sequence[float] | None = None,
    tol: float = 0.1,
) -> SlowVariationReport:
    """Finite-sample test of ``phi(lam*t)/phi(t) -> 1``.

    Passes iff, for every ``lam``, the deviation ``|phi(lam t)/phi(t) - 1|``
    at the top of the grid is below ``tol`` and strictly decreases across
    the last three octaves ``t_top/8, t_top/4, t_top/2, t_top``.  ``phi`` may
    be any positive callable, so functions outside the class can be tested.
    """
    grid = default_t_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    if grid.size == 0:
        raise DomainError("empty t grid")
    if np.any(grid < 1.0) or np.any(np.diff(grid) <= 0):
        raise DomainError("t grid must be increasing and >= 1")
    if any(lam <= 0 for lam in lambdas):
        raise DomainError("lambda must be positive")
    t_top = float(grid[-1])
    if t_top / 8.0 < 1.0:
        raise DomainError("t grid must span at least three octaves")

    func = phi if callable(phi) else (lambda t: eval_phi(phi, t))
    octave_pts = t_top / np.array([8.0, 4.0, 2.0, 1.0])
    window = grid[grid >= t_top / 8.0]

    max_dev = {}
    octave_dev = {}
    passed = True
    for lam in lambdas:
        lam = float(lam)
        # the ratio is evaluated where both arguments stay in [1, inf)
        def dev(t):
            t = np.asarray(t, dtype=float)
            return np.abs(np.asarray(func(lam * t)) / np.asarray(func(t)) - 1.0)

        d_oct = dev(octave_pts)
        d_win = dev(window)
        max_dev[lam] = float(np.max(d_win))
        octave_dev[lam] = tuple(float(v) for v in d_oct)
        if np.all(d_oct == 0.0):
            continue
        decreasing = bool(np.all(d_oct[1:] < d_oct[:-1] * (1.0 - 1e-9)))
        if not (d_oct[-1] < tol and decreasing):
            passed = False
    return SlowVariationReport(
        lambdas=tuple(float(l) for l in lambdas),
        t_top=t_top,
        max_deviation=max_dev,
        octave_deviations=octave_dev,
        tol=tol,
        passed=passed,
    )


def embedding_criterion(phi: SlowlyVaryingFunction) -> EmbeddingVerdict:
    """Decide convergence of ``int_1^inf dt / (t phi(t)**2)`` for a standard phi.

    The first exponent with ``2 r_j != 1`` decides: above one converges,
    below one diverges.  If every exponent equals 1/2 the integral diverges.
    """
    if phi.kind == "scaled":
        return EmbeddingVerdict.UNDECIDABLE
    for r in phi.exponents:
        if 2.0 * r > 1.0:
            return EmbeddingVerdict.CONVERGES
        if 2.0 * r < 1.0:
            return EmbeddingVerdict.DIVERGES
    return EmbeddingVerdict.DIVERGES


@dataclass(frozen=True)
class EmbeddingIntegral:
    """Partial integrals ``int_1^T dt/(t phi^2)`` on a geometric grid of ``T``."""

    T: np.ndarray
    partial: np.ndarray
    increments: np.ndarray = field(repr=False)


def embedding_integral_numeric(
    phi: SlowlyVaryingFunction, t_max: float, per_octave: int = 1
) -> EmbeddingIntegral:
    """Partial integrals on the grid ``T = 2**(k/per_octave)`` up to ``t_max``.

    Integration runs in ``x = ln t`` (``dt/t = dx``) so very large ``T`` is
    fine.
    """
    if not t_max > 1.0:
        raise DomainError("t_max must exceed 1")
    log_top = math.log(t_max)
    step = math.log(2.0) / per_octave
    xs = list(np.arange(0.0, log_top, step))
    if xs[-1] < log_top:
        xs.append(log_top)
    xs = np.asarray(xs)

    def integrand(x):
        return math.exp(-2.0 * float(log_phi_from_log_t(phi, x)))

    incs = np.empty(len(xs) - 1)
    for i, (a, b) in enumerate(zip(xs[:-1], xs[1:])):
        res = integrate.quad(integrand, a, b, epsabs=0.0, epsrel=1e-12, full_output=1)
        if len(res) > 3:
            raise QuadratureError(res[3], (math.exp(a), math.exp(b)))
        incs[i] = res[0]
    partial = np.concatenate([[0.0], np.cumsum(incs)])
    return EmbeddingIntegral(T=np.exp(xs), partial=partial, increments=incs)


@dataclass(frozen=True)
class OctaveRatioReport:
    """Tail increments of ``int dt/(t phi^2)`` over octaves of ``ln y`` where
    ``y`` is the deepest iterated log of ``phi``."""

    depth: int
    y_grid: np.ndarray
    log_increments: np.ndarray
    ratios: np.ndarray
    threshold: float
    sustain: int
    verdict: EmbeddingVerdict


def _log_integrand_in_level(exps: tuple[float, ...], depth: int, y: float) -> float:
    """Log of the integrand of ``int dx / phi(e^x)^2`` in the variable
    ``y = L_depth``, evaluated without overflow."""
    L_next = y
    total = 0.0
    r = exps[depth - 1]
    if r != 0.0:
        total -= 2.0 * r * math.log(y)
    # deeper levels are functions of y
    L = y
    for r in exps[depth:]:
        L = math.log(E_SHIFT + L)
        if r != 0.0:
            total -= 2.0 * r * math.log(L)
    # upper levels: L_j = e^{L_{j+1}} - (e - 1), dL_j/dL_{j+1} = e^{L_{j+1}}
    for j in range(depth - 2, -1, -1):
        corr = math.log1p(-E_SHIFT * math.exp(-L_next))
        coef = 1.0 - 2.0 * exps[j]
        if coef != 0.0:
            total += coef * L_next
        total -= 2.0 * exps[j] * corr
        log_L = L_next + corr
        L_next = math.exp(log_L) if log_L < 709.0 else math.inf
    # dx/dL_1 = e^{L_1} / (e^{L_1} - e + 1)
    total -= math.log1p(-E_SHIFT * math.exp(-L_next))
    return total


def octave_ratio_verdict(
    phi: SlowlyVaryingFunction,
    octaves: int = 6,
    threshold: float = 0.5,
    sustain: int = 4,
) -> OctaveRatioReport:
    """Numeric convergence verdict for ``int_1^inf dt/(t phi(t)^2)``.

    The integral is rewritten in the iterated log ``y = L_d`` of the first
    level ``d`` whose exponent differs from 1/2 and split at
    ``y_k = 2**(2**k)``.  Consecutive increment ratios above ``threshold``
    over the last ``sustain`` ratios give a divergent verdict.  A divergent
    tail (``int dy/y`` or slower decay) has ratios ``>= 2``; a convergent
    ``int dy/y**(1+a)`` has ratios ``~ y_k**(-a)``.
    """
    exps = tuple(phi.effective_exponents) or (0.0,)
    depth = len(exps)
    for j, r in enumerate(exps):
        if 2.0 * r != 1.0:
            depth = j + 1
            break

    y_grid = np.asarray([2.0 ** (2.0**k) for k in range(octaves + 1)])

    def log_integrand(v):
        # y = e^v, dy = y dv
        return _log_integrand_in_level(exps, depth, math.exp(v)) + v

    log_incs = np.empty(len(y_grid) - 1)
    for i, (a, b) in enumerate(zip(y_grid[:-1], y_grid[1:])):
        la, lb = math.log(a), math.log(b)
        shift = max(log_integrand(la), log_integrand(lb))

        def g(v, shift=shift):
            return math.exp(log_integrand(v) - shift)

        res = integrate.quad(g, la, lb, epsabs=0.0, epsrel=1e-10, limit=200, full_output=1)
        if len(res) > 3 and not res[0] > 0.0:
            raise QuadratureError(res[3], (a, b))
        log_incs[i] = shift + math.log(res[0]) if res[0] > 0.0 else -math.inf
    ratios = np.exp(np.diff(log_incs))
    if ratios.size < sustain:
        verdict = EmbeddingVerdict.UNDECIDABLE
    elif np.all(ratios[-sustain:] > threshold):
        verdict = EmbeddingVerdict.DIVERGES
    else:
        verdict = EmbeddingVerdict.CONVERGES
    return OctaveRatioReport(
        depth=depth,
        y_grid=y_grid,
        log_increments=log_incs,
        ratios=ratios,
        threshold=threshold,
        sustain=sustain,
        verdict=verdict,
    )
